#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace bnnfer {

// A point on the K-class simplex.
using ProbabilityVector = std::vector<double>;

// Index of the largest entry; ties go to the lowest index.
std::size_t argmax(std::span<const double> values);

// Throws ValidationError unless every entry is >= -tol and the sum is within
// tol of one.
void check_simplex(std::span<const double> p, double tol, const char* what);

}  // namespace bnnfer
