#include "bnnfer/types.hpp"

#include <cmath>
#include <string>

#include "bnnfer/errors.hpp"

namespace bnnfer {

std::size_t argmax(std::span<const double> values) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i) {
        if (values[i] > values[best]) best = i;
    }
    return best;
}

void check_simplex(std::span<const double> p, double tol, const char* what) {
    if (p.empty()) throw ValidationError(std::string(what) + ": empty probability vector");
    double sum = 0.0;
    for (double v : p) {
        if (!std::isfinite(v) || v < -tol) {
            throw ValidationError(std::string(what) + ": entry outside the simplex");
        }
        sum += v;
    }
    if (std::abs(sum - 1.0) > tol) {
        throw ValidationError(std::string(what) + ": probabilities sum to " + std::to_string(sum));
    }
}

}  // namespace bnnfer
