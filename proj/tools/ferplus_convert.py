#!/usr/bin/env python3
"""Join the FER2013 image CSV and the FER+ vote CSV into the canonical CSV.

    ferplus_convert.py fer2013.csv fer2013new.csv ferplus.csv

Rows are joined by position. The usage column is taken from the image file
and the two files must agree on it row by row.
"""

import argparse
import csv
import sys

VOTE_COLUMNS = ["neutral", "happiness", "surprise", "sadness", "anger",
                "disgust", "fear", "contempt", "unknown", "NF"]
HEADER = ["usage", "pixels"] + VOTE_COLUMNS


def convert(images_path, votes_path, out_path):
    with open(images_path, newline="") as fi, open(votes_path, newline="") as fv, \
            open(out_path, "w", newline="") as fo:
        images = csv.DictReader(fi)
        votes = csv.DictReader(fv)
        missing = [c for c in VOTE_COLUMNS + ["Usage"] if c not in (votes.fieldnames or [])]
        if missing:
            raise ValueError(f"{votes_path}: missing columns {missing}")
        writer = csv.writer(fo, lineterminator="\n")
        writer.writerow(HEADER)
        rows = 0
        for line, (img, vote) in enumerate(zip(images, votes), start=2):
            if img["Usage"] != vote["Usage"]:
                raise ValueError(f"row {line}: usage {img['Usage']!r} != {vote['Usage']!r}")
            writer.writerow([img["Usage"], img["pixels"]] + [vote[c] for c in VOTE_COLUMNS])
            rows += 1
        if next(images, None) is not None or next(votes, None) is not None:
            raise ValueError("input files have different row counts")
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("images", help="fer2013.csv (emotion,pixels,Usage)")
    parser.add_argument("votes", help="fer2013new.csv (Usage,Image name,neutral,...,NF)")
    parser.add_argument("output", help="canonical CSV to write")
    args = parser.parse_args()
    try:
        rows = convert(args.images, args.votes, args.output)
    except (OSError, ValueError, KeyError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    print(f"wrote {rows} rows to {args.output}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
