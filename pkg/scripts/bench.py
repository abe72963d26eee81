#!/usr/bin/env python3
"""Benchmark CLI wrapper: bench <experiment> --out <csv> [--seed S] [--reps R].

Equivalent to `python -m vidbft.bench`; see that module for the
experiment definitions and the CSV schema.
"""
import sys

from vidbft import bench

if __name__ == "__main__":
    sys.exit(bench.main())
