"""Partial- vs full-force timing across Lennard-Jones sizes at density 0.8.

Usage: OMP_NUM_THREADS=1 python benchmarks/partial_force_scaling.py [out.csv]
"""

import sys

from partialforce import bench

if __name__ == "__main__":
    rows = bench.run(sys.argv[1] if len(sys.argv) > 1 else None, repeats=7)
    print(bench.to_csv(rows), end="")
    part, full = bench.growth(rows)
    print(f"# partial x{part:.2f}, full x{full:.2f}")
