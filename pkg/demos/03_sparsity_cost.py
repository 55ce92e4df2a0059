"""Partial forces cost the same whatever the system size.

With cell lists, the force on one Lennard-Jones atom needs only the atoms in
nearby cells.  At fixed density that is a fixed number, so evaluating 50
atoms takes about as long in a box of 108 atoms as in one of 864.  The full
force grows with the atom count.
"""

from partialforce import bench

rows = bench.partial_force_scaling(repeats=7)
print(f"{'atoms':>6} {'mask':>5} {'partial [ms]':>13} {'full [ms]':>10}")
for r in rows:
    print(f"{r['n_atoms']:>6} {r['mask']:>5} {1e3 * r['partial_s']:>13.3f} {1e3 * r['full_s']:>10.3f}")
part, full = bench.growth(rows)
print(f"\n108 -> 864 atoms: partial x{part:.2f}, full x{full:.2f}")
