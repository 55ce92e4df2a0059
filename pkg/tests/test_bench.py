import numpy as np

from partialforce import bench


def test_small_scaling_rows_and_csv(tmp_path):
    path = tmp_path / "b.csv"
    rows = bench.run(str(path), sizes=(108, 256), mask_size=10, repeats=3)
    assert [r["n_atoms"] for r in rows] == [108, 256]
    assert all(r["mask"] == 10 and r["partial_s"] > 0 and r["full_s"] > 0 for r in rows)
    lines = path.read_text().splitlines()
    assert lines[0] == "n_atoms,mask,partial_s,full_s" and len(lines) == 3
    part, full = bench.growth(rows)
    assert np.isfinite(part) and np.isfinite(full)


def test_empty_mask_is_cheap():
    rows = bench.partial_force_scaling(sizes=(108,), mask_size=0, repeats=5)
    assert rows[0]["mask"] == 0
    assert rows[0]["partial_s"] < rows[0]["full_s"]


def test_mask_capped_at_system_size():
    rows = bench.partial_force_scaling(sizes=(108,), mask_size=500, repeats=1)
    assert rows[0]["mask"] == 108
