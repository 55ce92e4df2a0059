import json
import os

import pytest

from partialforce import cli
from partialforce.config import ConfigError, DEFAULTS, load_config, parse_override
from partialforce.datagen import read_dataset

TINY = [
    "system.params.grid=10",
    "data.K=40", "data.t_end=1.0", "data.dt=0.001", "data.stride=100", "data.scheme=\"euler\"",
    "ae.hidden=[8]", "ae.epochs=2", "ae.pool_traj=2", "ae.batch=16",
    "dyn.hidden=[8]", "dyn.epochs=2", "dyn.batch=16", "dyn.repeats=2",
    "eval.n_test=2", "eval.t_end=1.0",
    "verify.thetas=2", "verify.batches=2", "verify.batch_size=4", "verify.mc_trials=200",
]


def test_defaults_validate():
    cfg = load_config()
    assert cfg["ae"]["d"] == 4
    assert cfg["data"]["p_den"] == 5
    assert DEFAULTS["ae"]["d"] is None  # validation does not mutate the defaults


def test_overrides_and_file(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"dyn": {"epochs": 7}, "system": {"params": {"grid": 10}}}))
    cfg = load_config(str(path), ["dyn.lr=0.01", "paths.workdir=out"])
    assert cfg["dyn"]["epochs"] == 7 and cfg["dyn"]["lr"] == 0.01
    assert cfg["system"]["params"]["grid"] == 10 and cfg["paths"]["workdir"] == "out"
    assert parse_override("a.b=[1, 2]") == (["a", "b"], [1, 2])
    assert parse_override("a=text") == (["a"], "text")


@pytest.mark.parametrize("over, field", [
    (["dyn.bogus=1"], "dyn.bogus"),
    (["data.p_den=7"], "data.p_den"),
    (["dyn.loss_kind=\"L_x\""], "dyn.loss_kind"),
    (["ae.activation=\"relu\""], "ae.activation"),
    (["table3.p=[\"2/3\"]"], "table3.p[0]"),
    (["eval.n_test=0"], "eval.n_test"),
    (["nonsense"], "nonsense"),
])
def test_config_errors_name_the_field(over, field):
    with pytest.raises(ConfigError) as ei:
        load_config(None, over)
    assert ei.value.path == field


def test_bad_json_file(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(str(p))


def test_exit_codes(tmp_path, capsys):
    wd = f"paths.workdir={tmp_path / 'none'}"
    assert cli.main(["eval", wd]) == cli.EXIT_MISSING
    assert "train-ae" in capsys.readouterr().out
    assert cli.main(["gen-data", "data.p_den=7"]) == cli.EXIT_CONFIG
    assert "data.p_den" in capsys.readouterr().out
    assert cli.main(["gen-data", "-c", str(tmp_path / "missing.json")]) == cli.EXIT_MISSING
    assert cli.main(["show-config", "--threads", "0"]) == cli.EXIT_CONFIG
    assert cli.main(["show-config", "dyn.epochs=3"]) == cli.EXIT_OK
    with pytest.raises(SystemExit):
        cli.main(["no-such-command"])


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numerical_abort_exit_code(tmp_path):
    over = TINY + [f"paths.workdir={tmp_path}", "dyn.lr=1e300"]
    assert cli.main(["gen-data"] + over) == 0
    assert cli.main(["train-ae"] + over) == 0
    assert cli.main(["train-dyn"] + over) == cli.EXIT_NUMERIC


def _run_all(workdir):
    over = TINY + [f"paths.workdir={workdir}"]
    for cmd in ("gen-data", "train-ae", "train-dyn", "eval", "verify"):
        assert cli.main([cmd] + over) == 0, cmd


def _bytes(path):
    with open(path, "rb") as fh:
        return fh.read()


@pytest.fixture(scope="module")
def two_runs(tmp_path_factory):
    a = tmp_path_factory.mktemp("run_a")
    b = tmp_path_factory.mktemp("run_b")
    _run_all(a)
    _run_all(b)
    return a, b


def test_pipeline_outputs_and_provenance(two_runs):
    a, _ = two_runs
    for name in ("dataset.pfds", "ae.enc.json", "ae.dec.json", "dyn_r0.json", "dyn_r1.bin",
                 "eval.csv", "eval.json", "verify.json"):
        assert (a / name).exists(), name
    rep = json.loads((a / "eval.json").read_text())
    assert len(rep["errors"]) == 2 and rep["config_hash"] and "seed" in rep
    assert "config_hash" in (a / "eval.csv").read_text().splitlines()[0]
    ver = json.loads((a / "verify.json").read_text())
    assert ver["sandwich_held"] == ver["sandwich_checks"] == 4
    assert json.loads((a / "dyn_r0.json").read_text())["config_hash"] == rep["config_hash"]
    ds = read_dataset(str(a / "dataset.pfds"))
    assert ds.K == 40 and ds.N == 20


def test_identical_runs_are_bit_identical(two_runs):
    a, b = two_runs
    names = sorted(n for n in os.listdir(a) if n.endswith((".pfds", ".bin", ".npz")))
    assert "dataset.pfds" in names and "dyn_r1.bin" in names
    for n in names:
        assert _bytes(a / n) == _bytes(b / n), n
    for n in ("ae.enc.json", "dyn_r0.json", "dyn_r1.json"):
        assert _bytes(a / n) == _bytes(b / n), n


def test_reproduce_table3_smoke(tmp_path):
    over = TINY + [f"paths.workdir={tmp_path}", "table3.K_equiv=[20]", "table3.p=[\"1/5\"]",
                   "dyn.repeats=1"]
    assert cli.main(["reproduce-table3"] + over) == 0
    lines = (tmp_path / "table3.csv").read_text().splitlines()
    assert lines[0].startswith("# config_hash=")
    assert lines[1] == "K_equiv,loss,p,K,mean,std,errors"
    assert [l.split(",")[:4] for l in lines[2:]] == [["20", "L_x", "1", "20"], ["20", "L_xp", "1/5", "100"]]
