import json
import math
import os

import numpy as np
import pytest

from stealthbound import cli, safety
from stealthbound.config import ConfigError, RunConfig, load_config, parse_config

CFG_DIR = os.path.join(os.path.dirname(__file__), "..", "configs")

SCALAR = """
model = explicit
safety_states = 1
safety_bound = 50
horizon = 20
trials = 10
[matrix A]
0.5
[end]
[matrix B]
1.0
[end]
[matrix C]
1.0
[end]
[matrix Q]
1.0
[end]
[matrix R]
1.0
[end]
[matrix U]
1.0
[end]
"""


def test_default_config_file_matches_builtin():
    cfg = load_config(os.path.join(CFG_DIR, "quadruple_tank.cfg"))
    base = RunConfig()
    for name in ("model", "T", "false_alarm", "p_d", "p", "safety_bound", "horizon", "p1_scale", "attack"):
        assert getattr(cfg, name) == getattr(base, name)
    assert cfg.schedules["mechanism1"] == safety.MECHANISM_1
    assert cfg.schedules["mechanism2"] == safety.MECHANISM_2


def test_round_trip_is_exact():
    cfg = parse_config(SCALAR)
    cfg.p = 0.1 + 0.2
    cfg.schedules["x"] = safety.ResponseSchedule.from_string("TFT")
    again = parse_config(cfg.to_text())
    assert again.to_text() == cfg.to_text()
    assert again.p == cfg.p
    assert again.digest() == cfg.digest()
    np.testing.assert_array_equal(again.matrices["A"], [[0.5]])


def test_digest_tracks_content():
    a, b = RunConfig(), RunConfig()
    assert a.digest() == b.digest()
    b.seed = 1
    assert a.digest() != b.digest()


@pytest.mark.parametrize(
    "text",
    [
        "nonsense line",
        "unknown_key = 3",
        "T = ten",
        "p = 1.5",
        "false_alarm = 0",
        "attack = replay",
        "safety_states = 0 1",
        "schedule.bad = FXT",
        "[matrix A]\n1 2\n3\n[end]",
        "[matrix A]\n1 2",
        "[matrix Z]\n1\n[end]",
        "[matrix A]\nnan\n[end]",
        "model = explicit",
        "sweep_p = 0.5 1.0",
    ],
)
def test_parse_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_comments_and_blank_lines():
    cfg = parse_config("# header\n\nseed = 5  # trailing\n")
    assert cfg.seed == 5


def test_missing_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.cfg")


def _run(args, capsys):
    code = cli.main(args)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_cli_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("p = 2\n")
    assert _run(["synthesize", "--config", str(bad), "--out", str(tmp_path)], capsys)[0] == 1
    with pytest.raises(SystemExit) as exc:
        cli.main(["sweep", "--axis", "q"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        cli.main([])
    assert exc.value.code == 1
    weak = tmp_path / "weak.cfg"
    weak.write_text("p_d = 0.005\n")
    code, _, err = _run(["synthesize", "--config", str(weak), "--out", str(tmp_path)], capsys)
    assert code == 2 and "InfeasibleStealthiness" in err
    tight = tmp_path / "tight.cfg"
    tight.write_text("safety_bound = 0.01\n")
    code, _, err = _run(["bound", "--config", str(tight), "--out", str(tmp_path)], capsys)
    assert code == 2 and "ZeroMargin" in err


def _read(path):
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def test_cli_outputs_and_idempotence(tmp_path, capsys):
    cfgfile = os.path.join(CFG_DIR, "quadruple_tank.cfg")
    digest = load_config(cfgfile).digest()
    overridden = load_config(cfgfile)
    overridden.trials = 20
    sim_digest = overridden.digest()
    assert sim_digest != digest
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        for cmd in (["synthesize"], ["bound"], ["simulate", "--trials", "20", "--dump-trajectories"],
                    ["sweep", "--axis", "Ta"], ["sweep", "--axis", "k"], ["sweep", "--axis", "percentage"],
                    ["sweep", "--axis", "p"]):
            code, stdout, _ = _run(cmd + ["--config", cfgfile, "--out", str(out)], capsys)
            assert code == 0
            assert stdout.startswith("stealthbound 0.1.0 config=")
    names = sorted(os.listdir(outs[0]))
    assert names == sorted(["synthesize.json", "bound.csv", "simulate.json", "simulate.csv", "trajectories.csv",
                            "sweep_Ta.csv", "sweep_k.csv", "sweep_percentage.csv", "sweep_p.csv"])
    for nm in names:
        a, b = _read(outs[0] / nm), _read(outs[1] / nm)
        assert a == b, nm
        # the header records the effective configuration, overrides included
        want = sim_digest if nm.startswith(("simulate", "trajectories")) else digest
        if nm.endswith(".csv"):
            assert a.startswith(f"# stealthbound 0.1.0 config={want} seed=0\n")
        else:
            doc = json.loads(a)
            assert doc["header"] == f"stealthbound 0.1.0 config={want} seed=0"
            assert doc["report_version"] == 1

    syn = json.loads(_read(outs[0] / "synthesize.json"))
    assert syn["eta"] == pytest.approx(37.56623478662507, rel=1e-12)
    assert syn["lambda_bar"] == pytest.approx(49.0272970740, rel=1e-9)
    assert 0 < syn["gamma"] < 1 < syn["gamma_a"] and syn["accepted"]

    sim_doc = json.loads(_read(outs[0] / "simulate.json"))
    assert sim_doc["trials"] == 20 and sim_doc["violation_count"] == 0
    traj = _read(outs[0] / "trajectories.csv").splitlines()
    assert traj[1] == "trial,k,x1,x2,x3,x4,g,alarm" and len(traj) == 2 + 20 * 101


def _csv_rows(path):
    lines = _read(path).splitlines()
    head = lines[1].split(",")
    return head, [dict(zip(head, ln.split(","))) for ln in lines[2:]]


def test_bound_csv_contents(tmp_path, capsys):
    cfgfile = os.path.join(CFG_DIR, "quadruple_tank.cfg")
    assert _run(["bound", "--config", cfgfile, "--out", str(tmp_path)], capsys)[0] == 0
    head, rows = _csv_rows(tmp_path / "bound.csv")
    assert head == ["k", "max_ta", "percentage", "tau_mechanism1", "safe_mechanism1", "tau_mechanism2",
                    "safe_mechanism2"]
    assert len(rows) == 101
    ta = [int(r["max_ta"]) for r in rows]
    assert all(b >= a for a, b in zip(ta, ta[1:]))
    assert rows[0]["percentage"] == ""
    assert float(rows[50]["percentage"]) == pytest.approx(100 * ta[50] / 50)
    assert all(r["safe_mechanism1"] == "1" for r in rows)
    assert any(r["safe_mechanism2"] == "0" for r in rows)


def test_sweep_slopes(tank):
    n = tank.model.n
    g, ga = tank.rate.gamma, tank.rate.gamma_a
    _, rows = cli.sweep_rows(tank, "Ta", 100)
    unclipped = [r for r in rows if not r[4]]
    for a, b in zip(unclipped, unclipped[1:]):
        assert b[3] - a[3] == pytest.approx(2 * n * math.log(ga / g), abs=1e-9)
    _, rows = cli.sweep_rows(tank, "k", 100)
    unclipped = [r for r in rows if not r[4]]
    assert len(unclipped) > 2
    for a, b in zip(unclipped, unclipped[1:]):
        assert b[3] - a[3] == pytest.approx(2 * n * math.log(g), abs=1e-9)
    _, rows = cli.sweep_rows(tank, "percentage", 100)
    assert {r[0] for r in rows} == set(tank.cfg.sweep_percentages)
    assert min(r[1] for r in rows) == 1
    _, rows = cli.sweep_rows(tank, "p", 100)
    logdet = float(np.linalg.slogdet(tank.inv.P2)[1])
    for p, vol in rows:
        assert vol == pytest.approx(-2 * n * math.log(1 - p) - logdet, abs=1e-9)
    with pytest.raises(ConfigError):
        cli.sweep_rows(tank, "Tk", 10)


def test_explicit_scalar_model(tmp_path, capsys):
    path = tmp_path / "scalar.cfg"
    path.write_text(SCALAR)
    for cmd in (["synthesize"], ["bound"], ["simulate"]):
        code, _, err = _run(cmd + ["--config", str(path), "--out", str(tmp_path)], capsys)
        assert code == 0, err
    syn = json.loads(_read(tmp_path / "synthesize.json"))
    # one residue channel: eta is the chi-squared 99% point with 10 degrees of freedom
    assert syn["eta"] == pytest.approx(23.209251158954356, rel=1e-10)
    assert np.shape(syn["P1"]) == (2, 2)
    sim_doc = json.loads(_read(tmp_path / "simulate.json"))
    assert sim_doc["violation_count"] == 0


def test_cli_overrides(tmp_path, capsys):
    code, _, _ = _run(["simulate", "--trials", "3", "--horizon", "15", "--seed", "9", "--out", str(tmp_path)], capsys)
    assert code == 0
    doc = json.loads(_read(tmp_path / "simulate.json"))
    assert doc["trials"] == 3 and doc["horizon"] == 15
    assert doc["header"].endswith("seed=9")
