import csv
import json
import warnings

import jsonschema
import numpy as np
import pytest

from softgraph.harness import experiments
from softgraph.harness.cli import main
from softgraph.harness.config import DEFAULTS, ConfigError, config_hash, load_config
from softgraph.harness.experiments import run_experiment
from softgraph.harness.output import SWEEP_COLUMNS, emit_outputs, read_sweep_csv, summary_schema
from softgraph.planar import NumericalInstability


def _cfg(experiment="mode-check", values=(1.0, 0.1), **extra):
    raw = {"schema_version": 1, "experiment": experiment, "sweep": {"parameter": "epsilon", "values": list(values)}}
    raw.update(extra)
    return raw


def _write(tmp_path, raw, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(raw))
    return p


def test_minimal_config_gets_defaults(tmp_path):
    cfg = load_config(_write(tmp_path, _cfg()))
    assert cfg.experiment == "mode-check"
    assert cfg.section("numerics") == DEFAULTS["mode-check"]["numerics"]
    assert cfg.sweep_values == [1.0, 0.1]
    assert cfg.hash == config_hash(_cfg())
    assert len(cfg.hash) == 64


def test_overrides_merge_into_defaults():
    cfg = load_config(_cfg(numerics={"max_band": 3}))
    assert cfg.section("numerics")["max_band"] == 3
    assert cfg.section("numerics")["stencil_order"] == DEFAULTS["mode-check"]["numerics"]["stencil_order"]


def test_sweep_must_decrease():
    with pytest.raises(ConfigError, match="sweep.values"):
        load_config(_cfg(values=(0.01, 0.02)))
    with pytest.raises(ConfigError, match="sweep.values"):
        load_config(_cfg(values=(0.02, 0.02)))


def test_all_violations_reported():
    raw = _cfg(experiment="nope")
    raw["bogus"] = 1
    with pytest.raises(ConfigError) as exc:
        load_config(raw)
    assert len(exc.value.errors) == 2
    assert any("experiment" in e for e in exc.value.errors)
    assert any("bogus" in e for e in exc.value.errors)


def test_unknown_nested_key_rejected():
    with pytest.raises(ConfigError, match="numerics"):
        load_config(_cfg(numerics={"typo_key": 1}))


def test_stability_rule_enforced():
    raw = _cfg("edge-free-dynamics", values=(0.04,), numerics={"dt": 0.1})
    with pytest.raises(ConfigError, match="dt/eps"):
        load_config(raw)


def test_missing_graph_file(tmp_path):
    raw = _cfg("confinement-tail", values=(0.04,), geometry={"graph": "missing.json"})
    with pytest.raises(ConfigError, match="does not exist"):
        load_config(_write(tmp_path, raw))


def test_unreadable_file(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(p)


@pytest.mark.parametrize("beta,msg", [(0.3, "admissible for tail only"), (0.6, "inadmissible for both")])
def test_schedule_warnings(beta, msg):
    raw = _cfg("plane-vs-tube", values=(0.02, 0.01))
    raw["sweep"]["beta"] = beta
    with pytest.warns(UserWarning, match=msg):
        cfg = load_config(raw)
    assert msg in cfg.warnings[0]


def test_admissible_schedule_is_silent():
    raw = _cfg("plane-vs-tube", values=(0.02, 0.01))
    raw["sweep"]["beta"] = 0.05
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        load_config(raw)


def test_shipped_configs_are_valid():
    from pathlib import Path

    paths = sorted(Path(__file__).resolve().parent.parent.joinpath("configs").glob("*.json"))
    assert len(paths) == 10
    for p in paths:
        cfg = load_config(p)
        assert cfg.output_dir.is_absolute()


def test_mode_check_run_and_outputs(tmp_path):
    cfg = load_config(_cfg(values=(1.0, 0.1, 0.04)))
    res = run_experiment(cfg)
    assert res.passed
    assert not res.failures
    paths = emit_outputs(res, tmp_path)
    rows = list(csv.reader(paths["csv"].open()))
    assert tuple(rows[0]) == SWEEP_COLUMNS
    assert {r[0] for r in rows[1:]} == {"epsilon"}
    values = [float(r[1]) for r in rows[1:]]
    assert values == sorted(values)
    assert all(r[4] == "" for r in rows[1:])
    summary = json.loads(paths["summary"].read_text())
    jsonschema.validate(summary, summary_schema())
    assert summary["config_hash"] == cfg.hash
    assert paths["csv"].name == f"sweep-{cfg.hash[:12]}.csv"
    assert summary["config"] == _cfg(values=(1.0, 0.1, 0.04))
    groups = read_sweep_csv(paths["csv"])
    assert list(groups["gram_error"][1]) == [0.04, 0.1, 1.0]


def test_rerun_is_byte_identical(tmp_path):
    raw = _cfg(values=(1.0, 0.1))
    a = emit_outputs(run_experiment(load_config(raw)), tmp_path / "a")
    b = emit_outputs(run_experiment(load_config(raw)), tmp_path / "b")
    assert a["csv"].read_bytes() == b["csv"].read_bytes()
    assert a["summary"].read_bytes() == b["summary"].read_bytes()


def test_runtime_column_opt_in(tmp_path):
    raw = _cfg(values=(1.0,), output={"record_runtime": True})
    paths = emit_outputs(run_experiment(load_config(raw)), tmp_path)
    rows = list(csv.reader(paths["csv"].open()))[1:]
    assert all(float(r[4]) > 0 for r in rows)


def _flaky(original):
    def runner(cfg, value):
        if value == 0.1:
            raise NumericalInstability("blow-up at t=0.3")
        return original(cfg, value)

    return runner


def test_failed_point_is_isolated(tmp_path, monkeypatch):
    monkeypatch.setitem(experiments.POINT_RUNNERS, "mode-check",
                        _flaky(experiments.POINT_RUNNERS["mode-check"]))
    res = run_experiment(load_config(_cfg(values=(1.0, 0.1, 0.04))))
    assert set(res.observables) == {1.0, 0.04}
    assert "blow-up" in res.failures[0.1]
    assert not res.passed
    summary = json.loads(emit_outputs(res, tmp_path)["summary"].read_text())
    status = {p["value"]: p["status"] for p in summary["points"]}
    assert status == {0.04: "ok", 0.1: "failed", 1.0: "ok"}


def test_parallel_matches_serial(tmp_path):
    raw = _cfg(values=(1.0, 0.1))
    a = emit_outputs(run_experiment(load_config(raw)), tmp_path / "a")
    b = emit_outputs(run_experiment(load_config(raw), workers=2), tmp_path / "b")
    assert a["csv"].read_bytes() == b["csv"].read_bytes()


def test_worker_cap_from_memory_budget():
    assert experiments._worker_count(4, None) == 4
    assert experiments._worker_count(4, 1e12) == 1
    assert experiments._worker_count(2, 1.0) == 2


def test_resolvent_sweep_is_monotone():
    raw = _cfg("resolvent-convergence", values=(0.4, 0.2, 0.1, 0.05))
    raw["sweep"]["parameter"] = "delta"
    res = run_experiment(load_config(raw))
    _, hs = res.series("hs_distance[z=0+1i]")
    assert np.all(np.diff(hs) < 0)


# ---------------------------------------------------------------- CLI


def test_cli_run_ok_and_check(tmp_path, capsys):
    p = _write(tmp_path, _cfg(values=(1.0, 0.1)))
    assert main(["--out", str(tmp_path / "o"), "run", str(p), "--check"]) == 0
    assert "PASS" in capsys.readouterr().out
    assert len(list((tmp_path / "o").glob("sweep-*.csv"))) == 1


def test_cli_invalid_config_exit_2(tmp_path, capsys):
    p = _write(tmp_path, _cfg(values=(0.1, 1.0)))
    assert main(["run", str(p)]) == 2
    assert "sweep.values" in capsys.readouterr().err


def test_cli_numerical_failure_exit_3(tmp_path, monkeypatch):
    monkeypatch.setitem(experiments.POINT_RUNNERS, "mode-check",
                        _flaky(experiments.POINT_RUNNERS["mode-check"]))
    p = _write(tmp_path, _cfg(values=(1.0, 0.1)))
    assert main(["--out", str(tmp_path / "o"), "run", str(p)]) == 3


def test_cli_failed_check_exit_4(tmp_path):
    raw = _cfg(values=(1.0, 0.1), acceptance={"tolerance": 1e-30})
    p = _write(tmp_path, raw)
    out = str(tmp_path / "o")
    assert main(["--out", out, "run", str(p), "--check"]) == 4
    assert main(["--out", out, "run", str(p)]) == 0


def test_cli_fit(tmp_path, capsys):
    p = tmp_path / "s.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_COLUMNS)
        for e in (0.04, 0.02, 0.01):
            w.writerow(["epsilon", e, "tail", 3 * e**0.5, ""])
    assert main(["fit", str(p)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["tail"]["slope"] == pytest.approx(0.5, abs=1e-12)
    assert out["tail"]["param_name"] == "epsilon"
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    assert main(["fit", str(bad)]) == 2


def test_cli_modes(tmp_path, capsys):
    assert main(["--out", str(tmp_path), "modes", "--n", "3", "--epsilon", "0.04"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["energy"] == pytest.approx(3.5 / 0.04)
    assert out["eigen_residual"] < 1e-6
    rows = list(csv.reader((tmp_path / "mode-n3-eps0.04.csv").open()))
    assert rows[0] == ["y", "phi"]


def test_cli_curve(tmp_path, capsys):
    assert main(["--out", str(tmp_path), "curve", "--theta", "0.7", "--delta", "0.2", "--samples", "101"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["turning_angle"] == pytest.approx(0.7, abs=1e-8)
    rows = list(csv.reader(open(out["csv"])))
    assert rows[0] == ["s", "x", "y", "theta", "k"] and len(rows) == 102
    assert main(["curve", "--theta", "4", "--delta", "0.2"]) == 2


def test_cli_kernels(tmp_path, capsys):
    assert main(["--out", str(tmp_path), "kernels", "--delta", "0.2", "--z", "1j", "--window", "0.5"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["hs_distance"] > 0 and out["condition_number"] >= 1
    rows = list(csv.reader((tmp_path / "kernel-delta0.2-z0+1i.csv").open()))
    assert rows[0] == ["s", "r", "re", "im"]
    d = np.array(list(csv.reader((tmp_path / "dirichlet-delta0.2-z0+1i.csv").open()))[1:], dtype=float)
    opp = np.sign(d[:, 0]) != np.sign(d[:, 1])
    assert np.all(d[opp, 2:] == 0.0)
