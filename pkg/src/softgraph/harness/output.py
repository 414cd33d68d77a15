"""Report emission: sweep CSV, JSON summary, traces and optional snapshots."""
from __future__ import annotations

import csv
import json
import platform
from importlib import metadata, resources
from pathlib import Path

import jsonschema
import numpy as np
import scipy

from .. import __version__
from ..planar import save_snapshot, write_trace_csv
from .experiments import SweepResult

__all__ = ["SWEEP_COLUMNS", "SUMMARY_SCHEMA_VERSION", "emit_outputs", "sweep_rows", "summary_dict",
           "summary_schema", "read_sweep_csv", "versions"]

SWEEP_COLUMNS = ("param_name", "param_value", "observable", "value", "runtime_s")
SUMMARY_SCHEMA_VERSION = 1


def _num(x: float) -> str:
    return repr(float(x))


def versions() -> dict:
    out = {"softgraph": __version__, "python": platform.python_version(), "numpy": np.__version__,
           "scipy": scipy.__version__}
    try:
        out["jsonschema"] = metadata.version("jsonschema")
    except metadata.PackageNotFoundError:
        pass
    return out


def summary_schema() -> dict:
    return json.loads(resources.files("softgraph.harness").joinpath("schemas/summary.schema.json").read_text())


def sweep_rows(result: SweepResult) -> list[tuple[str, str, str, str, str]]:
    """Rows in long format, sorted by parameter value then observable name.

    ``runtime_s`` is blank unless ``output.record_runtime`` is set, so reruns are byte-identical.
    """
    record = result.config.resolved.get("output", {}).get("record_runtime", False)
    rows = []
    for v in sorted(result.observables):
        rt = _num(result.runtimes[v]) if record else ""
        for name in sorted(result.observables[v]):
            rows.append((result.parameter, _num(v), name, _num(result.observables[v][name]), rt))
    return rows


def _clean(x):
    if isinstance(x, float) and not np.isfinite(x):
        return None
    return x


def summary_dict(result: SweepResult) -> dict:
    cfg = result.config
    record = cfg.resolved.get("output", {}).get("record_runtime", False)
    points = []
    for v in sorted(result.values):
        p = {"value": v, "status": "ok" if v in result.observables else "failed"}
        if v in result.observables:
            p["observables"] = {k: _clean(float(x)) for k, x in sorted(result.observables[v].items())}
            if record:
                p["runtime_s"] = result.runtimes[v]
        else:
            p["error"] = result.failures[v]
        points.append(p)
    return {
        "schema_version": SUMMARY_SCHEMA_VERSION,
        "experiment": cfg.experiment,
        "config_hash": cfg.hash,
        "config": cfg.raw,
        "resolved_config": cfg.resolved,
        "parameter": result.parameter,
        "points": points,
        "fits": {k: f.to_dict() for k, f in sorted(result.fits.items())},
        "checks": [c.to_dict() for c in result.checks],
        "passed": result.passed,
        "failures": {_num(k): v for k, v in sorted(result.failures.items())},
        "warnings": list(cfg.warnings),
        "versions": versions(),
    }


def emit_outputs(result: SweepResult, out_dir=None) -> dict[str, Path]:
    """Write ``sweep-<hash>.csv``, ``summary-<hash>.json`` and any traces or snapshots.

    The first 12 hex digits of the config hash tag every file, so each row
    can be traced back to the configuration that produced it.

    Returns
    -------
    dict
        Paths of the written files keyed by kind.
    """
    out = Path(out_dir) if out_dir is not None else result.config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    tag = result.config.hash[:12]
    paths: dict[str, Path] = {}
    csv_path = out / f"sweep-{tag}.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        w.writerows(sweep_rows(result))
    paths["csv"] = csv_path
    summary = summary_dict(result)
    jsonschema.validate(summary, summary_schema())
    sum_path = out / f"summary-{tag}.json"
    sum_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    paths["summary"] = sum_path
    for v, art in sorted(result.artifacts.items()):
        label = f"{result.parameter}{v:g}"
        for (edge, band), tr in sorted(art.get("traces", {}).items()):
            p = out / f"trace-{tag}-{label}-edge{edge}-band{band}.csv"
            write_trace_csv(tr, p)
            paths[p.stem] = p
        if "snapshot" in art:
            field, eps, t = art["snapshot"]
            p = save_snapshot(field, out / f"snapshot-{tag}-{label}", eps, t)
            paths[p.stem] = p
    return paths


def read_sweep_csv(path) -> dict[str, tuple[str, np.ndarray, np.ndarray]]:
    """Group a sweep CSV by observable: ``{name: (param_name, xs, ys)}`` in file order."""
    groups: dict[str, tuple[str, list, list]] = {}
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        if tuple(r.fieldnames or ()) != SWEEP_COLUMNS:
            raise ValueError(f"{path}: expected columns {SWEEP_COLUMNS}, got {r.fieldnames}")
        for row in r:
            g = groups.setdefault(row["observable"], (row["param_name"], [], []))
            g[1].append(float(row["param_value"]))
            g[2].append(float(row["value"]))
    return {k: (p, np.array(x), np.array(y)) for k, (p, x, y) in groups.items()}
