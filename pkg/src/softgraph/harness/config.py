"""Experiment configuration: JSON schema validation, semantic checks and defaults."""
from __future__ import annotations

import copy
import hashlib
import json
import warnings
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "config_hash", "DEFAULTS", "EXPERIMENTS"]

EXPERIMENTS = (
    "mode-check",
    "edge-free-dynamics",
    "confinement-tail",
    "adiabatic-separation",
    "coupling-residual",
    "bent-consistency",
    "bent-tube-vs-effective",
    "plane-vs-tube",
    "resolvent-convergence",
    "derivative-growth",
)

_VGRAPH = {
    "geometry": {"graph": "v-graph", "opening": float(np.pi / 2)},
    "numerics": {
        "T": 0.7,
        "dt_over_eps2": 4.0,
        "stepper": "spectral-split",
        "points_per_sqrt_eps": 10,
        "anchor": [0.0, 0.0],
        "band": 0,
        "bands": [1, 2],
        "max_band": 2,
        "delta0": 0.3,
        "records": 70,
    },
    "profile": {"kind": "windowed-gaussian", "center": 3.1, "sigma": 0.45, "halfwidth": 1.8, "k0": -5.0, "edge": 0},
    "chi": {"a": 0.3, "b": 2.0, "kind": "plateau"},
}

_BENT = {
    "geometry": {"theta": float(np.pi / 6), "delta": 0.4, "sign": 1},
    "profile": {"kind": "windowed-gaussian", "center": -2.55, "sigma": 0.35, "halfwidth": 2.1, "k0": 14.0},
}

DEFAULTS: dict[str, dict] = {
    "mode-check": {
        "numerics": {
            "max_band": 6,
            "stencil_order": 6,
            "grid_half_width": 12.0,
            "grid_points_per_sqrt_eps": 40.0,
            "gram_max_band": 8,
        },
        "acceptance": {"tolerance": 1e-6, "secondary_tolerance": 1e-8},
    },
    "edge-free-dynamics": {
        "geometry": {"graph": "straight-line"},
        "numerics": {
            "T": 0.5,
            "dt": 1e-3,
            "stepper": "spectral-split",
            "points_per_sqrt_eps": 10,
            "box": [-1.0, 7.0, -2.0, 2.0],
            "anchor": [0.0, 0.0],
            "band": 0,
            "records": 10,
        },
        "profile": {"kind": "windowed-gaussian", "center": 2.5, "sigma": 0.35, "halfwidth": 1.6, "k0": 2.0, "edge": 0},
        "acceptance": {"tolerance": 1e-5, "secondary_tolerance": 1e-4, "relative_max": 1e-8},
    },
    "confinement-tail": copy.deepcopy(_VGRAPH) | {"acceptance": {"slope_min": 0.35, "slope_max": 0.65, "r2_min": 0.95}},
    "adiabatic-separation": copy.deepcopy(_VGRAPH) | {"acceptance": {"slope_min": 0.8}},
    "coupling-residual": {
        "geometry": {"graph": "v-graph", "opening": float(np.pi / 2)},
        "numerics": {"band": 0},
        "profile": {"kind": "plateau", "support": [0.5, 2.0], "k0": 0.0, "edge": 0},
        "acceptance": {"slope_max": 0.0, "r2_min": 0.98},
    },
    "bent-consistency": {
        "geometry": {"theta": float(np.pi / 4), "delta": 0.4, "sign": 1},
        "numerics": {
            "T": 0.5,
            # wide enough that the spreading packet never reaches the Dirichlet ends
            "tube": {"s_range": [-6.0, 7.0], "ns": 1300, "nu": 128, "nmodes": 12, "order": 4, "dt": 1e-3},
            "times": [0.1, 0.25, 0.5],
        },
        "profile": {"kind": "windowed-gaussian", "center": 0.0, "sigma": 0.35, "halfwidth": 2.1, "k0": 4.0},
        "acceptance": {"tolerance": 1e-14, "secondary_tolerance": 1e-8, "relative_max": 1e-3},
    },
    "bent-tube-vs-effective": {
        "geometry": {"theta": float(np.pi / 4), "delta": 0.4, "sign": 1},
        "numerics": {
            "T": 0.5,
            "band": 0,
            "tube": {"s_range": [-2.5, 3.0], "ns": 1100, "nu": 128, "nmodes": 12, "order": 4, "dt": 1e-3,
                     "scheme": "pade4"},
            "times": [0.1, 0.2, 0.3, 0.4, 0.5],
        },
        "profile": {"kind": "windowed-gaussian", "center": -1.0, "sigma": 0.2, "halfwidth": 0.55, "k0": 4.0},
        "acceptance": {"slope_min": 0.35},
    },
    "plane-vs-tube": copy.deepcopy(_BENT)
    | {
        "numerics": {
            # fast and short: the packet ends centred on the bend, its spread front far from box and tube ends
            "T": 0.18,
            "band": 0,
            "dt_over_eps2": 4.0,
            "points_per_sqrt_eps": 10,
            "box": [-5.8, 6.9, -0.45, 2.1],
            "anchor": [-0.4, 0.0],
            "tube": {"s_range": [-6.5, 5.5], "ns": 4799, "nu": 128, "nmodes": 12, "order": 4, "dt": 1.25e-4,
                     "scheme": "pade4"},
            "times": [0.0, 0.03, 0.06, 0.09, 0.12, 0.15, 0.18],
        },
        "acceptance": {"slope_min": 0.35, "slope_max": 0.65},
    },
    "resolvent-convergence": {
        "geometry": {"theta": float(0.95 * np.pi)},
        "numerics": {
            "z": [[0.0, 1.0], [0.3, 1.0]],
            "kinetic": 0.5,
            "q_panels": 30,
            "q_order": 10,
            "line_panels_per_unit": 10.0,
            "oracle_points": 61,
        },
        "acceptance": {"relative_max": 0.05, "tolerance": 1e-3},
    },
    "derivative-growth": {
        "numerics": {"cases": 20, "seed": 20240611, "line": [-30.0, 30.0, 4096], "dt": 1e-3},
        "acceptance": {"tolerance": 1e-9},
    },
}

_STABILITY_RATIO = 1.0  # dt / eps bound of the planar stepper


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` lists every violation found."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.errors))


@dataclass
class ExperimentConfig:
    raw: dict
    resolved: dict
    hash: str
    source: Path | None = None
    warnings: list[str] = field(default_factory=list)

    @property
    def experiment(self) -> str:
        return self.resolved["experiment"]

    @property
    def sweep_values(self) -> list[float]:
        return list(self.resolved["sweep"]["values"])

    @property
    def sweep_parameter(self) -> str:
        return self.resolved["sweep"]["parameter"]

    def section(self, name: str) -> dict:
        return self.resolved.get(name, {})

    @property
    def output_dir(self) -> Path:
        d = self.resolved.get("output", {}).get("dir", "out")
        p = Path(d)
        if not p.is_absolute() and self.source is not None:
            p = self.source.parent / p
        return p


def _schema() -> dict:
    text = resources.files("softgraph.harness").joinpath("schemas/config.schema.json").read_text()
    return json.loads(text)


def config_hash(raw: dict) -> str:
    """SHA-256 of the canonical JSON form (sorted keys, no whitespace)."""
    blob = json.dumps(raw, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _semantic_errors(cfg: dict, source: Path | None) -> tuple[list[str], list[str]]:
    errs: list[str] = []
    warns: list[str] = []
    vals = cfg["sweep"]["values"]
    if any(b >= a for a, b in zip(vals, vals[1:])):
        errs.append(f"sweep.values must be strictly decreasing, got {vals}")
    graph = cfg.get("geometry", {}).get("graph")
    if isinstance(graph, str) and graph.endswith(".json"):
        p = Path(graph)
        if not p.is_absolute() and source is not None:
            p = source.parent / p
        if not p.exists():
            errs.append(f"geometry.graph: file {graph} does not exist")
    num = cfg.get("numerics", {})
    if cfg["sweep"]["parameter"] == "epsilon" and cfg["experiment"] in (
        "edge-free-dynamics",
        "confinement-tail",
        "adiabatic-separation",
        "plane-vs-tube",
    ):
        for eps in vals:
            dt = num.get("dt", num.get("dt_over_eps2", 0.0) * eps**2)
            if num.get("stepper", "spectral-split") == "spectral-split" and dt / eps > _STABILITY_RATIO:
                errs.append(f"numerics.dt: dt/eps = {dt / eps:.3g} exceeds {_STABILITY_RATIO} at eps={eps}")
    beta = cfg["sweep"].get("beta")
    if beta is not None and cfg["experiment"] in ("plane-vs-tube", "bent-tube-vs-effective"):
        if beta >= 0.5:
            warns.append(f"beta={beta}: inadmissible for both tail and full comparison")
        elif beta >= 0.1:
            warns.append(f"beta={beta}: admissible for tail only")
    theta = cfg.get("geometry", {}).get("theta")
    if theta is not None and theta >= np.pi:
        errs.append(f"geometry.theta must be below pi, got {theta}")
    return errs, warns


def load_config(source) -> ExperimentConfig:
    """Read, validate and resolve a configuration file (or an already-parsed dict).

    Raises
    ------
    ConfigError
        Listing every schema and semantic violation.
    """
    path = None
    if isinstance(source, (str, Path)):
        path = Path(source)
        try:
            raw = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError([f"cannot read {path}: {exc}"]) from exc
    else:
        raw = copy.deepcopy(source)
    validator = jsonschema.Draft202012Validator(_schema())
    errs = [
        f"{'.'.join(str(p) for p in e.absolute_path) or '<root>'}: {e.message}"
        for e in sorted(validator.iter_errors(raw), key=lambda e: list(map(str, e.absolute_path)))
    ]
    if errs:
        raise ConfigError(errs)
    resolved = _merge(DEFAULTS[raw["experiment"]], raw)
    errs, warns = _semantic_errors(resolved, path)
    if errs:
        raise ConfigError(errs)
    for w in warns:
        warnings.warn(w, stacklevel=2)
    return ExperimentConfig(raw, resolved, config_hash(raw), path, warns)
