"""JSON serialization of grids, studies, classes, samples and reports.

Probabilities are written with Python's shortest round-trip float repr, so
files reload bit-for-bit. Harness summaries use 12 significant digits.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .concepts import (
    ClassPair,
    DistributionClass,
    PropensityClass,
    build_poly_expectation_family,
    build_poly_logdensity_family,
    constant_class,
    overlap_lattice,
    pmf_lattice,
    propensity_lattice,
    rd_class,
    weak_overlap_lattice,
)
from .core import CensoredPMF, CensoredSamples, Grid, JointPMF, ObservationalStudy, PropensityTable
from .exceptions import ConfigError


def fmt12(x) -> str:
    """A number at 12 significant digits."""
    if x is None:
        return ""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.12g}"


def round12(obj):
    """Recursively round floats to 12 significant digits for JSON records."""
    if isinstance(obj, dict):
        return {k: round12(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [round12(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return round12(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return fmt12(x)
        return float(f"{x:.12g}")
    return obj


def dump_json(obj, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=False, allow_nan=False)
        fh.write("\n")


def load_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


# ------------------------------------------------------------------ grid


def grid_to_dict(grid: Grid) -> dict:
    cov = [list(p) if len(p) > 1 else p[0] for p in grid.covariate_points]
    return {"covariates": cov, "outcomes": list(grid.outcome_points)}


def grid_from_dict(d: dict) -> Grid:
    try:
        return Grid(d["covariates"], d["outcomes"])
    except KeyError as exc:
        raise ConfigError(f"grid is missing {exc}") from None


def _table(a: np.ndarray) -> list:
    return np.asarray(a, dtype=float).tolist()


def study_to_dict(study: ObservationalStudy) -> dict:
    return {
        "kind": "study",
        "grid": grid_to_dict(study.grid),
        "d0": _table(study.d0.mass),
        "d1": _table(study.d1.mass),
        "p0": _table(study.p0.value),
        "p1": _table(study.p1.value),
    }


def study_from_dict(d: dict) -> ObservationalStudy:
    try:
        grid = grid_from_dict(d["grid"])
        return ObservationalStudy(
            d0=JointPMF(grid, d["d0"]),
            d1=JointPMF(grid, d["d1"]),
            p0=PropensityTable(grid, d["p0"]),
            p1=PropensityTable(grid, d["p1"]),
        )
    except KeyError as exc:
        raise ConfigError(f"study is missing {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"invalid study: {exc}") from None


def save_study(study: ObservationalStudy, path) -> None:
    dump_json(study_to_dict(study), path)


def load_study(path) -> ObservationalStudy:
    return study_from_dict(load_json(path))


def censored_to_dict(c: CensoredPMF) -> dict:
    return {"kind": "censored", "grid": grid_to_dict(c.grid), "mass": _table(c.mass)}


def censored_from_dict(d: dict) -> CensoredPMF:
    return CensoredPMF(grid_from_dict(d["grid"]), d["mass"])


# ------------------------------------------------------------------ classes


def _propensity_from_spec(grid: Grid, spec: dict) -> PropensityClass:
    tag = spec.get("tag", "custom")
    c = spec.get("c")
    if "members" in spec:
        return PropensityClass(grid, [PropensityTable(grid, m) for m in spec["members"]], tag, c)
    if "constants" in spec:
        return constant_class(grid, spec["constants"], tag, c)
    if "covariate_tables" in spec:
        return PropensityClass(
            grid, [PropensityTable.from_covariate(grid, v) for v in spec["covariate_tables"]], tag, c
        )
    if "treated_set" in spec:
        return rd_class(grid, spec["treated_set"], c)
    if "lattice" in spec:
        lat = spec["lattice"]
        step = lat["step"]
        uncon = lat.get("unconfounded", tag in ("OU", "U"))
        if tag in ("O", "OU"):
            return overlap_lattice(grid, c, step, uncon)
        if tag == "U":
            return weak_overlap_lattice(grid, c, step)
        n = round(1 / step)
        return propensity_lattice(grid, [k * step for k in range(n + 1)], uncon, tag, c)
    raise ConfigError("propensity spec needs members, constants, covariate_tables, treated_set or lattice")


def _distribution_from_spec(grid: Grid, spec: dict) -> DistributionClass:
    family = spec.get("family", "tabular")
    marg = spec.get("x_marginal")
    if family == "tabular":
        if "members" in spec:
            return DistributionClass(grid, [JointPMF(grid, m) for m in spec["members"]], "tabular")
        if "step" in spec:
            return pmf_lattice(grid, spec["step"], marg)
        raise ConfigError("tabular family needs members or step")
    if family == "poly_logdensity":
        return build_poly_logdensity_family(grid, spec["degree"], spec["lattice"], spec["bound"], marg)
    if family == "poly_expectation":
        return build_poly_expectation_family(
            grid, spec["degree"], spec["lattice"], spec.get("half_width", 0.5), marg
        )
    raise ConfigError(f"unknown distribution family {family!r}")


def pair_from_dict(d: dict) -> ClassPair:
    try:
        grid = grid_from_dict(d["grid"])
        return ClassPair(
            _propensity_from_spec(grid, d["propensity"]),
            _distribution_from_spec(grid, d["distributions"]),
        )
    except KeyError as exc:
        raise ConfigError(f"class spec is missing {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"invalid class spec: {exc}") from None


def pair_to_dict(pair: ClassPair) -> dict:
    """Explicit-member form of a class pair (lattices are expanded)."""
    pc = pair.p_class
    return {
        "grid": grid_to_dict(pair.grid),
        "propensity": {"tag": pc.tag, "c": pc.c, "members": [_table(p.value) for p in pc.members]},
        "distributions": {"family": "tabular", "members": [_table(d.mass) for d in pair.d_class.members]},
    }


def load_pair(path) -> ClassPair:
    return pair_from_dict(load_json(path))


def save_pair(pair: ClassPair, path) -> None:
    dump_json(pair_to_dict(pair), path)


def treated_set_from_spec(path_or_dict, grid: Grid):
    d = load_json(path_or_dict) if not isinstance(path_or_dict, dict) else path_or_dict
    spec = d.get("propensity", {})
    if "treated_set" not in spec:
        return None
    from .concepts import treated_mask

    return treated_mask(grid, spec["treated_set"])


# ------------------------------------------------------------------ samples


def save_samples(samples: CensoredSamples, path) -> None:
    g = samples.grid
    cov = g.covariates
    ys = g.outcomes
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{k}" for k in range(g.dim)] + ["t", "y"])
        for xi, t, yi in zip(samples.x_index, samples.t, samples.y_index):
            w.writerow([repr(float(v)) for v in cov[xi]] + [int(t), repr(float(ys[yi]))])


def load_samples(path, grid: Grid) -> CensoredSamples:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except FileNotFoundError:
        raise ConfigError(f"file not found: {path}") from None
    if not rows:
        raise ConfigError(f"{path}: empty sample file")
    d = grid.dim
    recs = []
    try:
        for r in rows[1:]:
            if not r:
                continue
            recs.append(([float(v) for v in r[:d]], int(r[d]), float(r[d + 1])))
        return CensoredSamples.from_records(grid, recs)
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"{path}: bad sample row ({exc})") from None


# ------------------------------------------------------------------ reports


def report_to_dict(report) -> dict:
    return round12(
        {
            "scenario": report.scenario,
            "tau_hat": report.tau_hat,
            "n": report.n,
            "seed": report.seed,
            "truth": report.truth,
            "error": report.error,
            "diagnostics": report.diagnostics,
        }
    )


def certificate_to_dict(cx) -> dict:
    return round12(
        {
            "kind": "certificate",
            "grid": grid_to_dict(cx.shared_censored.grid),
            "shared_censored": _table(cx.shared_censored.mass),
            "delta": {k: v for k, v in cx.delta.items()},
            "max_censored_difference": cx.certified_error,
        }
    )
