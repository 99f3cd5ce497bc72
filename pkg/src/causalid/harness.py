"""Monte Carlo experiment runner and file-level orchestration.

Per-replica seeds come from ``numpy.random.SeedSequence`` with the master seed
as entropy and ``(n, replica)`` as spawn key, so a replica's draws do not
depend on the n-grid order, on other replicas, or on the worker count.
"""

from __future__ import annotations

import csv
import io as _io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import io
from .concepts import ClassPair
from .core import ate, censor, sample_censored
from .estimate import (
    EstimateReport,
    estimate_rd,
    estimate_scenario1,
    estimate_scenario2,
    estimate_scenario3,
)
from .exceptions import CausalIdError, ConfigError, IdentificationError, PreconditionError
from .identify import (
    brute_force_identifiable,
    build_indistinguishable_pair,
    build_overlap_zero_counterexample,
    build_scenario3_counterexample,
    check_condition1,
    check_condition3,
    check_condition6,
)
from .instances import INSTANCES, Instance, get_instance

EXIT_OK = 0
EXIT_NOTHING = 1
EXIT_CONFIG = 2
EXIT_PRECONDITION = 3
EXIT_NOT_IDENTIFIED = 4

SCENARIO_NAMES = ("1", "2", "3", "rd")

CSV_COLUMNS = ["n", "replica", "seed", "tau_hat", "truth", "error", "status", "message"]


def replica_seed(master: int, n: int, replica: int) -> int:
    """64-bit seed for one replica, derived from the master seed."""
    ss = np.random.SeedSequence(entropy=int(master), spawn_key=(int(n), int(replica)))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    scenario: str = "1"
    instance: str | None = None
    study: str | None = None
    classes: str | None = None
    n_grid: list = field(default_factory=lambda: [1000])
    replicas: int = 10
    seed: int = 0
    eps: float | None = None
    c: float | None = None
    eta: float | None = None
    delta: float = 0.1
    tolerance: float = 0.1
    known_propensity: bool = False
    output_dir: str | None = None
    workers: int = 1

    @classmethod
    def from_dict(cls, d: dict, base_dir=None) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        cfg = cls(**d)
        cfg.scenario = str(cfg.scenario).lower()
        if cfg.scenario not in SCENARIO_NAMES:
            raise ConfigError(f"scenario must be one of {SCENARIO_NAMES}")
        if cfg.instance is None and (cfg.study is None or cfg.classes is None):
            raise ConfigError("config needs an instance name or both study and classes files")
        if cfg.instance is not None and cfg.instance not in INSTANCES:
            raise ConfigError(f"unknown instance {cfg.instance!r}")
        try:
            cfg.n_grid = [int(n) for n in cfg.n_grid]
            cfg.replicas = int(cfg.replicas)
            cfg.seed = int(cfg.seed)
            cfg.workers = int(cfg.workers)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad numeric config value: {exc}") from None
        if cfg.replicas < 0 or any(n <= 0 for n in cfg.n_grid) or cfg.workers < 1:
            raise ConfigError("replicas must be >= 0, n values > 0 and workers >= 1")
        if base_dir is not None:
            for key in ("study", "classes", "output_dir"):
                v = getattr(cfg, key)
                if v is not None and not Path(v).is_absolute():
                    setattr(cfg, key, str(Path(base_dir) / v))
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(io.load_json(path), Path(path).parent)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ReplicaRecord:
    n: int
    replica: int
    seed: int
    tau_hat: float
    truth: float
    status: str
    message: str = ""

    @property
    def error(self) -> float:
        return abs(self.tau_hat - self.truth) if self.status == "ok" else math.inf

    def row(self) -> list[str]:
        return [
            str(self.n),
            str(self.replica),
            str(self.seed),
            io.fmt12(self.tau_hat),
            io.fmt12(self.truth),
            io.fmt12(self.error) if self.status == "ok" else "",
            self.status,
            self.message,
        ]


@dataclass
class RunSummary:
    config: ExperimentConfig
    records: list
    aggregates: dict
    seconds: float

    def csv_text(self) -> str:
        buf = _io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.records:
            w.writerow(r.row())
        return buf.getvalue()

    def summary_dict(self) -> dict:
        return io.round12(
            {
                "name": self.config.name,
                "scenario": self.config.scenario,
                "replicas": self.config.replicas,
                "tolerance": self.config.tolerance,
                "aggregates": self.aggregates,
                "seconds": self.seconds,
            }
        )


def resolve_instance(cfg: ExperimentConfig) -> Instance:
    if cfg.instance is not None:
        inst = get_instance(cfg.instance)
    else:
        study = io.load_study(cfg.study)
        spec = io.load_json(cfg.classes)
        pair = io.pair_from_dict(spec)
        params = {}
        mask = io.treated_set_from_spec(spec, pair.grid)
        if mask is not None:
            params["treated"] = mask.tolist()
        c = pair.p_class.c if pair.p_class.c is not None else 0.1
        inst = Instance(cfg.name, cfg.scenario, study, pair, c, 0.1, params)
    return inst


def run_estimator(
    scenario: str,
    samples,
    pair: ClassPair,
    c: float,
    eps: float,
    eta: float | None = None,
    treated=None,
    propensity=None,
) -> EstimateReport:
    """Dispatch to the scenario's estimator; sees only samples and classes."""
    if scenario == "1":
        return estimate_scenario1(samples, pair.p_class, c, propensity)
    if scenario == "2":
        return estimate_scenario2(samples, pair, None, eps, c, eta)
    if scenario == "3":
        return estimate_scenario3(samples, pair, c, eps)
    if scenario == "rd":
        if treated is None:
            raise PreconditionError("RD estimation needs a treated set")
        return estimate_rd(samples, np.asarray(treated, dtype=bool), pair.d_class, c, eps)
    raise ConfigError(f"unknown scenario {scenario!r}")


@lru_cache(maxsize=8)
def _prepared(cfg_json: str):
    cfg = ExperimentConfig.from_dict(json.loads(cfg_json))
    inst = resolve_instance(cfg)
    return cfg, inst, censor(inst.study), ate(inst.study)


def _run_one(cfg_json: str, n: int, replica: int) -> ReplicaRecord:
    cfg, inst, cpmf, truth = _prepared(cfg_json)
    seed = replica_seed(cfg.seed, n, replica)
    samples = sample_censored(cpmf, n, seed)
    c = cfg.c if cfg.c is not None else inst.c
    eps = cfg.eps if cfg.eps is not None else inst.eps
    propensity = None
    if cfg.known_propensity:
        # the true propensity is a class-level input here, not read from the study
        propensity = np.asarray(inst.params.get("true_e"), dtype=float)
    try:
        rep = run_estimator(
            cfg.scenario, samples, inst.pair, c, eps, cfg.eta, inst.params.get("treated"), propensity
        )
    except CausalIdError as exc:
        return ReplicaRecord(n, replica, seed, math.nan, truth, "error", str(exc))
    return ReplicaRecord(n, replica, seed, rep.tau_hat, truth, "ok")


def aggregate(records, n_grid, tolerance: float) -> dict:
    out = {}
    for n in n_grid:
        rs = [r for r in records if r.n == n]
        if not rs:
            out[str(n)] = {"replicas": 0, "median_error": None, "success_frequency": None, "undefined": True}
            continue
        errs = np.array([r.error for r in rs])
        out[str(n)] = {
            "replicas": len(rs),
            "median_error": float(np.median(errs)),
            "success_frequency": float(np.mean(errs <= tolerance)),
            "failures": int(sum(r.status != "ok" for r in rs)),
            "undefined": False,
        }
    return out


def run_experiment(config) -> RunSummary:
    """Run every ``(n, replica)`` cell of the config and write the outputs."""
    cfg = config if isinstance(config, ExperimentConfig) else ExperimentConfig.from_dict(config)
    cfg_json = json.dumps(cfg.to_dict(), sort_keys=True)
    _prepared(cfg_json)  # surface config errors before any work
    tasks = [(n, r) for n in cfg.n_grid for r in range(cfg.replicas)]
    start = time.perf_counter()
    if cfg.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            records = list(
                ex.map(_run_one, [cfg_json] * len(tasks), [t[0] for t in tasks], [t[1] for t in tasks])
            )
    else:
        records = [_run_one(cfg_json, n, r) for n, r in tasks]
    seconds = time.perf_counter() - start
    summary = RunSummary(cfg, records, aggregate(records, cfg.n_grid, cfg.tolerance), seconds)
    if cfg.output_dir:
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "replicas.csv").write_text(summary.csv_text())
        io.dump_json(summary.summary_dict(), out / "summary.json")
    return summary


# ------------------------------------------------------------ identification


def _write_counterexample(cx, out_dir, stem: str = "") -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "study1": out / f"{stem}study1.json",
        "study2": out / f"{stem}study2.json",
        "certificate": out / f"{stem}certificate.json",
    }
    io.save_study(cx.study1, paths["study1"])
    io.save_study(cx.study2, paths["study2"])
    io.dump_json(io.certificate_to_dict(cx), paths["certificate"])
    return {k: str(v) for k, v in paths.items()}


def _witness_record(w) -> dict:
    return {"first": list(w.first), "second": list(w.second), "requirements": w.requirements, "detail": w.detail}


def run_identify(config: dict) -> tuple[int, dict]:
    """Check identifiability of an estimand for a class-spec file.

    Returns ``(exit_code, report)``; on failure a certified counterexample
    is written to ``output_dir`` and the exit code is 4.
    """
    try:
        pair = io.load_pair(config["classes"])
    except KeyError:
        raise ConfigError("identify config needs 'classes'") from None
    estimand = str(config.get("estimand", "ate")).lower()
    if estimand not in ("ate", "att", "hte"):
        raise ConfigError("estimand must be ate, att or hte")
    verdict = check_condition6(pair) if estimand == "hte" else check_condition1(pair)
    report = {
        "estimand": estimand,
        "condition": verdict.condition,
        "holds": verdict.holds,
        "identifiable": verdict.holds,
        "scope": verdict.scope,
        "pairs_checked": verdict.pairs_checked,
    }
    if verdict.holds:
        return EXIT_OK, report
    report["witness"] = _witness_record(verdict.witness)
    try:
        cx = build_indistinguishable_pair(verdict.witness, pair, estimand)
    except IdentificationError as exc:
        # Condition 6 can fail while conditional means still agree; fall back
        # to the direct definition for the final answer
        bf = brute_force_identifiable(pair, estimand)
        report["note"] = f"witness gives no {estimand} gap ({exc}); decided by enumeration"
        report["identifiable"] = bf.identifiable
        if bf.identifiable:
            return EXIT_OK, report
        cx = bf.counterexample
    report["delta"] = io.round12(cx.delta)
    if config.get("output_dir"):
        report["files"] = _write_counterexample(cx, config["output_dir"])
    return EXIT_NOT_IDENTIFIED, report


def run_counterexample(config: dict) -> tuple[int, dict]:
    """Build a counterexample of the requested kind from a class-spec file.

    Kinds: ``condition1`` (default), ``condition3`` (agreement-set
    construction) and ``overlap_zero`` (a propensity vanishing at two
    outcomes). Exit code 0 when a pair is written, 1 when there is nothing
    to construct.
    """
    try:
        pair = io.load_pair(config["classes"])
    except KeyError:
        raise ConfigError("counterexample config needs 'classes'") from None
    kind = config.get("kind", "condition1")
    report = {"kind": kind}
    cx = None
    if kind == "condition1":
        v = check_condition1(pair)
        if not v.holds:
            report["witness"] = _witness_record(v.witness)
            cx = build_indistinguishable_pair(v.witness, pair)
    elif kind == "condition3":
        c = config.get("c", pair.p_class.c)
        if c is None:
            raise ConfigError("condition3 needs c")
        v = check_condition3(pair.d_class, c)
        if not v.holds:
            P, Q = v.witness.P, v.witness.Q
            agree = np.all(np.abs(P.mass - Q.mass) <= 1e-9, axis=1)
            report["witness"] = _witness_record(v.witness)
            cx = build_scenario3_counterexample(P, Q, agree, c)
    elif kind == "overlap_zero":
        for k, p in enumerate(pair.p_class.members):
            for i in range(pair.grid.n_x):
                zeros = np.flatnonzero(p.value[i] == 0)
                if len(zeros) >= 2:
                    g = pair.grid
                    cx = build_overlap_zero_counterexample(
                        p, g.covariate_value(i), g.outcome_points[zeros[0]], g.outcome_points[zeros[1]]
                    )
                    report["propensity_member"] = k
                    break
            if cx is not None:
                break
    else:
        raise ConfigError(f"unknown counterexample kind {kind!r}")
    if cx is None:
        report["constructed"] = False
        return EXIT_NOTHING, report
    report["constructed"] = True
    report["delta"] = io.round12(cx.delta)
    if config.get("output_dir"):
        report["files"] = _write_counterexample(cx, config["output_dir"])
    return EXIT_OK, report
