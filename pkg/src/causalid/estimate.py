"""ATE estimators for the three scenarios and the RD design.

Every estimator reads censored samples and class specifications only. The
estimators are available both as functions returning an ``EstimateReport``
and as scikit-learn style estimators whose ``fit(samples)`` stores the report.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .concepts import (
    ClassPair,
    DistributionClass,
    PropensityClass,
    member_check,
    rd_class,
    treated_mask,
)
from .core import CensoredSamples, Grid, PropensityTable
from .exceptions import EstimatorError, PreconditionError
from .nuisance import estimate_propensity, l1_oracle, oracle_arm, select_propensity


@dataclass(frozen=True)
class EstimateReport:
    tau_hat: float
    scenario: str
    n: int
    seed: int | None = None
    diagnostics: dict = field(default_factory=dict)
    truth: float | None = None

    @property
    def error(self) -> float | None:
        return None if self.truth is None else abs(self.tau_hat - self.truth)

    def with_truth(self, truth: float, seed: int | None = None) -> "EstimateReport":
        return replace(self, truth=float(truth), seed=self.seed if seed is None else seed)


def check_samples(samples, grid: Grid | None = None) -> CensoredSamples:
    """Coerce to ``CensoredSamples`` and confirm the grid."""
    if not isinstance(samples, CensoredSamples):
        if grid is None:
            raise TypeError("plain sample records need a grid")
        samples = CensoredSamples.from_records(grid, samples)
    if grid is not None and samples.grid != grid:
        raise ValueError("samples and classes use different grids")
    if len(samples) == 0:
        raise EstimatorError("no samples")
    return samples


def _ipw(samples: CensoredSamples, e: np.ndarray, c: float | None) -> float:
    ex = e[samples.x_index]
    if c is not None:
        bad = (ex <= c) | (ex >= 1 - c)
        if bad.any():
            raise EstimatorError(f"fitted propensity leaves ({c}, {1 - c}) on observed covariates")
    elif np.any((ex <= 0) | (ex >= 1)):
        raise EstimatorError("fitted propensity is 0 or 1 on observed covariates")
    y, t = samples.y, samples.t
    return float(np.mean(y * t / ex) - np.mean(y * (1 - t) / (1 - ex)))


def estimate_scenario1(samples, e_class, c: float | None = None, propensity=None) -> EstimateReport:
    """Inverse propensity weighting with a learned or known propensity.

    Without ``propensity`` the first half of the samples selects ``e`` from
    ``e_class`` and the second half is weighted. A known ``propensity``
    (covariate values or table) uses every sample for weighting.
    """
    samples = check_samples(samples)
    diag = {}
    if propensity is None:
        fit_part, est_part = samples.split(2)
        if len(fit_part) == 0 or len(est_part) == 0:
            raise EstimatorError("need at least two samples to split")
        idx, e_tab = select_propensity(fit_part, e_class)
        diag["propensity_index"] = idx
        e = e_tab.covariate_values()
        diag["n_fit"] = len(fit_part)
    else:
        est_part = samples
        e = (
            propensity.covariate_values()
            if isinstance(propensity, PropensityTable)
            else np.broadcast_to(np.asarray(propensity, float), (samples.grid.n_x,)).copy()
        )
        diag["propensity_index"] = None
        diag["n_fit"] = 0
    diag["propensity"] = e.tolist()
    diag["m"] = len(est_part)
    tau = _ipw(est_part, e, c)
    return EstimateReport(tau, "1", len(samples), diagnostics=diag)


def compute_mass_function(d_class: DistributionClass, c: float, eps: float) -> float:
    """Largest ``M`` with ``P(S*), Q(S*) >= M / c`` for all pairs with mean gap > eps.

    ``S*`` collects the cells whose ratio leaves ``(c/(2(1-c)), 2(1-c)/c)``.
    Returns 1 when no pair is separated by more than ``eps``, and 0 (with a
    warning) when some pair has no such cell.
    """
    lo, hi = c / (2 * (1 - c)), 2 * (1 - c) / c
    means = d_class.means()
    masses = d_class.stacked()
    best = None
    for a, b in itertools.combinations(range(len(d_class)), 2):
        if abs(means[a] - means[b]) <= eps:
            continue
        P, Q = masses[a], masses[b]
        live = (P > 0) | (Q > 0)
        out = live & ((P <= lo * Q) | (P >= hi * Q))
        m = c * min(P[out].sum(), Q[out].sum())
        best = m if best is None else min(best, m)
    if best is None:
        return 1.0
    if best <= 0:
        warnings.warn("mass function is 0: some separated pair has no detectable ratio set")
    return float(best)


def mass_function(d_class: DistributionClass, c: float):
    """``eps -> compute_mass_function(d_class, c, eps)``."""
    return lambda eps: compute_mass_function(d_class, c, eps)


def estimate_scenario2(
    samples,
    pair: ClassPair,
    mass_fn=None,
    eps: float = 0.1,
    c: float | None = None,
    eta: float | None = None,
) -> EstimateReport:
    """Overlap without unconfoundedness: pick class products, difference means.

    The oracle runs at accuracy ``M(eps/2)/2``. ``mass_fn`` may be a callable,
    a number, or ``None`` to compute it from the distribution class.
    """
    samples = check_samples(samples, pair.grid)
    c = pair.p_class.c if c is None else c
    if c is None:
        raise PreconditionError("an overlap constant c is required")
    for k, p in enumerate(pair.p_class.members):
        if not member_check(p, "O", c):
            raise PreconditionError(f"propensity member {k} violates c-overlap")
    if mass_fn is None:
        m = compute_mass_function(pair.d_class, c, eps / 2)
    elif callable(mass_fn):
        m = float(mass_fn(eps / 2))
    else:
        m = float(mass_fn)
    if m <= 0:
        raise PreconditionError("mass function vanishes at eps/2; the class is not separable")
    acc = m / 2
    eta = c if eta is None else eta
    res = l1_oracle(pair, samples, acc, eta)
    t1, t0 = res.treated.candidate, res.control.candidate
    tau = t1.P.mean() - t0.P.mean()
    diag = {
        "mass": m,
        "oracle_accuracy": acc,
        "eta": eta,
        "treated_pick": [t1.p_index, t1.d_index],
        "control_pick": [t0.p_index, t0.d_index],
        "candidates_kept": [res.treated.n_kept, res.control.n_kept],
    }
    return EstimateReport(float(tau), "2", len(samples), diagnostics=diag)


def _e_class_from(p_class: PropensityClass) -> list[np.ndarray]:
    out, seen = [], set()
    for p in p_class.members:
        v = p.covariate_values()
        key = v.tobytes()
        if key not in seen:
            seen.add(key)
            out.append(v)
    return out


def estimate_scenario3(
    samples,
    pair: ClassPair,
    c: float | None = None,
    eps: float = 0.01,
    propensity=None,
) -> EstimateReport:
    """Unconfoundedness with weak overlap: learn where each arm is observed,
    fit the product there, then extrapolate through the distribution class.

    With a known ``propensity`` (covariate values of ``e``) the propensity
    fitting fold is skipped and the samples are split in two, otherwise in
    three. Per arm: ``S_t = {e_t >= c - eps}``; members with ``P(S_t) <
    c - sqrt(eps)`` are dropped; the oracle picks ``(p, P)`` for the arm; the
    reported member minimizes the L1 gap to ``p P / e_t`` over ``S_t``. The
    last fold only feeds a held-out diagnostic.
    """
    samples = check_samples(samples, pair.grid)
    grid = pair.grid
    c = pair.p_class.c if c is None else c
    if c is None or not 0 < c < 0.25:
        raise PreconditionError("c must lie in (0, 1/4)")
    if eps <= 0:
        raise ValueError("eps must be positive")
    pi = float(np.mean(samples.t))
    if not 2 * c < pi < 1 - 2 * c:
        raise PreconditionError(f"empirical Pr[T=1] = {pi:.6g} is outside (2c, 1-2c)")
    diag: dict = {"pr_treated": pi}
    if propensity is None:
        for k, p in enumerate(pair.p_class.members):
            if not member_check(p, "U", c):
                raise PreconditionError(f"propensity member {k} violates c-weak-overlap")
        fold1, fold2, fold3 = samples.split(3)
        e = estimate_propensity(fold1, _e_class_from(pair.p_class)).covariate_values()
        diag["propensity_fit"] = "learned"
    else:
        fold2, fold3 = samples.split(2)
        e = np.asarray(
            propensity.covariate_values() if isinstance(propensity, PropensityTable) else propensity,
            dtype=float,
        )
        diag["propensity_fit"] = "known"
    diag["propensity"] = e.tolist()
    means = {}
    for t in (1, 0):
        e_t = e if t == 1 else 1.0 - e
        s = e_t >= c - eps
        if not s.any():
            raise EstimatorError(f"weak-overlap region not found for arm {t}")
        keep = [
            j for j, P in enumerate(pair.d_class.members) if P.x_marginal[s].sum() >= c - math.sqrt(eps)
        ]
        if not keep:
            raise EstimatorError(f"all distributions eliminated for arm {t}")
        sub = DistributionClass(grid, [pair.d_class[j] for j in keep], pair.d_class.family)
        arm = oracle_arm(ClassPair(pair.p_class, sub), fold2, t, eps, 2 * c)
        target = arm.candidate.product[s] / e_t[s][:, None]
        gaps = [np.abs(pair.d_class[j].mass[s] - target).sum() for j in keep]
        pick = keep[int(np.argmin(gaps))]
        chosen = pair.d_class[pick]
        means[t] = chosen.mean()
        info = {
            "region": np.flatnonzero(s).tolist(),
            "eliminated": len(pair.d_class) - len(keep),
            "oracle_pick": [arm.candidate.p_index, keep[arm.candidate.d_index]],
            "selected": pick,
            "objective": float(min(gaps)),
        }
        if len(fold3):
            sel = fold3.t == t
            emp = np.zeros(grid.shape)
            np.add.at(emp, (fold3.x_index[sel], fold3.y_index[sel]), 1.0 / len(fold3))
            info["holdout_gap"] = float(np.abs(chosen.mass[s] - emp[s] / e_t[s][:, None]).sum())
        diag[f"arm{t}"] = info
    return EstimateReport(float(means[1] - means[0]), "3", len(samples), diagnostics=diag)


def estimate_rd(samples, S, d_class: DistributionClass, c: float, eps: float = 0.01) -> EstimateReport:
    """Regression discontinuity: treatment is ``1{x in S}`` and known.

    The effect on each side is extrapolated through the structure of
    ``d_class``.
    """
    grid = d_class.grid
    samples = check_samples(samples, grid)
    s = treated_mask(grid, S)
    if np.any(samples.t != s[samples.x_index].astype(int)):
        raise EstimatorError("not an RD design: treatment disagrees with the indicator of S")
    pair = ClassPair(rd_class(grid, s, c), d_class)
    rep = estimate_scenario3(samples, pair, c, eps, propensity=s.astype(float))
    diag = dict(rep.diagnostics)
    diag["extrapolation"] = "distribution class structure"
    return replace(rep, scenario="rd", diagnostics=diag)


def compute_extrapolation_constant(d_class: DistributionClass, c: float, cap: int = 12) -> float:
    """Largest ratio of mean gap to truncated TV distance over pairs and sets.

    Sets ``S`` range over covariate subsets with ``vol(S) > c``: all of them
    when the covariate grid has at most ``cap`` points, otherwise a greedy
    descent that starts from the full grid and removes the point raising
    the ratio most. ``0/0`` counts as 0 and a positive gap over zero
    distance as infinity.
    """
    grid = d_class.grid
    nx = grid.n_x
    means = d_class.means()
    masses = d_class.stacked()

    def ratio(a, b, s):
        P, Q = masses[a][s], masses[b][s]
        zp, zq = P.sum(), Q.sum()
        if zp <= 0 or zq <= 0:
            return 0.0
        tv = 0.5 * np.abs(P / zp - Q / zq).sum()
        gap = abs(means[a] - means[b])
        if tv <= 1e-12:
            return math.inf if gap > 1e-9 else 0.0
        return gap / tv

    best = 0.0
    for a, b in itertools.combinations(range(len(d_class)), 2):
        if nx <= cap:
            for bits in itertools.product((False, True), repeat=nx):
                s = np.array(bits)
                if grid.volume(s) > c:
                    best = max(best, ratio(a, b, s))
        else:
            s = np.ones(nx, dtype=bool)
            cur = ratio(a, b, s)
            best = max(best, cur)
            while True:
                moves = []
                for i in np.flatnonzero(s):
                    s2 = s.copy()
                    s2[i] = False
                    if grid.volume(s2) > c:
                        moves.append((ratio(a, b, s2), i))
                if not moves:
                    break
                r, i = max(moves, key=lambda m: (m[0], -m[1]))
                if r <= cur:
                    break
                s[i] = False
                cur = r
                best = max(best, cur)
        if math.isinf(best):
            return best
    return best


def naive_arm_difference(samples_or_study) -> float:
    """Difference of observed arm means, from samples or exactly from a study."""
    from .core import ObservationalStudy, censor

    if isinstance(samples_or_study, ObservationalStudy):
        cm = censor(samples_or_study).mass
        y = samples_or_study.grid.outcomes
        m1 = (cm[:, 1, :] * y).sum() / cm[:, 1, :].sum()
        m0 = (cm[:, 0, :] * y).sum() / cm[:, 0, :].sum()
        return float(m1 - m0)
    s = samples_or_study
    return float(s.y[s.t == 1].mean() - s.y[s.t == 0].mean())


def ipw_population(study, e=None) -> float:
    """Population value of the IPW estimand using a covariate propensity.

    Defaults to the true ``e(x)``. Under unconfoundedness this equals the
    ATE; otherwise the difference is the bias of IPW.
    """
    from .core import censor

    cm = censor(study).mass
    y = study.grid.outcomes
    if e is None:
        e = cm[:, 1, :].sum(axis=1) / cm.sum(axis=(1, 2)).clip(min=1e-300)
    e = np.asarray(e, float)
    sup = cm.sum(axis=(1, 2)) > 0
    t1 = (cm[sup, 1, :] * y).sum(axis=1) / e[sup]
    t0 = (cm[sup, 0, :] * y).sum(axis=1) / (1 - e[sup])
    return float(t1.sum() - t0.sum())


# ------------------------------------------------------------ estimator API


class _ReportEstimator(BaseEstimator):
    def _check_fitted(self):
        if not hasattr(self, "report_"):
            raise NotFittedError(f"{type(self).__name__} is not fitted")

    def _store(self, report: EstimateReport):
        self.report_ = report
        self.ate_ = report.tau_hat
        return self

    def predict(self, X=None) -> float:
        """The fitted ATE (the estimand is a single number)."""
        self._check_fitted()
        return self.ate_


class IPWEstimator(_ReportEstimator):
    """Scenario I: unconfoundedness and overlap."""

    def __init__(self, e_class=None, c=None, propensity=None):
        self.e_class = e_class
        self.c = c
        self.propensity = propensity

    def fit(self, samples, y=None):
        return self._store(estimate_scenario1(samples, self.e_class, self.c, self.propensity))


class OverlapEstimator(_ReportEstimator):
    """Scenario II: overlap without unconfoundedness."""

    def __init__(self, pair=None, mass_fn=None, eps=0.1, c=None, eta=None):
        self.pair = pair
        self.mass_fn = mass_fn
        self.eps = eps
        self.c = c
        self.eta = eta

    def fit(self, samples, y=None):
        if self.pair is None:
            raise PreconditionError("pair is required")
        return self._store(estimate_scenario2(samples, self.pair, self.mass_fn, self.eps, self.c, self.eta))


class WeakOverlapEstimator(_ReportEstimator):
    """Scenario III: unconfoundedness with weak overlap."""

    def __init__(self, pair=None, c=None, eps=0.01):
        self.pair = pair
        self.c = c
        self.eps = eps

    def fit(self, samples, y=None):
        if self.pair is None:
            raise PreconditionError("pair is required")
        return self._store(estimate_scenario3(samples, self.pair, self.c, self.eps))


class RDEstimator(_ReportEstimator):
    """Regression discontinuity with a known treated set."""

    def __init__(self, treated=None, d_class=None, c=0.2, eps=0.01):
        self.treated = treated
        self.d_class = d_class
        self.c = c
        self.eps = eps

    def fit(self, samples, y=None):
        if self.d_class is None or self.treated is None:
            raise PreconditionError("treated set and d_class are required")
        return self._store(estimate_rd(samples, self.treated, self.d_class, self.c, self.eps))
