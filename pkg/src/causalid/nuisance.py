"""Nuisance estimation: propensity ERM, Yatracos selection and the L1 oracle."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .concepts import ClassPair, PropensityClass
from .core import CensoredPMF, CensoredSamples, Grid, JointPMF, PropensityTable
from .exceptions import EstimatorError, PreconditionError


@dataclass(frozen=True)
class EmpiricalCensored:
    """Counts per ``(x, t, y)`` cell."""

    grid: Grid
    counts: np.ndarray
    n: int

    def pmf(self) -> np.ndarray:
        if self.n == 0:
            raise EstimatorError("no samples")
        return self.counts / self.n


def empirical_censored(samples: CensoredSamples) -> EmpiricalCensored:
    g = samples.grid
    flat = (samples.x_index * 2 + samples.t) * g.n_y + samples.y_index
    counts = np.bincount(flat, minlength=g.n_x * 2 * g.n_y).reshape(g.n_x, 2, g.n_y)
    return EmpiricalCensored(g, counts, len(samples))


def _table(a):
    if isinstance(a, EmpiricalCensored):
        return a.grid, a.pmf()
    if isinstance(a, (CensoredPMF, JointPMF)):
        return a.grid, a.mass
    if isinstance(a, PropensityTable):
        return a.grid, a.value
    return None, np.asarray(a, dtype=float)


def l1_distance(a, b) -> float:
    """Summed absolute difference of two tables on the same grid."""
    ga, ta = _table(a)
    gb, tb = _table(b)
    if ga is not None and gb is not None and ga != gb:
        raise ValueError("tables live on different grids")
    if ta.shape != tb.shape:
        raise ValueError(f"shape mismatch {ta.shape} vs {tb.shape}")
    return float(np.abs(ta - tb).sum())


# ---------------------------------------------------------------- propensity


def _covariate_matrix(e_class, n_x: int | None = None) -> np.ndarray:
    members = e_class.members if isinstance(e_class, PropensityClass) else list(e_class)
    if not members:
        raise PreconditionError("propensity class is empty")
    rows = []
    for m in members:
        if isinstance(m, PropensityTable):
            rows.append(m.covariate_values())
        else:
            rows.append(np.asarray(m, dtype=float).reshape(-1))
    E = np.stack(rows)
    if n_x is not None and E.shape[1] != n_x:
        raise PreconditionError(f"propensity tables cover {E.shape[1]} covariates, grid has {n_x}")
    return E


def propensity_losses(x_index, t, e_class) -> np.ndarray:
    """Empirical squared loss of every class member."""
    x_index = np.asarray(x_index, dtype=np.int64)
    t = np.asarray(t, dtype=float)
    E = _covariate_matrix(e_class)
    n1 = np.bincount(x_index, weights=t, minlength=E.shape[1])
    n0 = np.bincount(x_index, weights=1 - t, minlength=E.shape[1])
    return (n1 * (1 - E) ** 2 + n0 * E ** 2).sum(axis=1)


class FiniteClassPropensity(BaseEstimator):
    """Squared-loss ERM over a finite list of covariate-only propensities.

    ``fit(X, t)`` takes covariate grid indices and treatment bits; ``predict``
    returns the selected ``e(x)``. Ties go to the lowest index.
    """

    def __init__(self, e_class=None):
        self.e_class = e_class

    def fit(self, X, t):
        X = np.asarray(X, dtype=np.int64).reshape(-1)
        t = np.asarray(t).reshape(-1)
        if len(X) == 0:
            raise EstimatorError("cannot fit a propensity on zero samples")
        if len(X) != len(t):
            raise ValueError("X and t differ in length")
        if self.e_class is None:
            raise PreconditionError("e_class is required")
        E = _covariate_matrix(self.e_class)
        if X.max() >= E.shape[1] or X.min() < 0:
            raise ValueError("covariate index outside the class tables")
        self.losses_ = propensity_losses(X, t, E)
        self.index_ = int(np.argmin(self.losses_))
        self.values_ = E[self.index_].copy()
        return self

    def predict(self, X):
        if not hasattr(self, "values_"):
            raise NotFittedError("FiniteClassPropensity is not fitted")
        return self.values_[np.asarray(X, dtype=np.int64)]


def select_propensity(samples: CensoredSamples, e_class) -> tuple[int, PropensityTable]:
    """Index and table of the squared-loss minimizer; ties go to the lowest index."""
    if len(samples) == 0:
        raise EstimatorError("cannot fit a propensity on zero samples")
    E = _covariate_matrix(e_class, samples.grid.n_x)
    idx = int(np.argmin(propensity_losses(samples.x_index, samples.t, E)))
    members = e_class.members if isinstance(e_class, PropensityClass) else list(e_class)
    m = members[idx]
    if not isinstance(m, PropensityTable):
        m = PropensityTable.from_covariate(samples.grid, E[idx])
    return idx, m


def estimate_propensity(samples: CensoredSamples, e_class) -> PropensityTable:
    """Class member minimizing the empirical squared loss of ``t`` on ``e(x)``."""
    return select_propensity(samples, e_class)[1]


# ---------------------------------------------------------------- Yatracos


def yatracos_sample_size(m: int, zeta: float, delta: float) -> int:
    """Samples sufficient for the 3 min + 4 zeta guarantee with M candidates."""
    return math.ceil(math.log(3 * m * m / delta) / (2 * zeta * zeta))


def scheffe_masses(candidates: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """``out[i, j]`` is the ``weights`` mass of ``A_ij = {f_i > f_j}``."""
    F = np.asarray(candidates, dtype=float)
    out = np.empty((len(F), len(F)))
    for i in range(len(F)):
        out[i] = ((F[i][None, :] > F) * weights[None, :]).sum(axis=1)
    return out


def yatracos_scores(candidates, empirical) -> np.ndarray:
    """``max_i |f_j(A_ij) - emp(A_ij)|`` for every candidate ``j``."""
    F = np.asarray(candidates, dtype=float).reshape(len(candidates), -1)
    emp = np.asarray(empirical, dtype=float).reshape(-1)
    G = F - emp[None, :]
    scores = np.zeros(len(F))
    for i in range(len(F)):
        # row j of the mask is A_ij; the masked sum of G is f_j(A_ij) - emp(A_ij)
        dev = np.abs(np.einsum("jk,jk->j", F[i][None, :] > F, G))
        np.maximum(scores, dev, out=scores)
    return scores


def yatracos_select(candidates, samples, zeta: float) -> int:
    """Minimum-distance choice among candidate pmfs on a shared finite space.

    ``samples`` are flat cell indices into the candidates' space. ``zeta``
    only sets the accuracy target of the guarantee; the selection rule itself
    does not depend on it. Ties go to the lowest index.
    """
    if len(candidates) == 0:
        raise PreconditionError("no candidates")
    if zeta <= 0:
        raise ValueError("zeta must be positive")
    F = np.asarray([np.asarray(c, dtype=float).reshape(-1) for c in candidates])
    cells = np.asarray(samples, dtype=np.int64).reshape(-1)
    if len(cells) == 0:
        raise EstimatorError("no samples")
    emp = np.bincount(cells, minlength=F.shape[1]) / len(cells)
    if len(emp) != F.shape[1]:
        raise ValueError("sample cell index outside the candidate space")
    return int(np.argmin(yatracos_scores(F, emp)))


# ---------------------------------------------------------------- L1 oracle


@dataclass(frozen=True, eq=False)
class CandidateProduct:
    p: PropensityTable
    P: JointPMF
    arm: int
    z: float
    p_index: int = -1
    d_index: int = -1

    @property
    def product(self) -> np.ndarray:
        return self.p.value * self.P.mass

    @property
    def normalized(self) -> np.ndarray:
        return self.product / self.z


@dataclass(frozen=True, eq=False)
class ArmSelection:
    """Winner of one arm's tournament.

    ``estimate`` is the normalized winner rescaled by the empirical arm
    probability.
    """

    candidate: CandidateProduct
    estimate: np.ndarray
    arm_probability: float
    n_candidates: int
    n_kept: int


@dataclass(frozen=True, eq=False)
class OracleResult:
    treated: ArmSelection
    control: ArmSelection

    def tuples(self):
        """``((p, P), (q, Q))`` for the treated and control arms."""
        a, b = self.treated.candidate, self.control.candidate
        return (a.p, a.P), (b.p, b.P)

    def __iter__(self):
        return iter(self.tuples())


def candidate_products(pair: ClassPair, arm: int) -> list[CandidateProduct]:
    out = []
    for i, p in enumerate(pair.p_class.members):
        for j, P in enumerate(pair.d_class.members):
            out.append(CandidateProduct(p, P, arm, float((p.value * P.mass).sum()), i, j))
    return out


def oracle_arm(pair: ClassPair, samples: CensoredSamples, arm: int, eps: float, eta: float) -> ArmSelection:
    """One tournament: which ``p P`` best explains the arm's samples."""
    if not 0 < eta <= 0.5:
        raise ValueError("eta must lie in (0, 1/2]")
    if eps <= 0:
        raise ValueError("eps must be positive")
    if samples.grid != pair.grid:
        raise ValueError("samples and classes use different grids")
    if len(samples) == 0:
        raise EstimatorError("no samples")
    sel = samples.t == arm
    n_arm = int(sel.sum())
    if n_arm == 0:
        raise EstimatorError(f"arm {arm} has no samples")
    cands = candidate_products(pair, arm)
    kept = [c for c in cands if c.z >= eta - eps]
    if not kept:
        raise EstimatorError(f"arm mass below eta-eps for arm {arm}")
    cells = samples.x_index[sel] * pair.grid.n_y + samples.y_index[sel]
    j = yatracos_select([c.normalized for c in kept], cells, eps / 8)
    pi_hat = n_arm / len(samples)
    win = kept[j]
    return ArmSelection(win, win.normalized * pi_hat, pi_hat, len(cands), len(kept))


def l1_oracle(pair: ClassPair, samples: CensoredSamples, eps: float, eta: float) -> OracleResult:
    """Approximate ``p_1 d_1`` and ``p_0 d_0`` by class products.

    Candidates with arm mass below ``eta - eps`` are ignored; each arm runs a
    Yatracos tournament over normalized products with ``zeta = eps / 8``.
    """
    return OracleResult(
        oracle_arm(pair, samples, 1, eps, eta), oracle_arm(pair, samples, 0, eps, eta)
    )
