"""Exact discrete observational studies: grids, pmfs, censoring, sampling, effects.

A study is stored as the two covariate-outcome pmfs ``d0`` and ``d1`` and the
two generalized propensity tables ``p0`` and ``p1`` with
``p_t(x, y) = Pr[T = t | X = x, Y(t) = y]``. Everything lives on a finite
``Grid`` so that all expectations are exact sums.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .exceptions import InvalidStudyError, PreconditionError

ATOL = 1e-9
"""Per-cell tolerance for pmf equality and condition checks."""

CERT_ATOL = 1e-12
"""Per-cell tolerance demanded from exact counterexample constructions."""

SCENARIOS = ("I", "II", "III", "RD")


def _readonly(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Grid:
    """Finite covariate grid times finite outcome grid.

    Scalars in ``covariate_points`` are promoted to 1-tuples so that ``d = 1``
    and ``d > 1`` share one code path.
    """

    covariate_points: tuple
    outcome_points: tuple

    def __post_init__(self):
        cov = tuple(
            tuple(float(v) for v in np.atleast_1d(pt)) for pt in self.covariate_points
        )
        out = tuple(float(v) for v in self.outcome_points)
        if not cov or not out:
            raise ValueError("grid must have at least one covariate and one outcome point")
        if len({len(pt) for pt in cov}) != 1:
            raise ValueError("covariate points must share one dimension")
        if len(set(cov)) != len(cov):
            raise ValueError("covariate points must be distinct")
        if len(set(out)) != len(out):
            raise ValueError("outcome points must be distinct")
        object.__setattr__(self, "covariate_points", cov)
        object.__setattr__(self, "outcome_points", out)
        object.__setattr__(self, "_x_lookup", {pt: i for i, pt in enumerate(cov)})
        object.__setattr__(self, "_y_lookup", {v: j for j, v in enumerate(out)})

    @property
    def n_x(self) -> int:
        return len(self.covariate_points)

    @property
    def n_y(self) -> int:
        return len(self.outcome_points)

    @property
    def dim(self) -> int:
        return len(self.covariate_points[0])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_x, self.n_y)

    @property
    def covariates(self) -> np.ndarray:
        """Covariate points as an ``(n_x, d)`` array."""
        return np.array(self.covariate_points, dtype=float)

    @property
    def outcomes(self) -> np.ndarray:
        return np.array(self.outcome_points, dtype=float)

    def covariate_index(self, x) -> int:
        key = tuple(float(v) for v in np.atleast_1d(x))
        try:
            return self._x_lookup[key]
        except KeyError:
            raise ValueError(f"covariate {key} is not on the grid") from None

    def outcome_index(self, y) -> int:
        try:
            return self._y_lookup[float(y)]
        except KeyError:
            raise ValueError(f"outcome {y} is not on the grid") from None

    def covariate_value(self, i: int):
        """Covariate point ``i``; a float when ``d = 1``."""
        pt = self.covariate_points[i]
        return pt[0] if len(pt) == 1 else pt

    def volume(self, mask) -> float:
        """Fraction of covariate grid points selected by a boolean mask."""
        mask = np.asarray(mask, dtype=bool)
        return float(mask.sum()) / self.n_x


@dataclass(frozen=True, eq=False)
class JointPMF:
    """Probability mass over (covariate index, outcome index)."""

    grid: Grid
    mass: np.ndarray

    def __post_init__(self):
        m = np.array(self.mass, dtype=float)
        if m.shape != self.grid.shape:
            raise ValueError(f"mass has shape {m.shape}, grid needs {self.grid.shape}")
        if np.any(m < 0) or not np.all(np.isfinite(m)):
            raise ValueError("pmf masses must be finite and non-negative")
        if abs(m.sum() - 1.0) > ATOL:
            raise ValueError(f"pmf total mass is {m.sum():.12g}, expected 1")
        object.__setattr__(self, "mass", _readonly(m))

    @property
    def x_marginal(self) -> np.ndarray:
        return self.mass.sum(axis=1)

    @property
    def support(self) -> np.ndarray:
        """Boolean mask of covariates with positive marginal mass."""
        return self.x_marginal > 0

    @property
    def conditional(self) -> np.ndarray:
        """Rows ``P(y | x)``; rows off the support are zero."""
        marg = self.x_marginal
        out = np.zeros_like(self.mass)
        pos = marg > 0
        out[pos] = self.mass[pos] / marg[pos, None]
        return out

    def mean(self) -> float:
        return float((self.mass * self.grid.outcomes).sum())

    def conditional_mean(self) -> np.ndarray:
        """``E[y | x]`` per covariate; NaN off the support."""
        cm = self.conditional @ self.grid.outcomes
        return np.where(self.support, cm, np.nan)

    @classmethod
    def from_conditional(cls, grid: Grid, conditional, x_marginal=None) -> "JointPMF":
        cond = np.asarray(conditional, dtype=float)
        if x_marginal is None:
            x_marginal = np.full(grid.n_x, 1.0 / grid.n_x)
        return cls(grid, np.asarray(x_marginal, dtype=float)[:, None] * cond)


@dataclass(frozen=True, eq=False)
class PropensityTable:
    """Generalized propensity ``p(x, y)`` with entries in [0, 1]."""

    grid: Grid
    value: np.ndarray

    def __post_init__(self):
        v = np.array(self.value, dtype=float)
        if v.shape != self.grid.shape:
            raise ValueError(f"table has shape {v.shape}, grid needs {self.grid.shape}")
        if np.any(v < 0) or np.any(v > 1) or not np.all(np.isfinite(v)):
            raise ValueError("propensity entries must lie in [0, 1]")
        object.__setattr__(self, "value", _readonly(v))

    @classmethod
    def constant(cls, grid: Grid, v: float) -> "PropensityTable":
        return cls(grid, np.full(grid.shape, float(v)))

    @classmethod
    def from_covariate(cls, grid: Grid, values) -> "PropensityTable":
        """Unconfounded table ``p(x, y) = values[x]``."""
        vals = np.asarray(values, dtype=float).reshape(-1)
        if vals.shape != (grid.n_x,):
            raise ValueError(f"need {grid.n_x} covariate values, got {vals.shape}")
        return cls(grid, np.repeat(vals[:, None], grid.n_y, axis=1))

    def is_unconfounded(self, atol: float = ATOL) -> bool:
        """True when the table does not vary with the outcome."""
        return bool(np.all(np.abs(self.value - self.value[:, :1]) <= atol))

    def covariate_values(self) -> np.ndarray:
        """Per-covariate value of an unconfounded table."""
        if not self.is_unconfounded():
            raise PreconditionError("table depends on the outcome")
        return self.value[:, 0].copy()

    def complement(self) -> "PropensityTable":
        return PropensityTable(self.grid, 1.0 - self.value)


@dataclass(frozen=True, eq=False)
class ObservationalStudy:
    """Marginal description ``(d0, d1, p0, p1)`` of a study."""

    d0: JointPMF
    d1: JointPMF
    p0: PropensityTable
    p1: PropensityTable

    def __post_init__(self):
        g = self.d0.grid
        if not (self.d1.grid == g and self.p0.grid == g and self.p1.grid == g):
            raise ValueError("study components must share one grid")

    @property
    def grid(self) -> Grid:
        return self.d0.grid

    def arm(self, t: int) -> tuple[PropensityTable, JointPMF]:
        return (self.p1, self.d1) if t == 1 else (self.p0, self.d0)

    def relabel(self) -> "ObservationalStudy":
        """Swap the roles of treatment and control."""
        return ObservationalStudy(d0=self.d1, d1=self.d0, p0=self.p1, p1=self.p0)


@dataclass(frozen=True, eq=False)
class CensoredPMF:
    """Observable law of (X, T, Y(T)) indexed as ``mass[x, t, y]``."""

    grid: Grid
    mass: np.ndarray

    def __post_init__(self):
        m = np.array(self.mass, dtype=float)
        if m.shape != (self.grid.n_x, 2, self.grid.n_y):
            raise ValueError(f"censored mass has shape {m.shape}")
        if np.any(m < 0) or abs(m.sum() - 1.0) > ATOL:
            raise ValueError("censored pmf must be non-negative with total mass 1")
        object.__setattr__(self, "mass", _readonly(m))

    def arm(self, t: int) -> np.ndarray:
        return self.mass[:, t, :]

    def treated_probability(self) -> float:
        return float(self.mass[:, 1, :].sum())


class CensoredSample(NamedTuple):
    x: object
    t: int
    y: float


@dataclass(frozen=True, eq=False)
class CensoredSamples(Sequence):
    """A batch of censored draws stored as grid indices.

    Behaves as a sequence of ``CensoredSample`` while keeping index arrays for
    vectorized estimators.
    """

    grid: Grid
    x_index: np.ndarray
    t: np.ndarray
    y_index: np.ndarray = field(repr=False)

    def __post_init__(self):
        xi = np.asarray(self.x_index, dtype=np.int64).reshape(-1)
        t = np.asarray(self.t, dtype=np.int64).reshape(-1)
        yi = np.asarray(self.y_index, dtype=np.int64).reshape(-1)
        if not (len(xi) == len(t) == len(yi)):
            raise ValueError("sample arrays must have equal length")
        if len(xi):
            if xi.min() < 0 or xi.max() >= self.grid.n_x:
                raise ValueError("covariate index off the grid")
            if yi.min() < 0 or yi.max() >= self.grid.n_y:
                raise ValueError("outcome index off the grid")
            if not np.all((t == 0) | (t == 1)):
                raise ValueError("treatment must be 0 or 1")
        for name, arr in (("x_index", xi), ("t", t), ("y_index", yi)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_records(cls, grid: Grid, records) -> "CensoredSamples":
        """Build from an iterable of ``(x, t, y)`` values on the grid."""
        recs = list(records)
        xi = [grid.covariate_index(r[0]) for r in recs]
        t = [int(r[1]) for r in recs]
        yi = [grid.outcome_index(r[2]) for r in recs]
        return cls(grid, xi, t, yi)

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return CensoredSamples(self.grid, self.x_index[i], self.t[i], self.y_index[i])
        return CensoredSample(
            self.grid.covariate_value(int(self.x_index[i])),
            int(self.t[i]),
            self.grid.outcome_points[int(self.y_index[i])],
        )

    def __iter__(self) -> Iterator[CensoredSample]:
        for i in range(len(self)):
            yield self[i]

    @property
    def y(self) -> np.ndarray:
        return self.grid.outcomes[self.y_index]

    def take(self, idx) -> "CensoredSamples":
        idx = np.asarray(idx)
        return CensoredSamples(self.grid, self.x_index[idx], self.t[idx], self.y_index[idx])

    def split(self, k: int) -> list["CensoredSamples"]:
        """Cut into ``k`` contiguous, disjoint, nearly equal folds.

        Draws are i.i.d., so contiguous folds are independent.
        """
        bounds = np.linspace(0, len(self), k + 1).round().astype(int)
        return [self[bounds[i]:bounds[i + 1]] for i in range(k)]

    def same_as(self, other: "CensoredSamples") -> bool:
        return (
            self.grid == other.grid
            and np.array_equal(self.x_index, other.x_index)
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.y_index, other.y_index)
        )


def validate_study(study: ObservationalStudy, atol: float = ATOL) -> list[str]:
    """List every violated validity constraint; empty means valid."""
    problems = []
    m0, m1 = study.d0.x_marginal, study.d1.x_marginal
    for i in np.flatnonzero(np.abs(m0 - m1) > atol):
        problems.append(
            f"X-marginals differ at x={study.grid.covariate_value(int(i))}: "
            f"{m0[i]:.12g} vs {m1[i]:.12g}"
        )
    sums = arm_sums(study)
    for i in np.flatnonzero(study.d0.support & (np.abs(sums - 1.0) > atol)):
        problems.append(
            f"arm-sum != 1 at x={study.grid.covariate_value(int(i))}: {sums[i]:.12g}"
        )
    return problems


def is_valid(study: ObservationalStudy, atol: float = ATOL) -> bool:
    return not validate_study(study, atol)


def arm_sums(study: ObservationalStudy) -> np.ndarray:
    """``sum_y p1 d1(y|x) + sum_y p0 d0(y|x)`` per covariate."""
    return (study.p1.value * study.d1.conditional).sum(axis=1) + (
        study.p0.value * study.d0.conditional
    ).sum(axis=1)


def censor(study: ObservationalStudy) -> CensoredPMF:
    """Observable law ``C(x, t, y) = p_t(x, y) d_t(x, y)``."""
    problems = validate_study(study)
    if problems:
        raise InvalidStudyError("; ".join(problems))
    mass = np.stack(
        [study.p0.value * study.d0.mass, study.p1.value * study.d1.mass], axis=1
    )
    return CensoredPMF(study.grid, mass)


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator from a 64-bit seed."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def sample_censored(cpmf: CensoredPMF, n: int, seed: int) -> CensoredSamples:
    """Draw ``n`` i.i.d. samples from a censored pmf."""
    if n < 0:
        raise ValueError("n must be non-negative")
    flat = cpmf.mass.reshape(-1)
    cells = make_rng(seed).choice(flat.size, size=int(n), p=flat / flat.sum())
    xi, t, yi = np.unravel_index(cells, cpmf.mass.shape)
    return CensoredSamples(cpmf.grid, xi, t, yi)


def ate(study: ObservationalStudy) -> float:
    return study.d1.mean() - study.d0.mean()


def treated_probability(study: ObservationalStudy) -> float:
    return float((study.p1.value * study.d1.mass).sum())


def att(study: ObservationalStudy) -> float:
    pt = treated_probability(study)
    if pt <= 0:
        raise PreconditionError("ATT undefined: Pr[T=1] = 0")
    y = study.grid.outcomes
    treated = (y * study.d1.mass * study.p1.value).sum()
    control = (y * study.d0.mass * (1.0 - study.p0.value)).sum()
    return float((treated - control) / pt)


def hte(study: ObservationalStudy, x) -> float:
    i = _support_index(study, x)
    return float(study.d1.conditional_mean()[i] - study.d0.conditional_mean()[i])


def hte_vector(study: ObservationalStudy) -> np.ndarray:
    """Conditional effect per covariate; NaN off the support."""
    return study.d1.conditional_mean() - study.d0.conditional_mean()


def true_propensity(study: ObservationalStudy, x) -> float:
    i = _support_index(study, x)
    return float((study.p1.value[i] * study.d1.conditional[i]).sum())


def _support_index(study: ObservationalStudy, x) -> int:
    i = study.grid.covariate_index(x)
    if not study.d0.support[i]:
        raise PreconditionError(f"x={x} is outside the covariate support")
    return i


def make_random_study(
    grid: Grid, scenario: str, seed: int, c: float = 0.1
) -> ObservationalStudy:
    """Random valid study realizable for the scenario's propensity class.

    ``I``: unconfounded with c-overlap; ``II``: c-overlap with outcome-dependent
    propensities; ``III``: unconfounded with c-weak-overlap; ``RD``: treatment
    is the indicator of a covariate set. The treated arm is drawn freely and
    the control propensity is derived so the arms sum to one.
    """
    tag = str(scenario).upper()
    if tag not in SCENARIOS:
        raise ValueError(f"scenario must be one of {SCENARIOS}, got {scenario!r}")
    if not 0 < c < 0.5:
        raise ValueError("c must lie in (0, 1/2)")
    rng = make_rng(seed)
    nx, ny = grid.shape
    marg = rng.dirichlet(np.ones(nx))
    cond1 = rng.dirichlet(np.ones(ny), size=nx)
    cond0 = rng.dirichlet(np.ones(ny), size=nx)
    d1 = JointPMF(grid, marg[:, None] * cond1)
    d0 = JointPMF(grid, marg[:, None] * cond0)
    margin = (0.5 - c) / 4
    lo, hi = c + margin, 1 - c - margin

    if tag == "I":
        e = rng.uniform(lo, hi, size=nx)
        p1 = np.repeat(e[:, None], ny, axis=1)
        p0 = 1.0 - p1
    elif tag == "II":
        p1 = rng.uniform(lo, hi, size=(nx, ny))
        e = (p1 * cond1).sum(axis=1)
        r = rng.uniform(0.9, 1.1, size=(nx, ny))
        p0 = np.empty((nx, ny))
        for i in range(nx):
            ri = r[i]
            for _ in range(60):
                row = (1 - e[i]) * ri / (ri * cond0[i]).sum()
                if np.all((row > c) & (row < 1 - c)):
                    break
                ri = 1 + (ri - 1) / 2
            p0[i] = row
    elif tag == "III":
        order = rng.permutation(nx)
        k = max(1, math.ceil(c * nx))
        e = np.empty(nx)
        e[order[:k]] = rng.uniform(lo, hi, size=k)
        rest = order[k:]
        kind = rng.integers(0, 3, size=len(rest))
        e[rest] = np.where(kind == 0, 0.0, np.where(kind == 1, 1.0, rng.uniform(0, 1, len(rest))))
        p1 = np.repeat(e[:, None], ny, axis=1)
        p0 = 1.0 - p1
    else:
        sizes = [k for k in range(1, nx) if k / nx > c and (nx - k) / nx > c]
        if not sizes:
            raise PreconditionError(f"a {nx}-point covariate grid admits no c-RD split at c={c}")
        k = int(rng.choice(sizes))
        s = np.zeros(nx, dtype=bool)
        s[rng.choice(nx, size=k, replace=False)] = True
        p1 = np.repeat(s[:, None].astype(float), ny, axis=1)
        p0 = 1.0 - p1
    return ObservationalStudy(
        d0=d0, d1=d1, p0=PropensityTable(grid, p0), p1=PropensityTable(grid, p1)
    )
