"""Finite concept classes of propensity tables and covariate-outcome pmfs.

A ``ClassPair`` bundles a ``PropensityClass`` (P) and a ``DistributionClass``
(D) on a shared grid. Builders cover the four scenario tags and the two
polynomial distribution families. ``is_compatible`` and
``enumerate_realizable`` answer which tuples extend to valid studies.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import ATOL, Grid, JointPMF, ObservationalStudy, PropensityTable

TAGS = ("OU", "O", "U", "RD", "custom")

# Upper bound on lattice enumeration so a typo cannot exhaust memory.
MAX_MEMBERS = 250_000


def _canonical_tag(tag: str) -> str:
    t = str(tag).strip()
    for known in TAGS:
        if t.upper() == known.upper():
            return known
    raise ValueError(f"unknown propensity tag {tag!r}; expected one of {TAGS}")


def member_check(p: PropensityTable, tag: str, c: float | None = None) -> bool:
    """Whether ``p`` satisfies the constraints of a scenario tag.

    ``OU``: independent of y and strictly inside (c, 1-c). ``O``: strictly
    inside (c, 1-c). ``U``: independent of y, and {x : min_y p > c} covers
    at least a c fraction of the covariate grid. ``RD``: the indicator of a
    covariate set whose volume and complement volume both exceed c.
    """
    tag = _canonical_tag(tag)
    if tag == "custom":
        return True
    if c is None:
        raise ValueError(f"tag {tag} needs an overlap constant c")
    v = p.value
    if tag == "OU":
        return p.is_unconfounded() and bool(np.all((v > c) & (v < 1 - c)))
    if tag == "O":
        return bool(np.all((v > c) & (v < 1 - c)))
    if tag == "U":
        if not p.is_unconfounded():
            return False
        s = v.min(axis=1) > c
        return p.grid.volume(s) >= c - ATOL
    is_binary = np.all((np.abs(v) <= ATOL) | (np.abs(v - 1) <= ATOL))
    if not (is_binary and p.is_unconfounded()):
        return False
    s = v[:, 0] > 0.5
    return p.grid.volume(s) > c and p.grid.volume(~s) > c


@dataclass(frozen=True, eq=False)
class PropensityClass:
    grid: Grid
    members: tuple
    tag: str = "custom"
    c: float | None = None

    def __post_init__(self):
        members = tuple(self.members)
        if not members:
            raise ValueError("propensity class is empty")
        tag = _canonical_tag(self.tag)
        for k, p in enumerate(members):
            if p.grid != self.grid:
                raise ValueError(f"propensity member {k} lives on another grid")
            if not member_check(p, tag, self.c):
                raise ValueError(f"propensity member {k} violates tag {tag}(c={self.c})")
        object.__setattr__(self, "members", members)
        object.__setattr__(self, "tag", tag)

    def __len__(self) -> int:
        return len(self.members)

    def __getitem__(self, i) -> PropensityTable:
        return self.members[i]

    def stacked(self) -> np.ndarray:
        """Members as an ``(m, n_x, n_y)`` array."""
        return np.stack([p.value for p in self.members])


@dataclass(frozen=True, eq=False)
class DistributionClass:
    grid: Grid
    members: tuple
    family: str = "tabular"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        members = tuple(self.members)
        if not members:
            raise ValueError("distribution class is empty")
        for k, d in enumerate(members):
            if d.grid != self.grid:
                raise ValueError(f"distribution member {k} lives on another grid")
        object.__setattr__(self, "members", members)

    def __len__(self) -> int:
        return len(self.members)

    def __getitem__(self, i) -> JointPMF:
        return self.members[i]

    def stacked(self) -> np.ndarray:
        return np.stack([d.mass for d in self.members])

    def means(self) -> np.ndarray:
        return np.array([d.mean() for d in self.members])


@dataclass(frozen=True, eq=False)
class ClassPair:
    p_class: PropensityClass
    d_class: DistributionClass

    def __post_init__(self):
        if self.p_class.grid != self.d_class.grid:
            raise ValueError("propensity and distribution classes use different grids")

    @property
    def grid(self) -> Grid:
        return self.p_class.grid

    def tuple_index(self, i_p: int, i_d: int) -> int:
        return i_p * len(self.d_class) + i_d

    def tuple_at(self, u: int) -> tuple[int, int]:
        return divmod(int(u), len(self.d_class))


# ---------------------------------------------------------------- builders


def constant_class(grid: Grid, values, tag: str = "OU", c: float | None = None) -> PropensityClass:
    """Class of constant tables, one per value."""
    return PropensityClass(grid, [PropensityTable.constant(grid, v) for v in values], tag, c)


def propensity_lattice(
    grid: Grid, values, unconfounded: bool = True, tag: str = "custom", c: float | None = None
) -> PropensityClass:
    """Every table whose entries come from ``values``.

    Unconfounded lattices vary per covariate; confounded ones per cell. Members
    failing the tag are dropped.
    """
    values = [float(v) for v in values]
    cells = grid.n_x if unconfounded else grid.n_x * grid.n_y
    total = len(values) ** cells
    if total > MAX_MEMBERS:
        raise ValueError(f"lattice would have {total} members (limit {MAX_MEMBERS})")
    members = []
    for combo in itertools.product(values, repeat=cells):
        arr = np.array(combo)
        if unconfounded:
            p = PropensityTable.from_covariate(grid, arr)
        else:
            p = PropensityTable(grid, arr.reshape(grid.shape))
        if member_check(p, tag, c):
            members.append(p)
    return PropensityClass(grid, members, tag, c)


def overlap_lattice(grid: Grid, c: float, step: float, unconfounded: bool = False) -> PropensityClass:
    """Lattice of tables strictly inside (c, 1-c); tag ``O`` or ``OU``."""
    values = [v for v in _steps(step) if c < v < 1 - c]
    return propensity_lattice(grid, values, unconfounded, "OU" if unconfounded else "O", c)


def weak_overlap_lattice(grid: Grid, c: float, step: float) -> PropensityClass:
    """Unconfounded lattice on [0, 1] filtered to c-weak-overlap; tag ``U``."""
    return propensity_lattice(grid, _steps(step), True, "U", c)


def rd_class(grid: Grid, treated, c: float) -> PropensityClass:
    """The two RD tables ``1{x in S}`` and ``1{x not in S}``."""
    s = treated_mask(grid, treated)
    ind = s.astype(float)
    return PropensityClass(
        grid,
        [PropensityTable.from_covariate(grid, ind), PropensityTable.from_covariate(grid, 1 - ind)],
        "RD",
        c,
    )


def treated_mask(grid: Grid, treated) -> np.ndarray:
    """Boolean covariate mask from a mask, index list or covariate values."""
    arr = np.asarray(treated)
    if arr.dtype == bool:
        if arr.shape != (grid.n_x,):
            raise ValueError("mask length must match the covariate grid")
        return arr.copy()
    mask = np.zeros(grid.n_x, dtype=bool)
    for v in treated:
        mask[grid.covariate_index(v)] = True
    return mask


def _steps(step: float) -> list[float]:
    n = round(1 / step)
    if abs(n * step - 1) > 1e-9:
        raise ValueError("step must divide 1")
    return [round(k * step, 12) for k in range(n + 1)]


def pmf_lattice(grid: Grid, step: float, x_marginal=None) -> DistributionClass:
    """All pmfs with masses on multiples of ``step``.

    With ``x_marginal`` given, only the conditional rows range over the
    lattice and the covariate marginal is fixed.
    """
    units = round(1 / step)
    if abs(units * step - 1) > 1e-9:
        raise ValueError("step must divide 1")
    members = []
    if x_marginal is None:
        for comp in _compositions(units, grid.n_x * grid.n_y):
            members.append(JointPMF(grid, np.array(comp, float).reshape(grid.shape) / units))
    else:
        marg = np.asarray(x_marginal, float)
        rows = [np.array(c, float) / units for c in _compositions(units, grid.n_y)]
        for combo in itertools.product(rows, repeat=grid.n_x):
            members.append(JointPMF.from_conditional(grid, np.stack(combo), marg))
    if len(members) > MAX_MEMBERS:
        raise ValueError("pmf lattice too large")
    return DistributionClass(grid, members, "tabular", {"step": step})


def _compositions(total: int, parts: int):
    """Non-negative integer vectors of length ``parts`` summing to ``total``."""
    for bars in itertools.combinations(range(total + parts - 1), parts - 1):
        prev, out = -1, []
        for b in bars:
            out.append(b - prev - 1)
            prev = b
        out.append(total + parts - 2 - prev)
        yield out


def monomial_exponents(n_vars: int, degree: int) -> list[tuple[int, ...]]:
    """Exponent vectors of all monomials of total degree <= ``degree``.

    Ordered by degree, then by variable index: for ``(x, y)`` and degree 2
    this is 1, x, y, x^2, xy, y^2.
    """
    out = []
    for deg in range(degree + 1):
        for combo in itertools.combinations_with_replacement(range(n_vars), deg):
            e = [0] * n_vars
            for v in combo:
                e[v] += 1
            out.append(tuple(e))
    return out


def _design(points: np.ndarray, exponents) -> np.ndarray:
    return np.stack([np.prod(points ** np.array(e), axis=1) for e in exponents], axis=1)


def _coefficient_vectors(lattice, n_terms: int) -> np.ndarray:
    """Explicit coefficient vectors, or the product of a scalar value set."""
    arr = np.asarray(lattice, dtype=float)
    if arr.ndim == 1:
        if len(arr) ** n_terms > MAX_MEMBERS:
            raise ValueError("coefficient lattice too large")
        return np.array(list(itertools.product(arr, repeat=n_terms)), dtype=float).reshape(-1, n_terms)
    if arr.ndim != 2 or arr.shape[1] != n_terms:
        raise ValueError(f"coefficient vectors must have {n_terms} entries")
    return arr


def build_poly_logdensity_family(
    grid: Grid, degree: int, lattice, bound: float, x_marginal=None
) -> DistributionClass:
    """Members with ``P(y | x) proportional to exp(f(x, y))``, ``sup |f| <= bound``.

    ``f`` ranges over polynomials in (x, y) of total degree <= ``degree`` whose
    coefficients (in ``monomial_exponents`` order) come from ``lattice``.
    """
    if degree < 0:
        raise ValueError("degree must be non-negative")
    exps = monomial_exponents(grid.dim + 1, degree)
    coefs = _coefficient_vectors(lattice, len(exps))
    xs = np.repeat(grid.covariates, grid.n_y, axis=0)
    ys = np.tile(grid.outcomes, grid.n_x)[:, None]
    design = _design(np.hstack([xs, ys]), exps)
    members, kept = [], []
    for a in coefs:
        f = (design @ a).reshape(grid.shape)
        if np.max(np.abs(f)) > bound + 1e-12:
            continue
        w = np.exp(f - f.max(axis=1, keepdims=True))
        members.append(JointPMF.from_conditional(grid, w / w.sum(axis=1, keepdims=True), x_marginal))
        kept.append(a.tolist())
    if not members:
        raise ValueError("no lattice polynomial satisfies the sup bound")
    return DistributionClass(
        grid, members, f"poly_logdensity({degree})", {"coefficients": kept, "bound": bound}
    )


def build_poly_expectation_family(
    grid: Grid, degree: int, lattice, half_width: float, x_marginal=None
) -> DistributionClass:
    """Members with ``E[y | x] = f(x)`` for polynomials ``f`` in x.

    The conditional law is a two-point kernel near ``f(x) - h`` and
    ``f(x) + h`` snapped to outcome grid points bracketing ``f(x)``, with the
    mass split so the mean is exactly ``f(x)``. Polynomials that leave the
    outcome range are skipped; the count is kept in ``params["skipped"]``.
    """
    if degree < 0 or half_width < 0:
        raise ValueError("degree and half_width must be non-negative")
    exps = monomial_exponents(grid.dim, degree)
    coefs = _coefficient_vectors(lattice, len(exps))
    design = _design(grid.covariates, exps)
    ys = grid.outcomes
    order = np.argsort(ys)
    ys_sorted = ys[order]
    members, kept, skipped = [], [], 0
    for a in coefs:
        fx = design @ a
        cond = np.zeros(grid.shape)
        ok = True
        for i, f in enumerate(fx):
            row = _two_point(f, half_width, ys_sorted, order)
            if row is None:
                ok = False
                break
            for j, w in row:
                cond[i, j] += w
        if not ok:
            skipped += 1
            continue
        members.append(JointPMF.from_conditional(grid, cond, x_marginal))
        kept.append(a.tolist())
    if skipped:
        warnings.warn(f"{skipped} polynomial(s) left the outcome range and were skipped")
    if not members:
        raise ValueError("every polynomial left the outcome range")
    return DistributionClass(
        grid,
        members,
        f"poly_expectation({degree})",
        {"coefficients": kept, "half_width": half_width, "skipped": skipped},
    )


def _two_point(f: float, h: float, ys_sorted: np.ndarray, order: np.ndarray):
    tol = 1e-12
    below = ys_sorted[ys_sorted <= f + tol]
    above = ys_sorted[ys_sorted >= f - tol]
    if not len(below) or not len(above):
        return None
    lo = below[np.argmin(np.abs(below - (f - h)))]
    hi = above[np.argmin(np.abs(above - (f + h)))]
    j_lo = int(order[np.searchsorted(ys_sorted, lo)])
    j_hi = int(order[np.searchsorted(ys_sorted, hi)])
    if hi - lo <= tol:
        return [(j_lo, 1.0)]
    w_hi = (f - lo) / (hi - lo)
    return [(j_lo, 1.0 - w_hi), (j_hi, w_hi)]


# ---------------------------------------------------------- compatibility


def match_rows(a: np.ndarray, b: np.ndarray, tol: float) -> list[np.ndarray]:
    """For each row of ``a``, the ascending indices of rows of ``b`` within ``tol``.

    Rows are compared coordinate-wise (max norm). Sorting ``b`` on its most
    varied column keeps the scan near linear on lattice inputs.
    """
    a = np.atleast_2d(np.asarray(a, float))
    b = np.atleast_2d(np.asarray(b, float))
    empty = np.zeros(0, dtype=np.int64)
    if len(b) == 0 or len(a) == 0:
        return [empty for _ in range(len(a))]
    if b.shape[1] == 0:
        return [np.arange(len(b)) for _ in range(len(a))]
    spread = [len(np.unique(np.round(b[:, k], 9))) for k in range(b.shape[1])]
    col = int(np.argmax(spread))
    order = np.argsort(b[:, col], kind="stable")
    key = b[order, col]
    lo = np.searchsorted(key, a[:, col] - tol, side="left")
    hi = np.searchsorted(key, a[:, col] + tol, side="right")
    out = []
    for u in range(len(a)):
        if hi[u] <= lo[u]:
            out.append(empty)
            continue
        cand = order[lo[u]:hi[u]]
        ok = np.all(np.abs(b[cand] - a[u]) <= tol, axis=1)
        out.append(np.sort(cand[ok]))
    return out


def _marginal_groups(d_class: DistributionClass, tol: float = ATOL) -> list[np.ndarray]:
    """Partition D by equal X-marginals (index arrays in class order)."""
    margs = np.stack([d.x_marginal for d in d_class.members])
    labels = -np.ones(len(margs), dtype=int)
    groups = []
    for i in range(len(margs)):
        if labels[i] >= 0:
            continue
        same = np.flatnonzero((labels < 0) & np.all(np.abs(margs - margs[i]) <= tol, axis=1))
        labels[same] = len(groups)
        groups.append(same)
    return groups


def compatibility_matches(pair: ClassPair, tol: float = ATOL) -> dict[int, np.ndarray]:
    """Map tuple index ``u = i_p * |D| + i_d`` to every compatible partner index.

    A partner ``(p_hat, P_hat)`` is compatible with ``(p, P)`` when P_hat has
    the same X-marginal and the two arm sums add to one on the support.
    Validity is symmetric in the two arms, so one direction suffices.
    """
    n_d = len(pair.d_class)
    pvals = pair.p_class.stacked()
    out: dict[int, np.ndarray] = {}
    for group in _marginal_groups(pair.d_class, tol):
        sup = pair.d_class[int(group[0])].support
        conds = np.stack([pair.d_class[int(j)].conditional[sup] for j in group])
        # arm sums for every (p, P in group) restricted to the support
        sums = np.einsum("pxy,dxy->pdx", pvals[:, sup, :], conds)
        flat = sums.reshape(-1, sums.shape[-1])
        ids = (np.arange(len(pvals))[:, None] * n_d + group[None, :]).reshape(-1)
        for r, m in enumerate(match_rows(flat, 1.0 - flat, tol)):
            out[int(ids[r])] = np.sort(ids[m])
    return out


def is_compatible(p: PropensityTable, P: JointPMF, pair: ClassPair, tol: float = ATOL):
    """First ``(p_hat, P_hat)`` in the pair completing ``(p, P)`` to a valid study.

    Enumeration order is propensity-major. Returns ``None`` when no partner
    exists.
    """
    cond = P.conditional
    sup = P.support
    need = 1.0 - (p.value * cond).sum(axis=1)
    for q in pair.p_class.members:
        for Q in pair.d_class.members:
            if np.any(np.abs(Q.x_marginal - P.x_marginal) > tol):
                continue
            got = (q.value * Q.conditional).sum(axis=1)
            if np.all(np.abs(got[sup] - need[sup]) <= tol):
                return q, Q
    return None


@dataclass(frozen=True)
class RealizableStudy:
    """A realizable study with the class indices it was assembled from."""

    study: ObservationalStudy
    p0: int
    p1: int
    d0: int
    d1: int


def enumerate_realizable(
    pair: ClassPair, dedupe: bool = True, with_indices: bool = False, tol: float = ATOL
) -> list:
    """All valid studies with ``p0, p1`` in P and ``d0, d1`` in D.

    Quadruples are visited in ``(p0, p1, d0, d1)`` lexicographic order. With
    ``dedupe`` the first study for each (censored pmf, ATE) fingerprint at
    resolution 1e-10 is kept.
    """
    matches = compatibility_matches(pair, tol)
    quads = []
    for u, partners in matches.items():
        i0, j0 = pair.tuple_at(u)
        for v in partners:
            i1, j1 = pair.tuple_at(v)
            quads.append((i0, i1, j0, j1))
    quads.sort()
    out, seen = [], set()
    for i0, i1, j0, j1 in quads:
        p0, p1 = pair.p_class[i0], pair.p_class[i1]
        d0, d1 = pair.d_class[j0], pair.d_class[j1]
        study = ObservationalStudy(d0=d0, d1=d1, p0=p0, p1=p1)
        if dedupe:
            cens = np.stack([p0.value * d0.mass, p1.value * d1.mass], axis=1)
            key = (
                np.round(cens / 1e-10).astype(np.int64).tobytes(),
                round((d1.mean() - d0.mean()) / 1e-10),
            )
            if key in seen:
                continue
            seen.add(key)
        out.append(RealizableStudy(study, i0, i1, j0, j1) if with_indices else study)
    return out
