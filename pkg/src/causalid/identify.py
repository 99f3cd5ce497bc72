"""Identifiability conditions over finite class pairs and counterexample builders.

``check_condition1`` decides identifiability of ATE and ATT, ``check_condition6``
of HTE, and ``check_condition2``/``check_condition3`` are the distribution-only
conditions for the overlap and weak-overlap scenarios. When a condition fails
the builders turn the witness into two valid studies with identical censored
laws and different effects. ``brute_force_identifiable`` is the direct
definition used to validate the checkers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .concepts import (
    ClassPair,
    DistributionClass,
    _marginal_groups,
    compatibility_matches,
    enumerate_realizable,
    is_compatible,
    match_rows,
)
from .core import (
    ATOL,
    CERT_ATOL,
    CensoredPMF,
    JointPMF,
    ObservationalStudy,
    PropensityTable,
    att,
    censor,
    hte_vector,
    treated_probability,
    validate_study,
)
from .exceptions import IdentificationError, PreconditionError

ESTIMANDS = ("ate", "att", "hte")

SCOPE_NOTE = (
    "exact for the enumerated classes; lattice families are checked as enumerated, "
    "not as the continuum they discretize"
)


@dataclass(frozen=True, eq=False)
class Witness:
    """Two tuples violating a condition.

    ``first``/``second`` hold ``(propensity index, distribution index)``; for
    the distribution-only conditions the propensity index is ``None``.
    """

    first: tuple
    second: tuple
    P: JointPMF
    Q: JointPMF
    p: PropensityTable | None = None
    q: PropensityTable | None = None
    requirements: dict = field(default_factory=dict)
    detail: str = ""


@dataclass(frozen=True, eq=False)
class ConditionVerdict:
    condition: str
    holds: bool
    witness: Witness | None = None
    pairs_checked: int = 0
    scope: str = SCOPE_NOTE

    def __post_init__(self):
        if not self.holds and self.witness is None:
            raise ValueError("a failing verdict needs a witness")


@dataclass(frozen=True, eq=False)
class CounterexamplePair:
    study1: ObservationalStudy
    study2: ObservationalStudy
    shared_censored: CensoredPMF
    delta: dict
    certified_error: float

    def recheck(self) -> bool:
        """Re-verify validity, censored equality and a nonzero gap."""
        if validate_study(self.study1) or validate_study(self.study2):
            return False
        c1, c2 = censor(self.study1), censor(self.study2)
        gaps = effect_gaps(self.study1, self.study2)
        return bool(
            np.max(np.abs(c1.mass - c2.mass)) <= CERT_ATOL
            and max(abs(v) for v in gaps.values() if v is not None) > ATOL
        )


def effect_gaps(study1: ObservationalStudy, study2: ObservationalStudy) -> dict:
    """Effect of study1 minus effect of study2 for each estimand.

    ``att`` is ``None`` when undefined and ``hte`` is the largest absolute
    conditional gap over the support.
    """
    out = {"ate": (study1.d1.mean() - study1.d0.mean()) - (study2.d1.mean() - study2.d0.mean())}
    if treated_probability(study1) > 0 and treated_probability(study2) > 0:
        out["att"] = att(study1) - att(study2)
    else:
        out["att"] = None
    h = hte_vector(study1) - hte_vector(study2)
    sup = study1.d0.support & study2.d0.support
    out["hte"] = float(np.max(np.abs(h[sup]))) if sup.any() else 0.0
    return out


# ------------------------------------------------------------ condition 1/6


def _product_rows(pair: ClassPair, i_d: int, p_idx: np.ndarray, support: np.ndarray) -> np.ndarray:
    vals = pair.p_class.stacked()[p_idx][:, support, :]
    return (vals * pair.d_class[i_d].mass[support][None]).reshape(len(p_idx), -1)


def _check_tuple_pairs(pair: ClassPair, condition: str, tol: float) -> ConditionVerdict:
    """Shared engine for Conditions 1 and 6.

    A pair of compatible tuples violates the condition when the pmfs have
    equal X-marginals, the products ``p P`` and ``q Q`` agree on the support,
    and the first requirement (equal means, or equal pmfs) fails.
    """
    d = pair.d_class
    n_d = len(d)
    matches = compatibility_matches(pair, tol)
    compat = {}
    for u, partners in matches.items():
        if len(partners):
            i_p, i_d = pair.tuple_at(u)
            compat.setdefault(i_d, []).append(i_p)
    means = d.means()
    best, checked = None, 0
    for group in _marginal_groups(d, tol):
        support = d[int(group[0])].support
        for ia, a in enumerate(group):
            for b in group[ia + 1:]:
                a, b = int(a), int(b)
                if condition == "condition1":
                    first_req = abs(means[a] - means[b]) <= tol
                else:
                    first_req = bool(np.all(np.abs(d[a].mass - d[b].mass) <= tol))
                if first_req or a not in compat or b not in compat:
                    continue
                pa = np.array(sorted(compat[a]))
                pb = np.array(sorted(compat[b]))
                rows = match_rows(
                    _product_rows(pair, a, pa, support), _product_rows(pair, b, pb, support), tol
                )
                checked += len(pa) * len(pb)
                for r, m in enumerate(rows):
                    for s in m:
                        u = int(pa[r]) * n_d + a
                        v = int(pb[s]) * n_d + b
                        key = (min(u, v), max(u, v))
                        if best is None or key < best:
                            best = key
    if best is None:
        return ConditionVerdict(condition, True, None, checked)
    (ip, ia), (iq, ib) = pair.tuple_at(best[0]), pair.tuple_at(best[1])
    req1 = "equal means" if condition == "condition1" else "equal pmfs"
    w = Witness(
        first=(ip, ia),
        second=(iq, ib),
        P=d[ia],
        Q=d[ib],
        p=pair.p_class[ip],
        q=pair.p_class[iq],
        requirements={"R1": False, "R2": False, "R3": False},
        detail=(
            f"{req1} fails (E_P={means[ia]:.12g}, E_Q={means[ib]:.12g}); X-marginals agree; "
            "p*P equals q*Q on the support"
        ),
    )
    return ConditionVerdict(condition, False, w, checked)


def check_condition1(pair: ClassPair, tol: float = ATOL) -> ConditionVerdict:
    """Identifiability of ATE/ATT over the finite pair.

    Every two compatible tuples must have equal means, different X-marginals,
    or products ``p P`` and ``q Q`` that differ somewhere on the support.
    """
    return _check_tuple_pairs(pair, "condition1", tol)


def check_condition6(pair: ClassPair, tol: float = ATOL) -> ConditionVerdict:
    """As ``check_condition1`` with equal means strengthened to equal pmfs."""
    return _check_tuple_pairs(pair, "condition6", tol)


# ------------------------------------------------------------ condition 2/3


def _ratio_outside(P: np.ndarray, Q: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Cells where P/Q lies outside the open interval (lo, hi).

    Uses cross-multiplication so that ``Q = 0 < P`` counts as outside and
    cells with ``P = Q = 0`` count as inside.
    """
    live = (P > 0) | (Q > 0)
    eps = 1e-15
    return live & ((P <= lo * Q + eps) | (P >= hi * Q - eps))


def check_condition2(d_class: DistributionClass, c: float, tol: float = ATOL) -> ConditionVerdict:
    """Overlap-scenario condition on D alone.

    Each pair with equal X-marginals and different means needs a cell on the
    support whose ratio leaves ``(c/(1-c), (1-c)/c)``.
    """
    if not 0 < c < 0.5:
        raise ValueError("c must lie in (0, 1/2)")
    lo, hi = c / (1 - c), (1 - c) / c
    means = d_class.means()
    checked = 0
    for group in _marginal_groups(d_class, tol):
        for ia, a in enumerate(group):
            for b in group[ia + 1:]:
                a, b = int(a), int(b)
                if abs(means[a] - means[b]) <= tol:
                    continue
                checked += 1
                if not _ratio_outside(d_class[a].mass, d_class[b].mass, lo, hi).any():
                    w = Witness(
                        (None, a),
                        (None, b),
                        d_class[a],
                        d_class[b],
                        requirements={"R1": False, "R2": False, "ratio": False},
                        detail=f"every ratio lies in ({lo:.12g}, {hi:.12g})",
                    )
                    return ConditionVerdict("condition2", False, w, checked)
    return ConditionVerdict("condition2", True, None, checked)


def check_condition3(d_class: DistributionClass, c: float, tol: float = ATOL) -> ConditionVerdict:
    """Weak-overlap condition on D alone.

    All members need full X-support. Each pair with different means must
    agree on a covariate set of volume below ``c``.
    """
    for k, d in enumerate(d_class.members):
        if not d.support.all():
            raise PreconditionError(f"distribution member {k} lacks full X-support")
    means = d_class.means()
    grid = d_class.grid
    checked = 0
    for group in _marginal_groups(d_class, tol):
        for ia, a in enumerate(group):
            for b in group[ia + 1:]:
                a, b = int(a), int(b)
                if abs(means[a] - means[b]) <= tol:
                    continue
                checked += 1
                agree = np.all(np.abs(d_class[a].mass - d_class[b].mass) <= tol, axis=1)
                vol = grid.volume(agree)
                if vol >= c:
                    w = Witness(
                        (None, a),
                        (None, b),
                        d_class[a],
                        d_class[b],
                        requirements={"R1": False, "R2": False, "agreement": False},
                        detail=f"pmfs agree on a covariate set of volume {vol:.12g} >= c",
                    )
                    return ConditionVerdict("condition3", False, w, checked)
    return ConditionVerdict("condition3", True, None, checked)


# ------------------------------------------------------------ constructions


def _certify(study1: ObservationalStudy, study2: ObservationalStudy, estimand: str = "ate") -> CounterexamplePair:
    for k, s in enumerate((study1, study2), start=1):
        problems = validate_study(s)
        if problems:
            raise IdentificationError(f"study{k} is invalid: {'; '.join(problems)}")
    c1, c2 = censor(study1), censor(study2)
    err = float(np.max(np.abs(c1.mass - c2.mass)))
    if err > CERT_ATOL:
        raise IdentificationError(f"censored pmfs differ by {err:.3g} > {CERT_ATOL}")
    gaps = effect_gaps(study1, study2)
    if gaps.get(estimand) is None or abs(gaps[estimand]) <= ATOL:
        raise IdentificationError(f"construction yields no {estimand} gap")
    return CounterexamplePair(study1, study2, c1, gaps, err)


def build_indistinguishable_pair(
    witness: Witness, pair: ClassPair, estimand: str = "ate"
) -> CounterexamplePair:
    """Two realizable studies sharing a censored law but not the effect.

    The control arms are ``(p, P)`` and ``(q, Q)`` from the witness and both
    studies share the treated arm of the first compatibility partner of
    ``(p, P)``. For ATT with no treated units the arms are relabelled.
    """
    estimand = estimand.lower()
    if estimand not in ESTIMANDS:
        raise ValueError(f"estimand must be one of {ESTIMANDS}")
    if witness.p is None or witness.q is None:
        raise PreconditionError("witness carries no propensity tables")
    partner = is_compatible(witness.p, witness.P, pair)
    if partner is None:
        raise IdentificationError("witness not compatible")
    p_hat, P_hat = partner
    s1 = ObservationalStudy(d0=witness.P, d1=P_hat, p0=witness.p, p1=p_hat)
    s2 = ObservationalStudy(d0=witness.Q, d1=P_hat, p0=witness.q, p1=p_hat)
    if estimand == "att" and treated_probability(s1) <= 0:
        s1, s2 = s1.relabel(), s2.relabel()
    return _certify(s1, s2, estimand)


def build_scenario3_counterexample(
    P: JointPMF, Q: JointPMF, S, c: float | None = None
) -> CounterexamplePair:
    """Counterexample from two pmfs that agree on a covariate set ``S``.

    Both studies use control propensity 1/2 on S and 0 elsewhere, with the
    complementary treated propensity and treated pmf P.
    """
    from .concepts import treated_mask

    grid = P.grid
    if Q.grid != grid:
        raise PreconditionError("P and Q live on different grids")
    s = treated_mask(grid, S)
    if np.any(np.abs(P.x_marginal - Q.x_marginal) > ATOL):
        raise PreconditionError("P and Q must share the X-marginal")
    if np.any(np.abs(P.mass[s] - Q.mass[s]) > ATOL):
        raise PreconditionError("P and Q must agree on S")
    if abs(P.mean() - Q.mean()) <= ATOL:
        raise PreconditionError("P and Q must have different means")
    if c is not None and grid.volume(s) < c:
        raise PreconditionError(f"vol(S) = {grid.volume(s):.12g} is below c = {c}")
    p = PropensityTable.from_covariate(grid, np.where(s, 0.5, 0.0))
    p_hat = p.complement()
    s1 = ObservationalStudy(d0=P, d1=P, p0=p, p1=p_hat)
    s2 = ObservationalStudy(d0=Q, d1=P, p0=p, p1=p_hat)
    return _certify(s1, s2)


def build_overlap_zero_counterexample(
    p: PropensityTable, x, y1, y2, base: JointPMF | None = None, mass: float | None = None
) -> CounterexamplePair:
    """Counterexample from a propensity vanishing at two outcomes of one covariate.

    Q moves ``mass`` from ``(x, y2)`` to ``(x, y1)`` in ``base`` (uniform by
    default; half of ``base(x, y2)`` by default). Control propensity is ``p``
    and treated propensity ``1 - p`` with treated pmf ``base``.
    """
    grid = p.grid
    i = grid.covariate_index(x)
    j1, j2 = grid.outcome_index(y1), grid.outcome_index(y2)
    if j1 == j2:
        raise PreconditionError("y1 and y2 must differ")
    if p.value[i, j1] != 0 or p.value[i, j2] != 0:
        raise PreconditionError("p must vanish at (x, y1) and (x, y2)")
    if base is None:
        base = JointPMF(grid, np.full(grid.shape, 1.0 / (grid.n_x * grid.n_y)))
    if mass is None:
        mass = base.mass[i, j2] / 2
    if not 0 < mass <= base.mass[i, j2]:
        raise PreconditionError("moved mass must lie in (0, base(x, y2)]")
    q_mass = base.mass.copy()
    q_mass[i, j1] += mass
    q_mass[i, j2] -= mass
    Q = JointPMF(grid, q_mass)
    p_hat = p.complement()
    s1 = ObservationalStudy(d0=base, d1=base, p0=p, p1=p_hat)
    s2 = ObservationalStudy(d0=Q, d1=base, p0=p, p1=p_hat)
    return _certify(s1, s2)


# ------------------------------------------------------------ brute force


@dataclass(frozen=True, eq=False)
class BruteForceVerdict:
    identifiable: bool
    counterexample: CounterexamplePair | None
    n_studies: int

    def __bool__(self) -> bool:
        return self.identifiable


def brute_force_identifiable(pair: ClassPair, estimand: str = "ate") -> BruteForceVerdict:
    """Direct definition: no two realizable studies share a censored law but not the estimand."""
    estimand = estimand.lower()
    if estimand not in ESTIMANDS:
        raise ValueError(f"estimand must be one of {ESTIMANDS}")
    studies = [r.study for r in enumerate_realizable(pair, dedupe=False, with_indices=True)]
    if estimand == "att":
        studies = [s for s in studies if treated_probability(s) > 0]
    if len(studies) < 2:
        return BruteForceVerdict(True, None, len(studies))
    cens = np.stack(
        [np.stack([s.p0.value * s.d0.mass, s.p1.value * s.d1.mass], axis=1).reshape(-1) for s in studies]
    )
    if estimand == "ate":
        vals = np.array([[s.d1.mean() - s.d0.mean()] for s in studies])
    elif estimand == "att":
        vals = np.array([[att(s)] for s in studies])
    else:
        vals = np.nan_to_num(np.stack([hte_vector(s) for s in studies]), nan=0.0)
    for u, m in enumerate(match_rows(cens, cens, CERT_ATOL)):
        for v in m:
            if v > u and np.max(np.abs(vals[u] - vals[v])) > ATOL:
                s1, s2 = studies[u], studies[int(v)]
                c1 = censor(s1)
                cx = CounterexamplePair(
                    s1, s2, c1, effect_gaps(s1, s2), float(np.max(np.abs(c1.mass - censor(s2).mass)))
                )
                return BruteForceVerdict(False, cx, len(studies))
    return BruteForceVerdict(True, None, len(studies))
