"""Canonical study/class instances for each scenario.

These back the harness's named instances, the test-suite and the CLI
examples. Each builder returns an ``Instance`` holding the ground-truth study
(used only for sampling and scoring) and the class specification handed to
the estimator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .concepts import (
    ClassPair,
    DistributionClass,
    PropensityClass,
    build_poly_expectation_family,
    rd_class,
)
from .core import Grid, JointPMF, ObservationalStudy, PropensityTable


@dataclass(frozen=True, eq=False)
class Instance:
    name: str
    scenario: str
    study: ObservationalStudy
    pair: ClassPair
    c: float
    eps: float
    params: dict = field(default_factory=dict)


def scenario1_instance() -> Instance:
    """Unconfounded study with e(x) in {0.2, 0.8} and a 9-member class.

    The class holds the tables equal to ``a`` on the first two covariates and
    ``b`` on the last two, for ``a, b`` in {0.2, 0.5, 0.8}.
    """
    grid = Grid([0.0, 1.0, 2.0, 3.0], [0.0, 0.5, 1.0])
    e = np.array([0.2, 0.2, 0.8, 0.8])
    members = [
        PropensityTable.from_covariate(grid, [a, a, b, b])
        for a in (0.2, 0.5, 0.8)
        for b in (0.2, 0.5, 0.8)
    ]
    c = 0.15
    p_class = PropensityClass(grid, members, "OU", c)
    # treated outcomes are high where treatment is likely, control outcomes
    # where control is likely, which keeps the weighted variance small
    cond1 = np.array([[0.7, 0.2, 0.1], [0.6, 0.3, 0.1], [0.1, 0.3, 0.6], [0.2, 0.2, 0.6]])
    cond0 = np.array([[0.2, 0.3, 0.5], [0.3, 0.3, 0.4], [0.8, 0.1, 0.1], [0.7, 0.2, 0.1]])
    d1 = JointPMF.from_conditional(grid, cond1)
    d0 = JointPMF.from_conditional(grid, cond0)
    p1 = PropensityTable.from_covariate(grid, e)
    study = ObservationalStudy(d0=d0, d1=d1, p0=p1.complement(), p1=p1)
    d_class = DistributionClass(grid, [d0, d1], "custom")
    return Instance("scenario1", "1", study, ClassPair(p_class, d_class), c, 0.05, {"true_e": e.tolist()})


def scenario2_instance() -> Instance:
    """Confounded study: the treated propensity depends on the outcome.

    Binary outcome, two covariates with uniform marginal, six propensity
    tables inside (0.25, 0.75) and six pmfs whose conditional success
    probabilities come from {0.05, 0.5, 0.95}.
    """
    grid = Grid([0.0, 1.0], [0.0, 1.0])
    c = 0.25

    def pmf(a0, a1):
        return JointPMF.from_conditional(grid, [[1 - a0, a0], [1 - a1, a1]])

    d1 = pmf(0.5, 0.5)
    d0 = pmf(0.5, 0.05)
    p1 = PropensityTable(grid, [[0.3, 0.7], [0.3, 0.7]])
    p0 = PropensityTable(grid, [[0.7, 0.3], [0.5, 0.5]])
    members = [
        p1,
        p0,
        p1.complement(),
        PropensityTable.constant(grid, 0.5),
        PropensityTable.constant(grid, 0.3),
        PropensityTable.constant(grid, 0.7),
    ]
    p_class = PropensityClass(grid, members, "O", c)
    d_class = DistributionClass(
        grid,
        [d1, d0, pmf(0.05, 0.05), pmf(0.95, 0.95), pmf(0.05, 0.5), pmf(0.95, 0.5)],
        "custom",
    )
    study = ObservationalStudy(d0=d0, d1=d1, p0=p0, p1=p1)
    return Instance("scenario2", "2", study, ClassPair(p_class, d_class), c, 0.1)


RD_OUTCOMES = tuple(np.round(np.arange(-2.0, 2.5001, 0.25), 10))
RD_LATTICE = [
    [a0, a1, a2]
    for a0 in (-1.0, -0.5, 0.0, 0.5)
    for a1 in (-0.5, 0.0, 0.5)
    for a2 in (0.0, 0.5, 1.0)
]


def quadratic_family(grid: Grid, half_width: float = 0.5) -> DistributionClass:
    """Degree-2 polynomial-expectation family used by the weak-overlap instances."""
    return build_poly_expectation_family(grid, 2, RD_LATTICE, half_width)


def _quadratic_member(d_class: DistributionClass, coef) -> JointPMF:
    return d_class[d_class.params["coefficients"].index(list(coef))]


def rd_instance() -> Instance:
    """RD design on 21 points of [0, 1] with S = {x >= 0.5}.

    Outcome means are x^2 under treatment and x^2 - 1 under control, so the
    effect is 1 everywhere.
    """
    xs = np.round(np.linspace(0.0, 1.0, 21), 10)
    grid = Grid(xs, RD_OUTCOMES)
    d_class = quadratic_family(grid)
    d1 = _quadratic_member(d_class, [0.0, 0.0, 1.0])
    d0 = _quadratic_member(d_class, [-1.0, 0.0, 1.0])
    s = xs >= 0.5
    c = 0.2
    p_class = rd_class(grid, s, c)
    study = ObservationalStudy(d0=d0, d1=d1, p0=p_class[1], p1=p_class[0])
    return Instance(
        "rd", "rd", study, ClassPair(p_class, d_class), c, 0.01, {"treated": s.tolist()}
    )


def _ramp(xs: np.ndarray, a: float, b: float) -> np.ndarray:
    return np.where(xs < a, 0.0, np.where(xs < b, 0.5, 1.0))


def scenario3_instance() -> Instance:
    """Unconfounded study with overlap only on a middle band of covariates.

    The propensity is 0 below ``a``, 1/2 between ``a`` and ``b`` and 1 above
    ``b``; the class holds these ramps and their complements for a small
    lattice of break points. Outcomes as in ``rd_instance``.
    """
    xs = np.round(np.linspace(0.0, 1.0, 21), 10)
    grid = Grid(xs, RD_OUTCOMES)
    d_class = quadratic_family(grid)
    c = 0.2
    members = []
    for a in (0.2, 0.3, 0.4):
        for b in (0.6, 0.7, 0.8):
            e = PropensityTable.from_covariate(grid, _ramp(xs, a, b))
            members += [e, e.complement()]
    p_class = PropensityClass(grid, members, "U", c)
    e_true = members[2 * 4]  # a = 0.3, b = 0.7
    study = ObservationalStudy(
        d0=_quadratic_member(d_class, [-1.0, 0.0, 1.0]),
        d1=_quadratic_member(d_class, [0.0, 0.0, 1.0]),
        p0=e_true.complement(),
        p1=e_true,
    )
    return Instance("scenario3", "3", study, ClassPair(p_class, d_class), c, 0.01)


INSTANCES = {
    "scenario1": scenario1_instance,
    "scenario2": scenario2_instance,
    "scenario3": scenario3_instance,
    "rd": rd_instance,
}


def get_instance(name: str) -> Instance:
    try:
        return INSTANCES[name]()
    except KeyError:
        raise KeyError(f"unknown instance {name!r}; choose from {sorted(INSTANCES)}") from None
