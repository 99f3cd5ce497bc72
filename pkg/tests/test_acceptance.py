"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Frozen values below were computed by the oracles in ``helpers`` (plain
summation over the grids) and are re-derived inside the tests.
"""

from __future__ import annotations

import numpy as np
import pytest

from causalid.concepts import ClassPair, DistributionClass, PropensityClass, constant_class, pmf_lattice
from causalid.core import Grid, JointPMF, PropensityTable, make_rng
from causalid.estimate import ipw_population, naive_arm_difference
from causalid.harness import ExperimentConfig, replica_seed, run_experiment
from causalid.identify import (
    brute_force_identifiable,
    build_indistinguishable_pair,
    build_overlap_zero_counterexample,
    build_scenario3_counterexample,
    check_condition1,
    check_condition2,
    check_condition3,
)
from causalid.instances import get_instance
from causalid.nuisance import l1_distance, yatracos_sample_size, yatracos_select
from helpers import (
    GRID22,
    criterion,
    equal_products_fixture,
    max_cell_gap,
    naive_arm_means,
    naive_ate,
    naive_censored,
    naive_ipw_population,
    naive_mean,
    naive_valid,
    random_pair,
)

pytestmark = pytest.mark.acceptance

MASTER_SEED = 20240611

CONFIGS = {
    "scenario1": dict(scenario="1", instance="scenario1", n_grid=[10_000], replicas=200, tolerance=0.05),
    "scenario1_known_e": dict(
        scenario="1", instance="scenario1", n_grid=[10_000], replicas=200, tolerance=0.05, known_propensity=True
    ),
    "scenario2": dict(scenario="2", instance="scenario2", n_grid=[50_000], replicas=100, tolerance=0.1),
    "rd": dict(scenario="rd", instance="rd", n_grid=[50_000], replicas=100, tolerance=0.1),
}
for _name, _sc in (("scenario1", "1"), ("scenario2", "2"), ("scenario3", "3"), ("rd", "rd")):
    CONFIGS[f"monotone_{_name}"] = dict(
        scenario=_sc, instance=_name, n_grid=[1_000, 10_000, 50_000], replicas=50, tolerance=0.1
    )

_RUNS: dict = {}


def run_config(key: str, out_dir):
    cfg = ExperimentConfig.from_dict(dict(CONFIGS[key], name=key, seed=MASTER_SEED, output_dir=str(out_dir)))
    return run_experiment(cfg)


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    """First run of each acceptance config, computed on demand."""
    base = tmp_path_factory.mktemp("acceptance")

    def get(key):
        if key not in _RUNS:
            summary = run_config(key, base / key)
            _RUNS[key] = (summary, (base / key / "replicas.csv").read_bytes())
        return _RUNS[key][0]

    get.base = base
    return get


# ------------------------------------------------------------------ 1


def _fixtures():
    s1, s2 = get_instance("scenario1"), get_instance("scenario2")
    rd_pair = ClassPair(
        PropensityClass(
            GRID22,
            [PropensityTable.from_covariate(GRID22, [0, 1]), PropensityTable.from_covariate(GRID22, [1, 0])],
            "RD",
            0.1,
        ),
        pmf_lattice(GRID22, 0.25),
    )
    return {
        "equal_products": equal_products_fixture(),
        "constants_on_pmf_lattice": ClassPair(
            constant_class(GRID22, [0.3, 0.5, 0.7], "OU", 0.1), pmf_lattice(GRID22, 0.25)
        ),
        "scenario1_classes": s1.pair,
        "scenario2_classes": s2.pair,
        "rd_indicator": rd_pair,
    }


def test_criterion1_condition1_matches_brute_force():
    with criterion(1, "Condition-1 checker agrees with brute force") as info:
        modes = ("sparse", "planted", "dense")
        cases = [(f"random_{modes[s % 3]}_{s}", random_pair(s, modes[s % 3])) for s in range(60)]
        cases += list(_fixtures().items())
        agree, failing, min_gap, max_err = 0, 0, np.inf, 0.0
        mismatches = []
        for name, pair in cases:
            verdict = check_condition1(pair)
            bf = brute_force_identifiable(pair, "ate")
            if verdict.holds == bf.identifiable:
                agree += 1
            else:
                mismatches.append(name)
            if not verdict.holds:
                failing += 1
                cx = build_indistinguishable_pair(verdict.witness, pair)
                c1, c2 = naive_censored(cx.study1), naive_censored(cx.study2)
                max_err = max(max_err, max_cell_gap(c1, c2))
                min_gap = min(min_gap, abs(naive_ate(cx.study1) - naive_ate(cx.study2)))
        info["detail"] = (
            f"{agree}/{len(cases)} agree ({len(cases) - 5} random + 5 fixtures), {failing} failing; "
            f"max censored gap {max_err:.2e}, min |dtau| {min_gap:.4g}"
        )
        assert not mismatches, mismatches
        assert len(cases) - 5 >= 50
        assert max_err <= 1e-12
        assert failing == 0 or min_gap >= 0.05


# ------------------------------------------------------------------ 2


def test_criterion2_scenario1_recovery(runs):
    with criterion(2, "Scenario-I IPW recovery at n=1e4") as info:
        inst = get_instance("scenario1")
        e = np.array(inst.params["true_e"])
        assert set(e.tolist()) == {0.2, 0.8}
        assert inst.study.grid.outcomes.min() >= 0 and inst.study.grid.outcomes.max() <= 1
        assert len(inst.pair.p_class) == 9
        assert any(np.allclose(m.covariate_values(), e) for m in inst.pair.p_class.members)
        summary = runs("scenario1")
        freq = summary.aggregates["10000"]["success_frequency"]
        known = runs("scenario1_known_e")
        bias = np.array([r.tau_hat - r.truth for r in known.records])
        se = bias.std(ddof=1) / np.sqrt(len(bias))
        info["detail"] = f"success {freq:.3f} of 200 (need 0.95); known-e bias {bias.mean():.5f}, SE {se:.5f}"
        assert freq >= 0.95
        assert abs(bias.mean()) <= 3 * se


# ------------------------------------------------------------------ 3


def test_criterion3_yatracos_guarantee():
    with criterion(3, "Yatracos selection within 4 zeta") as info:
        cands = np.array([[0.4, 0.3, 0.2, 0.1], [0.1, 0.2, 0.3, 0.4], [0.25, 0.25, 0.25, 0.25]])
        dists = [l1_distance(cands[i], cands[j]) for i in range(3) for j in range(i + 1, 3)]
        assert min(dists) >= 0.4 - 1e-12
        zeta, n, g = 0.05, 5000, 0
        assert yatracos_sample_size(3, zeta, 0.05) <= n
        hits = 0
        for r in range(200):
            rng = make_rng(replica_seed(MASTER_SEED, n, r))
            cells = rng.choice(4, size=n, p=cands[g])
            j = yatracos_select(cands, cells, zeta)
            hits += l1_distance(cands[j], cands[g]) <= 4 * zeta
        info["detail"] = f"{hits}/200 within L1 {4 * zeta} (need 190); min pairwise L1 {min(dists):.2f}"
        assert hits >= 190


# ------------------------------------------------------------------ 4


def test_criterion4_scenario2_confounded(runs):
    with criterion(4, "Scenario-II recovery under confounding") as info:
        inst = get_instance("scenario2")
        study, pair = inst.study, inst.pair
        p1 = study.p1.value
        assert np.any(np.abs(p1[:, 0] - p1[:, 1]) > 1e-9), "propensity must depend on y"
        assert len(pair.p_class) + len(pair.d_class) == 12
        assert any(np.array_equal(study.p0.value, m.value) for m in pair.p_class.members)
        assert any(np.array_equal(study.p1.value, m.value) for m in pair.p_class.members)
        assert any(np.array_equal(study.d0.mass, m.mass) for m in pair.d_class.members)
        assert any(np.array_equal(study.d1.mass, m.mass) for m in pair.d_class.members)
        assert naive_valid(study.p0, study.p1, study.d0, study.d1)
        assert all(0.25 < v < 0.75 for m in pair.p_class.members for v in m.value.ravel())
        assert check_condition2(pair.d_class, 0.25).holds
        tau = naive_ate(study)
        bias = naive_ipw_population(study) - tau
        assert bias == pytest.approx(ipw_population(study) - tau, abs=1e-12)
        assert bias == pytest.approx(0.3, abs=1e-12)
        summary = runs("scenario2")
        freq = summary.aggregates["50000"]["success_frequency"]
        info["detail"] = f"success {freq:.2f} of 100 (need 0.90); closed-form IPW bias {bias:.4f} (need >= 0.2)"
        assert abs(bias) >= 0.2
        assert freq >= 0.90


# ------------------------------------------------------------------ 5


def test_criterion5_rd_extrapolation(runs):
    with criterion(5, "RD extrapolation on the 21-point grid") as info:
        inst = get_instance("rd")
        study = inst.study
        xs = study.grid.covariates[:, 0]
        assert len(xs) == 21
        assert np.allclose(study.d1.conditional_mean(), xs**2, atol=1e-12)
        assert np.allclose(study.d0.conditional_mean(), xs**2 - 1, atol=1e-12)
        assert np.allclose(study.d1.x_marginal, 1 / 21)
        assert naive_ate(study) == pytest.approx(1.0, abs=1e-12)
        naive = naive_arm_means(study)
        assert naive == pytest.approx(1.51625, abs=1e-12)
        assert naive_arm_difference(study) == pytest.approx(naive, abs=1e-12)
        summary = runs("rd")
        freq = summary.aggregates["50000"]["success_frequency"]
        info["detail"] = f"naive arm difference {naive:.5f} vs tau 1; success {freq:.2f} of 100 (need 0.90)"
        assert abs(naive - 1.5) <= 0.05
        assert freq >= 0.90


# ------------------------------------------------------------------ 6


def _scenario3_fixtures():
    out = []
    P = JointPMF(GRID22, [[0.25, 0.25], [0.25, 0.25]])
    Q = JointPMF(GRID22, [[0.25, 0.25], [0.1, 0.4]])
    out.append((P, Q, np.array([True, False]), 0.25))

    s1 = get_instance("scenario1").study
    q = s1.d0.mass.copy()
    q[2:] = q[2:, ::-1]
    out.append((s1.d0, JointPMF(s1.grid, q), np.array([True, True, False, False]), 0.25))

    lat = pmf_lattice(GRID22, 0.25)
    full = DistributionClass(GRID22, [m for m in lat.members if m.support.all()], "tabular")
    v = check_condition3(full, 0.25)
    assert not v.holds
    agree = np.all(np.abs(v.witness.P.mass - v.witness.Q.mass) <= 1e-9, axis=1)
    out.append((v.witness.P, v.witness.Q, agree, 0.25))

    rd = get_instance("rd").study
    xs = rd.grid.covariates[:, 0]
    m = rd.d1.mass.copy()
    hi = xs >= 0.5
    assert np.all(m[hi, -1] == 0)
    m[hi] = np.roll(m[hi], 1, axis=1)
    out.append((rd.d1, JointPMF(rd.grid, m), ~hi, 0.2))
    return out


def _overlap_zero_fixtures():
    out = []
    p = PropensityTable(GRID22, [[0.0, 0.0], [0.5, 0.5]])
    out.append((p, 0.0, 1.0, 0.0, None, None))

    g3 = Grid([0.0, 1.0, 2.0], [0.0, 1.0, 2.0])
    p3 = PropensityTable(g3, [[0.3, 0.3, 0.3], [0.0, 0.0, 0.4], [0.3, 0.3, 0.3]])
    base = JointPMF(g3, np.arange(1, 10, dtype=float).reshape(3, 3) / 45)
    out.append((p3, 1.0, 1.0, 0.0, base, 0.05))

    rd = get_instance("rd")
    out.append((rd.study.p0, 0.75, -1.0, 1.0, rd.study.d1, None))
    return out


def test_criterion6_necessity_constructions():
    with criterion(6, "Necessity constructions certify") as info:
        n3 = nz = 0
        for P, Q, S, c in _scenario3_fixtures():
            cx = build_scenario3_counterexample(P, Q, S, c)
            assert cx.recheck()
            assert max_cell_gap(naive_censored(cx.study1), naive_censored(cx.study2)) <= 1e-12
            gap = naive_ate(cx.study1) - naive_ate(cx.study2)
            assert gap == pytest.approx(naive_mean(Q) - naive_mean(P), abs=1e-12)
            assert abs(gap) > 1e-9
            n3 += 1
        for p, x, y1, y2, base, mass in _overlap_zero_fixtures():
            cx = build_overlap_zero_counterexample(p, x, y1, y2, base, mass)
            assert cx.recheck()
            assert max_cell_gap(naive_censored(cx.study1), naive_censored(cx.study2)) <= 1e-12
            gap = naive_ate(cx.study1) - naive_ate(cx.study2)
            i, j2 = p.grid.covariate_index(x), p.grid.outcome_index(y2)
            moved = mass if mass is not None else cx.study1.d0.mass[i, j2] / 2
            assert abs(gap) == pytest.approx(moved * abs(y1 - y2), abs=1e-12)
            nz += 1
        info["detail"] = f"{n3} weak-overlap fixtures and {nz} zero-overlap fixtures certified"
        assert n3 >= 3 and nz >= 3


# ------------------------------------------------------------------ 7


def test_criterion7_error_monotone(runs):
    with criterion(7, "Median error non-increasing in n") as info:
        parts, ok = [], True
        for name in ("scenario1", "scenario2", "scenario3", "rd"):
            agg = runs(f"monotone_{name}").aggregates
            med = [agg[str(n)]["median_error"] for n in (1_000, 10_000, 50_000)]
            ok &= all(b <= a for a, b in zip(med, med[1:]))
            parts.append(f"{name} " + "/".join(f"{m:.4g}" for m in med))
        info["detail"] = "; ".join(parts)
        assert ok


# ------------------------------------------------------------------ 8


def test_criterion8_deterministic_csv(runs):
    with criterion(8, "Byte-identical per-replica CSV on rerun") as info:
        same = 0
        for key in CONFIGS:
            runs(key)
            out = runs.base / f"{key}_rerun"
            run_config(key, out)
            same += (out / "replicas.csv").read_bytes() == _RUNS[key][1]
        info["detail"] = f"{same}/{len(CONFIGS)} configs identical"
        assert same == len(CONFIGS)
