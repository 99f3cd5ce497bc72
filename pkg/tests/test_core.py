import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from causalid.concepts import member_check
from causalid.core import (
    SCENARIOS,
    CensoredSamples,
    Grid,
    JointPMF,
    ObservationalStudy,
    PropensityTable,
    ate,
    att,
    censor,
    hte,
    hte_vector,
    is_valid,
    make_random_study,
    sample_censored,
    treated_probability,
    true_propensity,
    validate_study,
)
from causalid.exceptions import InvalidStudyError, PreconditionError
from causalid.instances import scenario1_instance
from helpers import naive_ate, naive_censored

G = Grid([0.0, 1.0], [0.0, 1.0])


def _uniform_study(e=0.5):
    d = JointPMF(G, np.full((2, 2), 0.25))
    p1 = PropensityTable.constant(G, e)
    return ObservationalStudy(d0=d, d1=d, p0=p1.complement(), p1=p1)


class TestGrid:
    def test_scalar_points_become_tuples(self):
        g = Grid([0, 1, 2], [0, 1])
        assert g.covariate_points == ((0.0,), (1.0,), (2.0,))
        assert g.dim == 1 and g.shape == (3, 2)
        assert g.covariate_value(2) == 2.0

    def test_vector_points(self):
        g = Grid([(0, 0), (0, 1), (1, 0)], [0.0])
        assert g.dim == 2
        assert g.covariate_index((0, 1)) == 1
        assert g.covariate_value(1) == (0.0, 1.0)

    @pytest.mark.parametrize(
        "cov, out", [([], [0]), ([0], []), ([0, 0], [0]), ([0], [1, 1]), ([(0,), (0, 1)], [0])]
    )
    def test_rejects_bad_grids(self, cov, out):
        with pytest.raises(ValueError):
            Grid(cov, out)

    def test_lookup_off_grid(self):
        with pytest.raises(ValueError):
            G.covariate_index(0.5)
        with pytest.raises(ValueError):
            G.outcome_index(2)

    def test_volume(self):
        g = Grid(range(5), [0])
        assert g.volume([True, False, True, False, False]) == pytest.approx(0.4)


class TestTables:
    def test_pmf_validation(self):
        with pytest.raises(ValueError):
            JointPMF(G, [[0.5, 0.5], [0.5, 0.5]])
        with pytest.raises(ValueError):
            JointPMF(G, [[1.5, -0.5], [0, 0]])
        with pytest.raises(ValueError):
            JointPMF(G, [[1.0, 0.0]])

    def test_pmf_is_read_only(self):
        d = JointPMF(G, np.full((2, 2), 0.25))
        with pytest.raises(ValueError):
            d.mass[0, 0] = 1.0

    def test_from_conditional_and_means(self):
        d = JointPMF.from_conditional(G, [[0.2, 0.8], [0.6, 0.4]], x_marginal=[0.25, 0.75])
        assert np.allclose(d.x_marginal, [0.25, 0.75])
        assert np.allclose(d.conditional_mean(), [0.8, 0.4])
        assert d.mean() == pytest.approx(0.25 * 0.8 + 0.75 * 0.4)

    def test_off_support_rows(self):
        d = JointPMF(G, [[0.5, 0.5], [0.0, 0.0]])
        assert not d.support[1]
        assert np.all(d.conditional[1] == 0)
        assert np.isnan(d.conditional_mean()[1])

    def test_propensity_bounds(self):
        with pytest.raises(ValueError):
            PropensityTable(G, [[1.2, 0], [0, 0]])

    def test_covariate_values_need_unconfounded(self):
        p = PropensityTable(G, [[0.2, 0.3], [0.5, 0.5]])
        assert not p.is_unconfounded()
        with pytest.raises(PreconditionError):
            p.covariate_values()
        assert np.allclose(PropensityTable.from_covariate(G, [0.1, 0.9]).covariate_values(), [0.1, 0.9])


class TestStudy:
    def test_valid_and_invalid(self):
        assert is_valid(_uniform_study())
        d = JointPMF(G, np.full((2, 2), 0.25))
        bad = ObservationalStudy(d0=d, d1=d, p0=PropensityTable.constant(G, 0.5), p1=PropensityTable.constant(G, 0.6))
        assert validate_study(bad)
        with pytest.raises(InvalidStudyError):
            censor(bad)

    def test_mismatched_marginals_invalid(self):
        d0 = JointPMF(G, [[0.5, 0.0], [0.5, 0.0]])
        d1 = JointPMF(G, [[0.25, 0.0], [0.75, 0.0]])
        p = PropensityTable.constant(G, 0.5)
        assert not is_valid(ObservationalStudy(d0=d0, d1=d1, p0=p, p1=p))

    def test_effects_of_scenario1_instance(self):
        # hand summation: conditional means 0.475 treated, 0.3875 control
        s = scenario1_instance().study
        assert ate(s) == pytest.approx(0.0875, abs=1e-12)
        assert treated_probability(s) == pytest.approx(0.5, abs=1e-12)
        assert att(s) == pytest.approx(0.365, abs=1e-12)
        assert hte(s, 2.0) == pytest.approx(0.6, abs=1e-12)
        assert np.allclose(hte_vector(s), [-0.45, -0.3, 0.6, 0.5])
        assert true_propensity(s, 3.0) == pytest.approx(0.8)

    def test_att_undefined(self):
        with pytest.raises(PreconditionError, match="ATT undefined"):
            att(_uniform_study(0.0))

    def test_hte_off_support(self):
        d = JointPMF(G, [[0.5, 0.5], [0.0, 0.0]])
        p = PropensityTable.constant(G, 0.5)
        s = ObservationalStudy(d0=d, d1=d, p0=p, p1=p)
        with pytest.raises(PreconditionError):
            hte(s, 1.0)

    def test_relabel_negates_ate(self):
        s = scenario1_instance().study
        assert ate(s.relabel()) == pytest.approx(-ate(s))

    def test_censor_matches_summation(self):
        s = scenario1_instance().study
        c = censor(s)
        ref = np.array(naive_censored(s))
        assert np.allclose(c.mass, ref, atol=0, rtol=0)
        assert c.treated_probability() == pytest.approx(0.5)


class TestSampling:
    def test_deterministic(self):
        c = censor(scenario1_instance().study)
        a = sample_censored(c, 500, 3)
        b = sample_censored(c, 500, 3)
        assert a.same_as(b)
        assert not a.same_as(sample_censored(c, 500, 4))

    def test_frequencies_converge(self):
        c = censor(scenario1_instance().study)
        s = sample_censored(c, 200_000, 11)
        flat = (s.x_index * 2 + s.t) * c.grid.n_y + s.y_index
        freq = np.bincount(flat, minlength=c.mass.size) / len(s)
        assert np.abs(freq - c.mass.ravel()).max() < 0.005

    def test_records_round_trip(self):
        c = censor(scenario1_instance().study)
        s = sample_censored(c, 50, 1)
        again = CensoredSamples.from_records(s.grid, [(r.x, r.t, r.y) for r in s])
        assert again.same_as(s)

    def test_split_is_contiguous(self):
        c = censor(_uniform_study())
        s = sample_censored(c, 10, 0)
        parts = s.split(3)
        assert [len(p) for p in parts] == [3, 4, 3]
        joined = np.concatenate([p.x_index for p in parts])
        assert np.array_equal(joined, s.x_index)

    def test_zero_samples(self):
        assert len(sample_censored(censor(_uniform_study()), 0, 0)) == 0
        with pytest.raises(ValueError):
            sample_censored(censor(_uniform_study()), -1, 0)

    def test_bad_records(self):
        with pytest.raises(ValueError):
            CensoredSamples.from_records(G, [(0.0, 2, 1.0)])
        with pytest.raises(ValueError):
            CensoredSamples.from_records(G, [(0.5, 1, 1.0)])


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), scenario=st.sampled_from(SCENARIOS), nx=st.integers(3, 8))
def test_random_studies_are_valid_members(seed, scenario, nx):
    grid = Grid(range(nx), [0.0, 0.5, 1.0])
    s = make_random_study(grid, scenario, seed, c=0.1)
    assert not validate_study(s)
    tag = {"I": "OU", "II": "O", "III": "U", "RD": "RD"}[scenario]
    assert member_check(s.p1, tag, 0.1) and member_check(s.p0, tag, 0.1)
    assert ate(s) == pytest.approx(naive_ate(s), abs=1e-12)
    assert censor(s).mass.sum() == pytest.approx(1.0)
