import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oswcal.model import (
    ModelParams,
    default_mixing,
    init_state,
    replicate_seed,
    simulate,
    simulate_ensemble,
    step_day,
)

from conftest import const_schedule


class TestParams:
    def test_defaults_give_three_week_delay(self):
        p = ModelParams(num_regions=2, population=(10, 10))
        assert p.exposure_to_icu_days == 21
        assert (p.latent_days, p.infectious_days, p.preicu_delay_days, p.icu_stay_days) == (4, 5, 12, 10)
        assert p.p_icu == 0.05 and p.beta0 == 0.35

    def test_default_mixing_rows_sum_to_one(self):
        m = np.asarray(default_mixing(4))
        np.testing.assert_allclose(m.sum(axis=1), 1.0, atol=1e-12)
        # diagonal 1, off-diagonal 0.05, then normalised by 1.15
        assert m[0, 0] == pytest.approx(1 / 1.15)
        assert m[0, 1] == pytest.approx(0.05 / 1.15)
        assert default_mixing(1) == ((1.0,),)

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(population=(0, 10)),
            dict(population=(10,)),
            dict(latent_days=0),
            dict(p_icu=1.5),
            dict(mixing=((0.5, 0.4), (0.0, 1.0))),
        ],
    )
    def test_rejects_invalid(self, kwargs):
        base = dict(num_regions=2, population=(10, 10))
        base.update(kwargs)
        with pytest.raises(ValueError):
            ModelParams(**base)


class TestInitState:
    def test_empty_epidemic(self):
        p = ModelParams(num_regions=1, population=(1000,))
        s = init_state(p, [0], seed=1)
        assert s.day == 0 and s.S.tolist() == [1000]
        assert s.E.sum() == s.I.sum() == s.H.sum() == s.C.sum() == s.R.sum() == 0

    def test_seed_goes_to_first_infectious_slot(self):
        p = ModelParams(num_regions=1, population=(1000,))
        s = init_state(p, [10], seed=1)
        assert s.S.tolist() == [990]
        assert s.I[0, 0] == 10 and s.I.sum() == 10

    def test_rejects_more_infected_than_population(self):
        p = ModelParams(num_regions=1, population=(100,))
        with pytest.raises(ValueError):
            init_state(p, [200], seed=1)


class TestStepDay:
    def test_worked_example(self):
        p = ModelParams(num_regions=1, population=(1000,), beta0=0.2, mixing=((1.0,),), stochastic=False)
        s = init_state(p, [10], seed=1)
        out = step_day(s, [0.5], p)
        # independent arithmetic: force 0.5 * 0.2 * 10/1000
        expected = 990 * (1 - math.exp(-0.5 * 0.2 * 0.01))
        assert out.E[0, 0] == pytest.approx(expected, rel=1e-14)
        assert expected == pytest.approx(0.98950, abs=1e-5)
        assert out.day == 1
        # input untouched
        assert s.day == 0 and s.E.sum() == 0

    def test_no_infectious_means_no_exposures(self, det_params):
        s = init_state(det_params, [0, 0, 0], seed=1)
        out = step_day(s, [0.9, 0.9, 0.9], det_params)
        np.testing.assert_array_equal(out.S, s.S)
        assert out.E.sum() == 0

    def test_queues_advance(self):
        p = ModelParams(num_regions=1, population=(1000,), p_icu=1.0, stochastic=False)
        s = init_state(p, [10], seed=1)
        for _ in range(p.infectious_days - 1):
            s = step_day(s, [0.1], p)
        assert s.I[0, -1] == 10
        s = step_day(s, [0.1], p)
        assert s.H[0, 0] == 10

    @given(
        mu=st.lists(st.floats(0.1, 0.9), min_size=3, max_size=3),
        infected=st.lists(st.integers(0, 1000), min_size=3, max_size=3),
        seed=st.integers(0, 2**32 - 1),
        stochastic=st.booleans(),
    )
    @settings(max_examples=50, deadline=None)
    def test_conservation(self, mu, infected, seed, stochastic):
        p = ModelParams(num_regions=3, population=(1000, 2000, 1500), stochastic=stochastic)
        s = init_state(p, infected, seed=seed)
        for _ in range(30):
            s = step_day(s, mu, p)
            if stochastic:
                np.testing.assert_array_equal(s.totals(), p.population)
            else:
                np.testing.assert_allclose(s.totals(), p.population, atol=1e-9, rtol=0)
            assert min(s.S.min(), s.E.min(), s.I.min(), s.H.min(), s.C.min(), s.R.min()) >= 0


class TestSimulate:
    def test_zero_infections_zero_icu(self, det_params):
        s = init_state(det_params, [0, 0, 0], seed=1)
        icu, _ = simulate(s, const_schedule(4, 3), det_params, 1, 4)
        assert icu.shape == (28, 3)
        assert not icu.any()

    def test_four_weeks_is_28_rows(self, sto_state, sto_params):
        icu, final = simulate(sto_state, const_schedule(4, 3), sto_params, 1, 4)
        assert icu.shape == (28, 3)
        assert final.day == 28

    def test_matches_sequential_steps(self, det_state, det_params):
        sched = np.array([[0.2, 0.5, 0.8], [0.3, 0.3, 0.3], [0.9, 0.1, 0.4], [0.6, 0.6, 0.2]])
        icu, final = simulate(det_state, sched, det_params, 1, 4)
        s = det_state
        rows = []
        for day in range(28):
            s = step_day(s, sched[day // 7], det_params)
            rows.append(s.C.sum(axis=1))
        np.testing.assert_array_equal(icu, np.array(rows))
        assert final == s

    def test_later_weeks_need_matching_day(self, det_state, det_params):
        with pytest.raises(ValueError):
            simulate(det_state, const_schedule(2, 3), det_params, 2, 3)

    def test_schedule_shape_mismatch(self, det_state, det_params):
        with pytest.raises(ValueError):
            simulate(det_state, const_schedule(3, 3), det_params, 1, 4)

    def test_schedule_outside_clamp(self, det_state, det_params):
        with pytest.raises(ValueError):
            simulate(det_state, const_schedule(1, 3, mu=0.95), det_params, 1, 1)

    def test_deterministic_reproducible(self, sto_state, sto_params):
        a, fa = simulate(sto_state, const_schedule(3, 3), sto_params, 1, 3)
        b, fb = simulate(sto_state, const_schedule(3, 3), sto_params, 1, 3)
        np.testing.assert_array_equal(a, b)
        assert fa == fb

    def test_single_cohort_delay(self):
        p = ModelParams(num_regions=1, population=(10_000,), p_icu=1.0, stochastic=False)
        s = init_state(p, [0], seed=1)
        s.S[0] -= 100
        s.E[0, 0] = 100  # exposed on day -1, i.e. the step before day 0
        icu, _ = simulate(s, const_schedule(5, 1), p, 1, 5)
        first = int(np.flatnonzero(icu[:, 0] > 0)[0])
        # row i is the end of day i; the cohort entered E at the end of day -1
        assert first - (-1) == p.exposure_to_icu_days

    def test_empty_state_stays_icu_free(self, sto_params):
        s = init_state(sto_params, [0, 0, 0], seed=3)
        icu, final = simulate(s, const_schedule(8, 3, 0.9), sto_params, 1, 8)
        assert not icu.any() and final.E.sum() == 0


class TestEnsemble:
    def test_one_replicate_equals_simulate(self, sto_state, sto_params):
        sched = const_schedule(2, 3, 0.7)
        mean, final = simulate_ensemble(sto_state, sched, sto_params, 1, 2, 1, base_seed=42)
        single, sfinal = simulate(sto_state.with_seed(replicate_seed(42, 0)), sched, sto_params, 1, 2)
        np.testing.assert_array_equal(mean, single)
        assert final == sfinal

    def test_deterministic_any_n(self, det_state, det_params):
        sched = const_schedule(2, 3, 0.7)
        mean, _ = simulate_ensemble(det_state, sched, det_params, 1, 2, 5, base_seed=1)
        single, _ = simulate(det_state, sched, det_params, 1, 2)
        np.testing.assert_array_equal(mean, single)

    def test_mean_of_three(self, sto_state, sto_params):
        sched = const_schedule(4, 3, 0.8)
        mean, final = simulate_ensemble(sto_state, sched, sto_params, 1, 4, 3, base_seed=7)
        runs = [
            simulate(sto_state.with_seed(replicate_seed(7, r)), sched, sto_params, 1, 4)
            for r in range(3)
        ]
        expected = (runs[0][0] + runs[1][0] + runs[2][0]) / 3
        np.testing.assert_allclose(mean, expected, rtol=1e-15, atol=0)
        assert final == runs[0][1]
        assert not np.array_equal(runs[0][0], runs[1][0])

    def test_rejects_zero_replicates(self, sto_state, sto_params):
        with pytest.raises(ValueError):
            simulate_ensemble(sto_state, const_schedule(1, 3), sto_params, 1, 1, 0, 1)
