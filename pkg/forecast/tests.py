import numpy as np
from django.test import SimpleTestCase, tag
from numpy.testing import assert_allclose, assert_array_equal

from core.exceptions import PreconditionError
from dynamics.augmented import AugmentedState, rollout
from dynamics.schedules import Schedules
from inference_batch.sampler import ChainOutput
from params.theta import FixedConfig, parameter_names, reference_theta, reported_vector
from params.transforms import ParameterLayout
from simulate.generator import simulate
from .predict import (
    QUANTILE_COLUMNS, ForecastResult, PosteriorDraw, aggregate, draws_from_chains, predict,
)

# initial regime for 4 days, then regime 1
S_PATH = np.array([4, 4, 4, 4, 1, 1, 1, 1, 1, 1])
D_PATH = np.array([3, 2, 1, 0, 9, 8, 7, 6, 5, 4])


def _delay(window=28):
    f = np.arange(1, window, dtype=float)
    return f / f.sum()


class ForecastTests(SimpleTestCase):
    def setUp(self):
        self.theta = reference_theta()
        self.cfg = FixedConfig(n_pop=1_000_000, dt_substeps=4, E0=2000.0)
        self.sched = Schedules.constant(10, _delay(), nu=0.0, ur=0.5, ifr=0.01)
        final = rollout(self.theta, self.cfg, self.sched, S_PATH, D_PATH)["final"]
        self.draws = [PosteriorDraw(self.theta, final, S_PATH[-1:], D_PATH[-1:]) for _ in range(50)]

    def test_zero_horizon_is_empty(self):
        result = predict(self.draws, 0, "daily", self.cfg, self.sched, np.random.default_rng(0), t_start=10)
        self.assertEqual(result.periods, 0)
        self.assertTrue(result.summary().empty)

    def test_no_infection_gives_zero_counts(self):
        state = AugmentedState.before_start(1, self.cfg)
        state.ode[:] = 0.0
        state.ode[0, 0] = self.cfg.n_pop
        draws = [PosteriorDraw(self.theta, state, np.array([1]), np.array([3])) for _ in range(20)]
        result = predict(draws, 14, "daily", self.cfg, self.sched, np.random.default_rng(1), t_start=10)
        assert_array_equal(result.cases, 0)
        assert_array_equal(result.deaths, 0)

    def test_quantiles_are_monotone(self):
        result = predict(self.draws, 10, "daily", self.cfg, self.sched, np.random.default_rng(2), t_start=10)
        summary = result.summary()
        self.assertEqual(list(summary.columns), ["t", "horizon", "channel", *QUANTILE_COLUMNS, "mean"])
        self.assertEqual(len(summary), 20)
        values = summary[list(QUANTILE_COLUMNS)].to_numpy()
        self.assertTrue(np.all(np.diff(values, axis=1) >= 0))
        self.assertEqual(summary["t"].iloc[0], 10)
        self.assertEqual(summary["horizon"].iloc[-1], 10)

    def test_weekly_sums_before_quantiles(self):
        daily = predict(self.draws, 14, "daily", self.cfg, self.sched, np.random.default_rng(3), t_start=10)
        weekly = predict(self.draws, 14, "weekly", self.cfg, self.sched, np.random.default_rng(3), t_start=10)
        assert_array_equal(weekly.cases, daily.cases.reshape(50, 2, 7).sum(axis=2))
        summed = weekly.summary()
        self.assertEqual(list(summed["horizon"].unique()), [7, 14])
        q50 = summed[(summed.channel == "cases") & (summed.horizon == 7)]["q50"].iloc[0]
        self.assertEqual(q50, np.quantile(daily.cases[:, :7].sum(axis=1), 0.5))

    def test_sum_then_quantile_on_skewed_draws(self):
        draws = np.random.default_rng(4).lognormal(0.0, 1.5, size=(2000, 7))
        weekly = aggregate(draws, "weekly")
        result = ForecastResult(0, 7, "weekly", weekly, weekly)
        median = result.quantiles("cases")[1, 0]
        self.assertAlmostEqual(median, np.quantile(draws.sum(axis=1), 0.5))
        self.assertGreater(abs(median - np.median(draws, axis=0).sum()), 0.5)

    def test_partial_week_is_dropped(self):
        result = predict(self.draws, 10, "weekly", self.cfg, self.sched, np.random.default_rng(5), t_start=10)
        self.assertEqual(result.periods, 1)

    def test_summary_ignores_draw_order(self):
        result = predict(self.draws, 5, "daily", self.cfg, self.sched, np.random.default_rng(6), t_start=10)
        order = np.random.default_rng(0).permutation(50)
        shuffled = ForecastResult(10, 5, "daily", result.cases[order], result.deaths[order])
        self.assertTrue(result.summary().equals(shuffled.summary()))

    def test_threads_do_not_change_draws(self):
        a = predict(self.draws, 7, "daily", self.cfg, self.sched, np.random.default_rng(7), t_start=10)
        b = predict(self.draws, 7, "daily", self.cfg, self.sched, np.random.default_rng(7), t_start=10, threads=4)
        assert_array_equal(a.cases, b.cases)
        assert_array_equal(a.deaths, b.deaths)

    def test_rejects_bad_arguments(self):
        with self.assertRaises(PreconditionError):
            predict(self.draws, 5, "monthly", self.cfg, self.sched, np.random.default_rng(0), t_start=10)
        with self.assertRaises(PreconditionError):
            predict([], 5, "daily", self.cfg, self.sched, np.random.default_rng(0), t_start=10)

    def test_draws_from_chains_roll_to_the_end(self):
        n = 4
        v = ParameterLayout(4, 3).to_unconstrained(self.theta)
        output = ChainOutput(
            names=parameter_names(4, 3), chain=np.zeros(n), iteration=np.arange(n),
            unconstrained=np.tile(v, (n, 1)), reported=np.tile(reported_vector(self.theta), (n, 1)),
            regime_paths=np.tile(S_PATH, (n, 1)).astype(np.int8), duration_paths=np.tile(D_PATH, (n, 1)),
            log_posterior=np.zeros(n), accept_stat=np.zeros(n), tree_depth=np.ones(n), n_leapfrog=np.ones(n),
            divergent=np.zeros(n, dtype=bool), step_size=np.ones(n), n_burnin=1,
        )
        draws = draws_from_chains(output, self.cfg, self.sched, 2, np.random.default_rng(0))
        self.assertEqual(len(draws), 2)
        assert_allclose(draws[0].state.ode, self.draws[0].state.ode, rtol=1e-9)
        assert_allclose(draws[0].theta.log_beta, self.theta.log_beta, rtol=1e-12)
        self.assertEqual(int(draws[0].s[0]), 1)


@tag("slow")
class ForecastCalibrationTests(SimpleTestCase):
    def test_one_step_interval_coverage(self):
        """Test 95% one-step intervals cover between 90% and 99% of 200 draws from the model"""
        theta = reference_theta()
        cfg = FixedConfig(n_pop=10_000_000, dt_substeps=4, E0=20_000.0)
        sched = Schedules.constant(40, _delay(), nu=0.0, ur=1.0, ifr=0.01)
        data = simulate(theta, cfg, sched, 30, np.random.default_rng(12))
        final = rollout(theta, cfg, sched, data.s_path, data.d_path)["final"]
        origin = PosteriorDraw(theta, final, data.s_path[-1:], data.d_path[-1:])
        forecast = predict([origin] * 2000, 1, "daily", cfg, sched, np.random.default_rng(13), t_start=30)
        low, _, high = forecast.quantiles("cases")[:, 0]
        truths = predict([origin] * 200, 1, "daily", cfg, sched, np.random.default_rng(14), t_start=30).cases[:, 0]
        coverage = np.mean((truths >= low) & (truths <= high))
        self.assertGreaterEqual(coverage, 0.90)
        self.assertLessEqual(coverage, 0.99)
