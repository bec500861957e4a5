import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_array_equal

from core.exceptions import PreconditionError
from hsmm.latent import HsmmProcess, is_feasible
from params.theta import FixedConfig, reference_theta
from .generator import default_synthetic_schedules, simulate, simulate_given_path


def _delay(window=28):
    f = np.arange(1, window, dtype=float)
    return f / f.sum()


class SimulateTests(SimpleTestCase):
    def setUp(self):
        self.theta = reference_theta()
        self.cfg = FixedConfig(n_pop=1_000_000, dt_substeps=4)
        self.sched = default_synthetic_schedules(60, _delay())

    def test_no_transmission_gives_zero_counts(self):
        data = simulate(self.theta, self.cfg, self.sched, 60, np.random.default_rng(0), beta_scale=0.0)
        assert_array_equal(data.cases_reported, 0)
        assert_array_equal(data.deaths_reported, 0)

    def test_path_is_feasible(self):
        data = simulate(self.theta, self.cfg, self.sched, 60, np.random.default_rng(1))
        self.assertTrue(is_feasible(data.s_path, data.d_path, self.cfg.K))

    def test_same_seed_reproduces_dataset(self):
        a = simulate(self.theta, self.cfg, self.sched, 40, np.random.default_rng(7), seed=7)
        b = simulate(self.theta, self.cfg, self.sched, 40, np.random.default_rng(7), seed=7)
        assert_array_equal(a.cases_reported, b.cases_reported)
        assert_array_equal(a.deaths_reported, b.deaths_reported)
        assert_array_equal(a.ode, b.ode)
        self.assertEqual(a.seed, 7)

    def test_outputs_are_consistent(self):
        data = simulate(self.theta, self.cfg, self.sched, 30, np.random.default_rng(2))
        self.assertEqual(data.ode.shape, (30, 6))
        self.assertTrue(np.all(data.cases_reported >= 0))
        series = data.observations()
        self.assertEqual(len(series), 30)
        self.assertEqual(str(series.dates[0].date()), "2020-03-01")
        frame = data.truth_frame()
        self.assertIn("regime", frame.columns)
        self.assertEqual(len(frame), 30)

    def test_fixed_path_is_reused(self):
        s_path = np.array([4, 4, 4, 0, 0])
        d_path = np.array([2, 1, 0, 1, 0])
        data = simulate_given_path(self.theta, self.cfg, self.sched, s_path, d_path, np.random.default_rng(0))
        assert_array_equal(data.s_path, s_path)
        with self.assertRaises(PreconditionError):
            simulate_given_path(self.theta, self.cfg, self.sched, s_path, d_path[::-1], np.random.default_rng(0))

    def test_rejects_empty_horizon(self):
        with self.assertRaises(PreconditionError):
            simulate(self.theta, self.cfg, self.sched, 0, np.random.default_rng(0))

    def test_reference_paths_visit_several_regimes(self):
        """Test 500-day regime paths at the reference parameters visit at least two regimes"""
        process = HsmmProcess(self.theta, self.cfg)
        hits = 0
        for seed in range(100):
            rng = np.random.default_rng(seed)
            s, d = process.initial(1, rng)
            visited = set()
            for _ in range(499):
                s, d = process.step(s, d, rng)
                if s[0] < self.cfg.K:
                    visited.add(int(s[0]))
            hits += len(visited) >= 2
        self.assertGreaterEqual(hits, 95)
