import numpy as np
from django.test import SimpleTestCase, tag
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from numpy.testing import assert_allclose
from scipy import stats

from params.theta import FixedConfig, reference_theta
from params.transforms import ParameterLayout
from .latent import (
    HsmmProcess,
    LatentState,
    duration_logpmf,
    expected_duration,
    initial_latent,
    is_feasible,
    log_transition,
    regime_path_log_marginal,
    step_latent,
    transition_matrix,
)


class TransitionStructureTests(SimpleTestCase):
    def setUp(self):
        self.theta = reference_theta()
        self.cfg = FixedConfig(n_pop=1000)

    def test_rows_sum_to_one(self):
        P = transition_matrix(self.theta, self.cfg)
        assert_allclose(P.sum(axis=1), np.ones(5), atol=1e-12)
        self.assertEqual(P[4, 4], 0.0)

    def test_adjacent_moves(self):
        P = transition_matrix(self.theta, self.cfg)
        self.assertAlmostEqual(P[0, 1], 0.87)
        self.assertAlmostEqual(P[0, 0], 0.13)
        self.assertAlmostEqual(P[1, 2], 0.5)
        self.assertAlmostEqual(P[1, 0], 0.5)
        self.assertEqual(P[3, 2], 1.0)
        assert_allclose(P[4, :3], [0.35, 0.35, 0.30])

    @settings(max_examples=300, deadline=None)
    @given(arrays(np.float64, ParameterLayout(4, 3).size, elements=st.floats(-6.0, 6.0)))
    def test_rows_sum_to_one_for_any_theta(self, v):
        theta = ParameterLayout(4, 3).from_unconstrained(v)
        P = transition_matrix(theta, self.cfg)
        assert_allclose(P.sum(axis=1), np.ones(5), atol=1e-12)

    def test_single_regime(self):
        theta = reference_theta().replace(log_beta=[-1.0], p=[], p_init=[1.0], r=[5.0, 5.0], psi=[0.5, 0.5])
        cfg = FixedConfig(n_pop=1000, K=1)
        P = transition_matrix(theta, cfg)
        assert_allclose(P, [[1.0, 0.0], [1.0, 0.0]])

    def test_expected_duration(self):
        self.assertAlmostEqual(expected_duration(2, self.theta), 1 + 14.19 * 0.45 / 0.55)


class StepLatentTests(SimpleTestCase):
    def setUp(self):
        self.theta = reference_theta()
        self.cfg = FixedConfig(n_pop=1000)
        self.process = HsmmProcess(self.theta, self.cfg)

    def test_decrement_is_deterministic(self):
        """Test a positive duration only counts down"""
        rng = np.random.default_rng(0)
        for _ in range(20):
            self.assertEqual(step_latent(LatentState(2, 5), self.theta, self.cfg, rng), LatentState(2, 4))

    def test_top_regime_moves_down(self):
        rng = np.random.default_rng(1)
        s, _ = self.process.step(np.full(1000, 3), np.zeros(1000, dtype=int), rng)
        self.assertTrue(np.all(s == 2))

    def test_successor_frequencies(self):
        """Test empirical successors at (1, 0) against the transition row"""
        rng = np.random.default_rng(5)
        n = 100_000
        s, _ = self.process.step(np.ones(n, dtype=int), np.zeros(n, dtype=int), rng)
        row = transition_matrix(self.theta, self.cfg)[1]
        freq = np.bincount(s, minlength=5) / n
        se = np.sqrt(row * (1 - row) / n)
        self.assertTrue(np.all(np.abs(freq - row) <= 3 * se + 1e-12))

    def test_initial_regime_is_never_reentered(self):
        rng = np.random.default_rng(9)
        n, T = 10_000, 500
        s, d = self.process.initial(n, rng)
        left = np.zeros(n, dtype=bool)
        for _ in range(T):
            s, d = self.process.step(s, d, rng)
            self.assertFalse(np.any(left & (s == 4)))
            left |= s != 4

    def test_initial_state(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            self.assertEqual(initial_latent(self.theta, self.cfg, rng).s, 4)

    def test_initial_duration_distribution(self):
        """Test initial durations against the regime-K pmf by chi-square"""
        rng = np.random.default_rng(4)
        _, d = self.process.initial(100_000, rng)
        r, psi = self.theta.r[4], self.theta.psi[4]
        edges = np.arange(0, 60, 3)
        observed = np.array([np.sum((d >= a) & (d < b)) for a, b in zip(edges[:-1], edges[1:])]
                            + [np.sum(d >= edges[-1])])
        cdf = stats.nbinom.cdf(edges - 1, r, psi)
        probs = np.append(np.diff(cdf), 1 - cdf[-1])
        keep = probs * 100_000 > 5
        expected = probs[keep] * 100_000
        chi2 = np.sum((observed[keep] - expected) ** 2 / expected)
        self.assertGreater(stats.chi2.sf(chi2, keep.sum() - 1), 1e-3)

    def test_degenerate_initial_duration(self):
        theta = self.theta.replace(psi=[0.76, 0.75, 0.55, 0.5, 1 - 1e-12])
        _, d = HsmmProcess(theta, self.cfg).initial(1000, np.random.default_rng(0))
        self.assertTrue(np.all(d == 0))

    def test_truncated_durations_respect_maximum(self):
        process = HsmmProcess(self.theta, self.cfg, max_duration=8)
        _, d = process.initial(5000, np.random.default_rng(3))
        self.assertLessEqual(d.max(), 8)


class LogTransitionTests(SimpleTestCase):
    def setUp(self):
        self.theta = reference_theta()
        self.cfg = FixedConfig(n_pop=1000)

    def test_decrement_branch(self):
        self.assertEqual(log_transition(LatentState(1, 2), LatentState(1, 3), self.theta, self.cfg), 0.0)
        self.assertEqual(log_transition(LatentState(2, 4), LatentState(1, 3), self.theta, self.cfg), -np.inf)

    def test_renewal_mass_sums_to_transition_probability(self):
        process = HsmmProcess(self.theta, self.cfg)
        d = np.arange(10_001)
        total = np.exp(process.log_transition(np.full(d.shape, 2), d, np.ones_like(d), np.zeros_like(d))).sum()
        self.assertAlmostEqual(total, transition_matrix(self.theta, self.cfg)[1, 2], delta=1e-10)

    def test_duration_pmf_sums_to_one(self):
        theta = self.theta.replace(r=[36.12, 24.19, 14.19, 30.0, 28.13])
        d = np.arange(100_001)
        total = np.exp(duration_logpmf(d, np.zeros_like(d), theta)).sum()
        self.assertAlmostEqual(total, 1.0, delta=1e-9)

    def test_geometric_special_case(self):
        theta = self.theta.replace(r=np.ones(5))
        d = np.arange(12)
        psi = theta.psi[1]
        assert_allclose(np.exp(duration_logpmf(d, np.ones_like(d), theta)), psi * (1 - psi) ** d, rtol=1e-12)

    def test_duration_sample_mean(self):
        theta = self.theta.replace(r=[36.12, 24.19, 14.19, 30.0, 28.13], psi=[0.76, 0.75, 0.55, 0.5, 0.5])
        process = HsmmProcess(theta, self.cfg)
        draws = process.sample_duration(np.full(1_000_000, 2), np.random.default_rng(8))
        mean = 14.19 * 0.45 / 0.55
        se = np.sqrt(14.19 * 0.45 / 0.55 ** 2 / 1_000_000)
        self.assertLess(abs(draws.mean() - mean), 3 * se)

    def test_feasibility(self):
        self.assertTrue(is_feasible([4, 4, 0, 0], [1, 0, 1, 0], 4))
        self.assertFalse(is_feasible([4, 4, 0, 4], [1, 0, 0, 0], 4))
        self.assertFalse(is_feasible([4, 1, 0], [2, 0, 0], 4))


class HmmReductionTests(SimpleTestCase):
    def test_geometric_durations_match_hmm(self):
        """Test regime-path marginals with r = 1 against a plain HMM"""
        theta = reference_theta().replace(r=np.ones(5))
        cfg = FixedConfig(n_pop=1000)
        process = HsmmProcess(theta, cfg)
        P = transition_matrix(theta, cfg)
        A = theta.psi[:, None] * P
        A[np.diag_indices(5)] += 1 - theta.psi
        rng = np.random.default_rng(13)
        for _ in range(100):
            s, d = process.initial(1, rng)
            path = [int(s[0])]
            for _ in range(19):
                s, d = process.step(s, d, rng)
                path.append(int(s[0]))
            oracle = np.sum(np.log(A[path[:-1], path[1:]]))
            self.assertAlmostEqual(regime_path_log_marginal(path, theta, cfg, d_max=400), oracle, delta=1e-10)

    def test_full_path_density(self):
        theta = reference_theta()
        process = HsmmProcess(theta, FixedConfig(n_pop=1000))
        value = process.path_log_density([4, 4, 1], [1, 0, 3])
        expected = (
            duration_logpmf(1, 4, theta)
            + np.log(theta.p_init[1])
            + duration_logpmf(3, 1, theta)
        )
        self.assertAlmostEqual(value, float(expected), places=12)


@tag("slow")
class OccupancyTests(SimpleTestCase):
    def test_occupancy_matches_pair_chain(self):
        """Test long-run regime occupancy against the explicit (s, d) chain"""
        theta = reference_theta()
        cfg = FixedConfig(n_pop=1000)
        d_max = 50
        process = HsmmProcess(theta, cfg, max_duration=d_max)
        K = theta.K
        n_states = K * (d_max + 1)
        Q = np.zeros((n_states, n_states))
        P = transition_matrix(theta, cfg)
        for s in range(K):
            for d in range(d_max + 1):
                row = s * (d_max + 1) + d
                if d > 0:
                    Q[row, row - 1] = 1.0
                else:
                    for j in range(K):
                        Q[row, j * (d_max + 1):(j + 1) * (d_max + 1)] += P[s, j] * process._truncated_pmfs[j]
        values, vectors = np.linalg.eig(Q.T)
        stationary = np.real(vectors[:, np.argmin(np.abs(values - 1))])
        stationary /= stationary.sum()
        expected = stationary.reshape(K, d_max + 1).sum(axis=1)

        rng = np.random.default_rng(21)
        s, d = process.initial(400, rng)
        counts = np.zeros(K + 1)
        for t in range(2000):
            s, d = process.step(s, d, rng)
            if t >= 500:
                counts += np.bincount(s, minlength=K + 1)
        occupancy = counts[:K] / counts.sum()
        assert_allclose(occupancy, expected, atol=0.01)
