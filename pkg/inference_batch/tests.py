import numpy as np
from django.test import SimpleTestCase, tag
from numpy.testing import assert_allclose, assert_array_equal
from scipy import stats

from core.exceptions import PreconditionError
from dynamics.schedules import Schedules
from filters.epidemic import EpidemicProblem
from filters.particle_filter import FilterConfig
from observation.likelihood import ObservationModel
from observation.series import ObservationSeries
from params.priors import PriorSpec
from params.theta import FixedConfig, parameter_names, reference_theta, reported_vector
from params.transforms import ParameterLayout
from simulate.generator import simulate, simulate_given_path
from .diagnostics import SUMMARY_COLUMNS, batch_means_mcse, split_rhat, summarize
from .nuts import (
    NutsTuning, adaptation_windows, find_reasonable_step_size, hamiltonian, leapfrog, nuts_step,
)
from .posterior import ConditionalPosterior, conditional_log_posterior
from .sampler import ChainOutput, SamplerConfig, initial_state, pgibbs_kernel, run_chain, run_chains

# initial regime for 5 days, then regime 0, up to 1, back down to 0
TRAJECTORY = (
    np.array([4] * 5 + [0] * 4 + [1] * 6 + [0] * 5),
    np.array([4, 3, 2, 1, 0, 3, 2, 1, 0, 5, 4, 3, 2, 1, 0, 4, 3, 2, 1, 0]),
)


def _delay(window=28):
    f = np.arange(1, window, dtype=float)[::-1]
    return f / f.sum()


def _problem(T=20, seed=0, model_kind=ObservationModel.CASES_AND_DEATHS, trajectory=None):
    cfg = FixedConfig(n_pop=1_000_000, dt_substeps=4, U=5, E0=500.0)
    sched = Schedules.constant(T, _delay(cfg.window), nu=200.0, ur=0.6, ifr=0.01)
    rng = np.random.default_rng(seed)
    if trajectory is None:
        dataset = simulate(reference_theta(), cfg, sched, T, rng)
    else:
        dataset = simulate_given_path(reference_theta(), cfg, sched, *trajectory, rng)
    return EpidemicProblem(dataset.observations(), cfg, sched, PriorSpec.default(cfg.K), model_kind)


def _gaussian(x):
    return -0.5 * float(x @ x), -x


class ConditionalPosteriorTests(SimpleTestCase):
    def setUp(self):
        self.problem = _problem(trajectory=TRAJECTORY)
        self.layout = ParameterLayout(4, 3)
        self.v0 = self.layout.to_unconstrained(reference_theta())

    def _posterior(self, gradient="sensitivity", trajectory=TRAJECTORY):
        p = self.problem
        return ConditionalPosterior(trajectory, p.data, p.cfg, p.sched, p.prior, p.model_kind, gradient)

    def test_gradient_matches_finite_differences(self):
        """Test the sensitivity gradient against central differences at 20 seeded points"""
        exact = self._posterior()
        numeric = self._posterior("finite_difference")
        rng = np.random.default_rng(5)
        for _ in range(20):
            v = self.v0 + 0.05 * rng.standard_normal(self.v0.shape[0])
            value, grad = exact(v)
            fd_value, fd_grad = numeric(v)
            self.assertTrue(np.isfinite(value))
            self.assertAlmostEqual(value, fd_value, places=8)
            assert_allclose(grad, fd_grad, rtol=1e-3, atol=1e-4 * (1.0 + np.abs(fd_grad).max()))

    def test_infeasible_trajectory(self):
        s_path, d_path = TRAJECTORY
        broken = d_path.copy()
        broken[2] = 7
        value, grad = self._posterior(trajectory=(s_path, broken))(self.v0)
        self.assertEqual(value, -np.inf)
        assert_array_equal(grad, 0.0)

    def test_functional_form(self):
        p = self.problem
        value, grad = conditional_log_posterior(self.v0, TRAJECTORY, p.data, p.cfg, p.sched, p.prior)
        expected, expected_grad = self._posterior()(self.v0)
        self.assertEqual(value, expected)
        assert_array_equal(grad, expected_grad)

    def test_observation_free_model_ignores_data(self):
        p = self.problem
        a = ConditionalPosterior(TRAJECTORY, p.data, p.cfg, p.sched, p.prior, ObservationModel.NONE).value(self.v0)
        empty = ObservationSeries.empty(p.T)
        b = ConditionalPosterior(TRAJECTORY, empty, p.cfg, p.sched, p.prior, ObservationModel.NONE).value(self.v0)
        self.assertEqual(a, b)

    def test_wrong_length_rejected(self):
        with self.assertRaises(ValueError):
            self._posterior(trajectory=(TRAJECTORY[0][:5], TRAJECTORY[1][:5]))


class NutsTests(SimpleTestCase):
    def test_zero_step_is_identity(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal(4)
        logp, grad = _gaussian(x)
        new, _, _, info = nuts_step(x, _gaussian, np.ones(4), 0.0, rng, max_tree_depth=3,
                                    current_logp=logp, current_grad=grad)
        assert_array_equal(new, x)
        self.assertFalse(info.divergent)

    def test_energy_conserved_with_tiny_step(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal(5)
        r = rng.standard_normal(5)
        logp, grad = _gaussian(x)
        H0 = hamiltonian(logp, r, np.ones(5))
        for _ in range(200):
            x, r, logp, grad = leapfrog(x, r, grad, 1e-4, np.ones(5), _gaussian)
        self.assertLess(abs(hamiltonian(logp, r, np.ones(5)) - H0), 1e-8)

    def test_infinite_start_rejected(self):
        with self.assertRaises(PreconditionError):
            nuts_step(np.zeros(2), lambda x: (-np.inf, np.zeros(2)), np.ones(2), 0.1, np.random.default_rng(0))

    def test_divergence_flagged(self):
        rng = np.random.default_rng(3)
        x = np.ones(3)
        _, _, _, info = nuts_step(x, _gaussian, np.ones(3), 1e3, rng)
        self.assertTrue(info.divergent)

    def test_standard_gaussian_target(self):
        """Test adapted NUTS recovers the moments of a 10-d standard normal"""
        rng = np.random.default_rng(2024)
        dim, n_warmup, n_draws = 10, 1000, 5000
        tuning = NutsTuning.initial(dim, n_warmup)
        x = rng.standard_normal(dim)
        logp, grad = _gaussian(x)
        tuning.reset_step_size(find_reasonable_step_size(x, logp, grad, _gaussian, tuning.inv_metric, rng))
        draws = []
        accept = []
        for _ in range(n_warmup + n_draws):
            x, logp, grad, info = nuts_step(x, _gaussian, tuning.inv_metric, tuning.step_size, rng,
                                            tuning.max_tree_depth, current_logp=logp, current_grad=grad)
            if tuning.adapting:
                tuning.adapt(x, info)
                if tuning.needs_step_reset:
                    tuning.reset_step_size(find_reasonable_step_size(x, logp, grad, _gaussian, tuning.inv_metric,
                                                                     rng, tuning.step_size))
            else:
                draws.append(x)
                accept.append(info.accept_stat)
        draws = np.array(draws)
        self.assertTrue(np.all(np.abs(draws.mean(axis=0)) < 0.1))
        cov = np.cov(draws, rowvar=False)
        self.assertLess(np.linalg.norm(cov - np.eye(dim)) / np.linalg.norm(np.eye(dim)), 0.1)
        self.assertGreaterEqual(np.mean(accept), 0.6)
        self.assertLessEqual(np.mean(accept), 0.95)

    def test_adaptation_windows(self):
        self.assertEqual(adaptation_windows(10), [])
        windows = adaptation_windows(1000)
        self.assertEqual(windows[0], (75, 100))
        self.assertEqual(windows[-1][1], 950)
        for (_, end), (start, _) in zip(windows, windows[1:]):
            self.assertEqual(end, start)
        self.assertEqual(adaptation_windows(100), [(15, 90)])

    def test_tuning_freezes_after_warmup(self):
        tuning = NutsTuning.initial(2, 30)
        rng = np.random.default_rng(0)
        x = np.zeros(2)
        logp, grad = _gaussian(x)
        for _ in range(40):
            x, logp, grad, info = nuts_step(x, _gaussian, tuning.inv_metric, tuning.step_size, rng,
                                            current_logp=logp, current_grad=grad)
            tuning.adapt(x, info)
            if tuning.needs_step_reset:
                tuning.reset_step_size()
        frozen = tuning.step_size
        self.assertFalse(tuning.adapting)
        tuning.adapt(x, info)
        self.assertEqual(tuning.step_size, frozen)


class DiagnosticsTests(SimpleTestCase):
    def test_rhat_of_iid_chains(self):
        draws = np.random.default_rng(0).standard_normal((4, 10_000))
        self.assertAlmostEqual(split_rhat(draws), 1.0, delta=0.01)

    def test_rhat_detects_separated_chains(self):
        draws = np.random.default_rng(0).standard_normal((2, 500))
        draws[1] += 5.0
        self.assertGreater(split_rhat(draws), 1.5)

    def test_quantiles_match_sorted_draws(self):
        draws = np.random.default_rng(1).standard_normal((3, 101, 2))
        table = summarize(draws, ["a", "b"])
        pooled = np.sort(draws[:, :, 0].ravel())
        n = pooled.shape[0]
        for q in (2.5, 25.0, 50.0, 75.0, 97.5):
            pos = q / 100 * (n - 1)
            lo = int(np.floor(pos))
            hi = min(lo + 1, n - 1)
            expected = pooled[lo] + (pos - lo) * (pooled[hi] - pooled[lo])
            self.assertAlmostEqual(table.loc["a", f"Q{q}"], expected, places=12)
        self.assertEqual(list(table.columns), SUMMARY_COLUMNS)

    def test_mcse_of_iid_draws(self):
        draws = np.random.default_rng(2).standard_normal((4, 2500))
        self.assertAlmostEqual(batch_means_mcse(draws), 0.01, delta=0.004)

    def test_summary_row_count(self):
        """Test one row per reported parameter: the 22 published rows plus the initial regime's r and psi"""
        K, n_destinations = 4, 3
        names = parameter_names(K, n_destinations)
        self.assertEqual(len(names), K + 3 + (K - 1) + (n_destinations - 1) + 2 * (K + 1) + 2)
        self.assertEqual(len(names), 22 + 2)
        table = summarize(np.zeros((2, 10, 24)) + np.arange(24), names)
        self.assertEqual(table.shape[0], 24)
        assert_allclose(table["Rhat"], 1.0)


class SamplerConfigTests(SimpleTestCase):
    def test_validation(self):
        with self.assertRaises(PreconditionError):
            SamplerConfig(n_iters=10, n_burnin=10)
        with self.assertRaises(PreconditionError):
            SamplerConfig(metric="full")
        with self.assertRaises(PreconditionError):
            SamplerConfig(n_chains=0)

    def test_from_section(self):
        scfg = SamplerConfig.from_section({"chains": 2, "iters": 50, "burnin": 10, "unused": 1}, n_iters=60)
        self.assertEqual((scfg.n_chains, scfg.n_iters, scfg.n_burnin), (2, 60, 10))


class ChainOutputTests(SimpleTestCase):
    def _output(self, chain, n=6, burnin=2):
        return ChainOutput(
            names=["a", "b"], chain=np.full(n, chain), iteration=np.arange(n),
            unconstrained=np.zeros((n, 2)), reported=np.arange(2 * n, dtype=float).reshape(n, 2),
            regime_paths=np.zeros((n, 3), dtype=np.int8), duration_paths=np.zeros((n, 3), dtype=np.int32),
            log_posterior=np.zeros(n), accept_stat=np.zeros(n), tree_depth=np.ones(n), n_leapfrog=np.ones(n),
            divergent=np.zeros(n, dtype=bool), step_size=np.ones(n), n_burnin=burnin, K=1, n_destinations=1,
        )

    def test_lengths_must_agree(self):
        with self.assertRaises(PreconditionError):
            ChainOutput(
                names=["a"], chain=np.zeros(3), iteration=np.arange(2), unconstrained=np.zeros((3, 1)),
                reported=np.zeros((3, 1)), regime_paths=np.zeros((3, 2)), duration_paths=np.zeros((3, 2)),
                log_posterior=np.zeros(3), accept_stat=np.zeros(3), tree_depth=np.zeros(3),
                n_leapfrog=np.zeros(3), divergent=np.zeros(3), step_size=np.zeros(3),
            )

    def test_concatenate_and_retain(self):
        merged = ChainOutput.concatenate([self._output(0), self._output(1)])
        self.assertEqual(len(merged), 12)
        kept = merged.retained()
        self.assertEqual(len(kept), 8)
        self.assertEqual(kept.by_chain(kept.reported).shape, (2, 4, 2))
        frame = merged.to_frame()
        self.assertEqual(list(frame.columns[:4]), ["chain", "iteration", "a", "b"])

    def test_arrays_restore(self):
        original = self._output(3)
        restored = ChainOutput.from_arrays(original.to_arrays())
        assert_array_equal(restored.reported, original.reported)
        self.assertEqual(restored.names, original.names)
        self.assertEqual(restored.n_burnin, 2)


class ParticleGibbsTests(SimpleTestCase):
    def setUp(self):
        self.problem = _problem(T=12, seed=4)
        self.fcfg = FilterConfig(M=8)
        self.scfg = SamplerConfig(n_chains=2, n_iters=3, n_burnin=2, max_tree_depth=3)

    def test_kernel_returns_feasible_state(self):
        rng = np.random.default_rng(0)
        state = initial_state(self.problem, self.fcfg, rng, reference_theta())
        tuning = NutsTuning.initial(ParameterLayout(4, 3).size, 0, step_size=0.01, max_tree_depth=3)
        new, info = pgibbs_kernel(state, self.problem, self.fcfg, tuning, rng)
        self.assertEqual(new.s_path.shape, (12,))
        self.assertTrue(np.isfinite(info["log_posterior"]))
        self.assertTrue(new.theta.is_valid())
        self.assertIn("ode", new.derived(self.problem))

    def test_chain_is_deterministic(self):
        a = run_chain(0, self.problem, self.scfg, self.fcfg, np.random.default_rng(9))
        b = run_chain(0, self.problem, self.scfg, self.fcfg, np.random.default_rng(9))
        assert_array_equal(a.unconstrained, b.unconstrained)
        assert_array_equal(a.regime_paths, b.regime_paths)
        self.assertTrue(np.all(np.diff(a.reported[:, :4], axis=1) > 0))

    def test_threads_do_not_change_results(self):
        serial, summary = run_chains(self.problem, self.scfg, self.fcfg, seed=5, threads=1)
        pooled, _ = run_chains(self.problem, self.scfg, self.fcfg, seed=5, threads=2)
        assert_array_equal(serial.unconstrained, pooled.unconstrained)
        self.assertEqual(len(serial), 6)
        self.assertEqual(summary.shape, (24, len(SUMMARY_COLUMNS)))

    def test_supplied_init_needs_theta(self):
        scfg = SamplerConfig(n_chains=1, n_iters=3, n_burnin=2, init="supplied")
        with self.assertRaises(PreconditionError):
            run_chains(self.problem, scfg, self.fcfg, seed=1)


@tag("slow")
class PriorRecoveryTests(SimpleTestCase):
    def test_chain_without_observations_returns_to_prior(self):
        """Test parameters untouched by the path recover their prior means when the data carry no information"""
        problem = _problem(T=10, seed=1, model_kind=ObservationModel.NONE)
        scfg = SamplerConfig(n_chains=1, n_iters=2500, n_burnin=500, max_tree_depth=6)
        output = run_chain(0, problem, scfg, FilterConfig(M=8), np.random.default_rng(3)).retained()
        names = output.names
        prior = problem.prior
        expected = {
            "gamma_1": prior.gamma1, "gamma_2": prior.gamma2, "epsilon": prior.epsilon,
            "phi_cases": prior.phi_cases, "phi_deaths": prior.phi_deaths,
        }
        for name, (shape, scale) in expected.items():
            column = output.reported[:, names.index(name)]
            self.assertLess(abs(column.mean() - shape * scale), 5 * batch_means_mcse(column) + 1e-3 * shape * scale)

    def test_successive_conditional_simulation(self):
        """Test alternating data simulation with the kernel leaves the prior invariant"""
        base = _problem(T=30, seed=2)
        fcfg = FilterConfig(M=32)
        rng = np.random.default_rng(11)
        state = initial_state(base, fcfg, rng)
        tuning = NutsTuning.initial(ParameterLayout(4, 3).size, 0, step_size=0.01, max_tree_depth=6)
        names = parameter_names(4, 3)
        checked = ["gamma_1", "gamma_2", "epsilon", "phi_cases", "phi_deaths"]
        draws = {name: [] for name in checked}
        for cycle in range(5000):
            data = simulate_given_path(state.theta, base.cfg, base.sched, state.s_path, state.d_path, rng)
            problem = base.with_data(data.observations())
            state, _ = pgibbs_kernel(state, problem, fcfg, tuning, rng)
            if cycle % 10 == 0:
                reported = reported_vector(state.theta)
                for name in checked:
                    draws[name].append(reported[names.index(name)])
        prior = base.prior
        params = {
            "gamma_1": prior.gamma1, "gamma_2": prior.gamma2, "epsilon": prior.epsilon,
            "phi_cases": prior.phi_cases, "phi_deaths": prior.phi_deaths,
        }
        for name, (shape, scale) in params.items():
            p_value = stats.kstest(draws[name], stats.gamma(shape, scale=scale).cdf).pvalue
            self.assertGreater(p_value, 0.01 / len(params))


@tag("slow")
class SyntheticRecoveryTests(SimpleTestCase):
    def test_generating_values_inside_posterior_intervals(self):
        """Test four chains on 200 simulated days cover the generating parameters"""
        problem = _problem(T=200, seed=21)
        scfg = SamplerConfig(n_chains=4, n_iters=1200, n_burnin=700)
        output, summary = run_chains(problem, scfg, FilterConfig(M=128), seed=21, threads=4)
        truth = reported_vector(reference_theta())
        inside = (summary["Q2.5"].to_numpy() <= truth) & (truth <= summary["Q97.5"].to_numpy())
        self.assertGreaterEqual(inside.mean(), 0.9)
        self.assertTrue(np.all(summary["Rhat"].to_numpy() <= 1.05))
        kept = output.retained()
        self.assertEqual(len(kept), 2000)
        self.assertTrue(np.all(np.diff(kept.reported[:, :4], axis=1) > 0))
