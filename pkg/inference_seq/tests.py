import os
import tempfile
from types import SimpleNamespace

import numpy as np
from django.test import SimpleTestCase, tag
from numpy.testing import assert_allclose, assert_array_equal
from pandas.testing import assert_frame_equal
from scipy import stats
from scipy.special import logsumexp

from core.exceptions import DataValidationError, PreconditionError
from dynamics.schedules import Schedules
from filters.epidemic import EpidemicProblem
from filters.particle_filter import FilterConfig, ParticleFilter
from filters.toy import ToyModel
from observation.likelihood import ObservationModel
from observation.series import ObservationSeries
from params.priors import PriorSpec
from params.theta import FixedConfig
from .checkpoint import checkpoint_step, load_checkpoint, save_checkpoint
from .smc2 import (
    Smc2Config, ThetaCloud, ThetaParticle, initialise_cloud, predictive_likelihood_record,
    resample_and_rejuvenate, smc2_run,
)
from .targets import EpidemicTarget, GridTarget
from .tuning import SINGULAR_JITTER, population_metric, representative_index, shared_hmc_tuning

GRID_MEANS = (1.0, 2.0, 3.0)


def _delay(window=28):
    f = np.arange(1, window, dtype=float)
    return f / f.sum()


def _grid(T=25, seed=0):
    truth = ToyModel.simulate(T, np.random.default_rng(seed), means=(0.0, 2.0))
    return GridTarget([ToyModel(truth.y, means=(0.0, m)) for m in GRID_MEANS])


def _exact_evidence(target, t0):
    full = [m.exact_log_likelihood() for m in target.models]
    head = [m.head(t0).exact_log_likelihood() for m in target.models]
    return logsumexp(target.log_prior + full) - logsumexp(target.log_prior + head)


def _fcfg():
    return FilterConfig(M=16)


class Smc2ConfigTests(SimpleTestCase):
    def test_defaults(self):
        scfg = Smc2Config()
        self.assertEqual(scfg.ess_threshold, 0.5)
        self.assertEqual(scfg.rejuvenation_sweeps, 1)
        self.assertEqual(scfg.resampler, "multinomial")

    def test_section_keys(self):
        scfg = Smc2Config.from_section({"outer": 32, "inner": 64, "t0": 5, "unused": 1}, N=16)
        self.assertEqual((scfg.N, scfg.M, scfg.t0), (16, 64, 5))

    def test_invalid_values(self):
        for kwargs in ({"N": 1}, {"M": 1}, {"t0": 0}, {"ess_threshold": 0.0}, {"resampler": "stratified"}):
            with self.assertRaises(PreconditionError):
                Smc2Config(**kwargs)


class PopulationMetricTests(SimpleTestCase):
    def test_identical_particles_fall_back_to_diagonal(self):
        X = np.tile([1.0, -2.0, 0.5], (10, 1))
        with self.assertLogs("inference_seq.tuning", level="WARNING"):
            metric = population_metric(X, np.zeros(10))
        assert_allclose(metric, np.eye(3) * SINGULAR_JITTER)

    def test_gaussian_population(self):
        """Test the shrunk population covariance is within 15% Frobenius of the truth at N = 512"""
        truth = np.array([[2.0, 0.6, 0.0], [0.6, 1.0, 0.3], [0.0, 0.3, 0.5]])
        X = np.random.default_rng(4).multivariate_normal(np.zeros(3), truth, size=512)
        metric = population_metric(X, np.zeros(512))
        self.assertLess(np.linalg.norm(metric - truth) / np.linalg.norm(truth), 0.15)

    def test_weights_enter_the_estimate(self):
        X = np.array([[0.0], [1.0], [10.0]])
        metric = population_metric(X, np.log([0.5, 0.5, 1e-300]))
        assert_allclose(metric, [[0.25]], rtol=1e-9)


class RepresentativeIndexTests(SimpleTestCase):
    def test_median_weight(self):
        self.assertEqual(representative_index(np.array([0.0, -1.0, 0.0, -2.0])), 1)
        self.assertEqual(representative_index(np.array([-3.0, -1.0, -2.0])), 2)

    def test_ties_are_broken_by_index(self):
        self.assertEqual(representative_index(np.zeros(4)), 1)
        self.assertEqual(representative_index(np.zeros(5)), 2)


class SharedTuningTests(SimpleTestCase):
    def _target(self):
        def posterior(x):
            return -0.5 * float(x @ x), -x

        return SimpleNamespace(unconstrained=lambda theta: np.asarray(theta, dtype=float),
                               conditional_posterior=lambda theta, trajectory, t: posterior)

    def _cloud(self, N, seed=0):
        X = np.random.default_rng(seed).normal(size=(N, 2))
        particles = [SimpleNamespace(theta=x, s_path=None, d_path=None) for x in X]
        return SimpleNamespace(N=N, particles=particles, log_weights=np.zeros(N)), X

    def test_metric_and_step_size(self):
        cloud, X = self._cloud(64)
        tuning = shared_hmc_tuning(cloud, self._target(), 10, np.random.default_rng(1))
        assert_allclose(tuning.inv_metric, population_metric(X, np.zeros(64)))
        self.assertTrue(tuning.dense)
        self.assertGreater(tuning.step_size, 0.0)

    def test_needs_two_particles(self):
        cloud, _ = self._cloud(1)
        with self.assertRaises(PreconditionError):
            shared_hmc_tuning(cloud, self._target(), 10, np.random.default_rng(1))


class PredictiveRecordTests(SimpleTestCase):
    def _single(self, y, until):
        """One parameter particle whose filter has a single particle that alternates regimes daily."""
        model = ToyModel(np.asarray(y, dtype=float), means=(0.0, 2.0), max_duration=0)
        rng = np.random.default_rng(5)
        pf = ParticleFilter(model, FilterConfig(M=1), rng)
        pf.run(until)
        return model, ThetaCloud([ThetaParticle(0, pf, rng)], np.zeros(1))

    def test_single_deterministic_path(self):
        y = np.array([0.3, 1.8, -0.2, 2.4, 0.1])
        model, cloud = self._single(y, 3)
        predicted = 1 - cloud.particles[0].filter.s[2, 0]
        record = predictive_likelihood_record(cloud, 3)
        expected = stats.norm.logpdf(y[3], model.means[predicted], model.sigma)
        self.assertAlmostEqual(record.log_pl_predict, expected, places=12)
        self.assertAlmostEqual(record.log_pl, expected, places=12)

    def test_missing_observation(self):
        y = np.array([0.3, 1.8, -0.2, np.nan, 0.1])
        _, cloud = self._single(y, 3)
        record = predictive_likelihood_record(cloud, 3)
        self.assertAlmostEqual(record.log_pl, 0.0, places=12)
        self.assertAlmostEqual(record.log_pl_predict, 0.0, places=12)

    def test_exchangeability(self):
        """Test permuting the parameter particles leaves the step's predictive likelihood unchanged"""
        target = _grid(T=12)
        scfg = Smc2Config(N=6, M=16, t0=4)
        a = initialise_cloud(target, scfg, _fcfg(), np.random.default_rng(8), 4)
        b = initialise_cloud(target, scfg, _fcfg(), np.random.default_rng(8), 4)
        order = np.random.default_rng(0).permutation(6)
        b.particles = [b.particles[i] for i in order]
        b.log_weights = b.log_weights[order]
        ra = predictive_likelihood_record(a, 4)
        rb = predictive_likelihood_record(b, 4)
        self.assertAlmostEqual(ra.log_pl, rb.log_pl, places=10)
        assert_allclose(b.log_weights[np.argsort(order)], a.log_weights, rtol=1e-12, atol=1e-12)


class Smc2RunTests(SimpleTestCase):
    def test_flat_single_regime_never_resamples(self):
        T = 17
        cfg = FixedConfig(n_pop=100_000, K=1, dt_substeps=2)
        sched = Schedules.constant(T, _delay(), nu=0.0, ur=1.0, ifr=0.005)
        problem = EpidemicProblem(ObservationSeries.empty(T), cfg, sched, PriorSpec.default(1), ObservationModel.NONE)
        result = smc2_run(EpidemicTarget(problem), Smc2Config(N=4, M=4, t0=2), _fcfg(), np.random.default_rng(0))
        history = result.history
        self.assertEqual(len(history), T - 2)
        self.assertEqual(int(history["resampled"].sum()), 0)
        assert_allclose(history["ess"], 4.0)
        assert_allclose(history["log_pl"], 0.0, atol=1e-12)
        assert_allclose(result.cloud.log_weights, result.cloud.log_weights[0])
        self.assertEqual(list(result.weekly["t"]), [2, 9])
        assert_allclose(result.weekly["log_pl"], 0.0, atol=1e-12)

    def test_cumulative_matches_running_sum(self):
        target = _grid(T=15)
        result = smc2_run(target, Smc2Config(N=8, M=16, t0=3, ess_threshold=1.0), _fcfg(), np.random.default_rng(2))
        history = result.history
        self.assertAlmostEqual(result.log_evidence, history["log_pl"].sum(), delta=1e-10)
        assert_allclose(history["cumulative"], np.cumsum(history["log_pl"]), atol=1e-10)
        self.assertGreater(int(history["resampled"].sum()), 0)
        self.assertTrue(all(p.s_path.shape == (15,) for p in result.cloud.particles))

    def test_weights_reset_after_rejuvenation(self):
        target = _grid(T=10)
        scfg = Smc2Config(N=8, M=16, t0=4)
        rng = np.random.default_rng(3)
        cloud = initialise_cloud(target, scfg, _fcfg(), rng, 4)
        predictive_likelihood_record(cloud, 4)
        resample_and_rejuvenate(cloud, target, 4, scfg, _fcfg(), rng)
        self.assertAlmostEqual(cloud.ess, 8.0, places=12)
        self.assertTrue(cloud.records[-1].resampled)
        self.assertTrue(all(p.filter.t == 4 for p in cloud.particles))

    def test_same_seed_same_run(self):
        target = _grid(T=12)
        scfg = Smc2Config(N=6, M=16, t0=3, ess_threshold=0.9)
        a = smc2_run(target, scfg, _fcfg(), np.random.default_rng(6))
        b = smc2_run(target, scfg, _fcfg(), np.random.default_rng(6), threads=3)
        assert_frame_equal(a.history, b.history)
        self.assertEqual(a.cloud.thetas(), b.cloud.thetas())

    def test_t0_must_leave_data(self):
        with self.assertRaises(PreconditionError):
            smc2_run(_grid(T=5), Smc2Config(N=4, M=4, t0=5), _fcfg(), np.random.default_rng(0))

    def test_default_training_period(self):
        T = 12
        deaths = np.array([0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11], dtype=float)
        cfg = FixedConfig(n_pop=100_000)
        problem = EpidemicProblem(ObservationSeries(np.zeros(T), deaths), cfg,
                                  Schedules.constant(T, _delay(), nu=0.0, ur=1.0, ifr=0.005), PriorSpec.default(4))
        # cumulative deaths reach 10 on day 4
        self.assertEqual(EpidemicTarget(problem).default_t0(), 5)
        flat = problem.with_data(ObservationSeries(np.zeros(T), np.zeros(T)))
        self.assertEqual(EpidemicTarget(flat).default_t0(), 1)


class CheckpointTests(SimpleTestCase):
    def test_resume_continues_bit_exactly(self):
        target = _grid(T=14)
        scfg = Smc2Config(N=6, M=16, t0=3, ess_threshold=0.8, checkpoint_every=4)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "smc2.npz")
            plain = smc2_run(target, scfg, _fcfg(), np.random.default_rng(9))
            saved = smc2_run(target, scfg, _fcfg(), np.random.default_rng(9), checkpoint_path=path)
            assert_frame_equal(plain.history, saved.history)
            # the last checkpoint was written after day 10
            resumed = smc2_run(target, scfg, _fcfg(), np.random.default_rng(123), checkpoint_path=path, resume=True)
        assert_frame_equal(saved.history, resumed.history)
        self.assertEqual(saved.cloud.thetas(), resumed.cloud.thetas())
        self.assertEqual(resumed.t0, 3)

    def test_round_trip_of_cloud(self):
        target = _grid(T=10)
        scfg = Smc2Config(N=4, M=8, t0=3)
        rng = np.random.default_rng(1)
        cloud = initialise_cloud(target, scfg, FilterConfig(M=8), rng, 3)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "cloud.npz")
            save_checkpoint(path, cloud, target, rng, 2, 3)
            loaded, rng_loaded, t, t0 = load_checkpoint(path, target, FilterConfig(M=8))
            self.assertEqual(checkpoint_step(path), 2)
        self.assertEqual((t, t0), (2, 3))
        assert_array_equal(loaded.log_weights, cloud.log_weights)
        self.assertEqual(loaded.thetas(), cloud.thetas())
        for a, b in zip(loaded.particles, cloud.particles):
            assert_array_equal(a.filter.s, b.filter.s)
            assert_array_equal(a.filter.state, b.filter.state)
            self.assertEqual(a.filter.log_likelihood, b.filter.log_likelihood)
        self.assertEqual(rng_loaded.random(), rng.random())

    def test_missing_checkpoint(self):
        with self.assertRaises(DataValidationError):
            load_checkpoint("/nonexistent/smc2.npz", _grid(T=5), _fcfg())


@tag("slow")
class Smc2EnumerationTests(SimpleTestCase):
    def test_evidence_matches_enumeration(self):
        """Test the SMC^2 evidence estimate agrees with exact enumeration over the prior grid"""
        target = _grid(T=25)
        t0 = 5
        exact = _exact_evidence(target, t0)
        estimates = np.array([
            smc2_run(target, Smc2Config(N=32, M=64, t0=t0), FilterConfig(M=64),
                     np.random.default_rng(seed)).log_evidence
            for seed in range(20)
        ])
        ratios = np.exp(estimates - exact)
        se = ratios.std(ddof=1) / np.sqrt(ratios.size)
        self.assertLess(abs(ratios.mean() - 1.0), 3.0 * se + 1e-9)

    def test_estimators_agree(self):
        """Test the filter-based and prediction-step estimates have overlapping 95% intervals at every day"""
        target = _grid(T=15)
        runs = [smc2_run(target, Smc2Config(N=32, M=64, t0=5), FilterConfig(M=64), np.random.default_rng(seed)).history
                for seed in range(20)]
        filter_based = np.exp(np.array([h["log_pl"].to_numpy() for h in runs]))
        predicted = np.exp(np.array([h["log_pl_predict"].to_numpy() for h in runs]))
        half_a = 1.96 * filter_based.std(axis=0, ddof=1) / np.sqrt(20)
        half_b = 1.96 * predicted.std(axis=0, ddof=1) / np.sqrt(20)
        gap = np.abs(filter_based.mean(axis=0) - predicted.mean(axis=0))
        self.assertTrue(np.all(gap <= half_a + half_b + 1e-12))

    def test_rejuvenation_preserves_grid_posterior(self):
        """Test a forced rejuvenation keeps the parameter frequencies near the exact posterior"""
        target = _grid(T=25)
        scfg = Smc2Config(N=256, M=64, t0=5)
        rng = np.random.default_rng(11)
        result = smc2_run(target, scfg, FilterConfig(M=64), rng)
        cloud = result.cloud
        before = np.array([cloud.weights[np.array(cloud.thetas()) == k].sum() for k in range(3)])
        resample_and_rejuvenate(cloud, target, 24, scfg, FilterConfig(M=64), rng)
        after = np.bincount(cloud.thetas(), minlength=3) / scfg.N
        se = np.sqrt(np.maximum(before * (1 - before), 1e-4) / scfg.N)
        self.assertTrue(np.all(np.abs(after - before) < 3 * se))
