import numpy as np
from django.test import SimpleTestCase, tag
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from core.exceptions import DegeneracyError, PreconditionError
from dynamics.schedules import Schedules
from hsmm.latent import is_feasible
from observation.series import ObservationSeries
from params.theta import FixedConfig, reference_theta
from .epidemic import EpidemicStateSpace
from .particle_filter import FilterConfig, ParticleFilter, conditional_pf, pf_run
from .resampling import ess, multinomial_resample, normalise, systematic_resample
from .toy import ToyModel


def _delay(window=28):
    f = np.arange(1, window, dtype=float)
    return f / f.sum()


class ResamplingTests(SimpleTestCase):
    def test_ess_extremes(self):
        self.assertAlmostEqual(ess(np.zeros(50)), 50.0)
        lw = np.full(50, -np.inf)
        lw[7] = 0.0
        self.assertAlmostEqual(ess(lw), 1.0)

    @given(st.lists(st.floats(-30, 30), min_size=1, max_size=40))
    @settings(max_examples=100, deadline=None)
    def test_ess_bounds(self, values):
        value = ess(np.array(values))
        self.assertGreaterEqual(value, 1.0 - 1e-9)
        self.assertLessEqual(value, len(values) + 1e-9)

    def test_normalise(self):
        w = normalise(np.log([1.0, 3.0]))
        assert_allclose(w, [0.25, 0.75])

    def test_systematic_offspring_counts(self):
        """Test offspring counts are unbiased and within one of M * W"""
        rng = np.random.default_rng(0)
        W = np.array([0.05, 0.4, 0.15, 0.3, 0.1])
        M = W.shape[0]
        totals = np.zeros(M)
        n = 100_000
        for _ in range(n):
            counts = np.bincount(systematic_resample(W, rng), minlength=M)
            self.assertTrue(np.all(np.abs(counts - M * W) < 1.0 + 1e-12))
            totals += counts
        assert_allclose(totals / n, M * W, atol=0.01)

    def test_zero_weight_never_selected(self):
        rng = np.random.default_rng(2)
        W = np.array([0.5, 0.0, 0.5])
        for resample in (systematic_resample, multinomial_resample):
            idx = resample(W, rng, 1000)
            self.assertFalse(np.any(idx == 1))


class ParticleFilterToyTests(SimpleTestCase):
    def setUp(self):
        self.model = ToyModel.simulate(40, np.random.default_rng(3))

    def test_missing_observation_gives_zero_likelihood(self):
        model = ToyModel(np.array([np.nan]))
        _, log_lik = pf_run(model, FilterConfig(M=20), np.random.default_rng(0))
        self.assertAlmostEqual(log_lik, 0.0, places=12)

    def test_determinism(self):
        a = pf_run(self.model, FilterConfig(M=64), np.random.default_rng(11))[1]
        b = pf_run(self.model, FilterConfig(M=64), np.random.default_rng(11))[1]
        self.assertEqual(a, b)

    def test_traces_recorded(self):
        cloud, log_lik = pf_run(self.model, FilterConfig(M=64), np.random.default_rng(1))
        self.assertAlmostEqual(cloud.incremental.sum(), log_lik)
        self.assertTrue(np.all(cloud.ess >= 1.0 - 1e-9))
        self.assertTrue(np.all(cloud.ess <= 64 + 1e-9))
        self.assertEqual(cloud.s.shape, (40, 64))

    def test_trajectories_are_feasible(self):
        cloud, _ = pf_run(self.model, FilterConfig(M=32), np.random.default_rng(4))
        for k in range(32):
            s, d = cloud.trajectory(k)
            self.assertTrue(np.isfinite(self.model.log_latent_initial(s[:1], d[:1])[0]))
            self.assertTrue(np.all(np.isfinite(self.model.log_latent_transition(s[1:], d[1:], s[:-1], d[:-1]))))

    @tag("slow")
    def test_estimator_is_unbiased(self):
        """Test the mean of exp(log-likelihood estimates) matches the exact likelihood"""
        model = ToyModel.simulate(15, np.random.default_rng(9))
        exact = model.exact_log_likelihood()
        rng = np.random.default_rng(12)
        estimates = np.array([pf_run(model, FilterConfig(M=50), rng)[1] for _ in range(2000)])
        ratio = np.exp(estimates - exact)
        self.assertLess(abs(ratio.mean() - 1.0), 4 * ratio.std() / np.sqrt(ratio.size) + 1e-3)

    def test_log_likelihood_variance_shrinks_with_particles(self):
        rng = np.random.default_rng(21)
        small = np.array([pf_run(self.model, FilterConfig(M=16), rng)[1] for _ in range(60)])
        large = np.array([pf_run(self.model, FilterConfig(M=512), rng)[1] for _ in range(60)])
        self.assertLess(large.var(), small.var())
        self.assertLess(abs(large.mean() - self.model.exact_log_likelihood()), 1.0)

    def test_degenerate_weights_raise(self):
        model = ToyModel(np.array([0.0, np.inf]))
        with self.assertRaises(DegeneracyError) as ctx:
            pf_run(model, FilterConfig(M=10), np.random.default_rng(0))
        self.assertEqual(ctx.exception.t, 1)

    def test_step_past_end(self):
        pf = ParticleFilter(ToyModel(np.zeros(2)), FilterConfig(M=4), np.random.default_rng(0))
        pf.run()
        with self.assertRaises(PreconditionError):
            pf.step()

    def test_filter_config_validation(self):
        with self.assertRaises(PreconditionError):
            FilterConfig(M=0)
        with self.assertRaises(PreconditionError):
            FilterConfig(resampler="stratified")
        cfg = FilterConfig.from_section({"particles": 32, "resampler": "multinomial"}, M=None)
        self.assertEqual(cfg.M, 32)
        self.assertEqual(cfg.doubled().M, 64)


class ConditionalFilterTests(SimpleTestCase):
    def setUp(self):
        self.model = ToyModel.simulate(30, np.random.default_rng(5))
        cloud, _ = pf_run(self.model, FilterConfig(M=64), np.random.default_rng(6))
        self.reference = cloud.sample_trajectory(np.random.default_rng(7))

    def test_single_particle_returns_reference(self):
        s, d, _ = conditional_pf(self.model, self.reference, FilterConfig(M=1), np.random.default_rng(0))
        self.assertTrue(np.array_equal(s, self.reference[0]))
        self.assertTrue(np.array_equal(d, self.reference[1]))

    def test_reference_survives_in_slot_zero(self):
        pf = ParticleFilter(self.model, FilterConfig(M=32), np.random.default_rng(1), reference=self.reference)
        cloud = pf.run()
        s, d = cloud.trajectory(0)
        self.assertTrue(np.array_equal(s, self.reference[0]))
        self.assertTrue(np.array_equal(d, self.reference[1]))

    def test_output_is_feasible(self):
        rng = np.random.default_rng(2)
        ref = self.reference
        for ancestor_sampling in (False, True):
            fcfg = FilterConfig(M=16, ancestor_sampling=ancestor_sampling)
            for _ in range(5):
                s, d, _ = conditional_pf(self.model, ref, fcfg, rng)
                self.assertTrue(np.isfinite(self.model.log_latent_initial(s[:1], d[:1])[0]))
                self.assertTrue(np.all(np.isfinite(self.model.log_latent_transition(s[1:], d[1:], s[:-1], d[:-1]))))
                ref = (s, d)

    def test_chain_moves_away_from_reference(self):
        rng = np.random.default_rng(3)
        changed = 0
        for _ in range(20):
            s, _, _ = conditional_pf(self.model, self.reference, FilterConfig(M=64), rng)
            changed += int(not np.array_equal(s, self.reference[0]))
        self.assertGreater(changed, 0)

    def test_infeasible_reference_rejected(self):
        s, d = (a.copy() for a in self.reference)
        d[3] = d[2] + 5 if d[2] > 0 else 99
        with self.assertRaises(PreconditionError):
            conditional_pf(self.model, (s, d), FilterConfig(M=8), np.random.default_rng(0))

    def test_wrong_length_reference_rejected(self):
        with self.assertRaises(PreconditionError):
            conditional_pf(self.model, (self.reference[0][:-1], self.reference[1][:-1]), FilterConfig(M=8),
                           np.random.default_rng(0))

    def test_short_reference_pins_only_its_days(self):
        head = (self.reference[0][:12], self.reference[1][:12])
        pf = ParticleFilter(self.model, FilterConfig(M=32), np.random.default_rng(4), reference=head)
        self.assertTrue(pf.pinned(11))
        self.assertFalse(pf.pinned(12))
        cloud = pf.run()
        self.assertEqual(cloud.t, 29)
        self.assertTrue(np.isfinite(cloud.log_likelihood))


class EpidemicFilterTests(SimpleTestCase):
    def setUp(self):
        self.theta = reference_theta()
        self.cfg = FixedConfig(n_pop=1_000_000, dt_substeps=6)
        self.sched = Schedules.constant(40, _delay(), ur=0.5, ifr=0.01)

    def test_missing_data_is_flat(self):
        model = EpidemicStateSpace(self.theta, self.cfg, self.sched, ObservationSeries.empty(10))
        _, log_lik = pf_run(model, FilterConfig(M=16), np.random.default_rng(0))
        self.assertAlmostEqual(log_lik, 0.0, places=12)

    def test_conditional_filter_paths_are_feasible(self):
        deaths = np.full(30, np.nan)
        deaths[20:] = 1.0
        data = ObservationSeries(np.full(30, np.nan), deaths)
        model = EpidemicStateSpace(self.theta, self.cfg, self.sched, data, "deaths_only")
        cloud, log_lik = pf_run(model, FilterConfig(M=32), np.random.default_rng(1))
        self.assertTrue(np.isfinite(log_lik))
        ref = cloud.sample_trajectory(np.random.default_rng(2))
        s, d, _ = conditional_pf(model, ref, FilterConfig(M=16), np.random.default_rng(3))
        self.assertTrue(is_feasible(s, d, self.cfg.K))
