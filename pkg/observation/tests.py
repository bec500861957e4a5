import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose
from scipy import stats

from core.exceptions import DomainError
from dynamics.augmented import AugmentedState, EpidemicDynamics
from dynamics.schedules import Schedules
from params.theta import FixedConfig, reference_theta
from .likelihood import (
    Observation,
    ObservationDensity,
    ObservationModel,
    log_obs,
    nb_alt_logpmf,
    nb_alt_parameters,
    nb_logpmf,
    nb_logpmf_grad,
    sample_nb,
    summed_nb_logpmf,
)


class NegativeBinomialTests(SimpleTestCase):
    def test_alternative_parameters(self):
        """Test mean 10, phi 5 gives variance 30, size 5 and prob 1/3"""
        size, prob = nb_alt_parameters(10.0, 10.0 + 10.0 ** 2 / 5.0)
        self.assertAlmostEqual(size, 5.0)
        self.assertAlmostEqual(prob, 1.0 / 3.0)

    def test_matches_scipy(self):
        y = np.arange(40)
        assert_allclose(nb_logpmf(y, 10.0, 5.0), stats.nbinom.logpmf(y, 5.0, 5.0 / 15.0), rtol=1e-12)
        assert_allclose(nb_alt_logpmf(y, 10.0, 30.0), nb_logpmf(y, 10.0, 5.0), rtol=1e-12)

    def test_pmf_sums_to_one(self):
        y = np.arange(1_000_001)
        self.assertAlmostEqual(np.exp(nb_logpmf(y, 100.0, 4.91)).sum(), 1.0, delta=1e-9)

    def test_sample_moments(self):
        rng = np.random.default_rng(0)
        mu, phi = 100.0, 4.91
        draws = sample_nb(np.full(1_000_000, mu), phi, rng)
        variance = mu + mu ** 2 / phi
        self.assertLess(abs(draws.mean() - mu), 3 * np.sqrt(variance / 1_000_000))
        # variance of the sample variance uses the fourth central moment
        kurtosis_excess = 6.0 / phi + 1.0 / (mu * (1 + mu / phi))
        se_var = variance * np.sqrt((2.0 + kurtosis_excess) / 1_000_000)
        self.assertLess(abs(draws.var() - variance), 3 * se_var)

    def test_variance_must_exceed_mean(self):
        with self.assertRaises(DomainError):
            nb_alt_logpmf(3, 10.0, 10.0)

    def test_poisson_limit(self):
        mu, phi = 50.0, 1e8
        self.assertLess(mu ** 2 / phi, 1e-4 * mu)

    def test_zero_mean_guard(self):
        self.assertEqual(nb_logpmf(0, 0.0, 5.0), 0.0)
        self.assertEqual(nb_logpmf(3, 0.0, 5.0), -np.inf)
        self.assertTrue(np.all(sample_nb(np.zeros(100), 5.0, np.random.default_rng(1)) == 0))

    def test_missing_contributes_nothing(self):
        self.assertEqual(nb_logpmf(np.nan, 12.0, 5.0), 0.0)

    def test_gradients_match_finite_differences(self):
        h = 1e-6
        for y, mu, phi in ((0, 3.0, 5.0), (17, 12.5, 4.91), (250, 180.0, 2.0)):
            d_mu, d_phi = nb_logpmf_grad(y, mu, phi)
            num_mu = (nb_logpmf(y, mu + h, phi) - nb_logpmf(y, mu - h, phi)) / (2 * h)
            num_phi = (nb_logpmf(y, mu, phi + h) - nb_logpmf(y, mu, phi - h)) / (2 * h)
            self.assertAlmostEqual(float(d_mu), num_mu, delta=1e-6 * max(1.0, abs(num_mu)))
            self.assertAlmostEqual(float(d_phi), num_phi, delta=1e-6 * max(1.0, abs(num_phi)))

    def test_weekly_sum_matches_moments(self):
        mu = np.array([3.0, 5.0, 2.0, 0.0, 4.0, 6.0, 1.0])
        y = np.array([2, 6, 1, 0, 5, 7, 0])
        self.assertAlmostEqual(summed_nb_logpmf(y[:1], mu[:1], 5.0), nb_logpmf(2, 3.0, 5.0), places=12)
        size = mu.sum() ** 2 / np.sum(mu ** 2 / 5.0)
        self.assertAlmostEqual(summed_nb_logpmf(y, mu, 5.0), nb_logpmf(y.sum(), mu.sum(), size), places=12)
        self.assertEqual(summed_nb_logpmf(np.zeros(7), np.zeros(7), 5.0), 0.0)
        self.assertEqual(summed_nb_logpmf(np.ones(7), np.zeros(7), 5.0), -np.inf)
        self.assertEqual(summed_nb_logpmf(np.r_[np.nan, y[1:]], mu, 5.0), 0.0)


class LogObsTests(SimpleTestCase):
    def setUp(self):
        self.theta = reference_theta()
        self.cfg = FixedConfig(n_pop=1_000_000)
        f = np.arange(1, 28, dtype=float)
        self.sched = Schedules.constant(60, f / f.sum(), ur=0.4, ifr=0.01)
        self.dyn = EpidemicDynamics(self.theta, self.cfg, self.sched)
        rng = np.random.default_rng(0)
        x = AugmentedState.before_start(5, self.cfg)
        for t in range(40):
            x = self.dyn.advance(x, t, rng)
        self.x = x
        self.t = 39

    def test_both_missing_is_zero(self):
        value = log_obs(Observation(self.t), self.x, self.theta, self.cfg, self.sched, "cases_and_deaths")
        assert_allclose(value, np.zeros(5))

    def test_deaths_only_ignores_cases(self):
        with_cases = Observation(self.t, cases_reported=500, deaths_reported=3)
        without = Observation(self.t, deaths_reported=3)
        a = log_obs(with_cases, self.x, self.theta, self.cfg, self.sched, ObservationModel.DEATHS_ONLY)
        b = log_obs(without, self.x, self.theta, self.cfg, self.sched, ObservationModel.DEATHS_ONLY)
        assert_allclose(a, b)
        expected = nb_logpmf(3, self.dyn.deaths(self.x, self.t), self.theta.phi_deaths)
        assert_allclose(a, expected, rtol=1e-12)

    def test_joint_density_is_sum_of_terms(self):
        obs = Observation(self.t, cases_reported=500, deaths_reported=3)
        joint = log_obs(obs, self.x, self.theta, self.cfg, self.sched, "cases_and_deaths")
        case_mean = self.x.incidence * 0.4
        death_mean = self.dyn.deaths(self.x, self.t)
        expected = (
            nb_alt_logpmf(500, case_mean, case_mean + case_mean ** 2 / self.theta.phi_cases)
            + nb_alt_logpmf(3, death_mean, death_mean + death_mean ** 2 / self.theta.phi_deaths)
        )
        assert_allclose(joint, expected, rtol=1e-12)

    def test_none_model_is_flat(self):
        obs = Observation(self.t, cases_reported=500, deaths_reported=3)
        assert_allclose(log_obs(obs, self.x, self.theta, self.cfg, self.sched, "none"), np.zeros(5))

    def test_continuity_in_theta(self):
        """Test small parameter moves give small density changes"""
        obs = Observation(self.t, cases_reported=500, deaths_reported=3)
        base = log_obs(obs, self.x, self.theta, self.cfg, self.sched, "cases_and_deaths")
        nudged = self.theta.replace(phi_cases=self.theta.phi_cases + 1e-7, phi_deaths=self.theta.phi_deaths + 1e-7)
        moved = log_obs(obs, self.x, nudged, self.cfg, self.sched, "cases_and_deaths")
        self.assertTrue(np.all(np.abs(moved - base) < 1e-4))

    def test_density_gradients(self):
        density = ObservationDensity("deaths_only")
        dc, dd, dpc, dpd = density.gradients(10.0, 3.0, 8.0, 2.5, 4.0, 5.0)
        self.assertEqual(dc, 0.0)
        self.assertEqual(dpc, 0.0)
        self.assertNotEqual(dd, 0.0)
