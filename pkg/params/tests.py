import json
import os
import tempfile

import numpy as np
from django.test import SimpleTestCase, override_settings
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from numpy.testing import assert_allclose

from core.exceptions import ConstraintError, DataValidationError, ShapeError
from .config import build_model_config, load_model_config
from .priors import (
    PriorSpec,
    grad_log_prior_unconstrained,
    log_prior,
    log_prior_unconstrained,
    sample_prior,
)
from .theta import FixedConfig, ThetaParams, parameter_names, reference_theta, reported_vector
from .transforms import ParameterLayout, SimplexTransform, from_unconstrained, to_unconstrained

LAYOUT = ParameterLayout(4, 3)


def _assert_theta_close(test, a, b, rtol=1e-12):
    for name, value in a.to_dict().items():
        assert_allclose(np.atleast_1d(getattr(b, name)), np.atleast_1d(value), rtol=rtol, atol=1e-14, err_msg=name)


class ThetaParamsTests(SimpleTestCase):
    def setUp(self):
        self.theta = reference_theta()

    def test_reference_theta_is_valid(self):
        """Test the reference parameter set passes every invariant"""
        self.assertTrue(self.theta.is_valid())
        self.assertEqual(self.theta.K, 4)
        self.assertEqual(self.theta.n_destinations, 3)

    def test_non_increasing_log_beta_is_rejected(self):
        """Test validate names log_beta when the ordering fails"""
        theta = self.theta.replace(log_beta=[-1.0, -1.0, 0.0, 0.5])
        with self.assertRaises(ConstraintError) as ctx:
            theta.validate()
        self.assertEqual(ctx.exception.field, "log_beta")

    def test_wrong_lengths_are_reported(self):
        theta = self.theta.replace(r=[1.0, 2.0])
        fields_hit = [name for name, _ in theta.violations()]
        self.assertIn("r", fields_hit)

    def test_p_init_must_sum_to_one(self):
        theta = self.theta.replace(p_init=[0.3, 0.3, 0.3])
        self.assertFalse(theta.is_valid())

    def test_dict_round_trip(self):
        _assert_theta_close(self, self.theta, ThetaParams.from_dict(json.loads(json.dumps(self.theta.to_dict()))))

    def test_summary_labels_match_reported_vector(self):
        """Test the reported vector has one entry per summary row"""
        names = parameter_names(4, 3)
        self.assertEqual(len(names), len(reported_vector(self.theta)))
        self.assertEqual(len(names), 24)
        published = [name for name in names if name not in ("r_init", "psi_init")]
        self.assertEqual(len(published), 22)
        self.assertEqual(published[16:20], ["psi_1", "psi_2", "psi_3", "psi_4"])
        self.assertEqual(names[0], "log_beta_1")
        self.assertEqual(names[-1], "phi_deaths")


class FixedConfigTests(SimpleTestCase):
    def test_defaults(self):
        cfg = FixedConfig(n_pop=1000)
        self.assertEqual(cfg.window, 28)
        self.assertEqual(cfg.dt_substeps, 24)
        self.assertEqual(cfg.rho, 0.5)
        self.assertEqual(cfg.U, 45)
        self.assertEqual(cfg.beta_index_initial, 2)
        self.assertEqual(cfg.destinations, (0, 1, 2))

    def test_small_k_defaults(self):
        cfg = FixedConfig(n_pop=1000, K=2)
        self.assertEqual(cfg.beta_index_initial, 1)
        self.assertEqual(cfg.destinations, (0, 1))

    def test_invalid_window(self):
        with self.assertRaises(ConstraintError):
            FixedConfig(n_pop=1000, window=0)

    def test_invalid_destinations(self):
        with self.assertRaises(ConstraintError):
            FixedConfig(n_pop=1000, K=2, init_destinations=(0, 5))


class TransformTests(SimpleTestCase):
    def test_ordered_block_matches_log_gaps(self):
        """Test the ordered block stores first element and log gaps"""
        theta = reference_theta()
        v = to_unconstrained(theta)
        assert_allclose(v[LAYOUT.slices["log_beta"]][:2], [-1.72, np.log(0.36)], rtol=1e-12)

    def test_symmetry_points(self):
        theta = reference_theta().replace(gamma1=1.0)
        v = to_unconstrained(theta)
        self.assertAlmostEqual(v[LAYOUT.slices["gamma1"]][0], 0.0, places=14)
        psi_block = v[LAYOUT.slices["psi"]]
        self.assertAlmostEqual(psi_block[-1], 0.0, places=14)

    def test_zero_vector_is_valid(self):
        """Test the origin maps to a valid theta with a uniform simplex"""
        theta = LAYOUT.from_unconstrained(np.zeros(LAYOUT.size))
        self.assertTrue(theta.is_valid())
        assert_allclose(theta.p_init, np.full(3, 1.0 / 3.0), rtol=1e-12)

    def test_wrong_length_raises_shape_error(self):
        with self.assertRaises(ShapeError):
            from_unconstrained(np.zeros(LAYOUT.size + 1), 4, 3)

    def test_invalid_theta_raises_constraint_error(self):
        with self.assertRaises(ConstraintError):
            to_unconstrained(reference_theta().replace(gamma2=-1.0))

    @settings(max_examples=200, deadline=None)
    @given(arrays(np.float64, LAYOUT.size, elements=st.floats(-4.0, 4.0)))
    def test_round_trip(self, v):
        """Test unconstrained to theta and back is the identity"""
        theta = LAYOUT.from_unconstrained(v)
        self.assertTrue(theta.is_valid())
        again = LAYOUT.from_unconstrained(LAYOUT.to_unconstrained(theta))
        _assert_theta_close(self, theta, again)

    def test_seeded_round_trips(self):
        rng = np.random.default_rng(2024)
        for _ in range(1000):
            v = rng.normal(scale=1.5, size=LAYOUT.size)
            theta = LAYOUT.from_unconstrained(v)
            self.assertTrue(theta.is_valid())
            _assert_theta_close(self, theta, LAYOUT.from_unconstrained(LAYOUT.to_unconstrained(theta)))

    def test_simplex_log_det_gradient(self):
        transform = SimplexTransform(3)
        y = np.array([0.3, -0.7, 1.1])
        h = 1e-6
        numeric = np.array([
            (transform.log_det(y + h * e) - transform.log_det(y - h * e)) / (2 * h) for e in np.eye(3)
        ])
        assert_allclose(transform.grad_log_det(y), numeric, rtol=1e-6, atol=1e-8)

    def test_simplex_vjp_matches_jacobian(self):
        transform = SimplexTransform(3)
        y = np.array([-0.2, 0.5, 0.9])
        g = np.array([1.0, -2.0, 0.5, 3.0])
        h = 1e-6
        jac = np.column_stack([
            (transform.forward(y + h * e) - transform.forward(y - h * e)) / (2 * h) for e in np.eye(3)
        ])
        assert_allclose(transform.vjp(y, g), g @ jac, rtol=1e-6, atol=1e-8)


class PriorTests(SimpleTestCase):
    def setUp(self):
        self.prior = PriorSpec.default(4)
        self.theta = reference_theta()

    def test_psi_density_term(self):
        """Test the Beta(0.5, 0.5) term at 0.5 is log(2/pi)"""
        base = self.theta.replace(psi=np.full(5, 0.5))
        moved = base.replace(psi=np.array([0.5, 0.5, 0.5, 0.5, 0.25]))
        from scipy import stats
        self.assertAlmostEqual(stats.beta.logpdf(0.5, 0.5, 0.5), np.log(2.0 / np.pi), places=12)
        diff = log_prior(base, self.prior) - log_prior(moved, self.prior)
        self.assertAlmostEqual(diff, np.log(2.0 / np.pi) - stats.beta.logpdf(0.25, 0.5, 0.5), places=10)

    def test_log_beta_at_prior_mean_is_mode_density(self):
        theta = self.theta.replace(log_beta=np.log([0.15, 0.4, 0.6, 1.2]))
        other = self.theta.replace(log_beta=np.log([0.15, 0.4, 0.6, 1.2]) + np.array([0.0, 0.0, 0.0, 0.1]))
        diff = log_prior(theta, self.prior) - log_prior(other, self.prior)
        self.assertAlmostEqual(diff, 0.5 * 0.1 ** 2, places=12)

    def test_unordered_log_beta_is_minus_infinity(self):
        theta = self.theta.replace(log_beta=[0.0, -1.0, 0.5, 1.0])
        self.assertEqual(log_prior(theta, self.prior), -np.inf)

    def test_out_of_support_never_raises(self):
        theta = self.theta.replace(phi_cases=-2.0, psi=[1.5, 0.5, 0.5, 0.5, 0.5])
        self.assertEqual(log_prior(theta, self.prior), -np.inf)

    def test_unconstrained_adds_jacobian(self):
        v = LAYOUT.to_unconstrained(self.theta)
        expected = log_prior(self.theta, self.prior) + LAYOUT.log_det_jacobian(v)
        self.assertAlmostEqual(log_prior_unconstrained(v, self.prior, LAYOUT), expected, places=10)

    def test_gradient_matches_finite_differences(self):
        """Test the unconstrained prior gradient against central differences"""
        rng = np.random.default_rng(11)
        h = 1e-5
        for _ in range(100):
            v = LAYOUT.to_unconstrained(sample_prior(self.prior, 3, rng))
            v = np.clip(v + rng.normal(scale=0.05, size=v.shape), -8.0, 8.0)
            grad = grad_log_prior_unconstrained(v, self.prior, LAYOUT)
            numeric = np.empty_like(v)
            for i in range(v.size):
                e = np.zeros_like(v)
                e[i] = h
                numeric[i] = (
                    log_prior_unconstrained(v + e, self.prior, LAYOUT)
                    - log_prior_unconstrained(v - e, self.prior, LAYOUT)
                ) / (2 * h)
            assert_allclose(grad, numeric, rtol=1e-4, atol=1e-3)

    def test_prior_draws_are_valid(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            theta = sample_prior(self.prior, 3, rng)
            self.assertTrue(theta.is_valid())
            self.assertTrue(np.isfinite(log_prior(theta, self.prior)))

    def test_default_for_other_k(self):
        prior = PriorSpec.default(2)
        self.assertEqual(prior.K, 2)
        self.assertEqual(len(prior.r_shapes), 3)
        self.assertEqual(prior.r_shapes[-1], 28.0)


class ModelConfigTests(SimpleTestCase):
    def test_defaults(self):
        config = build_model_config({})
        self.assertEqual(config.fixed.K, 4)
        self.assertEqual(config.observation_model, "cases_and_deaths")
        self.assertEqual(config.section("filter")["particles"], 128)
        self.assertEqual(config.section("sampler")["burnin"], 700)

    def test_unknown_key_is_rejected(self):
        with self.assertRaises(DataValidationError):
            build_model_config({"fixd": {}})

    def test_prior_k_mismatch(self):
        with self.assertRaises(ShapeError):
            prior = {"log_beta_mean": [0, 1, 2], "log_beta_cov": np.eye(3).tolist(), "r_shapes": [1, 1, 1, 1]}
            build_model_config({"fixed": {"K": 2}, "prior": prior})

    def test_overrides_change_hash(self):
        config = build_model_config({"fixed": {"n_pop": 5000, "K": 2}})
        changed = config.with_overrides("filter", particles=64, resampler=None)
        self.assertEqual(changed.section("filter")["particles"], 64)
        self.assertEqual(changed.section("filter")["resampler"], "systematic")
        self.assertNotEqual(config.config_hash, changed.config_hash)
        self.assertEqual(config.section("filter")["particles"], 128)

    def test_load_resolves_relative_paths(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "model.json")
            with open(path, "w") as handle:
                json.dump({"fixed": {"n_pop": 1000, "K": 2}, "data": {"deaths": "deaths.csv"}}, handle)
            config = load_model_config(path)
        self.assertEqual(config.section("data")["deaths"], os.path.join(tmp, "deaths.csv"))
        self.assertEqual(config.fixed.n_pop, 1000)

    def test_invalid_json_names_position(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "broken.json")
            with open(path, "w") as handle:
                handle.write('{"fixed": ')
            with self.assertRaises(DataValidationError) as ctx:
                load_model_config(path)
        self.assertIn("broken.json", str(ctx.exception))

    @override_settings(EPIREGIME_CONFIG=None)
    def test_no_path_gives_defaults(self):
        self.assertEqual(load_model_config().fixed.K, 4)
