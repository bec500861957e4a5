import numpy as np
from django.test import SimpleTestCase, tag
from numpy.testing import assert_allclose

from core.exceptions import ConstraintError, ShapeError
from hsmm.latent import HsmmProcess
from params.priors import PriorSpec, sample_prior
from params.theta import FixedConfig, reference_theta
from .augmented import AugmentedState, EpidemicDynamics, advance, implied_deaths, rollout
from .ode import OdeSolver, OdeState, initial_ode_state, ode_step, reproduction_number
from .schedules import Schedules


def _delay(window=28):
    f = np.arange(1, window, dtype=float)
    return f / f.sum()


class OdeStepTests(SimpleTestCase):
    def setUp(self):
        self.theta = reference_theta()
        self.cfg = FixedConfig(n_pop=1_000_000)

    def test_disease_free_equilibrium(self):
        """Test a state without exposed or infectious people stays put"""
        state = OdeState(900_000, 0, 0, 0, 0, 100_000)
        new, incidence = ode_step(state, 0.5, self.theta, self.cfg, 0.0)
        self.assertEqual(new, state)
        self.assertEqual(incidence, 0.0)

    def test_conservation(self):
        state = OdeState(990_000, 4000, 2000, 2500, 1000, 500)
        new, incidence = ode_step(state, 0.6, self.theta, self.cfg, 800.0)
        self.assertLess(abs(new.total - 1_000_000) / 1_000_000, 1e-6)
        self.assertGreater(incidence, 0.0)

    def test_vaccination_moves_s_to_r(self):
        state = OdeState(1_000_000, 0, 0, 0, 0, 0)
        new, _ = ode_step(state, 0.5, self.theta, self.cfg, 1000.0)
        self.assertAlmostEqual(new.S, 1_000_000 - 500.0, places=6)
        self.assertAlmostEqual(new.R, 500.0, places=6)

    def test_fourth_order_convergence(self):
        """Test halving the substep shrinks the error about sixteenfold"""
        y = np.array([[700_000.0, 60_000.0, 40_000.0, 90_000.0, 60_000.0, 50_000.0]])
        beta = np.array([1.4])

        def solve(substeps):
            cfg = FixedConfig(n_pop=1_000_000, dt_substeps=substeps)
            return OdeSolver(self.theta, cfg).step(y, beta)[0][0]

        reference = solve(240)
        coarse = np.linalg.norm(solve(4) - reference)
        fine = np.linalg.norm(solve(8) - reference)
        self.assertGreater(coarse / fine, 12.0)
        self.assertLess(coarse / fine, 20.0)

    def test_reproduction_number(self):
        theta = self.theta.replace(gamma1=1.0, gamma2=1.0)
        self.assertAlmostEqual(reproduction_number(OdeState(1_000_000, 0, 0, 0, 0, 0), 0.5, theta, self.cfg), 1.0)
        self.assertEqual(reproduction_number(OdeState(0, 0, 0, 0, 0, 1_000_000), 0.5, theta, self.cfg), 0.0)
        theta = self.theta.replace(gamma1=0.45, gamma2=0.45)
        value = reproduction_number(OdeState(1_000_000, 0, 0, 0, 0, 0), np.exp(-0.81), theta, self.cfg)
        self.assertAlmostEqual(value, np.exp(-0.81) * 2 / 0.45, places=12)
        self.assertAlmostEqual(value, 1.98, places=2)

    def test_clamping_keeps_compartments_non_negative(self):
        cfg = FixedConfig(n_pop=1000, dt_substeps=1)
        y = np.array([[1.0, 0.0, 0.0, 0.0, 0.0, 999.0]])
        new, _ = OdeSolver(self.theta, cfg).step(y, np.array([0.5]), nu_lagged=10_000.0)
        self.assertTrue(np.all(new >= 0))
        self.assertAlmostEqual(new.sum(), 1000.0, places=8)

    def test_clamping_rescales_the_tangent_with_the_state(self):
        """Test that a clamped step applies the state's rescale factor to the sensitivities"""
        solver = OdeSolver(self.theta, FixedConfig(n_pop=1000))
        z = np.array([1100.0, -100.0, 0.0, 0.0, 0.0, 0.0, 5.0])
        tangent = np.ones((7, 3))
        clamped = solver._clamp(z, tangent)
        scale = 1000.0 / 1100.0
        assert_allclose(clamped[:6], [1000.0, 0.0, 0.0, 0.0, 0.0, 0.0])
        assert_allclose(tangent[1], 0.0)
        assert_allclose(tangent[[0, 2, 3, 4, 5]], scale)
        assert_allclose(tangent[6], 1.0)

    def test_tangent_matches_finite_differences(self):
        """Test forward sensitivities of one day against central differences"""
        cfg = FixedConfig(n_pop=1_000_000)
        y = np.array([950_000.0, 12_000.0, 9000.0, 15_000.0, 10_000.0, 4000.0])
        dy = np.zeros((6, 7))
        theta = self.theta
        _, dy_new, inc, dinc = OdeSolver(theta, cfg).step_with_tangent(y, dy, np.exp(theta.log_beta[2]), 2, 300.0)
        h = 1e-6
        for col, field in ((2, "log_beta"), (4, "gamma1"), (5, "gamma2"), (6, "epsilon")):
            def run(delta):
                if field == "log_beta":
                    lb = theta.log_beta.copy()
                    lb[2] += delta
                    t = theta.replace(log_beta=lb)
                else:
                    t = theta.replace(**{field: getattr(theta, field) + delta})
                out, c = OdeSolver(t, cfg).step(y[None, :], np.array([np.exp(t.log_beta[2])]), 300.0)
                return out[0], c[0]
            up, c_up = run(h)
            down, c_down = run(-h)
            assert_allclose(dy_new[:, col], (up - down) / (2 * h), rtol=1e-5, atol=1e-2)
            self.assertAlmostEqual(dinc[col], (c_up - c_down) / (2 * h), delta=1e-5 * abs(dinc[col]) + 1e-2)

    @tag("slow")
    def test_conservation_along_trajectories(self):
        prior = PriorSpec.default(4)
        rng = np.random.default_rng(17)
        cfg = FixedConfig(n_pop=1_000_000)
        sched = Schedules.constant(600, _delay(), nu=200.0)
        for _ in range(100):
            theta = sample_prior(prior, 3, rng)
            dyn = EpidemicDynamics(theta, cfg, sched)
            x = AugmentedState.before_start(1, cfg)
            for t in range(600):
                x = dyn.advance(x, t, rng)
                self.assertLess(abs(x.ode.sum() - cfg.n_pop) / cfg.n_pop, 1e-6)
                self.assertGreaterEqual(x.incidence[0], 0.0)


class AugmentedStateTests(SimpleTestCase):
    def setUp(self):
        self.theta = reference_theta()
        self.cfg = FixedConfig(n_pop=1_000_000)
        self.sched = Schedules.constant(200, _delay())
        self.dyn = EpidemicDynamics(self.theta, self.cfg, self.sched)

    def test_window_slides(self):
        rng = np.random.default_rng(0)
        x = AugmentedState.before_start(3, self.cfg)
        x.hist[:] = np.arange(28, dtype=float)
        new = self.dyn.advance(x, 0, rng)
        assert_allclose(new.hist[:, :-1], x.hist[:, 1:])
        assert_allclose(new.hist[:, -1], new.incidence)

    def test_positive_duration_keeps_regime_and_beta(self):
        rng = np.random.default_rng(1)
        x = self.dyn.advance(AugmentedState.before_start(1, self.cfg), 0, rng)
        x.s[:] = 2
        x.d[:] = 5
        new = self.dyn.advance(x, 1, rng)
        self.assertEqual(new.s[0], 2)
        self.assertEqual(new.d[0], 4)
        self.assertEqual(self.dyn.beta(new.s)[0], self.dyn.beta(x.s)[0])

    def test_initial_regime_uses_third_beta(self):
        self.assertAlmostEqual(self.dyn.beta([4])[0], np.exp(-0.81))

    def test_determinism(self):
        def run():
            rng = np.random.default_rng(42)
            x = AugmentedState.before_start(1, self.cfg)
            path = []
            for t in range(500):
                x = advance(x, self.theta, self.cfg, self.sched, t, rng)
                path.append(x.ode[0].copy())
            return np.array(path)
        self.assertTrue(np.array_equal(run(), run()))

    def test_markov_in_augmented_state(self):
        """Test successors depend only on the current augmented state"""
        rng = np.random.default_rng(5)
        x = AugmentedState.before_start(1, self.cfg)
        for t in range(30):
            x = self.dyn.advance(x, t, rng)
        twin = x.copy()
        a = self.dyn.advance(x, 30, np.random.default_rng(99))
        b = self.dyn.advance(twin, 30, np.random.default_rng(99))
        self.assertTrue(np.array_equal(a.ode, b.ode))
        self.assertTrue(np.array_equal(a.hist, b.hist))

    def test_susceptibles_non_increasing_without_vaccination(self):
        rng = np.random.default_rng(3)
        x = AugmentedState.before_start(8, self.cfg)
        previous = x.ode[:, 0].copy()
        for t in range(150):
            x = self.dyn.advance(x, t, rng)
            self.assertTrue(np.all(x.ode[:, 0] <= previous + 1e-9))
            previous = x.ode[:, 0].copy()

    def test_rollout_matches_advance(self):
        rng = np.random.default_rng(8)
        process = HsmmProcess(self.theta, self.cfg)
        s, d = process.initial(1, rng)
        s_path, d_path = [int(s[0])], [int(d[0])]
        for _ in range(39):
            s, d = process.step(s, d, rng)
            s_path.append(int(s[0]))
            d_path.append(int(d[0]))
        out = rollout(self.theta, self.cfg, self.sched, s_path, d_path)
        self.assertEqual(out["ode"].shape, (40, 6))
        x = AugmentedState.before_start(1, self.cfg)
        for t in range(40):
            x = self.dyn.propagate(x, [s_path[t]], [d_path[t]], t)
        assert_allclose(out["ode"][-1], x.ode[0])
        self.assertAlmostEqual(out["deaths"][-1], self.dyn.deaths(x, 39)[0])


class ImpliedDeathsTests(SimpleTestCase):
    def setUp(self):
        self.f = np.concatenate([[0.0], _delay()])

    def test_empty_window(self):
        self.assertEqual(implied_deaths(np.zeros(28), 0.01, self.f), 0.0)

    def test_unit_impulse(self):
        for k in (1, 5, 27):
            hist = np.zeros(28)
            hist[-1 - k] = 1.0
            self.assertAlmostEqual(implied_deaths(hist, 0.01, self.f), 0.01 * self.f[k], places=15)

    def test_matches_double_loop(self):
        rng = np.random.default_rng(0)
        hist = rng.gamma(2.0, 100.0, size=28)
        expected = 0.0
        for k in range(1, 28):
            for j in range(28):
                if j == 27 - k:
                    expected += hist[j] * self.f[k]
        self.assertAlmostEqual(implied_deaths(hist, 0.007, self.f), 0.007 * expected, delta=1e-12 * expected)

    def test_stack_of_windows(self):
        hist = np.ones((4, 28))
        assert_allclose(implied_deaths(hist, 0.01, self.f), np.full(4, 0.01 * self.f[1:].sum()))


class SchedulesTests(SimpleTestCase):
    def test_delay_padding(self):
        sched = Schedules.constant(10, _delay())
        f = sched.delay_for_window(28)
        self.assertEqual(f.shape, (28,))
        self.assertEqual(f[0], 0.0)
        with self.assertRaises(ShapeError):
            sched.delay_for_window(14)

    def test_delay_with_lag_zero_mass_is_rejected(self):
        """Test that a window-length delay must start with an empty lag 0"""
        padded = np.concatenate([[0.0], _delay()])
        assert_allclose(Schedules.constant(10, padded).delay_for_window(28), padded)
        shifted = np.concatenate([_delay(), [0.0]])
        with self.assertRaises(ConstraintError):
            Schedules.constant(10, shifted).delay_for_window(28)

    def test_hold_at_last_value(self):
        sched = Schedules(nu=[1.0, 2.0, 3.0], ifr=[0.01, 0.02], ur=[0.5], f_delay=_delay())
        self.assertEqual(sched.ifr_at(10), 0.02)
        self.assertEqual(sched.ur_at(5), 0.5)
        self.assertEqual(float(sched.nu_lagged(1, 2)), 0.0)
        self.assertEqual(float(sched.nu_lagged(4, 2)), 3.0)

    def test_validation(self):
        with self.assertRaises(ConstraintError):
            Schedules(nu=[-1.0], ifr=[0.01], ur=[1.0], f_delay=_delay())
        with self.assertRaises(ConstraintError):
            Schedules(nu=[0.0], ifr=[1.5], ur=[1.0], f_delay=_delay())
        with self.assertRaises(ConstraintError):
            Schedules(nu=[0.0], ifr=[0.01], ur=[0.0], f_delay=_delay())
        with self.assertRaises(ConstraintError):
            Schedules(nu=[0.0], ifr=[0.01], ur=[1.0], f_delay=[0.7, 0.7])

    def test_initial_ode_state(self):
        cfg = FixedConfig(n_pop=5000, E0=25)
        assert_allclose(initial_ode_state(cfg), [4975, 25, 0, 0, 0, 0])
