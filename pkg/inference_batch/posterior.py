"""
Conditional log posterior of the parameters given a latent regime path.

Evaluated on the unconstrained vector: log prior (with the transform's log
Jacobian) plus the regime path's transition and duration terms plus the
observation terms along the single ODE path the trajectory implies. The
gradient composes the ODE forward sensitivities with the observation
gradients, or falls back to central finite differences.
"""
import logging

import numpy as np
from scipy.special import digamma

from core.exceptions import NumericalError, ShapeError
from dynamics.ode import OdeSolver, initial_ode_state
from hsmm.latent import HsmmProcess, regime_beta_index
from observation.likelihood import ObservationDensity, ObservationModel
from params.priors import grad_log_prior, log_prior
from params.transforms import ParameterLayout

logger = logging.getLogger(__name__)

GRADIENT_METHODS = ("sensitivity", "finite_difference")
FD_STEP = 1e-5


def _nb_duration_grad(d, r, psi):
    """d/dr and d/dpsi of the NB(size r, success psi) log pmf at ``d``."""
    return digamma(d + r) - digamma(r) + np.log(psi), r / psi - d / (1.0 - psi)


class ConditionalPosterior:
    """
    log p(theta | z_{1:T}, e_{1:T}) up to a constant, on unconstrained space.

    Args:
        trajectory: ``(s_path, d_path)`` of length T.
        data: ObservationSeries of length T.
        cfg: FixedConfig.
        sched: Schedules.
        prior: PriorSpec.
        model_kind: observation model.
        gradient: ``sensitivity`` or ``finite_difference``.
    """

    def __init__(self, trajectory, data, cfg, sched, prior, model_kind=ObservationModel.CASES_AND_DEATHS,
                 gradient="sensitivity"):
        if gradient not in GRADIENT_METHODS:
            raise ValueError(f"unknown gradient method {gradient!r}")
        self.s_path = np.asarray(trajectory[0], dtype=np.int64)
        self.d_path = np.asarray(trajectory[1], dtype=np.int64)
        if self.s_path.shape != (len(data),) or self.d_path.shape != (len(data),):
            raise ShapeError(f"trajectory must have length {len(data)}")
        self.data = data
        self.cfg = cfg
        self.sched = sched
        self.prior = prior
        self.density = ObservationDensity(model_kind)
        self.gradient_method = gradient
        self.layout = ParameterLayout(cfg.K, cfg.n_destinations)
        self.beta_cols = regime_beta_index(cfg)[self.s_path]
        self.f_delay = sched.delay_for_window(cfg.window)
        T = self.s_path.shape[0]
        renew = np.flatnonzero(self.d_path[:-1] == 0) + 1
        self.renew_t = renew
        self.evaluations = 0
        self._nu = np.array([sched.nu_lagged(t, cfg.U) for t in range(T)], dtype=float)
        self._ur = np.array([sched.ur_at(t) for t in range(T)])
        self._ifr = np.array([sched.ifr_at(t) for t in range(T)])

    @property
    def dim(self) -> int:
        return self.layout.size

    def _latent_log_density(self, theta) -> float:
        return HsmmProcess(theta, self.cfg).path_log_density(self.s_path, self.d_path)

    def _latent_gradient(self, theta) -> dict:
        K = theta.K
        dr = np.zeros(K + 1)
        dpsi = np.zeros(K + 1)
        dp = np.zeros(K - 1)
        dp_init = np.zeros(theta.n_destinations)
        idx = np.concatenate([[0], self.renew_t]).astype(np.int64)
        regimes = self.s_path[idx]
        gr, gpsi = _nb_duration_grad(self.d_path[idx], theta.r[regimes], theta.psi[regimes])
        np.add.at(dr, regimes, gr)
        np.add.at(dpsi, regimes, gpsi)
        destinations = list(self.cfg.destinations)
        for t in self.renew_t:
            prev, new = self.s_path[t - 1], self.s_path[t]
            if prev == K:
                j = destinations.index(new)
                dp_init[j] += 1.0 / theta.p_init[j]
            elif prev < K - 1:
                if new == prev + 1:
                    dp[prev] += 1.0 / theta.p[prev]
                else:
                    dp[prev] -= 1.0 / (1.0 - theta.p[prev])
        return {"r": dr, "psi": dpsi, "p": dp, "p_init": dp_init}

    def _observation_log_density(self, theta) -> float:
        solver = OdeSolver(theta, self.cfg)
        y = initial_ode_state(self.cfg)[None, :]
        hist = np.zeros(self.cfg.window)
        beta = np.exp(theta.log_beta)[self.beta_cols]
        f_lag = self.f_delay[1:]
        total = 0.0
        for t in range(self.s_path.shape[0]):
            y, inc = solver.step(y, beta[t:t + 1], self._nu[t])
            hist[:-1] = hist[1:]
            hist[-1] = inc[0]
            death_mean = self._ifr[t] * (hist[::-1][1:] @ f_lag)
            total += float(self.density.log_density(
                self.data.cases[t], self.data.deaths[t], inc[0] * self._ur[t], death_mean,
                theta.phi_cases, theta.phi_deaths,
            ))
            if total == -np.inf:
                break
        return total

    def _observation_gradient(self, theta):
        """Observation log density and its constrained-space gradient dict."""
        K = theta.K
        P = K + 3
        solver = OdeSolver(theta, self.cfg)
        y = initial_ode_state(self.cfg)
        dy = np.zeros((y.shape[0], P))
        window = self.cfg.window
        hist = np.zeros(window)
        dhist = np.zeros((window, P))
        f_lag = self.f_delay[1:]
        beta = np.exp(theta.log_beta)
        g_ode = np.zeros(P)
        g_phi_c = 0.0
        g_phi_d = 0.0
        total = 0.0
        for t in range(self.s_path.shape[0]):
            col = int(self.beta_cols[t])
            y, dy, inc, dinc = solver.step_with_tangent(y, dy, beta[col], col, self._nu[t])
            hist[:-1] = hist[1:]
            hist[-1] = inc
            dhist[:-1] = dhist[1:]
            dhist[-1] = dinc
            case_mean = inc * self._ur[t]
            d_case_mean = dinc * self._ur[t]
            death_mean = self._ifr[t] * (hist[::-1][1:] @ f_lag)
            d_death_mean = self._ifr[t] * (f_lag @ dhist[::-1][1:])
            cases, deaths = self.data.cases[t], self.data.deaths[t]
            total += float(self.density.log_density(cases, deaths, case_mean, death_mean,
                                                    theta.phi_cases, theta.phi_deaths))
            if total == -np.inf:
                return total, None
            gc, gd, gpc, gpd = self.density.gradients(cases, deaths, case_mean, death_mean,
                                                      theta.phi_cases, theta.phi_deaths)
            g_ode += gc * d_case_mean + gd * d_death_mean
            g_phi_c += gpc
            g_phi_d += gpd
        return total, {
            "log_beta": g_ode[:K],
            "gamma1": g_ode[K],
            "gamma2": g_ode[K + 1],
            "epsilon": g_ode[K + 2],
            "phi_cases": g_phi_c,
            "phi_deaths": g_phi_d,
        }

    def value(self, v) -> float:
        self.evaluations += 1
        theta = self.layout.from_unconstrained(v)
        lp = log_prior(theta, self.prior)
        if not np.isfinite(lp):
            return -np.inf
        latent = self._latent_log_density(theta)
        if not np.isfinite(latent):
            return -np.inf
        try:
            obs = self._observation_log_density(theta)
        except NumericalError as exc:
            logger.debug(f"Conditional posterior hit a numerical failure: {exc}")
            return -np.inf
        total = lp + self.layout.log_det_jacobian(v) + latent + obs
        return float(total) if np.isfinite(total) else -np.inf

    def value_and_grad(self, v):
        v = np.asarray(v, dtype=float)
        if self.gradient_method == "finite_difference":
            return self._finite_difference(v)
        self.evaluations += 1
        zero = np.zeros(self.layout.size)
        theta = self.layout.from_unconstrained(v)
        lp = log_prior(theta, self.prior)
        if not np.isfinite(lp):
            return -np.inf, zero
        latent = self._latent_log_density(theta)
        if not np.isfinite(latent):
            return -np.inf, zero
        try:
            obs, obs_grad = self._observation_gradient(theta)
        except NumericalError as exc:
            logger.debug(f"Conditional posterior hit a numerical failure: {exc}")
            return -np.inf, zero
        if obs_grad is None:
            return -np.inf, zero
        total = lp + self.layout.log_det_jacobian(v) + latent + obs
        if not np.isfinite(total):
            return -np.inf, zero
        grads = grad_log_prior(theta, self.prior)
        for name, value in list(self._latent_gradient(theta).items()) + list(obs_grad.items()):
            grads[name] = grads[name] + value
        grad = self.layout.pullback(v, grads) + self.layout.grad_log_det_jacobian(v)
        if not np.all(np.isfinite(grad)):
            return -np.inf, zero
        return float(total), grad

    def _finite_difference(self, v, h=FD_STEP):
        value = self.value(v)
        grad = np.zeros(v.shape[0])
        if not np.isfinite(value):
            return -np.inf, grad
        for i in range(v.shape[0]):
            up = v.copy()
            down = v.copy()
            up[i] += h
            down[i] -= h
            grad[i] = (self.value(up) - self.value(down)) / (2.0 * h)
        if not np.all(np.isfinite(grad)):
            return -np.inf, np.zeros(v.shape[0])
        return value, grad

    __call__ = value_and_grad


def conditional_log_posterior(theta_unconstrained, trajectory, e, cfg, sched, prior,
                              model_kind=ObservationModel.CASES_AND_DEATHS, gradient="sensitivity"):
    """Returns ``(log posterior, gradient)``; ``-inf`` with a zero gradient off the support."""
    return ConditionalPosterior(trajectory, e, cfg, sched, prior, model_kind, gradient)(theta_unconstrained)
