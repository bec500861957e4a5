"""
SEEIIR ODE with vaccination, integrated one day at a time with fixed-step
RK4.

The integrated state carries a seventh component, the cumulative new
infections of the current day, so the day's incidence comes out of the same
RK4 pass. ``step`` is vectorised over particles; ``step_with_tangent`` also
propagates the exact derivative of the discrete RK4 map with respect to
(log_beta_0..K-1, gamma1, gamma2, epsilon) for a single path.
"""
import logging
from dataclasses import dataclass

import numpy as np

from core.exceptions import NumericalError
from core.logging import WarningCounter
from params.theta import FixedConfig, ThetaParams

logger = logging.getLogger(__name__)

COMPARTMENTS = ("S", "E1", "E2", "I1", "I2", "R")
N_COMPARTMENTS = len(COMPARTMENTS)
S, E1, E2, I1, I2, R, C = range(7)

clamp_counter = WarningCounter(__name__, "RK4 substep clamped a negative compartment")


@dataclass(frozen=True)
class OdeState:
    S: float
    E1: float
    E2: float
    I1: float
    I2: float
    R: float

    def to_array(self) -> np.ndarray:
        return np.array([self.S, self.E1, self.E2, self.I1, self.I2, self.R], dtype=float)

    @classmethod
    def from_array(cls, values) -> "OdeState":
        return cls(*(float(v) for v in values))

    @property
    def total(self) -> float:
        return float(self.to_array().sum())


def initial_ode_state(cfg: FixedConfig) -> np.ndarray:
    y = np.zeros(N_COMPARTMENTS)
    y[S] = cfg.n_pop - cfg.E0
    y[E1] = cfg.E0
    return y


def _rhs(y, beta, gamma1, gamma2, epsilon, n_pop, vacc):
    lam = beta * y[..., S] * (y[..., I1] + y[..., I2]) / n_pop
    out = np.empty_like(y)
    out[..., S] = -lam - vacc
    out[..., E1] = lam - epsilon * y[..., E1]
    out[..., E2] = epsilon * (y[..., E1] - y[..., E2])
    out[..., I1] = epsilon * y[..., E2] - gamma1 * y[..., I1]
    out[..., I2] = gamma1 * y[..., I1] - gamma2 * y[..., I2]
    out[..., R] = gamma2 * y[..., I2] + vacc
    out[..., C] = lam
    return out


def _jacobians(y, beta, gamma1, gamma2, epsilon, n_pop, beta_col, n_params):
    """State and parameter Jacobians of the RHS at a single point."""
    infectious = y[I1] + y[I2]
    lam = beta * y[S] * infectious / n_pop
    lam_s = beta * infectious / n_pop
    lam_i = beta * y[S] / n_pop

    fy = np.zeros((7, 7))
    for row, sign in ((S, -1.0), (E1, 1.0), (C, 1.0)):
        fy[row, S] = sign * lam_s
        fy[row, I1] = sign * lam_i
        fy[row, I2] = sign * lam_i
    fy[E1, E1] = -epsilon
    fy[E2, E1] = epsilon
    fy[E2, E2] = -epsilon
    fy[I1, E2] = epsilon
    fy[I1, I1] = -gamma1
    fy[I2, I1] = gamma1
    fy[I2, I2] = -gamma2
    fy[R, I2] = gamma2

    fp = np.zeros((7, n_params))
    # d lambda / d log_beta = lambda
    fp[S, beta_col] = -lam
    fp[E1, beta_col] = lam
    fp[C, beta_col] = lam
    g1, g2, eps = n_params - 3, n_params - 2, n_params - 1
    fp[I1, g1] = -y[I1]
    fp[I2, g1] = y[I1]
    fp[I2, g2] = -y[I2]
    fp[R, g2] = y[I2]
    fp[E1, eps] = -y[E1]
    fp[E2, eps] = y[E1] - y[E2]
    fp[I1, eps] = y[E2]
    return fy, fp


class OdeSolver:
    """One-day RK4 solver bound to a parameter value."""

    def __init__(self, theta: ThetaParams, cfg: FixedConfig):
        self.gamma1 = theta.gamma1
        self.gamma2 = theta.gamma2
        self.epsilon = theta.epsilon
        self.n_pop = float(cfg.n_pop)
        self.rho = cfg.rho
        self.substeps = cfg.dt_substeps
        self.h = 1.0 / cfg.dt_substeps
        self.n_params = theta.K + 3

    def _f(self, y, beta, vacc):
        return _rhs(y, beta, self.gamma1, self.gamma2, self.epsilon, self.n_pop, vacc)

    def _clamp(self, y, tangent=None):
        negative = y[..., :N_COMPARTMENTS] < 0
        if not np.any(negative):
            return y
        clamp_counter.hit(n=int(np.any(negative, axis=-1).sum()))
        compartments = np.where(negative, 0.0, y[..., :N_COMPARTMENTS])
        total = compartments.sum(axis=-1, keepdims=True)
        scale = np.where(total > 0, self.n_pop / total, 1.0)
        y = y.copy()
        y[..., :N_COMPARTMENTS] = compartments * scale
        if tangent is not None:
            # single path: the rows must follow the same zero-and-rescale as the state
            tangent[:N_COMPARTMENTS][negative] = 0.0
            tangent[:N_COMPARTMENTS] *= float(scale[0])
        return y

    def step(self, y, beta, nu_lagged=0.0):
        """
        Advance states ``y`` (n x 6) by one day.

        Returns the new states and the day's new infections (n,).
        """
        y = np.asarray(y, dtype=float)
        beta = np.asarray(beta, dtype=float)
        vacc = self.rho * float(nu_lagged)
        z = np.concatenate([y, np.zeros(y.shape[:-1] + (1,))], axis=-1)
        h = self.h
        for _ in range(self.substeps):
            k1 = self._f(z, beta, vacc)
            k2 = self._f(z + 0.5 * h * k1, beta, vacc)
            k3 = self._f(z + 0.5 * h * k2, beta, vacc)
            k4 = self._f(z + h * k3, beta, vacc)
            z = self._clamp(z + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4))
        if not np.all(np.isfinite(z)):
            bad = z[~np.all(np.isfinite(z), axis=-1)]
            logger.error(f"Non-finite ODE state after one day (beta range {beta.min():.4g}..{beta.max():.4g})")
            raise NumericalError("non-finite ODE state", state=bad[0, :N_COMPARTMENTS])
        return z[..., :N_COMPARTMENTS], np.maximum(z[..., C], 0.0)

    def step_with_tangent(self, y, dy, beta, beta_col, nu_lagged=0.0):
        """
        Single-path day step plus forward sensitivities.

        Args:
            y: state (6,).
            dy: d y / d params (6, K+3).
            beta: transmission rate of the day.
            beta_col: which log_beta column drives this day.

        Returns:
            (y_new, dy_new, incidence, d incidence / d params)
        """
        vacc = self.rho * float(nu_lagged)
        z = np.append(np.asarray(y, dtype=float), 0.0)
        dz = np.vstack([dy, np.zeros((1, self.n_params))])
        h = self.h

        def jac(point):
            return _jacobians(point, beta, self.gamma1, self.gamma2, self.epsilon, self.n_pop, beta_col, self.n_params)

        for _ in range(self.substeps):
            k1 = self._f(z, beta, vacc)
            fy, fp = jac(z)
            dk1 = fy @ dz + fp
            z2 = z + 0.5 * h * k1
            k2 = self._f(z2, beta, vacc)
            fy, fp = jac(z2)
            dk2 = fy @ (dz + 0.5 * h * dk1) + fp
            z3 = z + 0.5 * h * k2
            k3 = self._f(z3, beta, vacc)
            fy, fp = jac(z3)
            dk3 = fy @ (dz + 0.5 * h * dk2) + fp
            z4 = z + h * k3
            k4 = self._f(z4, beta, vacc)
            fy, fp = jac(z4)
            dk4 = fy @ (dz + h * dk3) + fp
            z = z + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            dz = dz + h / 6.0 * (dk1 + 2 * dk2 + 2 * dk3 + dk4)
            z = self._clamp(z, dz)
        if not np.all(np.isfinite(z)) or not np.all(np.isfinite(dz)):
            raise NumericalError("non-finite ODE state or sensitivity", state=z[:N_COMPARTMENTS])
        incidence = z[C]
        d_incidence = dz[C] if incidence > 0 else np.zeros(self.n_params)
        return z[:N_COMPARTMENTS], dz[:N_COMPARTMENTS], max(incidence, 0.0), d_incidence


def ode_step(O: OdeState, beta: float, theta: ThetaParams, cfg: FixedConfig, nu_lagged: float = 0.0):
    """One-day step of a single state; returns ``(OdeState, incidence)``."""
    y, incidence = OdeSolver(theta, cfg).step(O.to_array()[None, :], np.array([beta]), nu_lagged)
    return OdeState.from_array(y[0]), float(incidence[0])


def reproduction_number(O, beta, theta: ThetaParams, cfg: FixedConfig):
    """beta * (1/gamma1 + 1/gamma2) * S / N, vectorised over states."""
    s = O.S if isinstance(O, OdeState) else np.asarray(O)[..., S]
    return beta * (1.0 / theta.gamma1 + 1.0 / theta.gamma2) * s / cfg.n_pop
