"""
Prior distributions over ``ThetaParams``.

Gamma hyperparameters are (shape, scale) pairs throughout. The log_beta
prior is a multivariate normal restricted to the strictly increasing
region; its truncation constant is dropped, which leaves every posterior
ratio unchanged.
"""
import logging
from dataclasses import dataclass, field, fields
from typing import Optional, Tuple

import numpy as np
from scipy import stats

from core.exceptions import ShapeError
from .theta import ThetaParams
from .transforms import ParameterLayout

logger = logging.getLogger(__name__)

DEFAULT_LOG_BETA_MEAN = (np.log(0.15), np.log(0.4), np.log(0.6), np.log(1.2))
DEFAULT_R_SHAPES = (40.0, 30.0, 20.0, 30.0)
INITIAL_R_SHAPE = 28.0
MAX_ORDERING_REJECTIONS = 100000
PROBABILITY_FLOOR = 1e-12


@dataclass(frozen=True)
class PriorSpec:
    """Prior families and hyperparameters for a K-regime model."""

    log_beta_mean: Tuple[float, ...]
    log_beta_cov: Tuple[Tuple[float, ...], ...]
    gamma1: Tuple[float, float] = (1600.0, 1.0 / 4000.0)
    gamma2: Tuple[float, float] = (2500.0, 1.0 / 5000.0)
    epsilon: Tuple[float, float] = (1000.0, 1.0 / 10000.0)
    r_shapes: Tuple[float, ...] = field(default=DEFAULT_R_SHAPES + (INITIAL_R_SHAPE,))
    r_scale: float = 1.0
    psi: Tuple[float, float] = (0.5, 0.5)
    transition_concentration: Optional[float] = None
    init_concentration: Optional[float] = None
    phi_cases: Tuple[float, float] = (2500.0, 1.0 / 500.0)
    phi_deaths: Tuple[float, float] = (2500.0, 1.0 / 500.0)

    def __post_init__(self):
        mean = tuple(float(m) for m in self.log_beta_mean)
        cov = tuple(tuple(float(c) for c in row) for row in self.log_beta_cov)
        object.__setattr__(self, "log_beta_mean", mean)
        object.__setattr__(self, "log_beta_cov", cov)
        object.__setattr__(self, "r_shapes", tuple(float(a) for a in self.r_shapes))
        K = len(mean)
        if np.asarray(cov).shape != (K, K):
            raise ShapeError(f"log_beta_cov must be {K}x{K}")
        if len(self.r_shapes) != K + 1:
            raise ShapeError(f"r_shapes must have {K + 1} entries, got {len(self.r_shapes)}")

    @property
    def K(self) -> int:
        return len(self.log_beta_mean)

    @property
    def p_concentration(self) -> float:
        return float(self.transition_concentration if self.transition_concentration is not None else self.K)

    @property
    def p_init_concentration(self) -> float:
        return float(self.init_concentration if self.init_concentration is not None else self.K)

    @classmethod
    def default(cls, K: int) -> "PriorSpec":
        """
        Default priors. For K = 4 these are the published values; other K
        spread the log_beta means evenly over the same range and pad the
        recurring r shapes with 30.
        """
        if K == len(DEFAULT_LOG_BETA_MEAN):
            mean = DEFAULT_LOG_BETA_MEAN
        elif K == 1:
            mean = (DEFAULT_LOG_BETA_MEAN[1],)
        else:
            mean = tuple(np.linspace(DEFAULT_LOG_BETA_MEAN[0], DEFAULT_LOG_BETA_MEAN[-1], K))
        shapes = (DEFAULT_R_SHAPES + (30.0,) * K)[:K] + (INITIAL_R_SHAPE,)
        return cls(log_beta_mean=mean, log_beta_cov=tuple(map(tuple, np.eye(K))), r_shapes=shapes)

    def replace(self, **changes) -> "PriorSpec":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return PriorSpec(**values)


def _gamma_logpdf(x, shape_scale):
    shape, scale = shape_scale
    return stats.gamma.logpdf(x, shape, scale=scale)


def _gamma_grad(x, shape_scale):
    shape, scale = shape_scale
    return (shape - 1.0) / x - 1.0 / scale


def log_prior(theta: ThetaParams, prior: PriorSpec) -> float:
    """Log prior density in constrained space; ``-inf`` outside the support."""
    if theta.K != prior.K:
        raise ShapeError(f"prior is for K={prior.K}, theta has K={theta.K}")
    if not theta.is_valid():
        return -np.inf
    total = stats.multivariate_normal.logpdf(
        theta.log_beta, mean=np.asarray(prior.log_beta_mean), cov=np.asarray(prior.log_beta_cov)
    )
    total += _gamma_logpdf(theta.gamma1, prior.gamma1)
    total += _gamma_logpdf(theta.gamma2, prior.gamma2)
    total += _gamma_logpdf(theta.epsilon, prior.epsilon)
    a = prior.p_concentration
    total += np.sum(stats.beta.logpdf(theta.p, a, a))
    if theta.n_destinations > 1:
        alpha = np.full(theta.n_destinations, prior.p_init_concentration)
        total += stats.dirichlet.logpdf(theta.p_init, alpha)
    total += np.sum(stats.gamma.logpdf(theta.r, np.asarray(prior.r_shapes), scale=prior.r_scale))
    total += np.sum(stats.beta.logpdf(theta.psi, *prior.psi))
    total += _gamma_logpdf(theta.phi_cases, prior.phi_cases)
    total += _gamma_logpdf(theta.phi_deaths, prior.phi_deaths)
    return float(total)


def grad_log_prior(theta: ThetaParams, prior: PriorSpec) -> dict:
    """Constrained-space gradient of ``log_prior`` as a dict per field."""
    precision = np.linalg.inv(np.asarray(prior.log_beta_cov))
    a = prior.p_concentration
    b_a, b_b = prior.psi
    return {
        "log_beta": -precision @ (theta.log_beta - np.asarray(prior.log_beta_mean)),
        "gamma1": _gamma_grad(theta.gamma1, prior.gamma1),
        "gamma2": _gamma_grad(theta.gamma2, prior.gamma2),
        "epsilon": _gamma_grad(theta.epsilon, prior.epsilon),
        "p": (a - 1.0) / theta.p - (a - 1.0) / (1.0 - theta.p),
        "p_init": (prior.p_init_concentration - 1.0) / theta.p_init,
        "r": (np.asarray(prior.r_shapes) - 1.0) / theta.r - 1.0 / prior.r_scale,
        "psi": (b_a - 1.0) / theta.psi - (b_b - 1.0) / (1.0 - theta.psi),
        "phi_cases": _gamma_grad(theta.phi_cases, prior.phi_cases),
        "phi_deaths": _gamma_grad(theta.phi_deaths, prior.phi_deaths),
    }


def log_prior_unconstrained(v, prior: PriorSpec, layout: ParameterLayout) -> float:
    """Log prior of the pushforward onto unconstrained space (adds log |J|)."""
    theta = layout.from_unconstrained(v)
    lp = log_prior(theta, prior)
    if not np.isfinite(lp):
        return -np.inf
    return lp + layout.log_det_jacobian(v)


def grad_log_prior_unconstrained(v, prior: PriorSpec, layout: ParameterLayout) -> np.ndarray:
    theta = layout.from_unconstrained(v)
    if not theta.is_valid():
        return np.zeros(layout.size)
    return layout.pullback(v, grad_log_prior(theta, prior)) + layout.grad_log_det_jacobian(v)


def sample_prior(prior: PriorSpec, n_destinations: int, rng) -> ThetaParams:
    """
    Draw one ThetaParams from the prior.

    log_beta is drawn by rejection until strictly increasing. Beta(0.5, 0.5)
    draws that round to exactly 0 or 1 are pulled inside the open interval.
    """
    K = prior.K
    mean = np.asarray(prior.log_beta_mean)
    cov = np.asarray(prior.log_beta_cov)
    for attempt in range(MAX_ORDERING_REJECTIONS):
        log_beta = rng.multivariate_normal(mean, cov)
        if K == 1 or np.all(np.diff(log_beta) > 0):
            break
    else:
        logger.warning(f"Ordered log_beta rejection hit {MAX_ORDERING_REJECTIONS} tries; sorting the last draw")
        log_beta = np.sort(log_beta)

    def clip(x):
        return np.clip(x, PROBABILITY_FLOOR, 1.0 - PROBABILITY_FLOOR)

    a = prior.p_concentration
    if n_destinations > 1:
        p_init = rng.dirichlet(np.full(n_destinations, prior.p_init_concentration))
        p_init = clip(p_init)
        p_init = p_init / p_init.sum()
    else:
        p_init = np.ones(1)
    return ThetaParams(
        log_beta=log_beta,
        gamma1=rng.gamma(prior.gamma1[0], prior.gamma1[1]),
        gamma2=rng.gamma(prior.gamma2[0], prior.gamma2[1]),
        epsilon=rng.gamma(prior.epsilon[0], prior.epsilon[1]),
        p=clip(rng.beta(a, a, size=K - 1)),
        p_init=p_init,
        r=rng.gamma(np.asarray(prior.r_shapes), prior.r_scale),
        psi=clip(rng.beta(prior.psi[0], prior.psi[1], size=K + 1)),
        phi_cases=rng.gamma(prior.phi_cases[0], prior.phi_cases[1]),
        phi_deaths=rng.gamma(prior.phi_deaths[0], prior.phi_deaths[1]),
    )
