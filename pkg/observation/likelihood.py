"""
Negative Binomial observation densities for reported cases and deaths.

The NB is parameterised by its mean ``mu`` and overdispersion ``phi`` so
that Var = mu + mu^2 / phi; the standard form has size ``phi`` and success
probability ``phi / (phi + mu)``. Missing observations are NaN and
contribute nothing.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
from scipy.special import digamma, gammaln

from core.exceptions import DomainError
from dynamics.augmented import EpidemicDynamics

logger = logging.getLogger(__name__)


class ObservationModel(Enum):
    DEATHS_ONLY = "deaths_only"
    CASES_AND_DEATHS = "cases_and_deaths"
    NONE = "none"

    @property
    def uses_cases(self) -> bool:
        return self is ObservationModel.CASES_AND_DEATHS

    @property
    def uses_deaths(self) -> bool:
        return self is not ObservationModel.NONE


@dataclass(frozen=True)
class Observation:
    t: int
    cases_reported: Optional[int] = None
    deaths_reported: Optional[int] = None

    @property
    def cases(self) -> float:
        return np.nan if self.cases_reported is None else float(self.cases_reported)

    @property
    def deaths(self) -> float:
        return np.nan if self.deaths_reported is None else float(self.deaths_reported)


def nb_logpmf(y, mu, phi):
    """
    log NB(y; mean mu, overdispersion phi), vectorised.

    A zero mean gives 0 for y == 0 and -inf otherwise. NaN ``y`` gives 0.
    """
    y, mu, phi = np.broadcast_arrays(np.asarray(y, dtype=float), np.asarray(mu, dtype=float),
                                     np.asarray(phi, dtype=float))
    out = np.zeros(y.shape)
    observed = ~np.isnan(y)
    positive = observed & (mu > 0)
    yp, mp, pp = y[positive], mu[positive], phi[positive]
    out[positive] = (
        gammaln(yp + pp) - gammaln(pp) - gammaln(yp + 1.0)
        + pp * (np.log(pp) - np.log(pp + mp))
        + yp * (np.log(mp) - np.log(pp + mp))
    )
    out[observed & ~(mu > 0) & (y > 0)] = -np.inf
    return out if out.ndim else float(out)


def nb_alt_logpmf(y, mu, variance):
    """log pmf of the NB with mean ``mu`` and the given variance (> mu)."""
    mu = np.asarray(mu, dtype=float)
    variance = np.asarray(variance, dtype=float)
    if np.any(variance <= mu):
        raise DomainError(f"NB variance must exceed the mean (mu={mu}, variance={variance})")
    size = mu ** 2 / (variance - mu)
    return nb_logpmf(y, mu, size)


def nb_alt_parameters(mu, variance):
    """Standard-form (size, prob) of the mean/variance parameterisation."""
    if variance <= mu:
        raise DomainError(f"NB variance must exceed the mean (mu={mu}, variance={variance})")
    return mu ** 2 / (variance - mu), mu / variance


def summed_nb_logpmf(y, mu, phi) -> float:
    """
    log density of ``sum(y)`` under the NB matching the mean and variance of
    a sum of independent NB(mu_i, phi) counts. A missing day gives 0.
    """
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if np.any(np.isnan(y)):
        return 0.0
    mean = float(mu.sum())
    excess = float(np.sum(mu ** 2) / phi)
    size = mean ** 2 / excess if excess > 0 else 1.0
    return float(nb_logpmf(y.sum(), mean, size))


def nb_logpmf_grad(y, mu, phi):
    """Partial derivatives of ``nb_logpmf`` in ``mu`` and ``phi`` (0 where missing or mu == 0)."""
    y, mu, phi = np.broadcast_arrays(np.asarray(y, dtype=float), np.asarray(mu, dtype=float),
                                     np.asarray(phi, dtype=float))
    d_mu = np.zeros(y.shape)
    d_phi = np.zeros(y.shape)
    ok = ~np.isnan(y) & (mu > 0)
    yo, mo, po = y[ok], mu[ok], phi[ok]
    d_mu[ok] = yo / mo - (yo + po) / (po + mo)
    d_phi[ok] = digamma(yo + po) - digamma(po) + np.log(po) - np.log(po + mo) + 1.0 - (yo + po) / (po + mo)
    return d_mu, d_phi


def sample_nb(mu, phi, rng):
    """Draw reported counts; a zero mean gives exactly 0."""
    mu = np.asarray(mu, dtype=float)
    prob = np.where(mu > 0, phi / (phi + np.maximum(mu, 0.0)), 1.0)
    return rng.negative_binomial(phi, prob)


class ObservationDensity:
    """
    Per-day observation log density for a given model kind.

    Args:
        model: which channels enter the likelihood.
    """

    def __init__(self, model):
        self.model = ObservationModel(model)

    def log_density(self, cases, deaths, case_mean, death_mean, phi_cases, phi_deaths):
        """Vectorised over particles; ``cases``/``deaths`` are scalars (NaN if missing)."""
        total = np.zeros(np.shape(case_mean) if np.ndim(case_mean) else np.shape(death_mean))
        if self.model.uses_cases:
            total = total + nb_logpmf(cases, case_mean, phi_cases)
        if self.model.uses_deaths:
            total = total + nb_logpmf(deaths, death_mean, phi_deaths)
        return total

    def gradients(self, cases, deaths, case_mean, death_mean, phi_cases, phi_deaths):
        """(d/d case_mean, d/d death_mean, d/d phi_cases, d/d phi_deaths) of ``log_density``."""
        zero = (0.0, 0.0)
        dc = nb_logpmf_grad(cases, case_mean, phi_cases) if self.model.uses_cases else zero
        dd = nb_logpmf_grad(deaths, death_mean, phi_deaths) if self.model.uses_deaths else zero
        return float(dc[0]), float(dd[0]), float(dc[1]), float(dd[1])


def log_obs(obs: Observation, x, theta, cfg, sched, model_kind, dynamics=None) -> np.ndarray:
    """
    Log density of one day's observation under every particle of ``x``.

    Args:
        obs: the day's reported counts.
        x: AugmentedState cloud at day ``obs.t``.
        theta: parameters (phi_cases, phi_deaths).
        cfg: fixed constants (window).
        sched: schedules (ur, ifr, f_delay).
        model_kind: ObservationModel or its value.
        dynamics: optional prebuilt EpidemicDynamics for ``theta``.
    """
    dyn = dynamics if dynamics is not None else EpidemicDynamics(theta, cfg, sched)
    density = ObservationDensity(model_kind)
    return density.log_density(
        obs.cases, obs.deaths,
        dyn.reported_case_mean(x, obs.t), dyn.deaths(x, obs.t),
        theta.phi_cases, theta.phi_deaths,
    )
