"""
Augmented Markov state: ODE compartments, regime pair and the incidence
window that the death convolution reads.

``AugmentedState`` holds a whole particle cloud as arrays (one row per
particle). Day ``t`` is produced from day ``t - 1`` by drawing ``z_t``,
solving the ODE for one day with the regime's beta and appending the day's
incidence to the window.
"""
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from hsmm.latent import HsmmProcess, regime_beta_index
from params.theta import FixedConfig, ThetaParams
from .ode import OdeSolver, initial_ode_state
from .schedules import Schedules

logger = logging.getLogger(__name__)


@dataclass
class AugmentedState:
    ode: np.ndarray
    s: np.ndarray
    d: np.ndarray
    hist: np.ndarray

    def __len__(self):
        return self.ode.shape[0]

    def take(self, idx) -> "AugmentedState":
        idx = np.asarray(idx)
        return AugmentedState(self.ode[idx], self.s[idx], self.d[idx], self.hist[idx])

    def copy(self) -> "AugmentedState":
        return AugmentedState(self.ode.copy(), self.s.copy(), self.d.copy(), self.hist.copy())

    @property
    def incidence(self) -> np.ndarray:
        return self.hist[:, -1]

    @classmethod
    def before_start(cls, n: int, cfg: FixedConfig) -> "AugmentedState":
        """Day -1: initial compartments, empty window, no regime yet."""
        return cls(
            ode=np.tile(initial_ode_state(cfg), (n, 1)),
            s=np.full(n, -1, dtype=np.int64),
            d=np.full(n, -1, dtype=np.int64),
            hist=np.zeros((n, cfg.window)),
        )

    @classmethod
    def concatenate(cls, parts) -> "AugmentedState":
        return cls(*(np.concatenate([getattr(p, name) for p in parts]) for name in ("ode", "s", "d", "hist")))


def implied_deaths(hist, ifr_t, f_delay):
    """
    ifr_t * sum_{k=1}^{window-1} hist[-1-k] * f_delay[k].

    ``hist`` may be one window or a stack of windows (last axis is time).
    """
    hist = np.asarray(hist, dtype=float)
    f_delay = np.asarray(f_delay, dtype=float)
    lagged = hist[..., ::-1][..., 1:]
    return ifr_t * (lagged @ f_delay[1:])


class EpidemicDynamics:
    """
    Transition machinery for one parameter value.

    Args:
        theta: parameters.
        cfg: fixed constants.
        sched: schedules.
        max_duration: optional duration truncation passed to the HSMM.
    """

    def __init__(self, theta: ThetaParams, cfg: FixedConfig, sched: Schedules, max_duration: Optional[int] = None):
        self.theta = theta
        self.cfg = cfg
        self.sched = sched
        self.process = HsmmProcess(theta, cfg, max_duration=max_duration)
        self.solver = OdeSolver(theta, cfg)
        self.beta_index = regime_beta_index(cfg)
        self.beta_by_regime = np.exp(theta.log_beta[self.beta_index])
        self.f_delay = sched.delay_for_window(cfg.window)

    def beta(self, s):
        return self.beta_by_regime[np.asarray(s)]

    def propagate(self, x: AugmentedState, s_new, d_new, t: int) -> AugmentedState:
        """Deterministic part of the transition given the new regime pair."""
        ode, incidence = self.solver.step(x.ode, self.beta(s_new), self.sched.nu_lagged(t, self.cfg.U))
        hist = np.empty_like(x.hist)
        hist[:, :-1] = x.hist[:, 1:]
        hist[:, -1] = incidence
        return AugmentedState(ode, np.asarray(s_new, dtype=np.int64), np.asarray(d_new, dtype=np.int64), hist)

    def sample_latent(self, x: AugmentedState, t: int, rng):
        if t == 0 or np.all(x.s < 0):
            return self.process.initial(len(x), rng)
        return self.process.step(x.s, x.d, rng)

    def advance(self, x: AugmentedState, t: int, rng) -> AugmentedState:
        s_new, d_new = self.sample_latent(x, t, rng)
        return self.propagate(x, s_new, d_new, t)

    def deaths(self, x: AugmentedState, t: int) -> np.ndarray:
        return implied_deaths(x.hist, self.sched.ifr_at(t), self.f_delay)

    def reported_case_mean(self, x: AugmentedState, t: int) -> np.ndarray:
        return x.incidence * self.sched.ur_at(t)

    def reproduction_number(self, x: AugmentedState) -> np.ndarray:
        beta = self.beta(np.maximum(x.s, 0))
        return beta * (1.0 / self.theta.gamma1 + 1.0 / self.theta.gamma2) * x.ode[:, 0] / self.cfg.n_pop


def advance(x: AugmentedState, theta: ThetaParams, cfg: FixedConfig, sched: Schedules, t: int, rng) -> AugmentedState:
    return EpidemicDynamics(theta, cfg, sched).advance(x, t, rng)


def rollout(theta: ThetaParams, cfg: FixedConfig, sched: Schedules, s_path, d_path,
            start: Optional[AugmentedState] = None, t_start: int = 0):
    """
    Deterministic single-path solve along a given regime path.

    Returns a dict with the compartments (T x 6), incidence, implied deaths
    and R_t for every day.
    """
    dyn = EpidemicDynamics(theta, cfg, sched)
    x = start if start is not None else AugmentedState.before_start(1, cfg)
    T = len(s_path)
    ode = np.empty((T, 6))
    incidence = np.empty(T)
    deaths = np.empty(T)
    rt = np.empty(T)
    for t in range(T):
        x = dyn.propagate(x, [s_path[t]], [d_path[t]], t_start + t)
        ode[t] = x.ode[0]
        incidence[t] = x.incidence[0]
        deaths[t] = dyn.deaths(x, t_start + t)[0]
        rt[t] = dyn.reproduction_number(x)[0]
    return {"ode": ode, "incidence": incidence, "deaths": deaths, "rt": rt, "final": x}
