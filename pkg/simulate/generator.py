"""
Forward simulation of the full generative model.

The regime path is drawn first, then the ODE is solved along it, then the
reported counts are drawn from the Negative Binomial observation model.
Every intermediate quantity is kept for recovery scoring.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd

from core.exceptions import PreconditionError
from dynamics.augmented import AugmentedState, EpidemicDynamics
from dynamics.ode import COMPARTMENTS
from dynamics.schedules import Schedules
from hsmm.latent import HsmmProcess, is_feasible
from observation.likelihood import sample_nb
from observation.series import ObservationSeries
from params.theta import FixedConfig, ThetaParams

logger = logging.getLogger(__name__)

SYNTHETIC_START_DATE = "2020-03-01"


@dataclass
class SyntheticDataset:
    theta: ThetaParams
    cfg: FixedConfig
    sched: Schedules
    seed: Optional[int]
    s_path: np.ndarray
    d_path: np.ndarray
    ode: np.ndarray
    incidence: np.ndarray
    cases_implied: np.ndarray
    deaths_implied: np.ndarray
    cases_reported: np.ndarray
    deaths_reported: np.ndarray
    rt: np.ndarray
    start_date: str = SYNTHETIC_START_DATE
    meta: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return self.s_path.shape[0]

    @property
    def dates(self) -> pd.DatetimeIndex:
        return pd.date_range(self.start_date, periods=self.T, freq="D")

    def observations(self) -> ObservationSeries:
        return ObservationSeries(self.cases_reported.astype(float), self.deaths_reported.astype(float), self.dates)

    def truth_frame(self) -> pd.DataFrame:
        """Every latent and implied series, one row per day."""
        frame = pd.DataFrame(self.ode, columns=list(COMPARTMENTS), index=pd.Index(self.dates, name="date"))
        frame.insert(0, "t", np.arange(self.T))
        frame["regime"] = self.s_path
        frame["remaining"] = self.d_path
        frame["incidence"] = self.incidence
        frame["cases_implied"] = self.cases_implied
        frame["deaths_implied"] = self.deaths_implied
        frame["cases_reported"] = self.cases_reported
        frame["deaths_reported"] = self.deaths_reported
        frame["rt"] = self.rt
        return frame


def simulate(theta: ThetaParams, cfg: FixedConfig, sched: Schedules, T: int, rng, seed=None,
             beta_scale: float = 1.0) -> SyntheticDataset:
    """
    Draw one synthetic dataset of length ``T``.

    ``beta_scale`` multiplies every regime's transmission rate (0 switches
    transmission off).
    """
    if T < 1:
        raise PreconditionError("T must be at least 1")
    process = HsmmProcess(theta, cfg)
    s, d = process.initial(1, rng)
    s_path = np.empty(T, dtype=np.int64)
    d_path = np.empty(T, dtype=np.int64)
    for t in range(T):
        if t:
            s, d = process.step(s, d, rng)
        s_path[t], d_path[t] = s[0], d[0]
    return simulate_given_path(theta, cfg, sched, s_path, d_path, rng, seed, beta_scale)


def simulate_given_path(theta: ThetaParams, cfg: FixedConfig, sched: Schedules, s_path, d_path, rng, seed=None,
                        beta_scale: float = 1.0) -> SyntheticDataset:
    """Solve the ODE along a fixed regime path and draw the reported counts."""
    s_path = np.asarray(s_path, dtype=np.int64)
    d_path = np.asarray(d_path, dtype=np.int64)
    if not is_feasible(s_path, d_path, cfg.K):
        raise PreconditionError("regime path is not feasible")
    T = s_path.shape[0]
    dyn = EpidemicDynamics(theta, cfg, sched)
    dyn.beta_by_regime = dyn.beta_by_regime * beta_scale
    x = AugmentedState.before_start(1, cfg)
    ode = np.empty((T, len(COMPARTMENTS)))
    incidence = np.empty(T)
    cases_implied = np.empty(T)
    deaths_implied = np.empty(T)
    rt = np.empty(T)
    for t in range(T):
        x = dyn.propagate(x, s_path[t:t + 1], d_path[t:t + 1], t)
        ode[t] = x.ode[0]
        incidence[t] = x.incidence[0]
        cases_implied[t] = dyn.reported_case_mean(x, t)[0]
        deaths_implied[t] = dyn.deaths(x, t)[0]
        rt[t] = dyn.reproduction_number(x)[0]

    cases_reported = sample_nb(cases_implied, theta.phi_cases, rng)
    deaths_reported = sample_nb(deaths_implied, theta.phi_deaths, rng)
    n_regimes = len(np.unique(s_path[s_path < cfg.K]))
    logger.info(f"Simulated T={T} days: {n_regimes} recurring regimes visited, "
                f"{int(cases_reported.sum())} cases, {int(deaths_reported.sum())} deaths")
    return SyntheticDataset(
        theta=theta, cfg=cfg, sched=sched, seed=seed, s_path=s_path, d_path=d_path, ode=ode,
        incidence=incidence, cases_implied=cases_implied, deaths_implied=deaths_implied,
        cases_reported=cases_reported, deaths_reported=deaths_reported, rt=rt,
    )


def default_synthetic_schedules(T: int, f_delay) -> Schedules:
    """No vaccination, full reporting and a constant IFR of 0.005."""
    return Schedules.constant(T, f_delay, nu=0.0, ur=1.0, ifr=0.005)
