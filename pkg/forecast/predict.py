"""
Predictive simulation of reported cases and deaths.

Every posterior draw carries the augmented state at the last observed day.
From there the regime process is sampled forward, the ODE is solved along
it and reported counts are drawn from the observation model. Weekly
forecasts sum seven consecutive daily draws before any quantile is taken.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import pandas as pd

from core.exceptions import PreconditionError
from core.random import spawn
from dynamics.augmented import AugmentedState, EpidemicDynamics, rollout
from filters.resampling import multinomial_resample, normalise
from observation.likelihood import sample_nb
from params.transforms import ParameterLayout

logger = logging.getLogger(__name__)

QUANTILES = (0.025, 0.5, 0.975)
QUANTILE_COLUMNS = ("q2.5", "q50", "q97.5")
CHANNELS = ("cases", "deaths")
AGGREGATIONS = ("daily", "weekly")
WEEK = 7


@dataclass
class PosteriorDraw:
    """Parameters plus the one-particle augmented state and regime pair at the last observed day."""

    theta: object
    state: AugmentedState
    s: np.ndarray
    d: np.ndarray


def draws_from_chains(output, cfg, sched, n_draws: int, rng) -> List[PosteriorDraw]:
    """
    Retained Particle Gibbs draws, each rolled along its regime path to the
    end of the data. At most ``n_draws`` draws are taken without replacement.
    """
    kept = output.retained()
    if len(kept) == 0:
        raise PreconditionError("no retained draws to forecast from")
    layout = ParameterLayout(output.K, output.n_destinations)
    picks = np.arange(len(kept))
    if n_draws < len(kept):
        picks = np.sort(rng.choice(len(kept), size=n_draws, replace=False))
    draws = []
    for i in picks:
        theta = layout.from_unconstrained(kept.unconstrained[i])
        s_path = kept.regime_paths[i].astype(np.int64)
        d_path = kept.duration_paths[i].astype(np.int64)
        final = rollout(theta, cfg, sched, s_path, d_path)["final"]
        draws.append(PosteriorDraw(theta, final, s_path[-1:], d_path[-1:]))
    return draws


def draws_from_cloud(cloud, n_draws: int, rng) -> List[PosteriorDraw]:
    """Parameter particles drawn by outer weight, each with one inner particle drawn by inner weight."""
    outer = multinomial_resample(cloud.weights, rng, n_draws)
    draws = []
    for n in outer:
        pf = cloud.particles[n].filter
        k = multinomial_resample(normalise(pf.log_weights), rng, 1)
        draws.append(PosteriorDraw(cloud.particles[n].theta, pf.model.take(pf.state, k),
                                   pf.s[pf.t, k].copy(), pf.d[pf.t, k].copy()))
    return draws


def aggregate(daily: np.ndarray, aggregation: str) -> np.ndarray:
    """Draws x days -> draws x periods; a trailing partial week is dropped."""
    if aggregation not in AGGREGATIONS:
        raise PreconditionError(f"unknown aggregation {aggregation!r}")
    if aggregation == "daily":
        return daily
    weeks = daily.shape[1] // WEEK
    return daily[:, : weeks * WEEK].reshape(daily.shape[0], weeks, WEEK).sum(axis=2)


@dataclass
class ForecastResult:
    """
    Predictive draws per channel (draws x periods) starting at day ``t_start``.

    A period is one day or one week depending on ``aggregation``.
    """

    t_start: int
    horizon: int
    aggregation: str
    cases: np.ndarray
    deaths: np.ndarray
    case_means: np.ndarray = field(repr=False, default=None)
    death_means: np.ndarray = field(repr=False, default=None)
    dates: Optional[pd.DatetimeIndex] = None

    @property
    def periods(self) -> int:
        return self.cases.shape[1]

    @property
    def period_length(self) -> int:
        return WEEK if self.aggregation == "weekly" else 1

    def quantiles(self, channel: str) -> np.ndarray:
        """len(QUANTILES) x periods."""
        values = getattr(self, channel)
        if values.shape[1] == 0:
            return np.empty((len(QUANTILES), 0))
        return np.quantile(values, QUANTILES, axis=0)

    def summary(self) -> pd.DataFrame:
        """One row per period and channel: t, horizon, channel, q2.5, q50, q97.5, mean."""
        rows = []
        for channel in CHANNELS:
            q = self.quantiles(channel)
            values = getattr(self, channel)
            for p in range(self.periods):
                row = {
                    "t": self.t_start + p * self.period_length,
                    "horizon": (p + 1) * self.period_length,
                    "channel": channel,
                }
                row.update({name: float(q[j, p]) for j, name in enumerate(QUANTILE_COLUMNS)})
                row["mean"] = float(values[:, p].mean())
                rows.append(row)
        return pd.DataFrame(rows, columns=["t", "horizon", "channel", *QUANTILE_COLUMNS, "mean"])


def _simulate_forward(draw: PosteriorDraw, horizon: int, t_start: int, cfg, sched, rng):
    dyn = EpidemicDynamics(draw.theta, cfg, sched)
    state, s, d = draw.state, draw.s, draw.d
    out = np.empty((4, horizon))
    for h in range(horizon):
        u = t_start + h
        s, d = dyn.process.step(s, d, rng) if u else dyn.process.initial(1, rng)
        state = dyn.propagate(state, s, d, u)
        out[2, h] = dyn.reported_case_mean(state, u)[0]
        out[3, h] = dyn.deaths(state, u)[0]
    out[0] = sample_nb(out[2], draw.theta.phi_cases, rng)
    out[1] = sample_nb(out[3], draw.theta.phi_deaths, rng)
    return out


def predict(draws: List[PosteriorDraw], horizon: int, aggregation: str, cfg, sched, rng, t_start: int,
            threads: int = 1, dates: Optional[pd.DatetimeIndex] = None) -> ForecastResult:
    """
    Forecast ``horizon`` days past the last observed day ``t_start - 1``.

    Each draw gets its own child stream of ``rng``, so the result does not
    depend on ``threads``. Schedules are held at their last value beyond
    their end.
    """
    if horizon < 0:
        raise PreconditionError("horizon must be non-negative")
    if aggregation not in AGGREGATIONS:
        raise PreconditionError(f"unknown aggregation {aggregation!r}")
    n = len(draws)
    if n == 0:
        raise PreconditionError("no posterior draws to forecast from")
    if horizon == 0:
        empty = np.zeros((n, 0))
        return ForecastResult(t_start, 0, aggregation, empty, empty, empty, empty)
    if sched.length < t_start + horizon:
        logger.info(f"Schedules end at day {sched.length}; holding their last values to day {t_start + horizon - 1}")

    streams = spawn(rng, n)

    def run(i):
        return _simulate_forward(draws[i], horizon, t_start, cfg, sched, streams[i])

    if threads > 1 and n > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            paths = list(pool.map(run, range(n)))
    else:
        paths = [run(i) for i in range(n)]
    paths = np.stack(paths)
    if aggregation == "weekly" and horizon % WEEK:
        logger.warning(f"Horizon {horizon} is not a whole number of weeks; the last {horizon % WEEK} days are dropped")
    logger.info(f"Forecast {horizon} days from t={t_start} with {n} draws ({aggregation})")
    return ForecastResult(
        t_start=t_start,
        horizon=horizon,
        aggregation=aggregation,
        cases=aggregate(paths[:, 0], aggregation),
        deaths=aggregate(paths[:, 1], aggregation),
        case_means=paths[:, 2],
        death_means=paths[:, 3],
        dates=dates,
    )
