from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd

from core.exceptions import ShapeError
from .likelihood import Observation


@dataclass
class ObservationSeries:
    """
    Daily reported counts aligned on the model's day index.

    ``cases``/``deaths`` are float arrays with NaN for missing days;
    ``dates`` (optional) labels each day for reports and exports.
    """

    cases: np.ndarray
    deaths: np.ndarray
    dates: Optional[pd.DatetimeIndex] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.cases = np.asarray(self.cases, dtype=float)
        self.deaths = np.asarray(self.deaths, dtype=float)
        if self.cases.shape != self.deaths.shape or self.cases.ndim != 1:
            raise ShapeError(f"cases {self.cases.shape} and deaths {self.deaths.shape} must be equal-length vectors")
        if self.dates is not None and len(self.dates) != self.cases.shape[0]:
            raise ShapeError("dates must label every day")

    def __len__(self):
        return self.cases.shape[0]

    @classmethod
    def empty(cls, T: int) -> "ObservationSeries":
        return cls(np.full(T, np.nan), np.full(T, np.nan))

    @classmethod
    def from_observations(cls, observations) -> "ObservationSeries":
        observations = sorted(observations, key=lambda o: o.t)
        T = observations[-1].t + 1 if observations else 0
        series = cls.empty(T)
        for obs in observations:
            series.cases[obs.t] = obs.cases
            series.deaths[obs.t] = obs.deaths
        return series

    def at(self, t: int) -> Observation:
        c, d = self.cases[t], self.deaths[t]
        return Observation(t, None if np.isnan(c) else int(c), None if np.isnan(d) else int(d))

    def head(self, n: int) -> "ObservationSeries":
        dates = self.dates[:n] if self.dates is not None else None
        return ObservationSeries(self.cases[:n].copy(), self.deaths[:n].copy(), dates, dict(self.meta))

    def slice(self, start: int, stop: Optional[int] = None) -> "ObservationSeries":
        dates = self.dates[start:stop] if self.dates is not None else None
        return ObservationSeries(self.cases[start:stop].copy(), self.deaths[start:stop].copy(), dates, dict(self.meta))

    def first_day_with_deaths(self, threshold: float = 10, cumulative: bool = False) -> Optional[int]:
        """First day whose (cumulative) reported deaths reach ``threshold``; ``None`` if never."""
        deaths = np.nan_to_num(self.deaths, nan=0.0)
        if cumulative:
            deaths = np.cumsum(deaths)
        hits = np.flatnonzero(deaths >= threshold)
        return int(hits[0]) if hits.size else None

    def to_frame(self) -> pd.DataFrame:
        index = self.dates if self.dates is not None else pd.RangeIndex(len(self), name="t")
        return pd.DataFrame({"cases": self.cases, "deaths": self.deaths}, index=index)
