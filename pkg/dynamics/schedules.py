"""
Externally supplied time series: vaccinations, IFR, under-reporting and the
infection-to-death delay distribution.

All series are indexed by day (0-based, aligned with the observations) and
are held at their last value beyond their end.
"""
import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd

from core.exceptions import ConstraintError, ShapeError

logger = logging.getLogger(__name__)

DELAY_SUM_TOLERANCE = 1e-9


def _hold(series: np.ndarray, t):
    t = np.clip(np.asarray(t), 0, series.shape[0] - 1)
    return series[t]


@dataclass(frozen=True)
class Schedules:
    """
    Args:
        nu: daily first vaccinations.
        ifr: daily infection-fatality ratio (a step function sampled per day).
        ur: daily under-reporting score.
        f_delay: delay pmf indexed by lag; ``f_delay[0]`` is lag 0. A vector
            of length ``window - 1`` is read as lags 1..window-1.
    """

    nu: np.ndarray
    ifr: np.ndarray
    ur: np.ndarray
    f_delay: np.ndarray

    def __post_init__(self):
        for name in ("nu", "ifr", "ur", "f_delay"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        if np.any(self.nu < 0):
            raise ConstraintError("nu", "vaccinations must be non-negative")
        if not np.all((self.ifr > 0) & (self.ifr < 1)):
            raise ConstraintError("ifr", "values must lie in (0, 1)")
        if not np.all((self.ur > 0) & (self.ur <= 1)):
            raise ConstraintError("ur", "values must lie in (0, 1]")
        if np.any(self.f_delay < 0) or self.f_delay.sum() > 1 + DELAY_SUM_TOLERANCE:
            raise ConstraintError("f_delay", "entries must be non-negative with sum at most 1")

    def delay_for_window(self, window: int) -> np.ndarray:
        """Delay pmf over lags 0..window-1 (lag 0 carries no mass)."""
        f = self.f_delay
        if f.shape[0] == window - 1:
            f = np.concatenate([[0.0], f])
        if f.shape[0] != window:
            raise ShapeError(f"f_delay has {self.f_delay.shape[0]} entries; window is {window}")
        if f[0] != 0.0:
            raise ConstraintError("f_delay", f"lag 0 must carry no mass (got {f[0]:.6g})")
        return f

    def nu_lagged(self, t, U: int):
        t = np.asarray(t)
        return np.where(t - U >= 0, _hold(self.nu, t - U), 0.0)

    def ifr_at(self, t):
        return _hold(self.ifr, t)

    def ur_at(self, t):
        return _hold(self.ur, t)

    @property
    def length(self) -> int:
        return int(max(self.nu.shape[0], self.ifr.shape[0], self.ur.shape[0]))

    @classmethod
    def constant(cls, T: int, f_delay, nu=0.0, ur=1.0, ifr=0.005) -> "Schedules":
        return cls(
            nu=np.full(T, float(nu)),
            ifr=np.full(T, float(ifr)),
            ur=np.full(T, float(ur)),
            f_delay=f_delay,
        )

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "t": np.arange(self.length),
            "nu": _hold(self.nu, np.arange(self.length)),
            "ifr": self.ifr_at(np.arange(self.length)),
            "ur": self.ur_at(np.arange(self.length)),
        })
