"""
Infection-to-death delay distribution.

The default is a Gamma distribution with mean 17.8 days and coefficient of
variation 0.45, discretised to whole days and truncated to the convolution
window. A user-supplied CSV (columns ``lag,value``) replaces it.
"""
import logging
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import stats

from core.exceptions import DataValidationError, PreconditionError

logger = logging.getLogger(__name__)

DEFAULT_DELAY_MEAN = 17.8
DEFAULT_DELAY_CV = 0.45


def discretised_gamma(lags, mean: float = DEFAULT_DELAY_MEAN, cv: float = DEFAULT_DELAY_CV) -> np.ndarray:
    """P(lag = l) as the Gamma mass on [l - 1/2, l + 1/2); not renormalised."""
    if mean <= 0 or cv <= 0:
        raise PreconditionError("delay mean and coefficient of variation must be positive")
    shape = 1.0 / cv ** 2
    dist = stats.gamma(shape, scale=mean / shape)
    lags = np.asarray(lags, dtype=float)
    return dist.cdf(lags + 0.5) - dist.cdf(np.maximum(lags - 0.5, 0.0))


def default_delay_distribution(cfg, mean: float = DEFAULT_DELAY_MEAN, cv: float = DEFAULT_DELAY_CV) -> np.ndarray:
    """Renormalised pmf over lags 1 .. window-1 (length ``window - 1``)."""
    if cfg.window < 2:
        raise PreconditionError("the delay window must be at least 2 days")
    f = discretised_gamma(np.arange(1, cfg.window), mean, cv)
    logger.debug(f"Default delay: Gamma(mean={mean}, cv={cv}) keeps {f.sum():.4f} of its mass in {cfg.window - 1} lags")
    return f / f.sum()


def load_delay(path) -> np.ndarray:
    """Delay pmf from a ``lag,value`` CSV with lags 1, 2, ... in order."""
    path = Path(path)
    if not path.exists():
        raise DataValidationError("delay file not found", path=str(path))
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    if list(frame.columns) != ["lag", "value"]:
        raise DataValidationError(f"expected header 'lag,value', found {','.join(frame.columns)}", path=str(path))
    values = np.empty(len(frame))
    for i, (lag, value) in enumerate(zip(frame["lag"], frame["value"])):
        row = i + 2
        try:
            lag_number = int(lag)
        except ValueError:
            raise DataValidationError(f"lag {lag!r} is not an integer", path=str(path), row=row, column="lag")
        if lag_number != i + 1:
            raise DataValidationError(f"lags must run 1, 2, ... (found {lag_number})", path=str(path), row=row,
                                      column="lag")
        try:
            values[i] = float(value)
        except ValueError:
            raise DataValidationError(f"value {value!r} is not a number", path=str(path), row=row, column="value")
        if not values[i] >= 0:
            raise DataValidationError("delay probabilities must be non-negative", path=str(path), row=row,
                                      column="value")
    if values.size == 0 or values.sum() > 1 + 1e-9:
        raise DataValidationError("delay probabilities must be non-empty with sum at most 1", path=str(path))
    return values


def write_delay(path, f_delay) -> Path:
    """Inverse of ``load_delay``; values are written with full precision."""
    path = Path(path)
    f_delay = np.asarray(f_delay, dtype=float)
    frame = pd.DataFrame({"lag": np.arange(1, f_delay.shape[0] + 1), "value": [repr(float(v)) for v in f_delay]})
    frame.to_csv(path, index=False, encoding="utf-8")
    return path
