import numpy as np
from scipy.special import logsumexp


def normalise(log_weights) -> np.ndarray:
    """Normalised weights from log-weights (all ``-inf`` gives NaN)."""
    log_weights = np.asarray(log_weights, dtype=float)
    return np.exp(log_weights - logsumexp(log_weights))


def ess(log_weights) -> float:
    """Effective sample size 1 / sum(W^2)."""
    w = normalise(log_weights)
    return float(1.0 / np.sum(w ** 2))


def systematic_resample(weights, rng, n=None) -> np.ndarray:
    """Ancestor indices with one uniform shared across ``n`` evenly spaced points."""
    weights = np.asarray(weights, dtype=float)
    n = weights.shape[0] if n is None else n
    positions = (rng.random() + np.arange(n)) / n
    cumulative = np.cumsum(weights)
    cumulative[-1] = 1.0
    return np.searchsorted(cumulative, positions, side="right").astype(np.int64)


def multinomial_resample(weights, rng, n=None) -> np.ndarray:
    weights = np.asarray(weights, dtype=float)
    n = weights.shape[0] if n is None else n
    cumulative = np.cumsum(weights)
    cumulative[-1] = 1.0
    return np.searchsorted(cumulative, rng.random(n), side="right").astype(np.int64)


RESAMPLERS = {
    "systematic": systematic_resample,
    "multinomial": multinomial_resample,
}
