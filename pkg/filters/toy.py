"""
Small two-regime semi-Markov model with Gaussian observations.

The observation depends only on the current regime, so the exact marginal
likelihood is available from a forward recursion over the finite
(regime, remaining days) chain. Used to check the filters and SMC^2.
"""
from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.special import logsumexp


@dataclass
class ToyModel:
    """
    Args:
        y: observations (NaN for missing).
        means: observation mean per regime.
        sigma: observation standard deviation.
        stay: duration pmf parameter; durations are geometric truncated at ``max_duration``.
        max_duration: largest remaining duration.
    """

    y: np.ndarray
    means: tuple = (0.0, 2.0)
    sigma: float = 1.0
    stay: float = 0.3
    max_duration: int = 6

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.n_steps = self.y.shape[0]
        self.means = np.asarray(self.means, dtype=float)
        support = np.arange(self.max_duration + 1)
        log_h = stats.geom.logpmf(support + 1, self.stay)
        self.log_h = log_h - logsumexp(log_h)
        self._cdf = np.cumsum(np.exp(self.log_h))
        self._cdf[-1] = 1.0

    def _duration(self, n, rng):
        return np.searchsorted(self._cdf, rng.random(n), side="right").astype(np.int64)

    def initial_latent(self, n, rng):
        return rng.integers(0, 2, size=n).astype(np.int64), self._duration(n, rng)

    def step_latent(self, s, d, rng):
        s = np.asarray(s, dtype=np.int64).copy()
        d = np.asarray(d, dtype=np.int64) - 1
        renew = d < 0
        s[renew] = 1 - s[renew]
        d[renew] = self._duration(int(renew.sum()), rng)
        return s, d

    def initial_state(self, n):
        return np.zeros(n, dtype=np.int64)

    def advance(self, state, s, d, t):
        return np.asarray(s, dtype=np.int64).copy()

    def log_observation(self, state, t):
        if np.isnan(self.y[t]):
            return np.zeros(state.shape[0])
        return stats.norm.logpdf(self.y[t], self.means[state], self.sigma)

    def log_latent_initial(self, s, d):
        d = np.asarray(d, dtype=np.int64)
        out = np.full(d.shape, -np.inf)
        ok = (d >= 0) & (d <= self.max_duration)
        out[ok] = np.log(0.5) + self.log_h[d[ok]]
        return out

    def log_latent_transition(self, s_new, d_new, s_prev, d_prev):
        s_new, d_new, s_prev, d_prev = np.broadcast_arrays(*(np.asarray(a, dtype=np.int64)
                                                             for a in (s_new, d_new, s_prev, d_prev)))
        out = np.full(s_new.shape, -np.inf)
        keep = (d_prev > 0) & (s_new == s_prev) & (d_new == d_prev - 1)
        out[keep] = 0.0
        renew = (d_prev == 0) & (s_new == 1 - s_prev) & (d_new >= 0) & (d_new <= self.max_duration)
        out[renew] = self.log_h[d_new[renew]]
        return out

    def take(self, state, idx):
        return state[np.asarray(idx)]

    def head(self, n: int) -> "ToyModel":
        return ToyModel(self.y[:n].copy(), tuple(self.means), self.sigma, self.stay, self.max_duration)

    def exact_log_likelihood(self) -> float:
        D = self.max_duration + 1
        alpha = np.log(0.5) + np.vstack([self.log_h, self.log_h])
        total = 0.0
        for t in range(self.n_steps):
            if t > 0:
                nxt = np.full((2, D), -np.inf)
                nxt[:, :-1] = alpha[:, 1:]
                for s in (0, 1):
                    nxt[1 - s] = np.logaddexp(nxt[1 - s], alpha[s, 0] + self.log_h)
                alpha = nxt
            if not np.isnan(self.y[t]):
                alpha = alpha + stats.norm.logpdf(self.y[t], self.means, self.sigma)[:, None]
            norm = logsumexp(alpha)
            total += norm
            alpha = alpha - norm
        return float(total)

    @classmethod
    def simulate(cls, T, rng, **kwargs) -> "ToyModel":
        model = cls(np.zeros(T), **kwargs)
        s, d = model.initial_latent(1, rng)
        y = np.empty(T)
        for t in range(T):
            if t:
                s, d = model.step_latent(s, d, rng)
            y[t] = rng.normal(model.means[s[0]], model.sigma)
        model.y = y
        return model
