"""
Explicit-duration hidden semi-Markov regime process.

Regimes 0..K-1 recur and are ordered by transmission intensity; regime K is
the non-recurring initial regime. ``d`` counts remaining days: while
``d > 0`` the regime is kept and ``d`` decremented, at ``d == 0`` a new regime
is drawn from the transition structure and a fresh duration from its
Negative Binomial. Everything is vectorised over particles.
"""
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from params.theta import FixedConfig, ThetaParams

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LatentState:
    s: int
    d: int

    def __post_init__(self):
        if self.d < 0:
            raise ValueError("remaining duration must be non-negative")


def transition_matrix(theta: ThetaParams, cfg: FixedConfig) -> np.ndarray:
    """
    (K+1) x (K+1) successor distribution applied when a dwell expires.

    From recurring regime i < K-1 the chain moves up with probability p[i],
    otherwise down; regime 0 falls back onto itself. The top recurring regime
    always moves down. The initial regime K moves into ``cfg.destinations``
    with probabilities ``p_init`` and never onto itself.
    """
    K = theta.K
    P = np.zeros((K + 1, K + 1))
    if K == 1:
        P[0, 0] = 1.0
    else:
        for i in range(K - 1):
            P[i, i + 1] = theta.p[i]
            P[i, max(i - 1, 0)] += 1.0 - theta.p[i]
        P[K - 1, K - 2] = 1.0
    for j, dest in enumerate(cfg.destinations):
        P[K, dest] = theta.p_init[j]
    return P


def duration_logpmf(d, s, theta: ThetaParams, max_duration: Optional[int] = None):
    """
    log pmf of the remaining duration ``d`` for regime ``s``.

    NB(size r_s, success psi_s) on {0, 1, ...}; with ``max_duration`` the pmf
    is truncated to {0..max_duration} and renormalised.
    """
    d = np.asarray(d)
    s = np.asarray(s)
    r = theta.r[s]
    psi = theta.psi[s]
    out = stats.nbinom.logpmf(d, r, psi)
    if max_duration is not None:
        out = np.where(d > max_duration, -np.inf, out - stats.nbinom.logcdf(max_duration, r, psi))
    return out


def expected_duration(s, theta: ThetaParams) -> float:
    """Mean total days spent per visit (entry day plus remaining days)."""
    return float(1.0 + theta.r[s] * (1.0 - theta.psi[s]) / theta.psi[s])


def regime_beta_index(cfg: FixedConfig) -> np.ndarray:
    """Index into log_beta for each of the K+1 regimes."""
    return np.append(np.arange(cfg.K), cfg.beta_index_initial)


class HsmmProcess:
    """
    Regime process for one parameter value.

    Args:
        theta: parameters.
        cfg: fixed constants (destinations of the initial regime).
        max_duration: optional truncation of every duration pmf.
    """

    def __init__(self, theta: ThetaParams, cfg: FixedConfig, max_duration: Optional[int] = None):
        self.theta = theta
        self.cfg = cfg
        self.K = theta.K
        self.max_duration = max_duration
        self.P = transition_matrix(theta, cfg)
        with np.errstate(divide="ignore"):
            self.log_P = np.log(self.P)
        self._cum_P = np.cumsum(self.P, axis=1)
        for row in range(self.K + 1):
            last = np.flatnonzero(self.P[row])[-1]
            self._cum_P[row, last:] = 1.0
        self._truncated_pmfs = None
        if max_duration is not None:
            support = np.arange(max_duration + 1)
            self._truncated_pmfs = np.array([
                np.exp(duration_logpmf(support, np.full(support.shape, s), theta, max_duration))
                for s in range(self.K + 1)
            ])

    def sample_duration(self, s, rng) -> np.ndarray:
        s = np.atleast_1d(s)
        if self._truncated_pmfs is None:
            return rng.negative_binomial(self.theta.r[s], self.theta.psi[s])
        cdf = np.cumsum(self._truncated_pmfs[s], axis=1)
        u = rng.random(s.shape[0])[:, None]
        return np.minimum((u > cdf).sum(axis=1), self.max_duration)

    def sample_successor(self, s, rng) -> np.ndarray:
        s = np.atleast_1d(s)
        u = rng.random(s.shape[0])[:, None]
        nxt = (u > self._cum_P[s]).sum(axis=1)
        return np.minimum(nxt, self.K)

    def initial(self, n, rng):
        """``n`` initial states: regime K with a fresh duration."""
        s = np.full(n, self.K, dtype=np.int64)
        return s, self.sample_duration(s, rng).astype(np.int64)

    def step(self, s, d, rng):
        """One step for arrays of states; returns new ``(s, d)``."""
        s = np.asarray(s, dtype=np.int64)
        d = np.asarray(d, dtype=np.int64)
        new_s = s.copy()
        new_d = d - 1
        renew = d == 0
        if np.any(renew):
            nxt = self.sample_successor(s[renew], rng)
            new_s[renew] = nxt
            new_d[renew] = self.sample_duration(nxt, rng)
        return new_s, new_d

    def log_transition(self, s_new, d_new, s_prev, d_prev):
        """Exact one-step log kernel, vectorised; ``-inf`` for impossible moves."""
        s_new, d_new, s_prev, d_prev = (np.asarray(a, dtype=np.int64) for a in (s_new, d_new, s_prev, d_prev))
        s_new, d_new, s_prev, d_prev = np.broadcast_arrays(s_new, d_new, s_prev, d_prev)
        out = np.full(s_new.shape, -np.inf)
        keep = d_prev > 0
        consistent = keep & (s_new == s_prev) & (d_new == d_prev - 1)
        out[consistent] = 0.0
        renew = (d_prev == 0) & (d_new >= 0)
        if np.any(renew):
            out[renew] = self.log_P[s_prev[renew], s_new[renew]] + duration_logpmf(
                d_new[renew], s_new[renew], self.theta, self.max_duration
            )
        return out

    def log_initial(self, s, d):
        s = np.asarray(s, dtype=np.int64)
        d = np.asarray(d, dtype=np.int64)
        return np.where(
            s == self.K,
            duration_logpmf(d, np.full(d.shape, self.K), self.theta, self.max_duration),
            -np.inf,
        )

    def path_log_density(self, s_path, d_path) -> float:
        """log density of a full (s, d) path including the initial draw."""
        s_path = np.asarray(s_path, dtype=np.int64)
        d_path = np.asarray(d_path, dtype=np.int64)
        total = float(self.log_initial(s_path[0], d_path[0]))
        if s_path.shape[0] > 1:
            total += float(np.sum(self.log_transition(s_path[1:], d_path[1:], s_path[:-1], d_path[:-1])))
        return total


def step_latent(z_prev: LatentState, theta: ThetaParams, cfg: FixedConfig, rng) -> LatentState:
    s, d = HsmmProcess(theta, cfg).step([z_prev.s], [z_prev.d], rng)
    return LatentState(int(s[0]), int(d[0]))


def log_transition(z_new: LatentState, z_prev: LatentState, theta: ThetaParams, cfg: FixedConfig) -> float:
    return float(HsmmProcess(theta, cfg).log_transition(z_new.s, z_new.d, z_prev.s, z_prev.d))


def initial_latent(theta: ThetaParams, cfg: FixedConfig, rng) -> LatentState:
    s, d = HsmmProcess(theta, cfg).initial(1, rng)
    return LatentState(int(s[0]), int(d[0]))


def is_feasible(s_path, d_path, K: int) -> bool:
    """Decrement structure holds and the initial regime is never re-entered."""
    s_path = np.asarray(s_path)
    d_path = np.asarray(d_path)
    if np.any(d_path < 0) or np.any(s_path < 0) or np.any(s_path > K):
        return False
    if s_path.shape[0] and s_path[0] != K:
        return False
    keep = d_path[:-1] > 0
    if np.any(s_path[1:][keep] != s_path[:-1][keep]) or np.any(d_path[1:][keep] != d_path[:-1][keep] - 1):
        return False
    left = np.flatnonzero(s_path != K)
    return not (left.size and np.any(s_path[left[0]:] == K))


def regime_path_log_marginal(s_path, theta: ThetaParams, cfg: FixedConfig, d_max: int) -> float:
    """
    log P(s_1..s_T) with remaining durations summed out.

    Forward recursion over the pair chain with durations truncated at
    ``d_max`` (the truncated tail mass is dropped, not renormalised).
    """
    s_path = np.asarray(s_path, dtype=np.int64)
    K = theta.K
    support = np.arange(d_max + 1)
    log_h = np.array([duration_logpmf(support, np.full(support.shape, s), theta) for s in range(K + 1)])
    with np.errstate(divide="ignore"):
        log_P = np.log(transition_matrix(theta, cfg))
    alpha = log_h[K].copy() if s_path[0] == K else np.full(d_max + 1, -np.inf)
    for t in range(1, s_path.shape[0]):
        s_prev, s_now = s_path[t - 1], s_path[t]
        nxt = np.full(d_max + 1, -np.inf)
        if s_now == s_prev:
            nxt[:-1] = alpha[1:]
        renew = alpha[0] + log_P[s_prev, s_now]
        if np.isfinite(renew):
            nxt = np.logaddexp(nxt, renew + log_h[s_now])
        alpha = nxt
    return float(logsumexp(alpha))
