"""
Bootstrap particle filter and conditional particle filter over any model
implementing ``StateSpaceModel``.

Particles are held as arrays and propagated together; the latent regime pair
is tracked by the filter, the model-specific state (ODE compartments,
incidence window, ...) by the model. Full flat trajectories of the latent
pair are kept (T x M) and re-indexed at every resampling.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional, Protocol

import numpy as np
from scipy.special import logsumexp

from core.exceptions import DegeneracyError, PreconditionError
from .resampling import RESAMPLERS, multinomial_resample, normalise

logger = logging.getLogger(__name__)


class StateSpaceModel(Protocol):
    n_steps: int

    def initial_latent(self, n, rng): ...

    def step_latent(self, s, d, rng): ...

    def initial_state(self, n): ...

    def advance(self, state, s, d, t): ...

    def log_observation(self, state, t): ...

    def log_latent_initial(self, s, d): ...

    def log_latent_transition(self, s_new, d_new, s_prev, d_prev): ...

    def take(self, state, idx): ...


@dataclass(frozen=True)
class FilterConfig:
    """
    Args:
        M: particle count.
        resample_threshold: resample when ESS < threshold * M.
        resampler: ``systematic`` or ``multinomial``.
        ancestor_sampling: CPF ancestor sampling (cost grows with T^2).
    """

    M: int = 128
    resample_threshold: float = 0.5
    resampler: str = "systematic"
    ancestor_sampling: bool = False

    def __post_init__(self):
        if self.M < 1:
            raise PreconditionError("particle count must be at least 1")
        if not 0.0 < self.resample_threshold <= 1.0:
            raise PreconditionError("resample_threshold must lie in (0, 1]")
        if self.resampler not in RESAMPLERS:
            raise PreconditionError(f"unknown resampler {self.resampler!r}")

    @classmethod
    def from_section(cls, section: dict, **overrides) -> "FilterConfig":
        values = {
            "M": section.get("particles", cls.M),
            "resample_threshold": section.get("resample_threshold", cls.resample_threshold),
            "resampler": section.get("resampler", cls.resampler),
            "ancestor_sampling": section.get("ancestor_sampling", cls.ancestor_sampling),
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    def doubled(self) -> "FilterConfig":
        return FilterConfig(2 * self.M, self.resample_threshold, self.resampler, self.ancestor_sampling)


@dataclass
class ParticleCloud:
    """
    Filter output.

    ``s``/``d`` are the flat latent trajectories (T x M) after the final
    re-indexing; ``incremental`` holds log p(e_t | e_{1:t-1}) estimates.
    """

    s: np.ndarray
    d: np.ndarray
    log_weights: np.ndarray
    state: object
    incremental: np.ndarray
    ess: np.ndarray
    resampled: np.ndarray
    t: int = -1
    log_likelihood: float = 0.0
    extras: dict = field(default_factory=dict)

    @property
    def M(self) -> int:
        return self.log_weights.shape[0]

    @property
    def weights(self) -> np.ndarray:
        return normalise(self.log_weights)

    def trajectory(self, k):
        return self.s[: self.t + 1, k].copy(), self.d[: self.t + 1, k].copy()

    def sample_trajectory(self, rng):
        k = int(multinomial_resample(self.weights, rng, 1)[0])
        return self.trajectory(k)


class ParticleFilter:
    """
    Runs the bootstrap filter step by step so that callers (SMC^2) can
    interleave their own work between steps.

    Args:
        model: StateSpaceModel.
        fcfg: FilterConfig.
        rng: numpy Generator.
        reference: optional (s_ref, d_ref) latent path pinned to slot 0. It may
            be shorter than the data; later days are filtered unconditionally.
    """

    def __init__(self, model: StateSpaceModel, fcfg: FilterConfig, rng, reference=None):
        self.model = model
        self.fcfg = fcfg
        self.rng = rng
        self.M = fcfg.M
        T = model.n_steps
        self.s = np.zeros((T, self.M), dtype=np.int64)
        self.d = np.zeros((T, self.M), dtype=np.int64)
        self.incremental = np.zeros(T)
        self.ess_trace = np.full(T, np.nan)
        self.resampled = np.zeros(T, dtype=bool)
        self.log_weights = np.zeros(self.M)
        self.state = None
        self.t = -1
        self.log_likelihood = 0.0
        self.reference = None
        if reference is not None:
            self.reference = (np.asarray(reference[0], dtype=np.int64), np.asarray(reference[1], dtype=np.int64))
            self._check_reference()

    def _check_reference(self):
        s_ref, d_ref = self.reference
        if s_ref.shape[0] != d_ref.shape[0] or not 1 <= s_ref.shape[0] <= self.model.n_steps:
            raise PreconditionError(f"reference has length {s_ref.shape[0]}, at most {self.model.n_steps} allowed")
        first = self.model.log_latent_initial(s_ref[:1], d_ref[:1])
        moves = self.model.log_latent_transition(s_ref[1:], d_ref[1:], s_ref[:-1], d_ref[:-1])
        if not np.isfinite(first[0]) or not np.all(np.isfinite(moves)):
            bad = np.flatnonzero(~np.isfinite(moves))
            where = 0 if not np.isfinite(first[0]) else int(bad[0]) + 1
            logger.error(f"Infeasible reference trajectory at t={where}")
            raise PreconditionError(f"reference trajectory is infeasible at t={where}")

    @property
    def pinned_until(self) -> int:
        return 0 if self.reference is None else self.reference[0].shape[0]

    def pinned(self, t) -> bool:
        return t < self.pinned_until

    def _resample(self, W, t):
        if self.pinned(t):
            idx = np.empty(self.M, dtype=np.int64)
            idx[0] = 0
            idx[1:] = multinomial_resample(W, self.rng, self.M - 1)
            return idx
        return RESAMPLERS[self.fcfg.resampler](W, self.rng)

    def _ancestor_for_reference(self, log_W, t):
        """Draw slot 0's ancestor given the reference continuation from t on."""
        s_ref, d_ref = self.reference
        log_w = log_W + self.model.log_latent_transition(
            np.full(self.M, s_ref[t]), np.full(self.M, d_ref[t]), self.s[t - 1], self.d[t - 1]
        )
        candidates = np.flatnonzero(np.isfinite(log_w))
        if candidates.size == 0:
            return 0
        state = self.model.take(self.state, candidates)
        future = np.zeros(candidates.size)
        # The ODE path depends on the whole latent history, so each candidate
        # is rolled forward along the rest of the reference.
        for u in range(t, self.pinned_until):
            n = candidates.size
            state = self.model.advance(state, np.full(n, s_ref[u]), np.full(n, d_ref[u]), u)
            future += self.model.log_observation(state, u)
        scores = log_w[candidates] + future
        if not np.any(np.isfinite(scores)):
            return 0
        pick = multinomial_resample(normalise(scores), self.rng, 1)[0]
        return int(candidates[pick])

    def step(self):
        """Advance every particle to the next time index and weight it."""
        t = self.t + 1
        if t >= self.model.n_steps:
            raise PreconditionError("filter already consumed every observation")
        M = self.M
        if t == 0:
            s, d = self.model.initial_latent(M, self.rng)
            self.state = self.model.initial_state(M)
            log_W = np.full(M, -np.log(M))
        else:
            log_W = self.log_weights - logsumexp(self.log_weights)
            W = np.exp(log_W)
            current_ess = 1.0 / np.sum(W ** 2)
            # ancestor sampling redraws slot 0's history at every step
            ancestor_sampling = self.pinned(t) and self.fcfg.ancestor_sampling and M > 1
            if ancestor_sampling or current_ess < self.fcfg.resample_threshold * M:
                idx = self._resample(W, t)
                if ancestor_sampling:
                    idx[0] = self._ancestor_for_reference(log_W, t)
                self.s[:t] = self.s[:t, idx]
                self.d[:t] = self.d[:t, idx]
                self.state = self.model.take(self.state, idx)
                log_W = np.full(M, -np.log(M))
                self.resampled[t] = True
            s, d = self.model.step_latent(self.s[t - 1], self.d[t - 1], self.rng)
        if self.pinned(t):
            s = np.asarray(s).copy()
            d = np.asarray(d).copy()
            s[0] = self.reference[0][t]
            d[0] = self.reference[1][t]
        self.s[t] = s
        self.d[t] = d
        self.state = self.model.advance(self.state, s, d, t)
        log_g = self.model.log_observation(self.state, t)
        increment = logsumexp(log_W + log_g)
        if not np.isfinite(increment):
            logger.error(f"All {M} particles have zero weight at t={t}")
            raise DegeneracyError(f"all particles have zero weight at t={t}", t=t)
        self.log_weights = log_W + log_g
        self.incremental[t] = increment
        self.log_likelihood += increment
        self.ess_trace[t] = 1.0 / np.sum(normalise(self.log_weights) ** 2)
        self.t = t
        return increment

    def run(self, until: Optional[int] = None) -> "ParticleCloud":
        stop = self.model.n_steps if until is None else until
        while self.t + 1 < stop:
            self.step()
        return self.cloud()

    def cloud(self) -> ParticleCloud:
        return ParticleCloud(
            s=self.s, d=self.d, log_weights=self.log_weights, state=self.state,
            incremental=self.incremental, ess=self.ess_trace, resampled=self.resampled,
            t=self.t, log_likelihood=self.log_likelihood,
        )

    def copy_from(self, other: "ParticleFilter"):
        """Become a copy of ``other``'s particle system."""
        self.s = other.s.copy()
        self.d = other.d.copy()
        self.incremental = other.incremental.copy()
        self.ess_trace = other.ess_trace.copy()
        self.resampled = other.resampled.copy()
        self.log_weights = other.log_weights.copy()
        self.state = other.model.take(other.state, np.arange(other.M)) if other.state is not None else None
        self.t = other.t
        self.log_likelihood = other.log_likelihood
        return self


def pf_run(model: StateSpaceModel, fcfg: FilterConfig, rng):
    """Bootstrap filter over every step; returns ``(cloud, log_likelihood)``."""
    cloud = ParticleFilter(model, fcfg, rng).run()
    logger.debug(f"Bootstrap filter: M={fcfg.M}, T={model.n_steps}, log_lik={cloud.log_likelihood:.4f}")
    return cloud, cloud.log_likelihood


def conditional_pf(model: StateSpaceModel, reference, fcfg: FilterConfig, rng):
    """
    One conditional particle filter sweep.

    Slot 0 follows ``reference`` (a pair of T-long regime and duration
    arrays); the returned path is drawn in proportion to the terminal
    weights. Returns ``(s_path, d_path, cloud)``.
    """
    if len(reference[0]) != model.n_steps:
        raise PreconditionError(f"reference has length {len(reference[0])}, expected {model.n_steps}")
    pf = ParticleFilter(model, fcfg, rng, reference=reference)
    cloud = pf.run()
    if fcfg.M == 1:
        return pf.reference[0].copy(), pf.reference[1].copy(), cloud
    s_path, d_path = cloud.sample_trajectory(rng)
    return s_path, d_path, cloud
