"""
SMC^2: a population of parameter particles, each carrying its own bootstrap
particle filter over the regime path.

After ``t0`` training days every step advances the inner filters by one day,
reweights the parameter particles by their likelihood increments and records
the one-step predictive likelihood. When the outer ESS falls below
``ess_threshold * N`` the population is resampled and every particle is moved
by Particle Gibbs sweeps on the data seen so far. Its inner filter is then
rebuilt by a conditional filter that keeps the moved path in one slot.
"""
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable, List, Optional

import numpy as np
import pandas as pd
from scipy.special import logsumexp

from core.exceptions import DegeneracyError, PreconditionError
from core.random import spawn
from filters.particle_filter import FilterConfig, ParticleFilter
from filters.resampling import RESAMPLERS, multinomial_resample, normalise
from .targets import WEEK, EpidemicTarget
from .tuning import TUNING_STEPS, shared_hmc_tuning

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Smc2Config:
    """
    Args:
        N: parameter particles.
        M: particles in each inner filter.
        t0: training days; ``None`` lets the target choose.
        ess_threshold: resample when the outer ESS drops below ``ess_threshold * N``.
        rejuvenation_sweeps: Particle Gibbs sweeps per resampling event.
        checkpoint_every: write a checkpoint every this many steps (0 disables).
        resampler: outer resampling scheme.
        weekly: also record the weekly predictive likelihood.
        tuning_steps: dual-averaging steps for the shared step size.
    """

    N: int = 64
    M: int = 128
    t0: Optional[int] = None
    ess_threshold: float = 0.5
    rejuvenation_sweeps: int = 1
    checkpoint_every: int = 0
    resampler: str = "multinomial"
    weekly: bool = True
    tuning_steps: int = TUNING_STEPS

    def __post_init__(self):
        if self.N < 2 or self.M < 2:
            raise PreconditionError(f"SMC^2 needs N >= 2 and M >= 2 (got N={self.N}, M={self.M})")
        if self.t0 is not None and self.t0 < 1:
            raise PreconditionError("t0 must be at least 1")
        if not 0.0 < self.ess_threshold <= 1.0:
            raise PreconditionError("ess_threshold must lie in (0, 1]")
        if self.rejuvenation_sweeps < 1:
            raise PreconditionError("at least one rejuvenation sweep is needed")
        if self.resampler not in RESAMPLERS:
            raise PreconditionError(f"unknown resampler {self.resampler!r}")

    @classmethod
    def from_section(cls, section: dict, **overrides) -> "Smc2Config":
        keys = {"outer": "N", "inner": "M"}
        names = {f.name for f in fields(cls)}
        values = {}
        for key, value in section.items():
            name = keys.get(key, key)
            if name in names:
                values[name] = value
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


@dataclass
class ThetaParticle:
    """One parameter value with its inner filter and a sampled regime path."""

    theta: object
    filter: Optional[ParticleFilter]
    rng: np.random.Generator
    s_path: Optional[np.ndarray] = None
    d_path: Optional[np.ndarray] = None
    alive: bool = True

    def sample_path(self):
        self.s_path, self.d_path = self.filter.cloud().sample_trajectory(self.rng)
        return self.s_path, self.d_path

    def pick_inner(self):
        """One inner particle drawn by weight: ``(state, s, d)`` at the filter's last day."""
        pf = self.filter
        k = multinomial_resample(normalise(pf.log_weights), self.rng, 1)
        return pf.model.take(pf.state, k), pf.s[pf.t, k].copy(), pf.d[pf.t, k].copy()


@dataclass
class PredictiveRecord:
    t: int
    log_pl: float
    log_pl_predict: float
    cumulative: float
    ess: float
    resampled: bool


@dataclass
class WeeklyRecord:
    t: int
    log_pl: float
    cumulative: float


@dataclass
class ThetaCloud:
    particles: List[ThetaParticle]
    log_weights: np.ndarray
    records: List[PredictiveRecord] = field(default_factory=list)
    weekly: List[WeeklyRecord] = field(default_factory=list)
    cumulative_log_pl: float = 0.0
    cumulative_weekly: float = 0.0

    @property
    def N(self) -> int:
        return len(self.particles)

    @property
    def weights(self) -> np.ndarray:
        return normalise(self.log_weights)

    @property
    def ess(self) -> float:
        return float(1.0 / np.sum(self.weights ** 2))

    @property
    def alive(self) -> np.ndarray:
        return np.array([p.alive for p in self.particles])

    def thetas(self) -> list:
        return [p.theta for p in self.particles]

    def history(self) -> pd.DataFrame:
        columns = [f.name for f in fields(PredictiveRecord)]
        frame = pd.DataFrame([asdict(r) for r in self.records], columns=columns)
        frame["resampled"] = frame["resampled"].astype(int)
        return frame

    def weekly_history(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(r) for r in self.weekly], columns=[f.name for f in fields(WeeklyRecord)])


@dataclass
class Smc2Result:
    cloud: ThetaCloud
    t0: int
    seconds: float = 0.0

    @property
    def history(self) -> pd.DataFrame:
        return self.cloud.history()

    @property
    def weekly(self) -> pd.DataFrame:
        return self.cloud.weekly_history()

    @property
    def log_evidence(self) -> float:
        """log p(e_{t0:T-1} | e_{0:t0-1}) from the filter-based estimates."""
        return self.cloud.cumulative_log_pl


def _map(fn, items, threads: int):
    items = list(items)
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def _mixture(log_weights, values) -> float:
    values = np.asarray(values, dtype=float)
    keep = np.isfinite(log_weights)
    if not np.any(keep):
        return -np.inf
    return float(logsumexp(log_weights[keep] + values[keep]))


def _fresh_filter(target, theta, fcfg: FilterConfig, rng, until: int):
    """Inner bootstrap filter for ``theta`` run through ``until`` days; ``None`` when it collapses."""
    pf = ParticleFilter(target.state_space(theta), fcfg, rng)
    try:
        pf.run(until)
    except DegeneracyError as exc:
        logger.info(f"Inner filter collapsed at t={exc.t}")
        return None
    return pf


def predictive_log_density(particle: ThetaParticle, t: int) -> float:
    """
    log p_theta(e_t | e_{0:t-1}, s_{0:t}) for one inner path drawn by weight
    and moved one day ahead.
    """
    model = particle.filter.model
    state, s, d = particle.pick_inner()
    s, d = model.step_latent(s, d, particle.rng)
    state = model.advance(state, s, d, t)
    return float(model.log_observation(state, t)[0])


def predictive_likelihood_record(cloud: ThetaCloud, t: int, target=None, threads: int = 1,
                                 weekly: bool = False) -> PredictiveRecord:
    """
    Advance every inner filter from day ``t - 1`` to day ``t`` and record
    both predictive likelihood estimates.

    The filter-based estimate mixes the inner likelihood increments with
    the normalised outer weights; the prediction-step estimate mixes the
    observation density of one predicted path per particle. Outer weights
    and the cumulative log PL are updated in place.
    """
    log_W = cloud.log_weights - logsumexp(cloud.log_weights)
    live = [n for n, p in enumerate(cloud.particles) if p.alive]

    predict = np.full(cloud.N, -np.inf)
    predict[live] = _map(lambda n: predictive_log_density(cloud.particles[n], t), live, threads)
    log_pl_predict = _mixture(log_W, predict)

    if weekly and target is not None and target.n_steps >= t + WEEK:
        def week(n):
            p = cloud.particles[n]
            state, s, d = p.pick_inner()
            return target.weekly_log_density(p.filter.model, state, s, d, t, p.rng)

        dens = np.full(cloud.N, -np.inf)
        dens[live] = _map(week, live, threads)
        log_week = _mixture(log_W, dens)
        cloud.cumulative_weekly += log_week
        cloud.weekly.append(WeeklyRecord(t, log_week, cloud.cumulative_weekly))

    def step(n):
        p = cloud.particles[n]
        try:
            return p.filter.step()
        except DegeneracyError:
            p.alive = False
            return -np.inf

    increments = np.full(cloud.N, -np.inf)
    increments[live] = _map(step, live, threads)
    log_pl = _mixture(log_W, increments)
    if not np.isfinite(log_pl):
        logger.error(f"Every parameter particle has zero weight at t={t}")
        raise DegeneracyError(f"outer weights collapsed at t={t}", t=t)
    cloud.log_weights = log_W + increments
    cloud.cumulative_log_pl += log_pl
    record = PredictiveRecord(t, log_pl, log_pl_predict, cloud.cumulative_log_pl, cloud.ess, False)
    cloud.records.append(record)
    return record


def resample_and_rejuvenate(cloud: ThetaCloud, target, t: int, scfg: Smc2Config, fcfg: FilterConfig, rng,
                            threads: int = 1):
    """
    Resample the parameter particles and move each one with Particle Gibbs.

    Shared HMC settings come from the population before resampling. Every
    moved particle gets a conditional inner filter through day ``t`` and the
    outer weights are reset to uniform.
    """
    live = [n for n, p in enumerate(cloud.particles) if p.alive]
    _map(lambda n: cloud.particles[n].sample_path(), live, threads)
    tuning = None
    if target.needs_tuning:
        if len(live) < 2:
            raise DegeneracyError(f"fewer than two live parameter particles at t={t}", t=t)
        population = ThetaCloud([cloud.particles[n] for n in live], cloud.log_weights[live])
        tuning = shared_hmc_tuning(population, target, t, rng, n_steps=scfg.tuning_steps)

    ancestors = RESAMPLERS[scfg.resampler](cloud.weights, rng)
    logger.warning(f"Outer ESS {cloud.ess:.1f} < {scfg.ess_threshold * cloud.N:.1f} at t={t}; "
                   f"resampling {cloud.N} parameter particles ({len(np.unique(ancestors))} distinct)")
    origins = [cloud.particles[a] for a in ancestors]

    def move(n):
        origin = origins[n]
        rng_n = cloud.particles[n].rng
        theta, s_path, d_path = origin.theta, origin.s_path, origin.d_path
        for _ in range(scfg.rejuvenation_sweeps):
            theta, s_path, d_path = target.rejuvenate(theta, (s_path, d_path), t, tuning, fcfg, rng_n)
        pf = ParticleFilter(target.state_space(theta), fcfg, rng_n, reference=(s_path, d_path))
        pf.run(t + 1)
        particle = ThetaParticle(theta, pf, rng_n)
        particle.sample_path()
        return particle

    cloud.particles = _map(move, range(cloud.N), threads)
    cloud.log_weights = np.where(cloud.alive, 0.0, -np.inf)
    if cloud.records and cloud.records[-1].t == t:
        cloud.records[-1].resampled = True
    return ancestors


def initialise_cloud(target, scfg: Smc2Config, fcfg: FilterConfig, rng, t0: int, threads: int = 1) -> ThetaCloud:
    """Prior draws, each with an inner filter run over the ``t0`` training days."""
    streams = spawn(rng, scfg.N)

    def start(n):
        theta = target.sample_prior(streams[n])
        pf = _fresh_filter(target, theta, fcfg, streams[n], t0)
        return ThetaParticle(theta, pf, streams[n], alive=pf is not None)

    particles = _map(start, range(scfg.N), threads)
    log_weights = np.array([p.filter.log_likelihood if p.alive else -np.inf for p in particles])
    if not np.any(np.isfinite(log_weights)):
        raise DegeneracyError(f"no prior draw survives the {t0} training days", t=t0 - 1)
    logger.info(f"Initialised {scfg.N} parameter particles over {t0} training days "
                f"({int(np.sum(np.isfinite(log_weights)))} alive)")
    return ThetaCloud(particles, log_weights)


def smc2_run(target, scfg: Smc2Config, fcfg: FilterConfig, rng, threads: int = 1,
             checkpoint_path: Optional[str] = None, resume: bool = False,
             on_step: Optional[Callable[[PredictiveRecord], None]] = None) -> Smc2Result:
    """
    Run SMC^2 over every day after the training period.

    Args:
        target: ``EpidemicTarget``, ``GridTarget`` or an ``EpidemicProblem``.
        scfg: outer settings; ``scfg.M`` overrides ``fcfg.M`` for the inner filters.
        fcfg: inner filter settings.
        rng: root generator (outer resampling, shared tuning, per-particle streams).
        threads: worker threads for the per-particle work.
        checkpoint_path: where checkpoints go (``scfg.checkpoint_every`` > 0).
        resume: continue from ``checkpoint_path`` instead of starting afresh.
        on_step: called with each step's record, e.g. to stream a CSV.
    """
    from .checkpoint import load_checkpoint, save_checkpoint

    if not hasattr(target, "rejuvenate"):
        target = EpidemicTarget(target)
    fcfg = replace(fcfg, M=scfg.M)
    T = target.n_steps
    started = time.monotonic()

    if resume:
        if checkpoint_path is None:
            raise PreconditionError("resuming needs a checkpoint path")
        cloud, rng, last, t0 = load_checkpoint(checkpoint_path, target, fcfg)
        first = last + 1
        logger.info(f"Resuming SMC^2 from {checkpoint_path} after t={last}")
    else:
        t0 = scfg.t0 if scfg.t0 is not None else target.default_t0()
        if not 1 <= t0 < T:
            raise PreconditionError(f"need 1 <= t0 < T (t0={t0}, T={T})")
        cloud = initialise_cloud(target, scfg, fcfg, rng, t0, threads)
        first = t0

    weekly = scfg.weekly and getattr(target, "supports_weekly", False)
    logger.info(f"SMC^2: N={scfg.N}, M={scfg.M}, t0={t0}, T={T}, threads={threads}")
    for t in range(first, T):
        on_week = weekly and (t - t0) % WEEK == 0
        record = predictive_likelihood_record(cloud, t, target, threads, weekly=on_week)
        if cloud.ess < scfg.ess_threshold * scfg.N:
            resample_and_rejuvenate(cloud, target, t, scfg, fcfg, rng, threads)
        logger.debug(f"t={t}: log PL {record.log_pl:.4f}, ESS {record.ess:.1f}")
        if on_step is not None:
            on_step(record)
        if checkpoint_path and scfg.checkpoint_every and (t + 1 - t0) % scfg.checkpoint_every == 0:
            save_checkpoint(checkpoint_path, cloud, target, rng, t, t0)

    _map(lambda p: p.sample_path() if p.alive else None, cloud.particles, threads)
    elapsed = time.monotonic() - started
    n_resampled = sum(r.resampled for r in cloud.records)
    logger.info(f"SMC^2 finished in {elapsed:.1f}s: cumulative log PL {cloud.cumulative_log_pl:.4f}, "
                f"{n_resampled} resampling events")
    return Smc2Result(cloud, t0, elapsed)
