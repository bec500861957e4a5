"""
Particle Gibbs with NUTS parameter updates.

Each iteration first moves the parameters with one NUTS transition that
targets p(theta | z_{1:T}, e_{1:T}), then refreshes the regime path with a
conditional particle filter run under the new parameters.
"""
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from typing import List, Optional

import numpy as np
import pandas as pd

from core.exceptions import DegeneracyError, PreconditionError
from core.random import make_rng, spawn
from dynamics.augmented import rollout
from filters.particle_filter import FilterConfig, conditional_pf, pf_run
from params.priors import sample_prior
from params.theta import ThetaParams, parameter_names, reported_vector
from params.transforms import ParameterLayout
from .diagnostics import summarize
from .nuts import NutsTuning, find_reasonable_step_size, nuts_step
from .posterior import ConditionalPosterior

logger = logging.getLogger(__name__)

MAX_INIT_ATTEMPTS = 50


@dataclass(frozen=True)
class SamplerConfig:
    n_chains: int = 4
    n_iters: int = 1200
    n_burnin: int = 700
    max_tree_depth: int = 10
    target_accept: float = 0.8
    metric: str = "diag"
    gradient: str = "sensitivity"
    init: str = "prior"
    criteria_draws: int = 200

    def __post_init__(self):
        if self.n_iters <= self.n_burnin:
            raise PreconditionError(f"iters ({self.n_iters}) must exceed burn-in ({self.n_burnin})")
        if self.n_chains < 1:
            raise PreconditionError("at least one chain is needed")
        if self.metric not in ("diag", "dense"):
            raise PreconditionError(f"unknown metric {self.metric!r}")
        if self.init not in ("prior", "supplied"):
            raise PreconditionError(f"unknown init {self.init!r}")

    @classmethod
    def from_section(cls, section: dict, **overrides) -> "SamplerConfig":
        keys = {"chains": "n_chains", "iters": "n_iters", "burnin": "n_burnin"}
        names = {f.name for f in fields(cls)}
        values = {}
        for key, value in section.items():
            name = keys.get(key, key)
            if name in names:
                values[name] = value
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


@dataclass
class PGibbsState:
    """Current parameters and regime path; derived ODE quantities are computed on demand."""

    theta: ThetaParams
    s_path: np.ndarray
    d_path: np.ndarray
    _derived: Optional[dict] = field(default=None, repr=False)

    def derived(self, problem) -> dict:
        if self._derived is None:
            self._derived = rollout(self.theta, problem.cfg, problem.sched, self.s_path, self.d_path)
        return self._derived


@dataclass
class ChainOutput:
    """
    Per-iteration record of one or more chains.

    Every array has one row per iteration; ``chain`` labels the row's chain
    so that merged outputs stay separable.
    """

    names: List[str]
    chain: np.ndarray
    iteration: np.ndarray
    unconstrained: np.ndarray
    reported: np.ndarray
    regime_paths: np.ndarray
    duration_paths: np.ndarray
    log_posterior: np.ndarray
    accept_stat: np.ndarray
    tree_depth: np.ndarray
    n_leapfrog: np.ndarray
    divergent: np.ndarray
    step_size: np.ndarray
    n_burnin: int = 0
    K: int = 4
    n_destinations: int = 3
    meta: dict = field(default_factory=dict)

    ROW_FIELDS = ("chain", "iteration", "unconstrained", "reported", "regime_paths", "duration_paths",
                  "log_posterior", "accept_stat", "tree_depth", "n_leapfrog", "divergent", "step_size")

    def __post_init__(self):
        lengths = {name: len(getattr(self, name)) for name in self.ROW_FIELDS}
        if len(set(lengths.values())) > 1:
            raise PreconditionError(f"chain output fields disagree in length: {lengths}")

    def __len__(self):
        return len(self.chain)

    def select(self, mask) -> "ChainOutput":
        values = {name: getattr(self, name)[mask] for name in self.ROW_FIELDS}
        return ChainOutput(names=self.names, n_burnin=self.n_burnin, K=self.K, n_destinations=self.n_destinations,
                           meta=dict(self.meta), **values)

    def retained(self) -> "ChainOutput":
        return self.select(self.iteration >= self.n_burnin)

    @property
    def chain_ids(self) -> np.ndarray:
        return np.unique(self.chain)

    def by_chain(self, values) -> np.ndarray:
        """Stack per-row values into (chains x iterations x ...)."""
        return np.stack([values[self.chain == c] for c in self.chain_ids])

    def thetas(self) -> List[ThetaParams]:
        layout = ParameterLayout(self.K, self.n_destinations)
        return [layout.from_unconstrained(v) for v in self.unconstrained]

    def summary(self) -> pd.DataFrame:
        kept = self.retained()
        return summarize(kept.by_chain(kept.reported), self.names)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.reported, columns=self.names)
        frame.insert(0, "iteration", self.iteration)
        frame.insert(0, "chain", self.chain)
        frame["log_posterior"] = self.log_posterior
        frame["accept_stat"] = self.accept_stat
        frame["tree_depth"] = self.tree_depth
        frame["n_leapfrog"] = self.n_leapfrog
        frame["divergent"] = self.divergent.astype(int)
        frame["step_size"] = self.step_size
        return frame

    @classmethod
    def concatenate(cls, outputs) -> "ChainOutput":
        outputs = list(outputs)
        first = outputs[0]
        values = {name: np.concatenate([getattr(o, name) for o in outputs]) for name in cls.ROW_FIELDS}
        meta = {"chains": [o.meta for o in outputs]}
        return cls(names=first.names, n_burnin=first.n_burnin, K=first.K, n_destinations=first.n_destinations,
                   meta=meta, **values)

    def to_arrays(self) -> dict:
        out = {name: getattr(self, name) for name in self.ROW_FIELDS}
        out["names"] = np.array(self.names)
        out["shape"] = np.array([self.n_burnin, self.K, self.n_destinations])
        return out

    @classmethod
    def from_arrays(cls, arrays) -> "ChainOutput":
        n_burnin, K, n_dest = (int(v) for v in arrays["shape"])
        values = {name: np.asarray(arrays[name]) for name in cls.ROW_FIELDS}
        return cls(names=[str(n) for n in arrays["names"]], n_burnin=n_burnin, K=K, n_destinations=n_dest, **values)


def conditional_pf_with_retry(model, reference, fcfg: FilterConfig, rng):
    """CPF sweep; a degenerate sweep is retried once with twice the particles."""
    try:
        return conditional_pf(model, reference, fcfg, rng)
    except DegeneracyError as exc:
        logger.warning(f"CPF degenerate at t={exc.t} with M={fcfg.M}; retrying with M={2 * fcfg.M}")
        return conditional_pf(model, reference, fcfg.doubled(), rng)


def pgibbs_kernel(state: PGibbsState, problem, fcfg: FilterConfig, tuning: NutsTuning, rng,
                  gradient="sensitivity"):
    """
    One Particle Gibbs iteration: NUTS on theta given the path, then a CPF path update.

    Returns ``(new_state, info)``; ``info`` carries the NUTS statistics and
    the conditional log posterior at the new parameters.
    """
    layout = ParameterLayout(problem.cfg.K, problem.cfg.n_destinations)
    posterior = ConditionalPosterior((state.s_path, state.d_path), problem.data, problem.cfg, problem.sched,
                                     problem.prior, problem.model_kind, gradient)
    v = layout.to_unconstrained(state.theta)
    logp, grad = posterior(v)
    if not np.isfinite(logp):
        logger.error("Particle Gibbs state has zero conditional posterior density")
        raise PreconditionError("current state has zero conditional posterior density")
    x, logp, grad, info = nuts_step(v, posterior, tuning.inv_metric, tuning.step_size, rng,
                                    tuning.max_tree_depth, tuning.max_energy_error, logp, grad)
    if info.divergent:
        logger.warning(f"NUTS divergence (depth {info.tree_depth}, step size {info.step_size:.4g})")
    theta = layout.from_unconstrained(x)
    s_path, d_path, _ = conditional_pf_with_retry(problem.state_space(theta), (state.s_path, state.d_path), fcfg, rng)
    return PGibbsState(theta, s_path, d_path), {"nuts": info, "x": x, "log_posterior": logp}


def initial_state(problem, fcfg: FilterConfig, rng, theta: Optional[ThetaParams] = None) -> PGibbsState:
    """Starting parameters (given or drawn from the prior) and a path drawn from a bootstrap filter."""
    for attempt in range(MAX_INIT_ATTEMPTS):
        start = theta if theta is not None else sample_prior(problem.prior, problem.cfg.n_destinations, rng)
        try:
            cloud, _ = pf_run(problem.state_space(start), fcfg, rng)
        except DegeneracyError as exc:
            if theta is not None:
                raise
            logger.info(f"Prior draw {attempt} degenerate at t={exc.t}; drawing again")
            continue
        s_path, d_path = cloud.sample_trajectory(rng)
        return PGibbsState(start, s_path, d_path)
    logger.error(f"No prior draw out of {MAX_INIT_ATTEMPTS} gave a usable particle filter")
    raise DegeneracyError(f"no usable initial state after {MAX_INIT_ATTEMPTS} prior draws")


def run_chain(chain_id: int, problem, scfg: SamplerConfig, fcfg: FilterConfig, rng,
              init_theta: Optional[ThetaParams] = None, progress=None) -> ChainOutput:
    """Run one chain for ``scfg.n_iters`` iterations, adapting NUTS during burn-in."""
    cfg = problem.cfg
    layout = ParameterLayout(cfg.K, cfg.n_destinations)
    started = time.monotonic()
    state = initial_state(problem, fcfg, rng, init_theta if scfg.init == "supplied" else None)
    tuning = NutsTuning.initial(layout.size, scfg.n_burnin, metric=scfg.metric,
                                max_tree_depth=scfg.max_tree_depth, target_accept=scfg.target_accept)
    posterior = ConditionalPosterior((state.s_path, state.d_path), problem.data, cfg, problem.sched,
                                     problem.prior, problem.model_kind, scfg.gradient)
    v = layout.to_unconstrained(state.theta)
    logp, grad = posterior(v)
    tuning.reset_step_size(find_reasonable_step_size(v, logp, grad, posterior, tuning.inv_metric, rng))

    n = scfg.n_iters
    T = problem.T
    record = {
        "unconstrained": np.empty((n, layout.size)),
        "reported": np.empty((n, len(parameter_names(cfg.K, cfg.n_destinations)))),
        "regime_paths": np.empty((n, T), dtype=np.int8),
        "duration_paths": np.empty((n, T), dtype=np.int32),
        "log_posterior": np.empty(n),
        "accept_stat": np.empty(n),
        "tree_depth": np.empty(n, dtype=np.int16),
        "n_leapfrog": np.empty(n, dtype=np.int32),
        "divergent": np.zeros(n, dtype=bool),
        "step_size": np.empty(n),
    }
    logger.info(f"Chain {chain_id}: {n} iterations ({scfg.n_burnin} burn-in), M={fcfg.M}, T={T}")
    for i in range(n):
        state, info = pgibbs_kernel(state, problem, fcfg, tuning, rng, scfg.gradient)
        nuts = info["nuts"]
        if tuning.adapting:
            tuning.adapt(info["x"], nuts)
            if tuning.needs_step_reset:
                post = ConditionalPosterior((state.s_path, state.d_path), problem.data, cfg, problem.sched,
                                            problem.prior, problem.model_kind, scfg.gradient)
                lp, g = post(info["x"])
                if np.isfinite(lp):
                    tuning.reset_step_size(find_reasonable_step_size(info["x"], lp, g, post, tuning.inv_metric,
                                                                     rng, tuning.step_size))
                else:
                    tuning.reset_step_size()
        record["unconstrained"][i] = info["x"]
        record["reported"][i] = reported_vector(state.theta)
        record["regime_paths"][i] = state.s_path
        record["duration_paths"][i] = state.d_path
        record["log_posterior"][i] = info["log_posterior"]
        record["accept_stat"][i] = nuts.accept_stat
        record["tree_depth"][i] = nuts.tree_depth
        record["n_leapfrog"][i] = nuts.n_leapfrog
        record["divergent"][i] = nuts.divergent
        record["step_size"][i] = nuts.step_size
        if progress is not None:
            progress(chain_id, i + 1, n)
    elapsed = time.monotonic() - started
    n_div = int(record["divergent"][scfg.n_burnin:].sum())
    logger.info(f"Chain {chain_id} finished in {elapsed:.1f}s with {n_div} post-warm-up divergences")
    return ChainOutput(
        names=parameter_names(cfg.K, cfg.n_destinations),
        chain=np.full(n, chain_id, dtype=np.int16),
        iteration=np.arange(n),
        n_burnin=scfg.n_burnin,
        K=cfg.K,
        n_destinations=cfg.n_destinations,
        meta={"chain": chain_id, "seconds": elapsed, "tuning": tuning.to_dict(), "divergences": n_div},
        **record,
    )


def run_chains(problem, scfg: SamplerConfig, fcfg: FilterConfig, seed=None, threads: int = 1,
               init_theta: Optional[ThetaParams] = None, backend: str = "local", progress=None):
    """
    Independent seeded chains.

    Each chain gets its own child stream of the root generator, so results
    do not depend on ``threads`` or on the backend.

    Returns:
        ``(merged ChainOutput, summary DataFrame)``.
    """
    if scfg.init == "supplied" and init_theta is None:
        raise PreconditionError("init 'supplied' needs initial parameters")
    if seed is None:
        seed = int(np.random.SeedSequence().entropy)
    streams = spawn(make_rng(seed), scfg.n_chains)
    if backend == "celery":
        from .tasks import dispatch_chains

        outputs = dispatch_chains(problem, scfg, fcfg, seed, init_theta)
    elif threads > 1 and scfg.n_chains > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(run_chain, c, problem, scfg, fcfg, streams[c], init_theta, progress)
                       for c in range(scfg.n_chains)]
            outputs = [f.result() for f in futures]
    else:
        outputs = [run_chain(c, problem, scfg, fcfg, streams[c], init_theta, progress)
                   for c in range(scfg.n_chains)]
    merged = ChainOutput.concatenate(outputs)
    return merged, merged.summary()
