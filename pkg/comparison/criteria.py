"""
Information criteria and predictive-likelihood comparisons.

``dic`` and ``waic`` reduce log-likelihood evaluations over posterior draws;
``clpbf`` compares two log predictive-likelihood series over a window of
days. ``batch_criteria`` produces the inputs of the first two from a
Particle Gibbs run with the bootstrap filter.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
import pandas as pd
from scipy.special import logsumexp

from core.exceptions import AlignmentError, DegeneracyError, DomainError, PreconditionError
from core.random import spawn
from filters.particle_filter import FilterConfig, pf_run
from params.transforms import ParameterLayout

logger = logging.getLogger(__name__)


def dic(loglik_samples, loglik_at_mean: float) -> Tuple[float, float]:
    """
    Deviance information criterion with p_DIC = Var(log-likelihood) / 2.

    The variance is the sample variance (denominator n - 1) of the per-draw
    total log-likelihoods.

    Returns:
        ``(DIC, p_DIC)``.
    """
    samples = np.asarray(loglik_samples, dtype=float)
    if samples.ndim != 1 or samples.size < 2:
        raise PreconditionError("DIC needs at least two log-likelihood samples")
    p_dic = float(np.var(samples, ddof=1) / 2.0)
    return -2.0 * float(loglik_at_mean) + 2.0 * p_dic, p_dic


def waic(pointwise_loglik) -> Tuple[float, float, float]:
    """
    Widely applicable information criterion.

    Args:
        pointwise_loglik: T x N array, entry (t, n) = log p(e_t | e_{<t}, theta_n).

    Returns:
        ``(WAIC, lppd, p_WAIC)``.
    """
    values = np.asarray(pointwise_loglik, dtype=float)
    if values.ndim != 2 or values.shape[1] < 1:
        raise PreconditionError("pointwise log-likelihood must be a T x N matrix with N >= 1")
    dead = np.flatnonzero(np.all(values == -np.inf, axis=1))
    if dead.size:
        raise DomainError(f"every draw gives zero density at t={int(dead[0])}")
    n = values.shape[1]
    lppd = float(np.sum(logsumexp(values, axis=1, b=1.0 / n)))
    if n == 1:
        p_waic = 0.0
    else:
        with np.errstate(invalid="ignore"):
            per_t = np.var(values, axis=1, ddof=1)
        if not np.all(np.isfinite(per_t)):
            logger.warning(f"Log density variance is not finite at {int(np.sum(~np.isfinite(per_t)))} time points")
            per_t = np.where(np.isfinite(per_t), per_t, np.inf)
        p_waic = float(np.sum(per_t))
    return -2.0 * lppd + 2.0 * p_waic, lppd, p_waic


def _as_series(values) -> pd.Series:
    if isinstance(values, pd.Series):
        return values
    values = np.asarray(values, dtype=float)
    return pd.Series(values, index=np.arange(1, values.shape[0] + 1))


def clpbf(pl_a, pl_b, t: int, u: int) -> float:
    """
    Cumulative log predictive Bayes factor of A over B on days t+1 .. t+u.

    Series are indexed by day; plain arrays are taken to start at day 1, so
    ``clpbf(a, b, 0, len(a))`` is the log Bayes factor. A positive value
    favours A.
    """
    if u < 0:
        raise PreconditionError("window length must be non-negative")
    a, b = _as_series(pl_a), _as_series(pl_b)
    window = np.arange(t + 1, t + u + 1)
    for name, series in (("A", a), ("B", b)):
        missing = np.setdiff1d(window, series.index.to_numpy())
        if missing.size:
            raise AlignmentError(f"series {name} does not cover days {missing[0]}..{missing[-1]} "
                                 f"of window {t + 1}..{t + u}")
    return float(np.sum(a.loc[window].to_numpy() - b.loc[window].to_numpy()))


@dataclass
class BatchCriteria:
    """Filter-based log-likelihood evaluations over retained draws of a batch run."""

    loglik_samples: np.ndarray
    pointwise: np.ndarray
    loglik_at_mean: float
    draws: np.ndarray = field(default=None, repr=False)

    def to_arrays(self) -> dict:
        return {
            "loglik_samples": self.loglik_samples,
            "pointwise": self.pointwise,
            "loglik_at_mean": np.array([self.loglik_at_mean]),
            "draws": self.draws if self.draws is not None else np.arange(self.loglik_samples.shape[0]),
        }

    @classmethod
    def from_arrays(cls, arrays) -> "BatchCriteria":
        return cls(np.asarray(arrays["loglik_samples"]), np.asarray(arrays["pointwise"]),
                   float(np.asarray(arrays["loglik_at_mean"])[0]), np.asarray(arrays["draws"]))


def theta_bayes(output):
    """Posterior mean of the retained draws taken in unconstrained space and mapped back."""
    kept = output.retained()
    if len(kept) == 0:
        raise PreconditionError("no retained draws")
    layout = ParameterLayout(output.K, output.n_destinations)
    return layout.from_unconstrained(kept.unconstrained.mean(axis=0))


def batch_criteria(problem, output, fcfg: FilterConfig, n_draws: int, rng, threads: int = 1) -> BatchCriteria:
    """
    Run the bootstrap filter at up to ``n_draws`` evenly thinned retained draws
    and at the posterior mean.

    A draw whose filter collapses is left out with a warning.
    """
    kept = output.retained()
    if len(kept) < 2:
        raise PreconditionError("criteria need at least two retained draws")
    picks = np.unique(np.linspace(0, len(kept) - 1, min(n_draws, len(kept))).round().astype(int))
    layout = ParameterLayout(output.K, output.n_destinations)
    thetas = [layout.from_unconstrained(kept.unconstrained[i]) for i in picks]
    streams = spawn(rng, len(thetas) + 1)

    def evaluate(i):
        try:
            cloud, log_lik = pf_run(problem.state_space(thetas[i]), fcfg, streams[i])
        except DegeneracyError as exc:
            logger.warning(f"Filter collapsed at t={exc.t} for draw {int(picks[i])}; leaving it out")
            return None
        return cloud.incremental.copy(), log_lik

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(evaluate, range(len(thetas))))
    else:
        results = [evaluate(i) for i in range(len(thetas))]
    ok = [i for i, r in enumerate(results) if r is not None]
    if len(ok) < 2:
        raise DegeneracyError("fewer than two draws gave a usable filter")
    pointwise = np.stack([results[i][0] for i in ok], axis=1)
    samples = np.array([results[i][1] for i in ok])
    _, at_mean = pf_run(problem.state_space(theta_bayes(output)), fcfg, streams[-1])
    logger.info(f"Criteria from {len(ok)} draws (M={fcfg.M}); log-likelihood at posterior mean {at_mean:.3f}")
    return BatchCriteria(samples, pointwise, at_mean, picks[ok])


@dataclass
class CriterionReport:
    """
    Every comparison quantity known for one model run.

    Batch runs fill the DIC and WAIC blocks, sequential runs the predictive
    likelihood series; missing quantities are NaN.
    """

    label: str
    dic: float = np.nan
    loglik_at_mean: float = np.nan
    p_dic: float = np.nan
    waic: float = np.nan
    lppd: float = np.nan
    p_waic: float = np.nan
    log_pl: Optional[pd.Series] = None
    log_pl_weekly: Optional[pd.Series] = None

    @property
    def cumulative_log_pl(self) -> float:
        return float(self.log_pl.sum()) if self.log_pl is not None else np.nan

    @property
    def cumulative_log_pl_weekly(self) -> float:
        return float(self.log_pl_weekly.sum()) if self.log_pl_weekly is not None else np.nan

    @classmethod
    def from_batch(cls, label: str, criteria: BatchCriteria) -> "CriterionReport":
        dic_value, p_dic = dic(criteria.loglik_samples, criteria.loglik_at_mean)
        waic_value, lppd, p_waic = waic(criteria.pointwise)
        return cls(label, dic_value, criteria.loglik_at_mean, p_dic, waic_value, lppd, p_waic)

    @classmethod
    def from_history(cls, label: str, history: pd.DataFrame, weekly: Optional[pd.DataFrame] = None,
                     column: str = "log_pl") -> "CriterionReport":
        """Predictive-likelihood series from an SMC^2 history frame (``t`` plus ``column``)."""
        series = pd.Series(history[column].to_numpy(dtype=float), index=history["t"].to_numpy(dtype=int))
        weekly_series = None
        if weekly is not None and len(weekly):
            weekly_series = pd.Series(weekly["log_pl"].to_numpy(dtype=float), index=weekly["t"].to_numpy(dtype=int))
        return cls(label, log_pl=series, log_pl_weekly=weekly_series)

    def merged(self, other: "CriterionReport") -> "CriterionReport":
        """Fill this report's missing quantities from ``other`` (same model, another run)."""
        values = {}
        for name in ("dic", "loglik_at_mean", "p_dic", "waic", "lppd", "p_waic"):
            mine = getattr(self, name)
            values[name] = getattr(other, name) if np.isnan(mine) else mine
        return CriterionReport(
            self.label,
            log_pl=self.log_pl if self.log_pl is not None else other.log_pl,
            log_pl_weekly=self.log_pl_weekly if self.log_pl_weekly is not None else other.log_pl_weekly,
            **values,
        )
