"""
HMC settings shared by every rejuvenation kernel at one resampling event.

The metric comes from the whole parameter population; the step size is
tuned once on a representative particle and reused for all of them.
"""
import logging

import numpy as np

from core.exceptions import PreconditionError
from filters.resampling import normalise
from inference_batch.nuts import (
    MAX_TREE_DEPTH, DualAveraging, NutsTuning, find_reasonable_step_size, nuts_step,
)

logger = logging.getLogger(__name__)

SHRINKAGE = 0.1
SINGULAR_JITTER = 1e-6
SINGULAR_TOL = 1e-12
TUNING_STEPS = 20


def population_metric(unconstrained, log_weights, shrinkage: float = SHRINKAGE) -> np.ndarray:
    """
    Weighted covariance of the parameter particles, shrunk toward its diagonal.

    A singular or non-finite estimate falls back to the diagonal of the
    variances plus ``1e-6``.
    """
    X = np.asarray(unconstrained, dtype=float)
    W = normalise(log_weights)
    mean = W @ X
    centred = X - mean
    cov = (centred * W[:, None]).T @ centred
    cov = (1.0 - shrinkage) * cov + shrinkage * np.diag(np.diag(cov))
    if not np.all(np.isfinite(cov)) or np.linalg.eigvalsh(cov).min() <= SINGULAR_TOL * max(1.0, np.abs(cov).max()):
        variances = np.nan_to_num(np.diag(cov), nan=0.0, posinf=0.0)
        logger.warning(f"Population covariance is singular; falling back to a diagonal metric (N={X.shape[0]})")
        return np.diag(variances + SINGULAR_JITTER)
    return cov


def representative_index(log_weights) -> int:
    """Particle with the median outer weight (lower median; ties go to the lowest index)."""
    log_weights = np.asarray(log_weights, dtype=float)
    order = np.lexsort((np.arange(log_weights.shape[0]), log_weights))
    return int(order[(log_weights.shape[0] - 1) // 2])


def tune_step_size(x, logpost_grad, inv_metric, rng, n_steps: int = TUNING_STEPS, target_accept: float = 0.8,
                   max_tree_depth: int = MAX_TREE_DEPTH) -> float:
    """Dual averaging over a short NUTS run from ``x``; the run's states are discarded."""
    logp, grad = logpost_grad(x)
    if not np.isfinite(logp):
        raise PreconditionError("representative particle has zero posterior density")
    step_size = find_reasonable_step_size(x, logp, grad, logpost_grad, inv_metric, rng)
    dual = DualAveraging(step_size, target_accept)
    for _ in range(n_steps):
        x, logp, grad, info = nuts_step(x, logpost_grad, inv_metric, dual.step_size, rng, max_tree_depth,
                                        current_logp=logp, current_grad=grad)
        dual.update(info.accept_stat)
    return dual.final_step_size


def shared_hmc_tuning(cloud, target, t: int, rng, n_steps: int = TUNING_STEPS, target_accept: float = 0.8,
                      max_tree_depth: int = MAX_TREE_DEPTH) -> NutsTuning:
    """
    Metric from the population, step size from the median-weight particle.

    Args:
        cloud: ThetaCloud at the resampling event.
        target: the SMC^2 target (supplies the conditional posterior).
        t: last observed day.
    """
    if cloud.N < 2:
        raise PreconditionError("shared tuning needs at least two parameter particles")
    X = np.array([target.unconstrained(p.theta) for p in cloud.particles])
    inv_metric = population_metric(X, cloud.log_weights)
    rep = representative_index(cloud.log_weights)
    particle = cloud.particles[rep]
    posterior = target.conditional_posterior(particle.theta, (particle.s_path, particle.d_path), t)
    step_size = tune_step_size(X[rep], posterior, inv_metric, rng, n_steps, target_accept, max_tree_depth)
    logger.info(f"Shared HMC tuning at t={t}: step size {step_size:.4g} from particle {rep}")
    return NutsTuning(step_size=step_size, inv_metric=inv_metric, max_tree_depth=max_tree_depth,
                      target_accept=target_accept, dense=True)
