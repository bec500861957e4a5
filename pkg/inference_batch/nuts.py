"""
Multinomial No-U-Turn sampler with a Euclidean metric.

The trajectory is doubled in a random direction until the generalised
no-U-turn criterion fails, a leaf diverges (energy error above the
threshold) or the maximum depth is reached. States are sampled from the
trajectory in proportion to exp(-H): uniformly-progressive inside subtrees,
biased-progressive at the top level. ``inv_metric`` is the inverse mass
matrix, either its diagonal (1-d) or dense (2-d).

Adaptation follows the usual windowed scheme: dual averaging of the step
size throughout warm-up, metric estimates from doubling slow windows
between a fast initial and a fast terminal buffer.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from core.exceptions import PreconditionError

logger = logging.getLogger(__name__)

MAX_TREE_DEPTH = 10
MAX_ENERGY_ERROR = 1000.0


@dataclass
class NutsInfo:
    accept_stat: float
    tree_depth: int
    n_leapfrog: int
    divergent: bool
    energy: float
    step_size: float


@dataclass
class _Leaf:
    x: np.ndarray
    r: np.ndarray
    logp: float
    grad: np.ndarray
    p_sharp: np.ndarray


@dataclass
class _Tree:
    first: _Leaf
    last: _Leaf
    proposal: _Leaf
    log_weight: float
    rho: np.ndarray
    sum_accept: float
    n_leapfrog: int
    stop: bool = False
    divergent: bool = False


def _sharp(inv_metric, r):
    return inv_metric * r if inv_metric.ndim == 1 else inv_metric @ r


def kinetic_energy(r, inv_metric) -> float:
    return 0.5 * float(r @ _sharp(inv_metric, r))


def hamiltonian(logp, r, inv_metric) -> float:
    return -logp + kinetic_energy(r, inv_metric)


def sample_momentum(inv_metric, rng) -> np.ndarray:
    z = rng.standard_normal(inv_metric.shape[0])
    if inv_metric.ndim == 1:
        return z / np.sqrt(inv_metric)
    return np.linalg.cholesky(np.linalg.inv(inv_metric)) @ z


def leapfrog(x, r, grad, step_size, inv_metric, logpost_grad):
    """One velocity-Verlet step; returns ``(x, r, logp, grad)``."""
    r_half = r + 0.5 * step_size * grad
    x_new = x + step_size * _sharp(inv_metric, r_half)
    logp, grad_new = logpost_grad(x_new)
    r_new = r_half + 0.5 * step_size * grad_new
    return x_new, r_new, logp, grad_new


def _no_u_turn(p_sharp_begin, p_sharp_end, rho) -> bool:
    return float(p_sharp_begin @ rho) > 0 and float(p_sharp_end @ rho) > 0


def _merge_keeps_going(left: _Tree, right: _Tree, rho) -> bool:
    """Criterion on the merged tree plus the two checks across the seam."""
    if not _no_u_turn(left.first.p_sharp, right.last.p_sharp, rho):
        return False
    if not _no_u_turn(left.first.p_sharp, right.first.p_sharp, left.rho + right.first.r):
        return False
    return _no_u_turn(left.last.p_sharp, right.last.p_sharp, right.rho + left.last.r)


class _TreeBuilder:
    def __init__(self, logpost_grad, inv_metric, step_size, H0, rng, max_energy_error):
        self.logpost_grad = logpost_grad
        self.inv_metric = inv_metric
        self.step_size = step_size
        self.H0 = H0
        self.rng = rng
        self.max_energy_error = max_energy_error

    def leaf(self, start: _Leaf, direction: int) -> _Tree:
        x, r, logp, grad = leapfrog(start.x, start.r, start.grad, direction * self.step_size,
                                    self.inv_metric, self.logpost_grad)
        H = hamiltonian(logp, r, self.inv_metric)
        if not np.isfinite(H):
            H = np.inf
        energy_error = H - self.H0
        node = _Leaf(x, r, logp, grad, _sharp(self.inv_metric, r))
        divergent = energy_error > self.max_energy_error
        accept = 0.0 if not np.isfinite(energy_error) else min(1.0, float(np.exp(-energy_error)))
        return _Tree(node, node, node, -energy_error, r.copy(), accept, 1, stop=divergent, divergent=divergent)

    def build(self, start: _Leaf, direction: int, depth: int) -> _Tree:
        if depth == 0:
            return self.leaf(start, direction)
        inner = self.build(start, direction, depth - 1)
        if inner.stop:
            return inner
        outer = self.build(inner.last, direction, depth - 1)
        merged = _Tree(
            first=inner.first,
            last=outer.last,
            proposal=inner.proposal,
            log_weight=np.logaddexp(inner.log_weight, outer.log_weight),
            rho=inner.rho + outer.rho,
            sum_accept=inner.sum_accept + outer.sum_accept,
            n_leapfrog=inner.n_leapfrog + outer.n_leapfrog,
            divergent=outer.divergent,
        )
        if outer.stop:
            merged.stop = True
            return merged
        if np.log(self.rng.random()) < outer.log_weight - merged.log_weight:
            merged.proposal = outer.proposal
        merged.stop = not _merge_keeps_going(inner, outer, merged.rho)
        return merged


def nuts_step(current, logpost_grad: Callable, inv_metric, step_size, rng, max_tree_depth=MAX_TREE_DEPTH,
              max_energy_error=MAX_ENERGY_ERROR, current_logp=None, current_grad=None):
    """
    One NUTS transition.

    Args:
        current: unconstrained point.
        logpost_grad: callable returning ``(log density, gradient)``.
        inv_metric: inverse mass matrix (diagonal vector or dense matrix).
        step_size: leapfrog step size.
        rng: numpy Generator.
        current_logp, current_grad: cached values at ``current``.

    Returns:
        ``(x, logp, grad, NutsInfo)``.
    """
    x0 = np.asarray(current, dtype=float)
    inv_metric = np.asarray(inv_metric, dtype=float)
    if current_logp is None or current_grad is None:
        current_logp, current_grad = logpost_grad(x0)
    if not np.isfinite(current_logp):
        raise PreconditionError("NUTS needs a finite log density at the current point")
    r0 = sample_momentum(inv_metric, rng)
    H0 = hamiltonian(current_logp, r0, inv_metric)
    root = _Leaf(x0, r0, current_logp, np.asarray(current_grad, dtype=float), _sharp(inv_metric, r0))
    tree = _Tree(root, root, root, 0.0, r0.copy(), 0.0, 0)
    # ``minus``/``plus`` are the trajectory ends in integration time
    minus, plus = root, root
    builder = _TreeBuilder(logpost_grad, inv_metric, step_size, H0, rng, max_energy_error)
    depth = 0
    divergent = False
    while depth < max_tree_depth:
        direction = 1 if rng.random() < 0.5 else -1
        start = plus if direction == 1 else minus
        subtree = builder.build(start, direction, depth)
        depth += 1
        tree.sum_accept += subtree.sum_accept
        tree.n_leapfrog += subtree.n_leapfrog
        if subtree.stop:
            divergent = subtree.divergent
            break
        if np.log(rng.random()) < subtree.log_weight - tree.log_weight:
            tree.proposal = subtree.proposal
        # the old tree in traversal order runs from its far end to the seam
        near, far = (plus, minus) if direction == 1 else (minus, plus)
        old = _Tree(far, near, tree.proposal, tree.log_weight, tree.rho, 0.0, 0)
        tree.log_weight = np.logaddexp(tree.log_weight, subtree.log_weight)
        tree.rho = tree.rho + subtree.rho
        if direction == 1:
            plus = subtree.last
        else:
            minus = subtree.last
        if not _merge_keeps_going(old, subtree, tree.rho):
            break
    n = max(tree.n_leapfrog, 1)
    chosen = tree.proposal
    info = NutsInfo(
        accept_stat=tree.sum_accept / n,
        tree_depth=depth,
        n_leapfrog=tree.n_leapfrog,
        divergent=divergent,
        energy=hamiltonian(chosen.logp, chosen.r, inv_metric),
        step_size=step_size,
    )
    if divergent:
        logger.debug(f"NUTS divergence at depth {depth} (step size {step_size:.4g})")
    return chosen.x.copy(), chosen.logp, chosen.grad.copy(), info


def find_reasonable_step_size(x, logp, grad, logpost_grad, inv_metric, rng, step_size=1.0):
    """Double or halve the step until a single leapfrog's acceptance crosses 1/2."""
    inv_metric = np.asarray(inv_metric, dtype=float)
    r = sample_momentum(inv_metric, rng)
    H0 = hamiltonian(logp, r, inv_metric)

    def log_accept(eps):
        _, r_new, logp_new, _ = leapfrog(x, r, grad, eps, inv_metric, logpost_grad)
        H = hamiltonian(logp_new, r_new, inv_metric)
        return -np.inf if not np.isfinite(H) else H0 - H

    a = log_accept(step_size)
    direction = 1.0 if a > np.log(0.5) else -1.0
    for _ in range(50):
        if direction * a <= -direction * np.log(2.0):
            break
        step_size *= 2.0 ** direction
        a = log_accept(step_size)
    return step_size


class DualAveraging:
    """Step-size adaptation toward a target mean acceptance statistic."""

    def __init__(self, step_size, target=0.8, gamma=0.05, t0=10.0, kappa=0.75):
        self.target = target
        self.gamma = gamma
        self.t0 = t0
        self.kappa = kappa
        self.restart(step_size)

    def restart(self, step_size):
        self.mu = np.log(10.0 * step_size)
        self.counter = 0
        self.s_bar = 0.0
        self.x_bar = 0.0
        self.step_size = step_size

    def update(self, accept_stat) -> float:
        self.counter += 1
        accept_stat = min(1.0, max(0.0, float(accept_stat)))
        eta = 1.0 / (self.counter + self.t0)
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target - accept_stat)
        x = self.mu - self.s_bar * np.sqrt(self.counter) / self.gamma
        weight = self.counter ** -self.kappa
        self.x_bar = weight * x + (1.0 - weight) * self.x_bar
        self.step_size = float(np.exp(x))
        return self.step_size

    @property
    def final_step_size(self) -> float:
        return float(np.exp(self.x_bar))


class WelfordCovariance:
    def __init__(self, dim, dense=False):
        self.dense = dense
        self.n = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros((dim, dim)) if dense else np.zeros(dim)

    def update(self, x):
        self.n += 1
        delta = x - self.mean
        self.mean += delta / self.n
        if self.dense:
            self.m2 += np.outer(x - self.mean, delta)
        else:
            self.m2 += (x - self.mean) * delta

    def regularised(self) -> np.ndarray:
        """Sample (co)variance shrunk toward 1e-3 as in common NUTS practice."""
        n = self.n
        cov = self.m2 / max(n - 1, 1)
        shrink = n / (n + 5.0)
        if self.dense:
            return shrink * cov + 1e-3 * (5.0 / (n + 5.0)) * np.eye(cov.shape[0])
        return shrink * cov + 1e-3 * (5.0 / (n + 5.0))


def adaptation_windows(n_warmup, init_buffer=75, term_buffer=50, base_window=25):
    """
    Slow metric windows as ``(start, end)`` warm-up iteration ranges.

    Windows double in size; the last one stretches to the terminal buffer.
    Short warm-ups use 15% / 75% / 10% splits instead.
    """
    if n_warmup < 20:
        return []
    if init_buffer + base_window + term_buffer > n_warmup:
        init_buffer = int(0.15 * n_warmup)
        term_buffer = int(0.1 * n_warmup)
        base_window = n_warmup - init_buffer - term_buffer
    windows = []
    start = init_buffer
    size = base_window
    last = n_warmup - term_buffer
    while start < last:
        end = start + size
        if end + 2 * size > last:
            end = last
        windows.append((start, end))
        start = end
        size *= 2
    return windows


@dataclass
class NutsTuning:
    """Step size and metric, plus the warm-up machinery that moves them."""

    step_size: float
    inv_metric: np.ndarray
    max_tree_depth: int = MAX_TREE_DEPTH
    max_energy_error: float = MAX_ENERGY_ERROR
    target_accept: float = 0.8
    n_warmup: int = 0
    dense: bool = False

    def __post_init__(self):
        self.inv_metric = np.asarray(self.inv_metric, dtype=float)
        self.iteration = 0
        self.dual = DualAveraging(self.step_size, self.target_accept)
        self.windows = adaptation_windows(self.n_warmup)
        self.estimator = WelfordCovariance(self.inv_metric.shape[0], self.dense)
        self.needs_step_reset = False

    @classmethod
    def initial(cls, dim, n_warmup, step_size=0.1, metric="diag", **kwargs) -> "NutsTuning":
        dense = metric == "dense"
        inv_metric = np.eye(dim) if dense else np.ones(dim)
        return cls(step_size=step_size, inv_metric=inv_metric, n_warmup=n_warmup, dense=dense, **kwargs)

    @property
    def adapting(self) -> bool:
        return self.iteration < self.n_warmup

    def adapt(self, x, info: NutsInfo):
        """Feed one warm-up transition; does nothing once warm-up is over."""
        if not self.adapting:
            return
        i = self.iteration
        self.iteration += 1
        self.step_size = self.dual.update(info.accept_stat)
        for start, end in self.windows:
            if start <= i < end:
                self.estimator.update(np.asarray(x, dtype=float))
                if i == end - 1:
                    self.inv_metric = self.estimator.regularised()
                    self.estimator = WelfordCovariance(self.inv_metric.shape[0], self.dense)
                    self.needs_step_reset = True
                    logger.debug(f"Metric updated after warm-up iteration {self.iteration}")
                break
        if self.iteration == self.n_warmup:
            self.step_size = self.dual.final_step_size
            logger.info(f"Warm-up finished: step size {self.step_size:.4g}")

    def reset_step_size(self, step_size: Optional[float] = None):
        if step_size is not None:
            self.step_size = step_size
        self.dual.restart(self.step_size)
        self.needs_step_reset = False

    def to_dict(self) -> dict:
        return {
            "step_size": float(self.step_size),
            "inv_metric": self.inv_metric.tolist(),
            "max_tree_depth": self.max_tree_depth,
            "target_accept": self.target_accept,
        }
