"""
Bijection between ``ThetaParams`` and an unconstrained real vector.

Each parameter block has its own transform with forward (unconstrained to
constrained), inverse, log absolute Jacobian determinant and its gradient,
and a vector-Jacobian product used to pull constrained-space gradients back
to unconstrained space.
"""
import logging

import numpy as np
from scipy.special import expit, logit

from core.exceptions import ShapeError
from .theta import ThetaParams

logger = logging.getLogger(__name__)


class OrderedTransform:
    """x0 = v0, x_i = x_{i-1} + exp(v_i)."""

    def __init__(self, size):
        self.size = size

    def forward(self, v):
        x = np.empty_like(v)
        x[0] = v[0]
        if self.size > 1:
            x[1:] = v[0] + np.cumsum(np.exp(v[1:]))
        return x

    def inverse(self, x):
        v = np.empty_like(x)
        v[0] = x[0]
        if self.size > 1:
            v[1:] = np.log(np.diff(x))
        return v

    def log_det(self, v):
        return float(np.sum(v[1:]))

    def grad_log_det(self, v):
        g = np.ones_like(v)
        g[0] = 0.0
        return g

    def vjp(self, v, g):
        # Reverse cumulative sums: x_i depends on v_j for every j <= i.
        tail = np.cumsum(g[::-1])[::-1]
        out = np.empty_like(v)
        out[0] = tail[0]
        if self.size > 1:
            out[1:] = np.exp(v[1:]) * tail[1:]
        return out


class PositiveTransform:
    """x = exp(v)."""

    def __init__(self, size):
        self.size = size

    def forward(self, v):
        return np.exp(v)

    def inverse(self, x):
        return np.log(x)

    def log_det(self, v):
        return float(np.sum(v))

    def grad_log_det(self, v):
        return np.ones_like(v)

    def vjp(self, v, g):
        return g * np.exp(v)


class UnitIntervalTransform:
    """x = expit(v)."""

    def __init__(self, size):
        self.size = size

    def forward(self, v):
        return expit(v)

    def inverse(self, x):
        return logit(x)

    def log_det(self, v):
        x = expit(v)
        return float(np.sum(np.log(x) + np.log1p(-x)))

    def grad_log_det(self, v):
        return 1.0 - 2.0 * expit(v)

    def vjp(self, v, g):
        x = expit(v)
        return g * x * (1.0 - x)


class SimplexTransform:
    """
    Stick-breaking map from R^(n-1) onto the open n-simplex.

    z_k = expit(y_k - log(n - 1 - k)) so that y = 0 maps to the uniform
    simplex. ``size`` is the number of unconstrained coordinates, n - 1.
    """

    def __init__(self, size):
        self.size = size
        self.offsets = np.log(np.arange(size, 0, -1, dtype=float)) if size else np.zeros(0)

    def _breaks(self, y):
        z = expit(y - self.offsets)
        rem = np.concatenate([[1.0], np.cumprod(1.0 - z)])
        return z, rem

    def forward(self, y):
        z, rem = self._breaks(y)
        x = np.empty(self.size + 1)
        x[:-1] = rem[:-1] * z
        x[-1] = rem[-1]
        return x

    def inverse(self, x):
        y = np.empty(self.size)
        rem = 1.0
        for k in range(self.size):
            z = x[k] / rem
            y[k] = logit(z) + self.offsets[k]
            rem -= x[k]
        return y

    def log_det(self, y):
        if not self.size:
            return 0.0
        z, rem = self._breaks(y)
        return float(np.sum(np.log(z) + np.log1p(-z) + np.log(rem[:-1])))

    def grad_log_det(self, y):
        z, _ = self._breaks(y)
        k = np.arange(self.size)
        return (1.0 - 2.0 * z) - (self.size - 1 - k) * z

    def vjp(self, y, g):
        if not self.size:
            return np.zeros(0)
        z, rem = self._breaks(y)
        x = self.forward(y)
        out = np.empty(self.size)
        for i in range(self.size):
            # x_i gains through z_i; every later x_k loses through rem_k.
            direct = g[i] * rem[i] * z[i] * (1.0 - z[i])
            later = -z[i] * np.dot(g[i + 1:], x[i + 1:])
            out[i] = direct + later
        return out


class ParameterLayout:
    """
    Unconstrained vector layout for a K-regime model.

    Blocks, in order: log_beta (K, ordered), gamma1, gamma2, epsilon (log),
    p (K-1, logit), p_init (n_dest-1, stick-breaking), r (K+1, log),
    psi (K+1, logit), phi_cases, phi_deaths (log).
    """

    def __init__(self, K, n_destinations):
        self.K = K
        self.n_destinations = n_destinations
        self.blocks = [
            ("log_beta", OrderedTransform(K)),
            ("gamma1", PositiveTransform(1)),
            ("gamma2", PositiveTransform(1)),
            ("epsilon", PositiveTransform(1)),
            ("p", UnitIntervalTransform(K - 1)),
            ("p_init", SimplexTransform(n_destinations - 1)),
            ("r", PositiveTransform(K + 1)),
            ("psi", UnitIntervalTransform(K + 1)),
            ("phi_cases", PositiveTransform(1)),
            ("phi_deaths", PositiveTransform(1)),
        ]
        self.slices = {}
        start = 0
        for name, transform in self.blocks:
            self.slices[name] = slice(start, start + transform.size)
            start += transform.size
        self.size = start

    @classmethod
    def for_theta(cls, theta):
        return cls(theta.K, theta.n_destinations)

    def _check(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape != (self.size,):
            raise ShapeError(f"unconstrained vector must have length {self.size}, got shape {v.shape}")
        return v

    def to_unconstrained(self, theta: ThetaParams) -> np.ndarray:
        theta.validate()
        if theta.K != self.K or theta.n_destinations != self.n_destinations:
            raise ShapeError(
                f"theta has K={theta.K}, n_destinations={theta.n_destinations}; "
                f"layout expects K={self.K}, n_destinations={self.n_destinations}"
            )
        v = np.empty(self.size)
        for name, transform in self.blocks:
            v[self.slices[name]] = transform.inverse(np.atleast_1d(getattr(theta, name)))
        return v

    def from_unconstrained(self, v) -> ThetaParams:
        v = self._check(v)
        values = {}
        for name, transform in self.blocks:
            x = transform.forward(v[self.slices[name]])
            values[name] = x if name in ("log_beta", "p", "p_init", "r", "psi") else x[0]
        return ThetaParams(**values)

    def log_det_jacobian(self, v) -> float:
        v = self._check(v)
        return sum(transform.log_det(v[self.slices[name]]) for name, transform in self.blocks)

    def grad_log_det_jacobian(self, v) -> np.ndarray:
        v = self._check(v)
        g = np.empty(self.size)
        for name, transform in self.blocks:
            g[self.slices[name]] = transform.grad_log_det(v[self.slices[name]])
        return g

    def pullback(self, v, grads) -> np.ndarray:
        """
        Map constrained-space gradients to unconstrained space.

        Args:
            v: unconstrained point.
            grads: dict of field name to gradient array in constrained space;
                missing fields contribute zero.
        """
        v = self._check(v)
        out = np.zeros(self.size)
        for name, transform in self.blocks:
            if name in grads:
                sl = self.slices[name]
                out[sl] = transform.vjp(v[sl], np.atleast_1d(np.asarray(grads[name], dtype=float)))
        return out

    def names(self):
        labels = []
        for name, transform in self.blocks:
            if transform.size == 1:
                labels.append(f"u_{name}")
            else:
                labels.extend(f"u_{name}_{i + 1}" for i in range(transform.size))
        return labels


def to_unconstrained(theta: ThetaParams) -> np.ndarray:
    return ParameterLayout.for_theta(theta).to_unconstrained(theta)


def from_unconstrained(v, K: int, n_destinations: int) -> ThetaParams:
    return ParameterLayout(K, n_destinations).from_unconstrained(v)
