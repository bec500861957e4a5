"""
Static model parameters and fixed run constants.

``ThetaParams`` holds every estimated parameter in constrained space;
``FixedConfig`` holds the constants that are not estimated. Both are
immutable values.
"""
from dataclasses import dataclass, field, fields, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from core.exceptions import ConstraintError

SIMPLEX_TOLERANCE = 1e-10

VECTOR_FIELDS = ("log_beta", "p", "p_init", "r", "psi")
SCALAR_FIELDS = ("gamma1", "gamma2", "epsilon", "phi_cases", "phi_deaths")


@dataclass(frozen=True)
class ThetaParams:
    """
    All estimated parameters, constrained space.

    ``r`` and ``psi`` carry K recurring-regime entries followed by the entry
    of the non-recurring initial regime. ``p[i]`` is the probability that
    recurring regime ``i`` moves up to ``i + 1`` when its dwell expires.
    ``p_init`` is the categorical over the initial regime's destinations.
    """

    log_beta: np.ndarray
    gamma1: float
    gamma2: float
    epsilon: float
    p: np.ndarray
    p_init: np.ndarray
    r: np.ndarray
    psi: np.ndarray
    phi_cases: float
    phi_deaths: float

    def __post_init__(self):
        for name in VECTOR_FIELDS:
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        for name in SCALAR_FIELDS:
            object.__setattr__(self, name, float(getattr(self, name)))

    @property
    def K(self) -> int:
        return int(self.log_beta.shape[0])

    @property
    def n_destinations(self) -> int:
        return int(self.p_init.shape[0])

    @property
    def beta(self) -> np.ndarray:
        return np.exp(self.log_beta)

    def violations(self) -> List[Tuple[str, str]]:
        """Every invariant that fails, as ``(field, message)`` pairs."""
        problems = []
        K = self.K
        if K < 1:
            problems.append(("log_beta", "at least one regime is required"))
        expected = {"p": K - 1, "r": K + 1, "psi": K + 1}
        for name, size in expected.items():
            if getattr(self, name).shape[0] != size:
                problems.append((name, f"expected {size} entries, got {getattr(self, name).shape[0]}"))
        for name in VECTOR_FIELDS + SCALAR_FIELDS:
            if not np.all(np.isfinite(getattr(self, name))):
                problems.append((name, "non-finite entry"))
        if K > 1 and not np.all(np.diff(self.log_beta) > 0):
            problems.append(("log_beta", "must be strictly increasing"))
        for name in ("gamma1", "gamma2", "epsilon", "phi_cases", "phi_deaths"):
            if not getattr(self, name) > 0:
                problems.append((name, "must be positive"))
        if not np.all(self.r > 0):
            problems.append(("r", "entries must be positive"))
        for name in ("p", "psi"):
            values = getattr(self, name)
            if not np.all((values > 0) & (values < 1)):
                problems.append((name, "entries must lie strictly in (0, 1)"))
        if self.p_init.shape[0] < 1:
            problems.append(("p_init", "needs at least one destination"))
        elif self.p_init.shape[0] == 1:
            if abs(self.p_init[0] - 1.0) > SIMPLEX_TOLERANCE:
                problems.append(("p_init", "must sum to 1"))
        else:
            if not np.all((self.p_init > 0) & (self.p_init < 1)):
                problems.append(("p_init", "entries must lie strictly in (0, 1)"))
            if abs(self.p_init.sum() - 1.0) > SIMPLEX_TOLERANCE:
                problems.append(("p_init", "must sum to 1"))
        return problems

    def is_valid(self) -> bool:
        return not self.violations()

    def validate(self) -> "ThetaParams":
        problems = self.violations()
        if problems:
            name, message = problems[0]
            raise ConstraintError(name, message)
        return self

    def replace(self, **changes) -> "ThetaParams":
        return replace(self, **changes)

    def to_dict(self) -> Dict[str, object]:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            out[f.name] = value.tolist() if isinstance(value, np.ndarray) else value
        return out

    @classmethod
    def from_dict(cls, data) -> "ThetaParams":
        return cls(**{f.name: data[f.name] for f in fields(cls)})


def parameter_names(K: int, n_destinations: int) -> List[str]:
    """Row labels of the posterior summary, in ``reported_vector`` order."""
    names = [f"log_beta_{i + 1}" for i in range(K)]
    names += ["gamma_1", "gamma_2", "epsilon"]
    names += [f"p_{i + 1}" for i in range(K - 1)]
    names += [f"p_init_{j + 1}" for j in range(n_destinations - 1)]
    names += [f"r_{i + 1}" for i in range(K)] + ["r_init"]
    names += [f"psi_{i + 1}" for i in range(K)] + ["psi_init"]
    names += ["phi_cases", "phi_deaths"]
    return names


def reported_vector(theta: ThetaParams) -> np.ndarray:
    """Constrained values in ``parameter_names`` order (free simplex entries only)."""
    return np.concatenate([
        theta.log_beta,
        [theta.gamma1, theta.gamma2, theta.epsilon],
        theta.p,
        theta.p_init[:-1],
        theta.r,
        theta.psi,
        [theta.phi_cases, theta.phi_deaths],
    ])


def reference_theta() -> ThetaParams:
    """
    Four-regime parameter set at the published posterior means.

    The published table has four duration rows; the fourth (prior shape 28)
    belongs to the non-recurring initial regime, so the fourth recurring
    regime takes its prior-mean values (r = 30, psi = 0.5).
    """
    return ThetaParams(
        log_beta=[-1.72, -1.36, -0.81, 0.45],
        gamma1=0.45,
        gamma2=0.46,
        epsilon=0.94,
        p=[0.87, 0.5, 0.17],
        p_init=[0.35, 0.35, 0.30],
        r=[36.12, 24.19, 14.19, 30.0, 28.13],
        psi=[0.76, 0.75, 0.55, 0.5, 0.5],
        phi_cases=4.91,
        phi_deaths=5.25,
    )


@dataclass(frozen=True)
class FixedConfig:
    """
    Constants that are fixed for a run.

    Args:
        n_pop: population size.
        K: number of recurring regimes.
        rho: vaccine efficacy.
        U: vaccination delay in days.
        window: death-convolution memory in days (incidence history length).
        dt_substeps: RK4 substeps per day.
        E0: initial exposed count placed in E1.
        initial_beta_index: which ordered log_beta the initial regime uses;
            ``None`` means the third (or the highest when K < 3).
        init_destinations: recurring regimes the initial regime can move
            into; ``None`` means the lowest ``min(3, K)`` regimes.
    """

    n_pop: int
    K: int = 4
    rho: float = 0.5
    U: int = 45
    window: int = 28
    dt_substeps: int = 24
    E0: float = 100.0
    initial_beta_index: Optional[int] = None
    init_destinations: Optional[Tuple[int, ...]] = field(default=None)

    def __post_init__(self):
        if self.init_destinations is not None:
            object.__setattr__(self, "init_destinations", tuple(int(i) for i in self.init_destinations))
        if not self.n_pop > 0:
            raise ConstraintError("n_pop", "must be positive")
        if self.K < 1:
            raise ConstraintError("K", "must be at least 1")
        if not 0.0 <= self.rho <= 1.0:
            raise ConstraintError("rho", "must lie in [0, 1]")
        if self.U < 0:
            raise ConstraintError("U", "must be non-negative")
        if self.window < 1:
            raise ConstraintError("window", "must be at least 1")
        if self.dt_substeps < 1:
            raise ConstraintError("dt_substeps", "must be at least 1")
        if not 0.0 <= self.E0 <= self.n_pop:
            raise ConstraintError("E0", "must lie in [0, n_pop]")
        if not 0 <= self.beta_index_initial < self.K:
            raise ConstraintError("initial_beta_index", f"must index one of the {self.K} regimes")
        dests = self.destinations
        if len(set(dests)) != len(dests) or any(not 0 <= j < self.K for j in dests):
            raise ConstraintError("init_destinations", "must be distinct recurring regime indices")

    @property
    def beta_index_initial(self) -> int:
        if self.initial_beta_index is not None:
            return int(self.initial_beta_index)
        return min(2, self.K - 1)

    @property
    def destinations(self) -> Tuple[int, ...]:
        if self.init_destinations is not None:
            return self.init_destinations
        return tuple(range(min(3, self.K)))

    @property
    def n_destinations(self) -> int:
        return len(self.destinations)
