"""State-space view of the epidemic model for the particle filters."""
from dataclasses import asdict, dataclass

import numpy as np

from dynamics.augmented import AugmentedState, EpidemicDynamics
from dynamics.schedules import Schedules
from observation.likelihood import ObservationDensity, ObservationModel
from observation.series import ObservationSeries
from params.priors import PriorSpec
from params.theta import FixedConfig


class EpidemicStateSpace:
    """
    Args:
        theta: parameters.
        cfg: FixedConfig.
        sched: Schedules covering at least ``len(data)`` days.
        data: ObservationSeries.
        model_kind: observation model (``ObservationModel`` or its value).
        max_duration: optional duration truncation.
    """

    def __init__(self, theta, cfg, sched, data, model_kind=ObservationModel.CASES_AND_DEATHS, max_duration=None):
        self.theta = theta
        self.cfg = cfg
        self.sched = sched
        self.data = data
        self.n_steps = len(data)
        self.dynamics = EpidemicDynamics(theta, cfg, sched, max_duration=max_duration)
        self.density = ObservationDensity(model_kind)

    def initial_latent(self, n, rng):
        return self.dynamics.process.initial(n, rng)

    def step_latent(self, s, d, rng):
        return self.dynamics.process.step(s, d, rng)

    def initial_state(self, n):
        return AugmentedState.before_start(n, self.cfg)

    def advance(self, state, s, d, t):
        return self.dynamics.propagate(state, s, d, t)

    def log_observation(self, state, t):
        return self.density.log_density(
            self.data.cases[t], self.data.deaths[t],
            self.dynamics.reported_case_mean(state, t), self.dynamics.deaths(state, t),
            self.theta.phi_cases, self.theta.phi_deaths,
        )

    def log_latent_initial(self, s, d):
        return self.dynamics.process.log_initial(s, d)

    def log_latent_transition(self, s_new, d_new, s_prev, d_prev):
        return self.dynamics.process.log_transition(s_new, d_new, s_prev, d_prev)

    def take(self, state, idx):
        return state.take(np.asarray(idx))

    def with_data(self, data) -> "EpidemicStateSpace":
        return EpidemicStateSpace(self.theta, self.cfg, self.sched, data, self.density.model,
                                  self.dynamics.process.max_duration)

    def head(self, n: int) -> "EpidemicStateSpace":
        """The same model restricted to the first ``n`` days."""
        return self.with_data(self.data.head(n))


@dataclass(frozen=True)
class EpidemicProblem:
    """Data, constants, schedules and prior shared by every inference routine."""

    data: ObservationSeries
    cfg: FixedConfig
    sched: Schedules
    prior: PriorSpec
    model_kind: ObservationModel = ObservationModel.CASES_AND_DEATHS

    def __post_init__(self):
        object.__setattr__(self, "model_kind", ObservationModel(self.model_kind))

    @property
    def T(self) -> int:
        return len(self.data)

    def state_space(self, theta, data=None, max_duration=None) -> EpidemicStateSpace:
        return EpidemicStateSpace(theta, self.cfg, self.sched, self.data if data is None else data,
                                  self.model_kind, max_duration)

    def with_data(self, data) -> "EpidemicProblem":
        return EpidemicProblem(data, self.cfg, self.sched, self.prior, self.model_kind)

    def to_payload(self) -> dict:
        """JSON-friendly form for shipping to workers."""
        def listed(values):
            return [None if np.isnan(v) else float(v) for v in values]

        return {
            "cases": listed(self.data.cases),
            "deaths": listed(self.data.deaths),
            "fixed": asdict(self.cfg),
            "schedules": {name: getattr(self.sched, name).tolist() for name in ("nu", "ifr", "ur", "f_delay")},
            "prior": asdict(self.prior),
            "model_kind": self.model_kind.value,
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "EpidemicProblem":
        def array(values):
            return np.array([np.nan if v is None else v for v in values], dtype=float)

        return cls(
            data=ObservationSeries(array(payload["cases"]), array(payload["deaths"])),
            cfg=FixedConfig(**payload["fixed"]),
            sched=Schedules(**payload["schedules"]),
            prior=PriorSpec(**payload["prior"]),
            model_kind=payload["model_kind"],
        )
