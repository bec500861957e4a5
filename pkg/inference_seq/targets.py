"""
What SMC^2 needs to know about a model family.

A target draws parameters from the prior, builds the state-space model for
a parameter value, and moves one (parameter, path) pair with a Particle
Gibbs kernel on the data seen so far.
"""
import logging
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from filters.particle_filter import conditional_pf
from inference_batch.posterior import ConditionalPosterior
from inference_batch.sampler import PGibbsState, pgibbs_kernel
from observation.likelihood import summed_nb_logpmf
from params.priors import sample_prior
from params.theta import ThetaParams
from params.transforms import ParameterLayout

logger = logging.getLogger(__name__)

DEATHS_FOR_TRAINING = 10
WEEK = 7


class EpidemicTarget:
    """
    Args:
        problem: EpidemicProblem holding the full data.
        gradient: gradient method of the conditional posterior.
    """

    supports_weekly = True
    needs_tuning = True

    def __init__(self, problem, gradient: str = "sensitivity"):
        self.problem = problem
        self.gradient = gradient
        self.n_steps = problem.T
        self.layout = ParameterLayout(problem.cfg.K, problem.cfg.n_destinations)

    def default_t0(self) -> int:
        """Training days up to and including the first day with 10 cumulative deaths."""
        day = self.problem.data.first_day_with_deaths(DEATHS_FOR_TRAINING, cumulative=True)
        if day is None:
            logger.warning(f"Cumulative deaths never reach {DEATHS_FOR_TRAINING}; training on the first day only")
            return 1
        return day + 1

    def sample_prior(self, rng) -> ThetaParams:
        return sample_prior(self.problem.prior, self.problem.cfg.n_destinations, rng)

    def state_space(self, theta, n: Optional[int] = None):
        data = self.problem.data if n is None else self.problem.data.head(n)
        return self.problem.state_space(theta, data)

    def unconstrained(self, theta) -> np.ndarray:
        return self.layout.to_unconstrained(theta)

    def conditional_posterior(self, theta, trajectory, t: int) -> ConditionalPosterior:
        p = self.problem
        head = p.data.head(t + 1)
        path = (trajectory[0][: t + 1], trajectory[1][: t + 1])
        return ConditionalPosterior(path, head, p.cfg, p.sched, p.prior, p.model_kind, self.gradient)

    def rejuvenate(self, theta, trajectory, t: int, tuning, fcfg, rng):
        """One Particle Gibbs sweep on days 0..t; returns ``(theta, s_path, d_path)``."""
        state = PGibbsState(theta, trajectory[0][: t + 1], trajectory[1][: t + 1])
        problem = self.problem.with_data(self.problem.data.head(t + 1))
        new, _ = pgibbs_kernel(state, problem, fcfg, tuning, rng, self.gradient)
        return new.theta, new.s_path, new.d_path

    def weekly_log_density(self, model, state, s, d, t: int, rng, days: int = WEEK) -> float:
        """
        Roll one inner particle ``days`` days forward from day ``t`` and score
        the observed weekly sums.

        ``state``/``s``/``d`` describe one particle at day ``t - 1``.
        """
        dyn = model.dynamics
        case_mu = np.empty(days)
        death_mu = np.empty(days)
        for i in range(days):
            u = t + i
            s, d = model.step_latent(s, d, rng) if u else model.initial_latent(1, rng)
            state = model.advance(state, s, d, u)
            case_mu[i] = dyn.reported_case_mean(state, u)[0]
            death_mu[i] = dyn.deaths(state, u)[0]
        kind = model.density.model
        week = slice(t, t + days)
        total = 0.0
        if kind.uses_cases:
            total += summed_nb_logpmf(model.data.cases[week], case_mu, model.theta.phi_cases)
        if kind.uses_deaths:
            total += summed_nb_logpmf(model.data.deaths[week], death_mu, model.theta.phi_deaths)
        return total

    def theta_to_json(self, theta):
        return theta.to_dict()

    def theta_from_json(self, value):
        return ThetaParams.from_dict(value)


class GridTarget:
    """
    Parameters restricted to a finite grid, each point with its own model.

    The parameter update is an exact Gibbs draw over the grid given the
    path, so SMC^2 can be checked against full enumeration.

    Args:
        models: one full-data state-space model per grid point (each with ``head``).
        log_prior: log prior mass per grid point (uniform when omitted).
    """

    supports_weekly = False
    needs_tuning = False

    def __init__(self, models, log_prior=None):
        self.models = list(models)
        self.n_steps = self.models[0].n_steps
        size = len(self.models)
        log_prior = np.full(size, -np.log(size)) if log_prior is None else np.asarray(log_prior, dtype=float)
        self.log_prior = log_prior - logsumexp(log_prior)

    def default_t0(self) -> int:
        return 1

    def sample_prior(self, rng) -> int:
        return int(rng.choice(len(self.models), p=np.exp(self.log_prior)))

    def state_space(self, theta, n: Optional[int] = None):
        model = self.models[theta]
        return model if n is None else model.head(n)

    def unconstrained(self, theta) -> np.ndarray:
        return np.array([float(theta)])

    @staticmethod
    def _path_log_joint(model, s_path, d_path) -> float:
        total = float(model.log_latent_initial(s_path[:1], d_path[:1])[0])
        if s_path.shape[0] > 1:
            total += float(np.sum(model.log_latent_transition(s_path[1:], d_path[1:], s_path[:-1], d_path[:-1])))
        if not np.isfinite(total):
            return -np.inf
        state = model.initial_state(1)
        for u in range(s_path.shape[0]):
            state = model.advance(state, s_path[u:u + 1], d_path[u:u + 1], u)
            total += float(model.log_observation(state, u)[0])
        return total

    def rejuvenate(self, theta, trajectory, t: int, tuning, fcfg, rng):
        s_path = np.asarray(trajectory[0][: t + 1])
        d_path = np.asarray(trajectory[1][: t + 1])
        scores = np.array([
            self.log_prior[k] + self._path_log_joint(model.head(t + 1), s_path, d_path)
            for k, model in enumerate(self.models)
        ])
        probs = np.exp(scores - logsumexp(scores))
        theta = int(rng.choice(len(self.models), p=probs))
        s_new, d_new, _ = conditional_pf(self.models[theta].head(t + 1), (s_path, d_path), fcfg, rng)
        return theta, s_new, d_new

    def theta_to_json(self, theta):
        return int(theta)

    def theta_from_json(self, value):
        return int(value)
