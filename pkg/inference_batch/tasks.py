import logging
from dataclasses import asdict

import numpy as np
from celery import group

from core.celery import app
from core.random import make_rng, spawn
from filters.epidemic import EpidemicProblem
from filters.particle_filter import FilterConfig
from params.theta import ThetaParams
from .sampler import ChainOutput, SamplerConfig, run_chain

logger = logging.getLogger(__name__)


@app.task(bind=True)
def run_chain_task(self, payload):
    """
    Celery task running one Particle Gibbs chain.

    The payload carries the problem, sampler and filter settings, the root
    seed and the chain index; the chain's stream is the same child stream the
    local backend would use.
    """
    chain_id = payload["chain_id"]
    logger.info(f"Celery task started for chain {chain_id} (task id {self.request.id})")
    problem = EpidemicProblem.from_payload(payload["problem"])
    scfg = SamplerConfig(**payload["sampler"])
    fcfg = FilterConfig(**payload["filter"])
    rng = spawn(make_rng(payload["seed"]), scfg.n_chains)[chain_id]
    init = payload.get("init_theta")
    init_theta = ThetaParams.from_dict(init) if init else None
    output = run_chain(chain_id, problem, scfg, fcfg, rng, init_theta)
    return {name: value.tolist() for name, value in output.to_arrays().items()}


def dispatch_chains(problem, scfg, fcfg, seed, init_theta=None):
    """Run every chain as a Celery task and gather the outputs in chain order."""
    base = {
        "problem": problem.to_payload(),
        "sampler": asdict(scfg),
        "filter": asdict(fcfg),
        "seed": seed,
        "init_theta": init_theta.to_dict() if init_theta is not None else None,
    }
    job = group(run_chain_task.s({**base, "chain_id": c}) for c in range(scfg.n_chains))
    results = job.apply_async().get(disable_sync_subtasks=False)
    outputs = []
    for arrays in results:
        outputs.append(ChainOutput.from_arrays({name: np.asarray(value) for name, value in arrays.items()}))
    logger.info(f"Collected {len(outputs)} chains from Celery workers")
    return outputs
