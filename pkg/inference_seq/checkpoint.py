"""
SMC^2 checkpoints.

One compressed ``.npz`` per checkpoint: a JSON header (format version,
progress, parameter values, generator states, predictive records) and the
per-particle filter arrays under a ``p{n}_`` prefix.
"""
import json
import logging
import os
from dataclasses import asdict

import numpy as np

from core.exceptions import DataValidationError
from core.random import generator_state, restore_generator
from dynamics.augmented import AugmentedState
from filters.particle_filter import ParticleFilter

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "epiregime-smc2"
CHECKPOINT_VERSION = 1

FILTER_ARRAYS = ("s", "d", "incremental", "ess_trace", "resampled", "log_weights")
STATE_FIELDS = ("ode", "s", "d", "hist")


def _state_arrays(prefix, state) -> dict:
    if isinstance(state, AugmentedState):
        return {f"{prefix}state_{name}": getattr(state, name) for name in STATE_FIELDS}
    return {f"{prefix}state": np.asarray(state)}


def _restore_state(prefix, arrays):
    if f"{prefix}state_ode" in arrays:
        return AugmentedState(*(arrays[f"{prefix}state_{name}"] for name in STATE_FIELDS))
    return arrays[f"{prefix}state"]


def save_checkpoint(path, cloud, target, rng, t: int, t0: int):
    """Write the whole cloud after step ``t``; the file is replaced atomically."""
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "t": int(t),
        "t0": int(t0),
        "rng": generator_state(rng),
        "cumulative_log_pl": cloud.cumulative_log_pl,
        "cumulative_weekly": cloud.cumulative_weekly,
        "records": [asdict(r) for r in cloud.records],
        "weekly": [asdict(r) for r in cloud.weekly],
        "particles": [],
    }
    arrays = {"outer_log_weights": cloud.log_weights}
    for n, p in enumerate(cloud.particles):
        header["particles"].append({
            "theta": target.theta_to_json(p.theta),
            "rng": generator_state(p.rng),
            "alive": bool(p.alive),
            "filter_t": p.filter.t if p.alive else None,
            "log_likelihood": p.filter.log_likelihood if p.alive else None,
        })
        prefix = f"p{n}_"
        if p.alive:
            arrays.update({prefix + name: getattr(p.filter, name) for name in FILTER_ARRAYS})
            arrays.update(_state_arrays(prefix, p.filter.state))
        if p.s_path is not None:
            arrays[prefix + "s_path"] = p.s_path
            arrays[prefix + "d_path"] = p.d_path
    tmp = f"{path}.tmp.npz"
    np.savez_compressed(tmp, header=np.array(json.dumps(header)), **arrays)
    os.replace(tmp, path)
    logger.info(f"Checkpoint written to {path} at t={t} ({len(cloud.particles)} particles)")


def _read(path):
    if not os.path.exists(path):
        raise DataValidationError("checkpoint not found", path=str(path))
    with np.load(path, allow_pickle=False) as data:
        arrays = {name: data[name] for name in data.files}
    header = json.loads(str(arrays.pop("header")))
    if header.get("format") != CHECKPOINT_FORMAT:
        raise DataValidationError(f"not an SMC^2 checkpoint (format {header.get('format')!r})", path=str(path))
    if header.get("version") != CHECKPOINT_VERSION:
        raise DataValidationError(f"unsupported checkpoint version {header.get('version')}", path=str(path))
    return header, arrays


def checkpoint_step(path) -> int:
    """Last completed step ``t`` recorded in a checkpoint."""
    header, _ = _read(path)
    return int(header["t"])


def load_checkpoint(path, target, fcfg):
    """
    Rebuild the cloud written by ``save_checkpoint``.

    Returns:
        ``(cloud, rng, t, t0)``; the run continues at ``t + 1``.
    """
    from .smc2 import PredictiveRecord, ThetaCloud, ThetaParticle, WeeklyRecord

    header, arrays = _read(path)

    particles = []
    for n, entry in enumerate(header["particles"]):
        prefix = f"p{n}_"
        theta = target.theta_from_json(entry["theta"])
        rng = restore_generator(entry["rng"])
        pf = None
        if entry["alive"]:
            pf = ParticleFilter(target.state_space(theta), fcfg, rng)
            for name in FILTER_ARRAYS:
                setattr(pf, name, arrays[prefix + name].copy())
            pf.state = _restore_state(prefix, arrays)
            pf.t = int(entry["filter_t"])
            pf.log_likelihood = float(entry["log_likelihood"])
        s_path = arrays.get(prefix + "s_path")
        d_path = arrays.get(prefix + "d_path")
        particles.append(ThetaParticle(theta, pf, rng, s_path, d_path, alive=bool(entry["alive"])))

    cloud = ThetaCloud(
        particles=particles,
        log_weights=arrays["outer_log_weights"].copy(),
        records=[PredictiveRecord(**r) for r in header["records"]],
        weekly=[WeeklyRecord(**r) for r in header["weekly"]],
        cumulative_log_pl=header["cumulative_log_pl"],
        cumulative_weekly=header["cumulative_weekly"],
    )
    logger.info(f"Checkpoint loaded from {path} at t={header['t']}")
    return cloud, restore_generator(header["rng"]), header["t"], header["t0"]
