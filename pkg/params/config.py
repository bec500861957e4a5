"""
Model configuration file loader.

The config is a JSON document (schema in docs/CONFIG.md). Sections that
other apps own (filter, sampler, smc2, forecast) are returned as plain dicts
merged over their defaults; each app builds its own config object from them.
"""
import copy
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, Optional

from django.conf import settings

from core.exceptions import ConstraintError, DataValidationError, ShapeError
from .priors import PriorSpec
from .theta import FixedConfig

logger = logging.getLogger(__name__)

DEFAULT_SECTIONS = {
    "observation_model": "cases_and_deaths",
    "data": {},
    "schedules": {},
    "filter": {
        "particles": 128,
        "resample_threshold": 0.5,
        "resampler": "systematic",
        "ancestor_sampling": False,
    },
    "sampler": {
        "chains": 4,
        "iters": 1200,
        "burnin": 700,
        "max_tree_depth": 10,
        "target_accept": 0.8,
        "metric": "diag",
        "gradient": "sensitivity",
        "init": "prior",
        "criteria_draws": 200,
    },
    "smc2": {
        "outer": 64,
        "inner": 128,
        "t0": None,
        "ess_threshold": 0.5,
        "rejuvenation_sweeps": 1,
        "checkpoint_every": 0,
    },
    "forecast": {
        "horizon": 14,
        "draws": 1000,
        "aggregation": "daily",
    },
}

TOP_LEVEL_KEYS = set(DEFAULT_SECTIONS) | {"fixed", "prior", "initial_theta"}

FIXED_KEYS = {
    "n_pop", "K", "rho", "U", "window", "dt_substeps", "E0",
    "initial_beta_index", "init_destinations",
}

PRIOR_KEYS = {
    "log_beta_mean", "log_beta_cov", "gamma1", "gamma2", "epsilon", "r_shapes",
    "r_scale", "psi", "transition_concentration", "init_concentration",
    "phi_cases", "phi_deaths",
}

DEFAULT_N_POP = 67_000_000


@dataclass(frozen=True)
class ModelConfig:
    """Everything a run needs apart from data and seed."""

    fixed: FixedConfig
    prior: PriorSpec
    observation_model: str
    sections: Dict[str, dict] = field(default_factory=dict)
    source: Optional[str] = None
    raw: Dict[str, object] = field(default_factory=dict)

    def section(self, name) -> dict:
        return self.sections.get(name, {})

    @property
    def config_hash(self) -> str:
        canonical = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def with_overrides(self, section, **values) -> "ModelConfig":
        """Copy with ``values`` applied to ``section``; ``None`` values are ignored."""
        values = {k: v for k, v in values.items() if v is not None}
        if not values:
            return self
        sections = copy.deepcopy(self.sections)
        sections.setdefault(section, {}).update(values)
        raw = copy.deepcopy(self.raw)
        raw.setdefault(section, {}).update(values)
        return ModelConfig(self.fixed, self.prior, self.observation_model, sections, self.source, raw)


def _unknown(keys, allowed, path, where):
    extra = sorted(set(keys) - allowed)
    if extra:
        raise DataValidationError(f"unknown keys in {where}: {', '.join(extra)}", path=path)


def build_model_config(document: dict, source: Optional[str] = None) -> ModelConfig:
    """Validate a parsed config document and merge it over the defaults."""
    if not isinstance(document, dict):
        raise DataValidationError("config root must be a JSON object", path=source)
    _unknown(document, TOP_LEVEL_KEYS, source, "config")

    fixed_values = dict(document.get("fixed", {}))
    _unknown(fixed_values, FIXED_KEYS, source, "'fixed'")
    fixed_values.setdefault("n_pop", DEFAULT_N_POP)
    try:
        fixed = FixedConfig(**fixed_values)
    except (ConstraintError, TypeError) as e:
        logger.error(f"Invalid 'fixed' section in {source}: {e}")
        raise

    prior_values = dict(document.get("prior", {}))
    _unknown(prior_values, PRIOR_KEYS, source, "'prior'")
    try:
        prior = PriorSpec.default(fixed.K).replace(**prior_values) if prior_values else PriorSpec.default(fixed.K)
    except ShapeError as e:
        logger.error(f"Invalid 'prior' section in {source}: {e}")
        raise
    if prior.K != fixed.K:
        raise ShapeError(f"prior log_beta_mean has {prior.K} entries but K={fixed.K}")

    observation_model = document.get("observation_model", DEFAULT_SECTIONS["observation_model"])
    sections = {}
    for name, defaults in DEFAULT_SECTIONS.items():
        if isinstance(defaults, dict):
            merged = dict(defaults)
            merged.update(document.get(name, {}))
            sections[name] = merged
    if "initial_theta" in document:
        sections["initial_theta"] = document["initial_theta"]
    return ModelConfig(fixed, prior, observation_model, sections, source, dict(document))


def load_model_config(path: Optional[str] = None) -> ModelConfig:
    """
    Load a model config.

    Args:
        path: JSON file. ``None`` falls back to ``settings.EPIREGIME_CONFIG``
            and then to the built-in defaults.
    """
    path = path or getattr(settings, "EPIREGIME_CONFIG", None)
    if not path:
        logger.info("No model config given; using built-in defaults")
        return build_model_config({})
    if not os.path.exists(path):
        raise DataValidationError("config file not found", path=path)
    try:
        with open(path, encoding="utf-8") as handle:
            document = json.load(handle)
    except json.JSONDecodeError as e:
        raise DataValidationError(f"invalid JSON: {e.msg}", path=path, row=e.lineno, column=e.colno)
    config = build_model_config(document, source=path)
    base = os.path.dirname(os.path.abspath(path))
    for key, value in list(config.sections["data"].items()):
        if key != "start" and isinstance(value, str) and not os.path.isabs(value):
            config.sections["data"][key] = os.path.join(base, value)
    logger.info(f"Loaded model config {path} (K={config.fixed.K}, model={config.observation_model})")
    return config
