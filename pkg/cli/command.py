"""
Shared plumbing for the run subcommands: common flags, config and data
loading, deterministic CSV/JSON writers and the run manifest.
"""
import hashlib
import json
import logging
from dataclasses import asdict
from pathlib import Path

import numpy as np
import pandas as pd
from django.conf import settings
from django.core.management import BaseCommand

from core.exceptions import DataValidationError
from core.random import make_rng
from data_io.loaders import load_dataset
from filters.epidemic import EpidemicProblem
from filters.particle_filter import FilterConfig
from params.config import load_model_config
from params.theta import ThetaParams
from .manifest import RunManifestWriter

logger = logging.getLogger(__name__)

PROBLEM_FILE = "problem.json"
RUN_INFO_FILE = "run_info.json"


def fresh_seed() -> int:
    return int(np.random.SeedSequence().entropy)


def theta_from_config(config):
    values = config.sections.get("initial_theta")
    return ThetaParams.from_dict(values).validate() if values else None


class EpiRegimeCommand(BaseCommand):
    """
    Base class of the run subcommands.

    Subclasses set ``command_name``, add their own flags in
    ``add_run_arguments`` and do their work in ``run``.
    """

    command_name = None
    uses_config = True
    requires_system_checks = []
    argv = ()

    def add_arguments(self, parser):
        if self.uses_config:
            parser.add_argument("--config", default=None,
                                help="Model config JSON (default: $EPIREGIME_CONFIG, then built-in defaults)")
        parser.add_argument("--seed", type=int, default=None, help="Root seed (default: fresh entropy, recorded)")
        parser.add_argument("--threads", type=int, default=None,
                            help="Worker threads (default: $EPIREGIME_THREADS or the number of cores)")
        parser.add_argument("--out", required=True, help="Output directory")
        self.add_run_arguments(parser)

    def add_run_arguments(self, parser):
        pass

    def handle(self, *args, **options):
        config = load_model_config(options.get("config")) if self.uses_config else None
        seed = options["seed"] if options["seed"] is not None else fresh_seed()
        self.threads = max(1, options["threads"] or settings.EPIREGIME_THREADS)
        config_hash = config.config_hash if config is not None else self.input_hash(options)
        with RunManifestWriter(self.command_name, options["out"], config_hash, seed, list(self.argv)) as run:
            self.run(config, seed, run, options)
        self.stdout.write(self.style.SUCCESS(f"{self.command_name}: outputs in {options['out']}"))

    def run(self, config, seed, run: RunManifestWriter, options):
        raise NotImplementedError

    def input_hash(self, options) -> str:
        """Hash of the upstream manifests for commands that read earlier runs instead of a config."""
        hashes = []
        for run_dir in self.input_runs(options):
            path = Path(run_dir) / "manifest.json"
            hashes.append(json.loads(path.read_text(encoding="utf-8"))["config_hash"] if path.exists() else "")
        return hashlib.sha256("|".join(hashes).encode("utf-8")).hexdigest()

    def input_runs(self, options):
        return []

    # writers

    def write_csv(self, run: RunManifestWriter, name: str, frame: pd.DataFrame, file_name: str, index=False):
        path = run.output_dir / file_name
        frame.to_csv(path, index=index, float_format=settings.EPIREGIME_FLOAT_FORMAT, encoding="utf-8")
        return run.add_output(name, path)

    def write_json(self, run: RunManifestWriter, name: str, document, file_name: str):
        path = run.output_dir / file_name
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(document, handle, indent=2, sort_keys=True)
            handle.write("\n")
        return run.add_output(name, path)

    def write_npz(self, run: RunManifestWriter, name: str, arrays: dict, file_name: str):
        path = run.output_dir / file_name
        np.savez_compressed(path, **arrays)
        return run.add_output(name, path)

    # inputs

    def load_problem(self, config):
        """The fit window of the configured data as an ``EpidemicProblem``."""
        dataset = load_dataset(None, config)
        problem = EpidemicProblem(dataset.observations(), config.fixed, dataset.fit_schedules(), config.prior,
                                  config.observation_model)
        self.stdout.write(f"Data: {problem.T} days from {dataset.dates[dataset.start].date()}")
        return problem, dataset.dates[dataset.start:]

    def filter_config(self, config, options) -> FilterConfig:
        return FilterConfig.from_section(config.section("filter"), M=options.get("particles"))

    def save_problem(self, run: RunManifestWriter, problem, dates, fcfg: FilterConfig, kind: str, extra=None):
        self.write_json(run, "problem", problem.to_payload(), PROBLEM_FILE)
        info = {
            "kind": kind,
            "dates": [d.date().isoformat() for d in pd.DatetimeIndex(dates)],
            "filter": asdict(fcfg),
        }
        info.update(extra or {})
        self.write_json(run, "run_info", info, RUN_INFO_FILE)


def load_run(run_dir):
    """``(problem, dates, info)`` saved by a fit command."""
    run_dir = Path(run_dir)
    for file_name in (PROBLEM_FILE, RUN_INFO_FILE):
        if not (run_dir / file_name).exists():
            raise DataValidationError(f"not a fit run directory (no {file_name})", path=str(run_dir))
    problem = EpidemicProblem.from_payload(json.loads((run_dir / PROBLEM_FILE).read_text(encoding="utf-8")))
    info = json.loads((run_dir / RUN_INFO_FILE).read_text(encoding="utf-8"))
    dates = pd.DatetimeIndex(pd.to_datetime(info["dates"])) if info.get("dates") else None
    return problem, dates, info


def run_rng(seed, stream: int):
    """Independent generator for one stage of a run."""
    return make_rng([int(seed), stream])

