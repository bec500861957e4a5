from pathlib import Path

import numpy as np
import pandas as pd

from core.exceptions import DataValidationError
from filters.particle_filter import FilterConfig
from forecast.predict import AGGREGATIONS, draws_from_chains, draws_from_cloud, predict
from inference_batch.sampler import ChainOutput
from inference_seq.checkpoint import load_checkpoint
from inference_seq.targets import EpidemicTarget
from params.config import DEFAULT_SECTIONS
from cli.command import EpiRegimeCommand, load_run, run_rng
from .fit_seq import CLOUD_FILE

FORECAST_DEFAULTS = DEFAULT_SECTIONS["forecast"]


class Command(EpiRegimeCommand):
    help = "Predictive quantiles of reported cases and deaths past the end of a fitted run"
    command_name = "forecast"
    uses_config = False

    def add_run_arguments(self, parser):
        parser.add_argument("--run", required=True, help="Output directory of fit-batch or fit-seq")
        parser.add_argument("--horizon", type=int, default=FORECAST_DEFAULTS["horizon"], help="Days to forecast")
        parser.add_argument("--aggregation", choices=AGGREGATIONS, default=FORECAST_DEFAULTS["aggregation"])
        parser.add_argument("--draws", type=int, default=FORECAST_DEFAULTS["draws"],
                            help="Posterior draws to simulate from")

    def input_runs(self, options):
        return [options["run"]]

    def run(self, config, seed, run, options):
        run_dir = Path(options["run"])
        problem, dates, info = load_run(run_dir)
        rng = run_rng(seed, 0)
        if info["kind"] == "batch":
            chains = run_dir / "chains.npz"
            if not chains.exists():
                raise DataValidationError("batch run has no chains.npz", path=str(run_dir))
            with np.load(chains) as arrays:
                output = ChainOutput.from_arrays(arrays)
            draws = draws_from_chains(output, problem.cfg, problem.sched, options["draws"], rng)
        else:
            fcfg = FilterConfig(**info["filter"])
            target = EpidemicTarget(problem)
            cloud, _, _, _ = load_checkpoint(str(run_dir / CLOUD_FILE), target, fcfg)
            draws = draws_from_cloud(cloud, options["draws"], rng)

        forecast_dates = None
        if dates is not None and len(dates):
            forecast_dates = pd.date_range(dates[-1] + pd.Timedelta(days=1), periods=options["horizon"], freq="D")
        result = predict(draws, options["horizon"], options["aggregation"], problem.cfg, problem.sched,
                         run_rng(seed, 1), t_start=problem.T, threads=self.threads, dates=forecast_dates)
        table = result.summary()
        if forecast_dates is not None:
            table.insert(1, "date", [forecast_dates[t - problem.T].date().isoformat() for t in table["t"]])
        self.write_csv(run, "forecast", table, "forecast.csv")
        self.stdout.write(f"{result.periods} {options['aggregation']} periods from {len(draws)} draws")
