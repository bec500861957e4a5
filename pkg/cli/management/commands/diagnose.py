from pathlib import Path

import numpy as np
import pandas as pd

from core.exceptions import DataValidationError, PreconditionError
from dynamics.augmented import rollout
from hsmm.latent import expected_duration, transition_matrix
from inference_batch.sampler import ChainOutput
from cli.command import EpiRegimeCommand, load_run, run_rng

BAND = (2.5, 97.5)


def _bands(values: np.ndarray, prefix: str) -> dict:
    """Mean and central 95% band of draws x days."""
    low, high = np.percentile(values, BAND, axis=0)
    return {f"{prefix}_mean": values.mean(axis=0), f"{prefix}_q2.5": low, f"{prefix}_q97.5": high}


class Command(EpiRegimeCommand):
    help = "Convergence diagnostics, regime posterior, R_t and implied counts for a fit-batch run"
    command_name = "diagnose"
    uses_config = False

    def add_run_arguments(self, parser):
        parser.add_argument("--run", required=True, help="Output directory of fit-batch")
        parser.add_argument("--thin", type=int, default=10, help="Keep every k-th retained draw in trace.csv")
        parser.add_argument("--draws", type=int, default=200, help="Retained draws rolled out for R_t and counts")

    def input_runs(self, options):
        return [options["run"]]

    def run(self, config, seed, run, options):
        run_dir = Path(options["run"])
        problem, dates, info = load_run(run_dir)
        if info["kind"] != "batch":
            raise PreconditionError(f"diagnose needs a fit-batch run (got a {info['kind']} run)")
        if not (run_dir / "chains.npz").exists():
            raise DataValidationError("batch run has no chains.npz", path=str(run_dir))
        with np.load(run_dir / "chains.npz") as arrays:
            output = ChainOutput.from_arrays(arrays)
        kept = output.retained()
        if len(kept) < 2:
            raise PreconditionError("diagnose needs at least two retained draws")
        thin = max(options["thin"], 1)

        summary = output.summary()
        self.write_csv(run, "summary", summary, "summary.csv", index=True)
        worst = summary["Rhat"].max()
        self.stdout.write(f"{len(kept)} retained draws, max split-R_hat {worst:.3f}")

        trace = kept.to_frame()
        trace = trace[(trace["iteration"] - output.n_burnin) % thin == 0]
        self.write_csv(run, "trace", trace, "trace.csv")

        day = self._day_frame(problem.T, dates)
        paths = kept.regime_paths.astype(np.int64)
        n_regimes = output.K + 1
        probs = np.stack([(paths == k).mean(axis=0) for k in range(n_regimes)], axis=1)
        regimes = day.copy()
        regimes["mode"] = probs.argmax(axis=1)
        for k in range(n_regimes):
            regimes[f"p_regime_{k}"] = probs[:, k]
        self.write_csv(run, "regimes", regimes, "regimes.csv")

        rng = run_rng(seed, 0)
        picks = np.arange(len(kept))
        if options["draws"] < len(kept):
            picks = np.sort(rng.choice(len(kept), size=options["draws"], replace=False))
        thetas = kept.thetas()
        ur = problem.sched.ur_at(np.arange(problem.T))
        rt, cases, deaths = [], [], []
        for i in picks:
            solved = rollout(thetas[i], problem.cfg, problem.sched, paths[i], kept.duration_paths[i].astype(np.int64))
            rt.append(solved["rt"])
            cases.append(solved["incidence"] * ur)
            deaths.append(solved["deaths"])
        self.write_csv(run, "rt", day.assign(**_bands(np.array(rt), "rt")), "rt.csv")
        implied = day.assign(**_bands(np.array(cases), "cases"), **_bands(np.array(deaths), "deaths"))
        implied["cases_observed"] = problem.data.cases
        implied["deaths_observed"] = problem.data.deaths
        self.write_csv(run, "implied", implied, "implied.csv")

        matrices = np.mean([transition_matrix(theta, problem.cfg) for theta in thetas], axis=0)
        dwell = [np.mean([expected_duration(k, theta) for theta in thetas]) for k in range(n_regimes)]
        transitions = pd.DataFrame(matrices, columns=[f"to_{k}" for k in range(n_regimes)])
        transitions.insert(0, "regime", np.arange(n_regimes))
        transitions["expected_duration"] = dwell
        self.write_csv(run, "transitions", transitions, "transitions.csv")

    @staticmethod
    def _day_frame(T: int, dates) -> pd.DataFrame:
        frame = pd.DataFrame({"t": np.arange(T)})
        if dates is not None and len(dates) == T:
            frame["date"] = [d.date().isoformat() for d in dates]
        return frame
