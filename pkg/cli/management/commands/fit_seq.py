import csv
from dataclasses import asdict, fields, replace

import numpy as np
import pandas as pd
from django.conf import settings

from comparison.report import PL_DAILY_FILE, PL_WEEKLY_FILE
from inference_seq.checkpoint import checkpoint_step, save_checkpoint
from inference_seq.smc2 import PredictiveRecord, Smc2Config, smc2_run
from inference_seq.targets import EpidemicTarget
from params.theta import parameter_names, reported_vector
from cli.command import EpiRegimeCommand, run_rng

CHECKPOINT_FILE = "checkpoint.npz"
CLOUD_FILE = "cloud.npz"


def truncate_stream(path, last_t: int) -> bool:
    """
    Drop streamed rows past step ``last_t`` so a resumed run can append.

    Returns whether the header row is present.
    """
    if not path.exists():
        return False
    with open(path, encoding="utf-8", newline="") as handle:
        lines = handle.readlines()
    kept = lines[:1]
    for line in lines[1:]:
        step = line.split(",", 1)[0]
        # a row cut off by the interruption has no line ending
        if line.endswith("\n") and step.isdigit() and int(step) <= last_t:
            kept.append(line)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.writelines(kept)
    return bool(kept)


class Command(EpiRegimeCommand):
    help = "SMC^2 over parameters and regime paths, streaming the one-step predictive likelihood"
    command_name = "fit-seq"

    def add_run_arguments(self, parser):
        parser.add_argument("--outer", type=int, default=None, help="Parameter particles N")
        parser.add_argument("--inner", type=int, default=None, help="Particles M in each inner filter")
        parser.add_argument("--t0", type=int, default=None,
                            help="Training days (default: through the first day with 10 cumulative deaths)")
        parser.add_argument("--ess-threshold", type=float, default=None)
        parser.add_argument("--sweeps", type=int, default=None, help="Particle Gibbs sweeps per rejuvenation")
        parser.add_argument("--checkpoint-every", type=int, default=None, help="Steps between checkpoints")
        parser.add_argument("--resume", action="store_true", help="Continue from the checkpoint in --out")
        parser.add_argument("--no-weekly", action="store_true", help="Skip the weekly predictive likelihood")

    def run(self, config, seed, run, options):
        problem, dates = self.load_problem(config)
        scfg = Smc2Config.from_section(
            config.section("smc2"),
            N=options["outer"], M=options["inner"], t0=options["t0"], ess_threshold=options["ess_threshold"],
            rejuvenation_sweeps=options["sweeps"], checkpoint_every=options["checkpoint_every"],
            weekly=False if options["no_weekly"] else None,
        )
        fcfg = replace(self.filter_config(config, options), M=scfg.M)
        target = EpidemicTarget(problem, config.section("sampler").get("gradient", "sensitivity"))
        rng = run_rng(seed, 0)
        checkpoint = run.output_dir / CHECKPOINT_FILE
        stream_path = run.output_dir / PL_DAILY_FILE
        columns = [f.name for f in fields(PredictiveRecord)]
        float_format = settings.EPIREGIME_FLOAT_FORMAT

        has_header = options["resume"] and truncate_stream(stream_path, checkpoint_step(checkpoint))
        with open(stream_path, "a" if has_header else "w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            if not has_header:
                writer.writerow(columns)

            def on_step(record):
                row = asdict(record)
                writer.writerow([
                    float_format % value if isinstance(value, float) else int(value)
                    for value in (row[name] for name in columns)
                ])
                handle.flush()
                if (record.t + 1) % 50 == 0:
                    self.stdout.write(f"  t={record.t}: cumulative log PL {record.cumulative:.2f}, "
                                      f"ESS {record.ess:.1f}")

            result = smc2_run(target, scfg, fcfg, rng, threads=self.threads,
                              checkpoint_path=str(checkpoint) if scfg.checkpoint_every or options["resume"] else None,
                              resume=options["resume"], on_step=on_step)

        cloud = result.cloud
        # rewritten in one pass so resumed runs match uninterrupted ones
        self.write_csv(run, "predictive_likelihood", result.history, PL_DAILY_FILE)
        if scfg.weekly:
            self.write_csv(run, "predictive_likelihood_weekly", result.weekly, PL_WEEKLY_FILE)
        names = parameter_names(problem.cfg.K, problem.cfg.n_destinations)
        particles = pd.DataFrame(np.array([reported_vector(theta) for theta in cloud.thetas()]), columns=names)
        particles.insert(0, "weight", cloud.weights)
        particles.insert(1, "alive", cloud.alive.astype(int))
        self.write_csv(run, "theta_particles", particles, "theta_particles.csv")
        save_checkpoint(run.output_dir / CLOUD_FILE, cloud, target, rng, problem.T - 1, result.t0)
        run.add_output("cloud", run.output_dir / CLOUD_FILE)
        if checkpoint.exists():
            run.add_output("checkpoint", checkpoint)
        self.save_problem(run, problem, dates, fcfg, "seq", {"t0": result.t0, "smc2": asdict(scfg)})
        self.stdout.write(f"log evidence after t0={result.t0}: {result.log_evidence:.3f}, "
                          f"{int(result.history['resampled'].sum())} resampling events")
