from data_io.delay import default_delay_distribution
from data_io.loaders import FILE_NAMES, write_dataset
from params.theta import reference_theta
from simulate.generator import SYNTHETIC_START_DATE, default_synthetic_schedules, simulate
from cli.command import EpiRegimeCommand, run_rng, theta_from_config


class Command(EpiRegimeCommand):
    help = "Draw a synthetic dataset from the full generative model"
    command_name = "simulate"

    def add_run_arguments(self, parser):
        parser.add_argument("--T", type=int, required=True, help="Number of days")
        parser.add_argument("--beta-scale", type=float, default=1.0, help="Multiplier on every transmission rate")
        parser.add_argument("--start-date", default=SYNTHETIC_START_DATE, help="Date of day 0 (ISO-8601)")

    def run(self, config, seed, run, options):
        theta = theta_from_config(config) or reference_theta()
        cfg = config.fixed
        sched = default_synthetic_schedules(options["T"], default_delay_distribution(cfg))
        data = simulate(theta, cfg, sched, options["T"], run_rng(seed, 0), seed=seed,
                        beta_scale=options["beta_scale"])
        data.start_date = options["start_date"]

        paths = write_dataset(run.output_dir, data.dates, data.cases_reported, data.deaths_reported, sched)
        for name, path in paths.items():
            run.add_output(name, path)
        truth = data.truth_frame()
        self.write_csv(run, "truth", truth, "truth.csv", index=True)
        self.write_json(run, "theta", theta.to_dict(), "theta.json")

        # config for fitting the synthetic data straight away
        document = dict(config.raw)
        document["data"] = {**{name: file_name for name, file_name in FILE_NAMES.items()}, "start": 0}
        document["initial_theta"] = theta.to_dict()
        self.write_json(run, "config", document, "config.json")
        self.stdout.write(f"Simulated {data.T} days: {int(data.cases_reported.sum())} cases, "
                          f"{int(data.deaths_reported.sum())} deaths")
