from dataclasses import asdict

import pandas as pd
from django.conf import settings

from comparison.criteria import CriterionReport, batch_criteria
from comparison.report import CRITERIA_FILE
from inference_batch.sampler import SamplerConfig, run_chains
from cli.command import EpiRegimeCommand, run_rng, theta_from_config


class Command(EpiRegimeCommand):
    help = "Particle Gibbs chains with NUTS parameter moves, plus DIC and WAIC"
    command_name = "fit-batch"

    def add_run_arguments(self, parser):
        parser.add_argument("--chains", type=int, default=None)
        parser.add_argument("--iters", type=int, default=None)
        parser.add_argument("--burnin", type=int, default=None)
        parser.add_argument("--particles", type=int, default=None, help="Conditional filter particles")
        parser.add_argument("--max-tree-depth", type=int, default=None)
        parser.add_argument("--target-accept", type=float, default=None)
        parser.add_argument("--metric", choices=["diag", "dense"], default=None)
        parser.add_argument("--gradient", choices=["sensitivity", "finite_difference"], default=None)
        parser.add_argument("--criteria-draws", type=int, default=None,
                            help="Retained draws used for DIC/WAIC (0 skips them)")
        parser.add_argument("--backend", choices=["local", "celery"], default=None)

    def run(self, config, seed, run, options):
        problem, dates = self.load_problem(config)
        scfg = SamplerConfig.from_section(
            config.section("sampler"),
            n_chains=options["chains"], n_iters=options["iters"], n_burnin=options["burnin"],
            max_tree_depth=options["max_tree_depth"], target_accept=options["target_accept"],
            metric=options["metric"], gradient=options["gradient"], criteria_draws=options["criteria_draws"],
        )
        fcfg = self.filter_config(config, options)
        backend = options["backend"] or settings.EPIREGIME_BACKEND
        self.save_problem(run, problem, dates, fcfg, "batch", {"sampler": asdict(scfg)})

        def progress(chain_id, done, total):
            if done % max(total // 10, 1) == 0:
                self.stdout.write(f"  chain {chain_id}: {done}/{total}")

        output, summary = run_chains(problem, scfg, fcfg, seed=seed, threads=self.threads,
                                     init_theta=theta_from_config(config), backend=backend, progress=progress)
        self.write_npz(run, "chains", output.to_arrays(), "chains.npz")
        self.write_csv(run, "draws", output.to_frame(), "draws.csv")
        self.write_csv(run, "summary", summary, "summary.csv", index=True)
        retained = len(output.retained())
        self.stdout.write(f"{scfg.n_chains} chains, {retained} retained draws")

        if scfg.criteria_draws > 0:
            criteria = batch_criteria(problem, output, fcfg, scfg.criteria_draws, run_rng(seed, 1), self.threads)
            self.write_npz(run, "criteria_arrays", criteria.to_arrays(), CRITERIA_FILE)
            report = CriterionReport.from_batch(run.output_dir.name, criteria)
            table = pd.DataFrame([{
                "DIC": report.dic, "loglik_at_mean": report.loglik_at_mean, "p_DIC": report.p_dic,
                "WAIC": report.waic, "lppd": report.lppd, "p_WAIC": report.p_waic,
            }])
            self.write_csv(run, "criteria", table, "criteria.csv")
            self.stdout.write(f"DIC {report.dic:.1f} (p_DIC {report.p_dic:.1f}), "
                              f"WAIC {report.waic:.1f} (p_WAIC {report.p_waic:.1f})")
