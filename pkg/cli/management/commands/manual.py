from pathlib import Path

from django.conf import settings
from django.core.management import BaseCommand, load_command_class

from cli.dispatch import SUBCOMMANDS, usage

OUTPUT_SCHEMAS = """\
INPUT FILES
  cases.csv, deaths.csv, vaccinations.csv, under_reporting.csv
      date,value  one row per day, ISO-8601 dates, no gaps; an empty value is missing
  ifr.csv
      date,value  value holds from its date until the next row
  delay.csv
      lag,value   lags 1..window-1, values sum to 1

MODEL CONFIG (JSON)
  See docs/CONFIG.md. Keys: fixed, prior, observation_model, data, schedules,
  filter, sampler, smc2, forecast, initial_theta.

OUTPUT FILES
  manifest.json                 command, config_hash, seed, versions, argv, outputs,
                                wall_clock_seconds, status, error
  simulate:
    truth.csv                   date,t,S,E1,E2,I1,I2,R,regime,remaining,incidence,
                                cases_implied,deaths_implied,cases_reported,deaths_reported,rt
    theta.json                  generating parameters
    config.json                 model config that fits the simulated files
  fit-batch:
    draws.csv                   chain,iteration,<parameters>,log_posterior,accept_stat,
                                tree_depth,n_leapfrog,divergent,step_size
    summary.csv                 parameter,Mean,MCSE,SD,Rhat,Q2.5,Q25.0,Q50.0,Q75.0,Q97.5
    criteria.csv                DIC,loglik_at_mean,p_DIC,WAIC,lppd,p_WAIC
    chains.npz, criteria.npz    arrays read back by forecast, diagnose and compare
  fit-seq:
    predictive_likelihood.csv   t,log_pl,log_pl_predict,cumulative,ess,resampled
    predictive_likelihood_weekly.csv
                                t,log_pl,cumulative
    theta_particles.csv         weight,alive,<parameters>
    cloud.npz, checkpoint.npz   parameter particles with their inner filters
  forecast:
    forecast.csv                t,date,horizon,channel,q2.5,q50,q97.5,mean
  compare:
    comparison.csv              panel,model,criterion,value
  diagnose:
    summary.csv, trace.csv      as in fit-batch, trace thinned
    regimes.csv                 t,date,mode,p_regime_0..p_regime_K
    rt.csv                      t,date,rt_mean,rt_q2.5,rt_q97.5
    implied.csv                 t,date,cases_*,deaths_*,cases_observed,deaths_observed
    transitions.csv             regime,to_0..to_K,expected_duration

EXIT STATUS
  0 success, 1 invalid input or configuration, 2 numerical failure, 64 usage error
"""


class Command(BaseCommand):
    help = "Write the plain-text manual: every subcommand's flags plus the file schemas"
    requires_system_checks = []

    def add_arguments(self, parser):
        parser.add_argument("--out", default=str(Path(settings.BASE_DIR) / "docs" / "epiregime.1.txt"))

    def handle(self, *args, **options):
        sections = ["EPIREGIME(1)\n\n" + usage()]
        for name, module in SUBCOMMANDS.items():
            parser = load_command_class("cli", module).create_parser("epiregime", name)
            sections.append(f"{name.upper()}\n\n{parser.format_help()}")
        sections.append(OUTPUT_SCHEMAS)
        path = Path(options["out"])
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n\n".join(sections), encoding="utf-8")
        self.stdout.write(self.style.SUCCESS(f"manual written to {path}"))
