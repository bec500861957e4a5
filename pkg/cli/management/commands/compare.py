from comparison.report import comparison_table, load_report, merge_reports
from core.exceptions import PreconditionError
from cli.command import EpiRegimeCommand


class Command(EpiRegimeCommand):
    help = "DIC, WAIC and cumulative predictive likelihood table across fitted runs"
    command_name = "compare"
    uses_config = False

    def add_run_arguments(self, parser):
        parser.add_argument("--runs", nargs="+", required=True, help="Output directories of fit runs")
        parser.add_argument("--labels", nargs="+", default=None,
                            help="Model label per run (runs sharing a label are merged)")

    def input_runs(self, options):
        return options["runs"]

    def run(self, config, seed, run, options):
        runs, labels = options["runs"], options["labels"]
        if labels is not None and len(labels) != len(runs):
            raise PreconditionError(f"{len(labels)} labels given for {len(runs)} runs")
        reports = [load_report(path, labels[i] if labels else None) for i, path in enumerate(runs)]
        table = comparison_table(merge_reports(reports))
        self.write_csv(run, "comparison", table, "comparison.csv")
        self.stdout.write(f"Compared {len(table['model'].unique())} models")
