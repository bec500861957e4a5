import filecmp
import json
import os
import shutil
import tempfile
from io import StringIO
from pathlib import Path
from unittest import mock

import numpy as np
import pandas as pd
from django.test import SimpleTestCase, TestCase, tag

from core.exceptions import DegeneracyError
from .dispatch import EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, cli_dispatch
from .management.commands.fit_seq import truncate_stream
from .manifest import MANIFEST_FILE, TIMING_FIELDS, read_manifest
from .models import RunManifest


def _dispatch(*argv):
    out, err = StringIO(), StringIO()
    code = cli_dispatch(list(argv), stdout=out, stderr=err)
    return code, out.getvalue(), err.getvalue()


def _write_pl(directory, values):
    os.makedirs(directory, exist_ok=True)
    t = np.arange(10, 10 + len(values))
    daily = pd.DataFrame({"t": t, "log_pl": values, "log_pl_predict": values, "cumulative": np.cumsum(values),
                          "ess": 50.0, "resampled": 0})
    daily.to_csv(os.path.join(directory, "predictive_likelihood.csv"), index=False)
    weekly = pd.DataFrame({"t": t[::7], "log_pl": values[::7] * 7, "cumulative": np.cumsum(values[::7] * 7)})
    weekly.to_csv(os.path.join(directory, "predictive_likelihood_weekly.csv"), index=False)


class DispatchTests(TestCase):
    def test_unknown_subcommand_is_usage_error(self):
        code, _, err = _dispatch("fit-everything")
        self.assertEqual(code, EXIT_USAGE)
        self.assertIn("usage: epiregime", err)

    def test_no_arguments_is_usage_error(self):
        self.assertEqual(_dispatch()[0], EXIT_USAGE)

    def test_unknown_flag_is_usage_error(self):
        with tempfile.TemporaryDirectory() as tmp:
            code, _, _ = _dispatch("simulate", "--T", "10", "--out", tmp, "--sideways")
        self.assertEqual(code, EXIT_USAGE)

    def test_missing_required_flag_is_usage_error(self):
        with tempfile.TemporaryDirectory() as tmp:
            code, _, _ = _dispatch("simulate", "--out", tmp)
        self.assertEqual(code, EXIT_USAGE)

    def test_help_exits_cleanly(self):
        code, out, _ = _dispatch("compare", "--help")
        self.assertEqual(code, EXIT_OK)
        self.assertIn("--runs", out)

    def test_missing_config_is_validation_error(self):
        with tempfile.TemporaryDirectory() as tmp:
            code, _, err = _dispatch("fit-batch", "--config", os.path.join(tmp, "nope.json"),
                                     "--out", os.path.join(tmp, "run"))
        self.assertEqual(code, EXIT_VALIDATION)
        self.assertIn("config file not found", err)

    def test_numerical_failure_exit_code(self):
        with tempfile.TemporaryDirectory() as tmp:
            _write_pl(os.path.join(tmp, "a"), np.full(5, -2.0))
            with mock.patch("cli.management.commands.compare.load_report",
                            side_effect=DegeneracyError("all particles collapsed", t=3)):
                code, _, err = _dispatch("compare", "--runs", os.path.join(tmp, "a"), "--out", os.path.join(tmp, "c"))
        self.assertEqual(code, EXIT_NUMERICAL)
        self.assertIn("collapsed", err)


class SimulateCommandTests(TestCase):
    def test_same_seed_gives_identical_outputs(self):
        with tempfile.TemporaryDirectory() as tmp:
            first, second = os.path.join(tmp, "first"), os.path.join(tmp, "run")
            for _ in range(2):
                code, _, err = _dispatch("simulate", "--seed", "7", "--T", "40", "--out", second)
                self.assertEqual(code, EXIT_OK, err)
                if not os.path.exists(first):
                    shutil.copytree(second, first)
            files = sorted(os.listdir(first))
            self.assertIn("truth.csv", files)
            self.assertIn("deaths.csv", files)
            self.assertIn("config.json", files)
            _, mismatch, errors = filecmp.cmpfiles(first, second, [f for f in files if f != MANIFEST_FILE],
                                                   shallow=False)
            self.assertEqual(mismatch, [])
            self.assertEqual(errors, [])
            # only the wall-clock timing may differ between seeded reruns
            self.assertEqual(TIMING_FIELDS, ("wall_clock_seconds",))
            manifests = [read_manifest(d) for d in (first, second)]
            for manifest in manifests:
                for name in TIMING_FIELDS:
                    manifest.pop(name)
            self.assertEqual(manifests[0], manifests[1])

    def test_manifest_is_recorded(self):
        with tempfile.TemporaryDirectory() as tmp:
            code, _, _ = _dispatch("simulate", "--seed", "3", "--T", "20", "--out", tmp)
            manifest = read_manifest(tmp)
        self.assertEqual(code, EXIT_OK)
        self.assertEqual(manifest["command"], "simulate")
        self.assertEqual(manifest["seed"], "3")
        self.assertEqual(manifest["status"], "succeeded")
        self.assertEqual(manifest["outputs"]["truth"], "truth.csv")
        entry = RunManifest.objects.get(command="simulate")
        self.assertEqual(entry.config_hash, manifest["config_hash"])
        self.assertEqual(entry.outputs, manifest["outputs"])

    def test_written_config_loads_the_simulated_data(self):
        with tempfile.TemporaryDirectory() as tmp:
            _dispatch("simulate", "--seed", "11", "--T", "25", "--out", tmp)
            with open(os.path.join(tmp, "config.json"), encoding="utf-8") as handle:
                document = json.load(handle)
        self.assertEqual(document["data"]["start"], 0)
        self.assertEqual(document["data"]["deaths"], "deaths.csv")
        self.assertIn("log_beta", document["initial_theta"])


class CompareCommandTests(TestCase):
    def test_identical_runs_give_zero_clpbf(self):
        values = np.random.default_rng(1).normal(-3.0, 0.5, size=21)
        with tempfile.TemporaryDirectory() as tmp:
            a, b = os.path.join(tmp, "a"), os.path.join(tmp, "b")
            _write_pl(a, values)
            _write_pl(b, values)
            out = os.path.join(tmp, "cmp")
            code, _, err = _dispatch("compare", "--runs", a, b, "--out", out)
            self.assertEqual(code, EXIT_OK, err)
            table = pd.read_csv(os.path.join(out, "comparison.csv"))
        clpbf_rows = table[table["criterion"].str.startswith("clpbf_vs_")]
        self.assertEqual(len(clpbf_rows), 4)
        self.assertTrue(np.all(clpbf_rows["value"] == 0.0))
        self.assertEqual(list(table["panel"].unique()), ["dic", "waic", "daily_pl", "weekly_pl"])

    def test_label_count_mismatch(self):
        with tempfile.TemporaryDirectory() as tmp:
            _write_pl(os.path.join(tmp, "a"), np.full(5, -1.0))
            code, _, _ = _dispatch("compare", "--runs", os.path.join(tmp, "a"), "--labels", "x", "y",
                                   "--out", os.path.join(tmp, "c"))
        self.assertEqual(code, EXIT_VALIDATION)

    def test_failed_run_still_writes_manifest(self):
        with tempfile.TemporaryDirectory() as tmp:
            out = os.path.join(tmp, "c")
            code, _, _ = _dispatch("compare", "--runs", os.path.join(tmp, "empty"), "--out", out)
            manifest = read_manifest(out)
        self.assertEqual(code, EXIT_VALIDATION)
        self.assertEqual(manifest["status"], "failed")
        self.assertIn("DataValidationError", manifest["error"])
        self.assertEqual(RunManifest.objects.get(command="compare").status, "failed")


class FitSeqStreamTests(SimpleTestCase):
    def test_resume_drops_rows_after_the_checkpoint(self):
        """Test that rows streamed after the last checkpoint are removed before appending"""
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "predictive_likelihood.csv"
            rows = "".join(f"{t},-1.5,-1.6,{-1.5 * (t - 2)},40,0\n" for t in range(3, 9))
            header = "t,log_pl,log_pl_predict,cumulative,ess,resampled\n"
            path.write_text(header + rows + "9,-1.", encoding="utf-8")
            self.assertTrue(truncate_stream(path, 5))
            kept = pd.read_csv(path)
        self.assertEqual(list(kept["t"]), [3, 4, 5])
        self.assertEqual(list(kept.columns)[0], "t")

    def test_missing_stream_needs_a_header(self):
        with tempfile.TemporaryDirectory() as tmp:
            self.assertFalse(truncate_stream(Path(tmp) / "predictive_likelihood.csv", 5))


class ManualCommandTests(TestCase):
    def test_manual_lists_every_subcommand(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "epiregime.1.txt")
            code, _, _ = _dispatch("manual", "--out", path)
            with open(path, encoding="utf-8") as handle:
                text = handle.read()
            self.assertFalse(os.path.exists(os.path.join(tmp, MANIFEST_FILE)))
        self.assertEqual(code, EXIT_OK)
        for name in ("SIMULATE", "FIT-BATCH", "FIT-SEQ", "FORECAST", "COMPARE", "DIAGNOSE"):
            self.assertIn(name, text)
        self.assertIn("comparison.csv", text)


@tag("slow")
class EndToEndTests(TestCase):
    def test_simulate_fit_forecast_diagnose(self):
        with tempfile.TemporaryDirectory() as tmp:
            data, fit = os.path.join(tmp, "data"), os.path.join(tmp, "fit")
            self.assertEqual(_dispatch("simulate", "--seed", "5", "--T", "30", "--out", data)[0], EXIT_OK)
            config = os.path.join(data, "config.json")
            code, _, err = _dispatch("fit-batch", "--config", config, "--seed", "5", "--chains", "2",
                                     "--iters", "30", "--burnin", "10", "--particles", "16",
                                     "--criteria-draws", "5", "--threads", "1", "--out", fit)
            self.assertEqual(code, EXIT_OK, err)
            self.assertEqual(len(pd.read_csv(os.path.join(fit, "draws.csv"))), 60)
            code, _, err = _dispatch("forecast", "--run", fit, "--horizon", "14", "--draws", "10",
                                     "--seed", "5", "--out", os.path.join(tmp, "fc"))
            self.assertEqual(code, EXIT_OK, err)
            forecast = pd.read_csv(os.path.join(tmp, "fc", "forecast.csv"))
            self.assertEqual(len(forecast), 28)
            code, _, err = _dispatch("diagnose", "--run", fit, "--draws", "10", "--seed", "5",
                                     "--out", os.path.join(tmp, "diag"))
            self.assertEqual(code, EXIT_OK, err)
            self.assertEqual(len(pd.read_csv(os.path.join(tmp, "diag", "regimes.csv"))), 30)
