import math
import os
import tempfile
from types import SimpleNamespace

import numpy as np
import pandas as pd
from django.test import SimpleTestCase
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from core.exceptions import AlignmentError, DataValidationError, DomainError, PreconditionError
from filters.particle_filter import FilterConfig
from filters.toy import ToyModel
from inference_batch.sampler import ChainOutput
from params.theta import parameter_names, reference_theta, reported_vector
from params.transforms import ParameterLayout
from .criteria import BatchCriteria, CriterionReport, batch_criteria, clpbf, dic, theta_bayes, waic
from .report import (
    CRITERIA_FILE, PL_DAILY_FILE, PL_WEEKLY_FILE, TABLE_COLUMNS, comparison_table, load_report, merge_reports,
)


def _naive_waic(matrix):
    T, N = matrix.shape
    lppd = 0.0
    p_waic = 0.0
    for t in range(T):
        total = 0.0
        for n in range(N):
            total += math.exp(matrix[t, n])
        lppd += math.log(total / N)
        mean = sum(matrix[t, n] for n in range(N)) / N
        p_waic += sum((matrix[t, n] - mean) ** 2 for n in range(N)) / (N - 1)
    return -2 * lppd + 2 * p_waic, lppd, p_waic


def _chain_output(n=6, n_burnin=2):
    theta = reference_theta()
    v = ParameterLayout(4, 3).to_unconstrained(theta)
    return ChainOutput(
        names=parameter_names(4, 3), chain=np.zeros(n), iteration=np.arange(n),
        unconstrained=np.tile(v, (n, 1)), reported=np.tile(reported_vector(theta), (n, 1)),
        regime_paths=np.zeros((n, 3), dtype=np.int8), duration_paths=np.zeros((n, 3)),
        log_posterior=np.zeros(n), accept_stat=np.zeros(n), tree_depth=np.ones(n), n_leapfrog=np.ones(n),
        divergent=np.zeros(n, dtype=bool), step_size=np.ones(n), n_burnin=n_burnin,
    )


class DicTests(SimpleTestCase):
    def test_two_samples(self):
        value, p_dic = dic([-10.0, -12.0], -10.0)
        self.assertAlmostEqual(p_dic, 1.0, places=12)
        self.assertAlmostEqual(value, 22.0, places=12)

    def test_constant_samples(self):
        value, p_dic = dic(np.full(20, -5.5), -5.0)
        self.assertEqual(p_dic, 0.0)
        self.assertAlmostEqual(value, 10.0, places=12)

    def test_needs_two_samples(self):
        with self.assertRaises(PreconditionError):
            dic([-1.0], -1.0)

    @given(st.lists(st.floats(-1e4, 0.0), min_size=2, max_size=30))
    @settings(max_examples=50, deadline=None)
    def test_identity_and_order_invariance(self, samples):
        value, p_dic = dic(samples, samples[0])
        self.assertAlmostEqual(value, -2 * samples[0] + 2 * p_dic, delta=1e-10 * max(1.0, abs(value)))
        self.assertAlmostEqual(dic(samples[::-1], samples[0])[1], p_dic, delta=1e-9 * max(1.0, p_dic))


class WaicTests(SimpleTestCase):
    def test_matches_double_loop(self):
        matrix = np.random.default_rng(0).normal(-3.0, 1.0, size=(5, 4))
        assert_allclose(waic(matrix), _naive_waic(matrix), rtol=0, atol=1e-12)

    def test_single_draw(self):
        column = np.array([[-1.0], [-2.5], [-0.25]])
        value, lppd, p_waic = waic(column)
        self.assertEqual(p_waic, 0.0)
        self.assertAlmostEqual(lppd, -3.75, places=12)
        self.assertAlmostEqual(value, 7.5, places=12)

    def test_identical_columns(self):
        matrix = np.tile(np.array([[-1.0], [-2.0]]), (1, 6))
        _, lppd, p_waic = waic(matrix)
        self.assertAlmostEqual(p_waic, 0.0, places=15)
        self.assertAlmostEqual(lppd, -3.0, places=12)

    def test_negative_infinity_entries(self):
        matrix = np.array([[-1.0, -np.inf], [-2.0, -2.0]])
        _, lppd, _ = waic(matrix)
        self.assertAlmostEqual(lppd, -1.0 - np.log(2.0) - 2.0, places=12)

    def test_all_zero_density_names_t(self):
        matrix = np.array([[-1.0, -1.0], [-np.inf, -np.inf]])
        with self.assertRaises(DomainError) as ctx:
            waic(matrix)
        self.assertIn("t=1", str(ctx.exception))

    def test_column_order_does_not_matter(self):
        matrix = np.random.default_rng(1).normal(-2.0, 0.5, size=(8, 6))
        assert_allclose(waic(matrix), waic(matrix[:, ::-1]), rtol=1e-12)


class ClpbfTests(SimpleTestCase):
    def setUp(self):
        rng = np.random.default_rng(2)
        self.a = pd.Series(rng.normal(-2.0, 1.0, 30), index=np.arange(1, 31))
        self.b = pd.Series(rng.normal(-2.0, 1.0, 30), index=np.arange(1, 31))

    def test_identical_series(self):
        self.assertEqual(clpbf(self.a, self.a, 3, 10), 0.0)

    def test_antisymmetry(self):
        self.assertAlmostEqual(clpbf(self.a, self.b, 0, 30), -clpbf(self.b, self.a, 0, 30), places=12)

    def test_window_additivity(self):
        whole = clpbf(self.a, self.b, 4, 15)
        parts = clpbf(self.a, self.b, 4, 6) + clpbf(self.a, self.b, 10, 9)
        self.assertAlmostEqual(whole, parts, places=10)

    def test_full_window_is_sum_of_differences(self):
        self.assertAlmostEqual(clpbf(self.a.to_numpy(), self.b.to_numpy(), 0, 30),
                               float((self.a - self.b).sum()), places=10)

    def test_misaligned_series(self):
        shifted = pd.Series(self.b.to_numpy(), index=np.arange(6, 36))
        with self.assertRaises(AlignmentError):
            clpbf(self.a, shifted, 0, 10)
        with self.assertRaises(AlignmentError):
            clpbf(self.a, self.b, 25, 10)


class BatchCriteriaTests(SimpleTestCase):
    def test_pointwise_columns_sum_to_totals(self):
        model = ToyModel.simulate(12, np.random.default_rng(3))
        problem = SimpleNamespace(state_space=lambda theta: model)
        criteria = batch_criteria(problem, _chain_output(), FilterConfig(M=32), 3, np.random.default_rng(4))
        self.assertEqual(criteria.pointwise.shape, (12, 3))
        assert_allclose(criteria.pointwise.sum(axis=0), criteria.loglik_samples, rtol=1e-10)
        self.assertTrue(np.isfinite(criteria.loglik_at_mean))
        report = CriterionReport.from_batch("toy", criteria)
        self.assertAlmostEqual(report.dic, -2 * report.loglik_at_mean + 2 * report.p_dic, places=10)
        self.assertAlmostEqual(report.waic, -2 * report.lppd + 2 * report.p_waic, places=10)

    def test_threads_do_not_change_results(self):
        model = ToyModel.simulate(10, np.random.default_rng(5))
        problem = SimpleNamespace(state_space=lambda theta: model)
        a = batch_criteria(problem, _chain_output(), FilterConfig(M=16), 4, np.random.default_rng(6))
        b = batch_criteria(problem, _chain_output(), FilterConfig(M=16), 4, np.random.default_rng(6), threads=3)
        assert_allclose(a.pointwise, b.pointwise, rtol=0, atol=0)

    def test_theta_bayes_of_constant_draws(self):
        theta = theta_bayes(_chain_output())
        assert_allclose(theta.log_beta, reference_theta().log_beta, rtol=1e-12)


class ReportTests(SimpleTestCase):
    def setUp(self):
        history = pd.DataFrame({"t": np.arange(5, 19), "log_pl": np.linspace(-3.0, -1.0, 14)})
        weekly = pd.DataFrame({"t": [5, 12], "log_pl": [-9.0, -8.0]})
        self.seq = CriterionReport.from_history("seq", history, weekly)
        matrix = np.random.default_rng(7).normal(-2.0, 0.3, size=(14, 5))
        self.batch = BatchCriteria(matrix.sum(axis=0), matrix, -27.0, np.arange(5))

    def test_identical_runs_give_zero_clpbf(self):
        copy = CriterionReport("copy", log_pl=self.seq.log_pl.copy(), log_pl_weekly=self.seq.log_pl_weekly.copy())
        table = comparison_table([self.seq, copy])
        self.assertEqual(list(table.columns), TABLE_COLUMNS)
        clpbf_rows = table[table.criterion.str.startswith("clpbf")]
        self.assertEqual(len(clpbf_rows), 4)
        self.assertTrue(np.all(clpbf_rows["value"].to_numpy() == 0.0))

    def test_four_panels(self):
        table = comparison_table(merge_reports([CriterionReport.from_batch("seq", self.batch), self.seq]))
        self.assertEqual(list(table.panel.unique()), ["dic", "waic", "daily_pl", "weekly_pl"])
        daily = table[(table.panel == "daily_pl") & (table.criterion == "cumulative_log_pl")]["value"].iloc[0]
        self.assertAlmostEqual(daily, self.seq.log_pl.sum(), places=12)
        dic_value = table[table.criterion == "dic"]["value"].iloc[0]
        self.assertTrue(np.isfinite(dic_value))

    def test_load_report_from_run_directory(self):
        with tempfile.TemporaryDirectory() as tmp:
            np.savez(os.path.join(tmp, CRITERIA_FILE), **self.batch.to_arrays())
            self.seq.log_pl.rename("log_pl").rename_axis("t").reset_index().to_csv(
                os.path.join(tmp, PL_DAILY_FILE), index=False)
            self.seq.log_pl_weekly.rename("log_pl").rename_axis("t").reset_index().to_csv(
                os.path.join(tmp, PL_WEEKLY_FILE), index=False)
            report = load_report(tmp, "run")
        self.assertEqual(report.label, "run")
        self.assertAlmostEqual(report.loglik_at_mean, -27.0)
        self.assertAlmostEqual(report.cumulative_log_pl, self.seq.cumulative_log_pl, places=12)
        self.assertAlmostEqual(report.cumulative_log_pl_weekly, -17.0, places=12)

    def test_empty_run_directory(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(DataValidationError):
                load_report(tmp)
