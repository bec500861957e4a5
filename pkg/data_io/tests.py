import os
import tempfile

import numpy as np
import pandas as pd
from django.test import SimpleTestCase
from numpy.testing import assert_array_equal

from core.exceptions import DataValidationError
from params.theta import FixedConfig
from .delay import default_delay_distribution, discretised_gamma, load_delay, write_delay
from .loaders import (
    DEFAULT_IFR_DATES, DEFAULT_IFR_VALUES, ifr_step_function, load_dataset, read_series, start_index, write_series,
)


def _write(directory, name, rows, header="date,value"):
    path = os.path.join(directory, name)
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(header + "\n")
        for row in rows:
            handle.write(",".join(str(v) for v in row) + "\n")
    return path


def _daily(start, values):
    dates = pd.date_range(start, periods=len(values), freq="D")
    return [(d.date().isoformat(), v) for d, v in zip(dates, values)]


class DelayTests(SimpleTestCase):
    def test_default_vector_sums_to_one(self):
        f = default_delay_distribution(FixedConfig(n_pop=1000, window=28))
        self.assertEqual(f.shape, (27,))
        self.assertAlmostEqual(f.sum(), 1.0, delta=1e-12)
        self.assertTrue(np.all(f >= 0))

    def test_untruncated_mean(self):
        lags = np.arange(0, 400)
        p = discretised_gamma(lags)
        self.assertAlmostEqual(float(np.sum(lags * p) / np.sum(p)), 17.8, delta=0.1)

    def test_override_file_round_trips(self):
        f = np.random.default_rng(0).dirichlet(np.ones(27)) * 0.999
        with tempfile.TemporaryDirectory() as tmp:
            path = write_delay(os.path.join(tmp, "delay.csv"), f)
            assert_array_equal(load_delay(path), f)

    def test_bad_lag_order(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = _write(tmp, "delay.csv", [(1, 0.5), (3, 0.5)], header="lag,value")
            with self.assertRaises(DataValidationError) as ctx:
                load_delay(path)
        self.assertEqual(ctx.exception.row, 3)
        self.assertEqual(ctx.exception.column, "lag")


class SeriesTests(SimpleTestCase):
    def test_missing_day_lists_the_date(self):
        rows = _daily("2020-03-01", [1, 2, 3])
        rows = [rows[0], rows[2]]
        with tempfile.TemporaryDirectory() as tmp:
            path = _write(tmp, "deaths.csv", rows)
            with self.assertRaises(DataValidationError) as ctx:
                read_series(path, "deaths")
        self.assertIn("2020-03-02", str(ctx.exception))
        self.assertIn("deaths.csv", str(ctx.exception))

    def test_negative_count_names_row_and_column(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = _write(tmp, "cases.csv", _daily("2020-03-01", [1, 2, -3, 4]))
            with self.assertRaises(DataValidationError) as ctx:
                read_series(path, "cases")
        self.assertEqual(ctx.exception.row, 4)
        self.assertEqual(ctx.exception.column, "value")
        self.assertIn("non-negative", str(ctx.exception))

    def test_bad_date_and_header(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = _write(tmp, "cases.csv", [("2020-13-01", 1)])
            with self.assertRaises(DataValidationError) as ctx:
                read_series(path, "cases")
            self.assertEqual(ctx.exception.column, "date")
            path = _write(tmp, "other.csv", [("2020-03-01", 1)], header="day,count")
            with self.assertRaises(DataValidationError):
                read_series(path, "cases")

    def test_empty_value_is_missing(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = _write(tmp, "cases.csv", _daily("2020-03-01", [1, "", 3]))
            series = read_series(path, "cases", allow_missing=True)
            self.assertTrue(np.isnan(series.iloc[1]))
            with self.assertRaises(DataValidationError):
                read_series(path, "cases")

    def test_write_then_read(self):
        dates = pd.date_range("2021-01-01", periods=4, freq="D")
        values = np.array([0.0, np.nan, 12.0, 0.123456789012345])
        with tempfile.TemporaryDirectory() as tmp:
            path = write_series(os.path.join(tmp, "x.csv"), dates, values)
            series = read_series(path, "vaccinations", allow_missing=True)
        assert_array_equal(series.to_numpy(), values)
        self.assertTrue(series.index.equals(dates))


class IfrTests(SimpleTestCase):
    def test_defaults(self):
        self.assertEqual(DEFAULT_IFR_VALUES, (0.01035, 0.0095, 0.007245, 0.004, 0.002))
        self.assertEqual(DEFAULT_IFR_DATES, ("2020-07-18", "2020-10-01", "2021-01-30", "2021-06-01"))

    def test_step_function(self):
        dates = pd.DatetimeIndex(["2020-07-17", "2020-07-18", "2020-12-31", "2021-01-30", "2021-07-01"])
        assert_array_equal(ifr_step_function(dates, DEFAULT_IFR_DATES, DEFAULT_IFR_VALUES),
                           [0.01035, 0.0095, 0.007245, 0.004, 0.002])

    def test_value_count_mismatch(self):
        with self.assertRaises(DataValidationError):
            ifr_step_function(pd.date_range("2020-01-01", periods=3), ["2020-01-02"], [0.1, 0.2, 0.3])


class DatasetTests(SimpleTestCase):
    def test_start_index_rule(self):
        self.assertEqual(start_index([3, 7, 12, 4, 20]), 2)
        with self.assertRaises(DataValidationError):
            start_index([1, 2, np.nan])

    def test_load_aligns_and_fills(self):
        with tempfile.TemporaryDirectory() as tmp:
            paths = {
                "deaths": _write(tmp, "deaths.csv", _daily("2020-07-10", [3, 7, 12, 15, 20, 11, 9, 14, 30, 10])),
                "cases": _write(tmp, "cases.csv", _daily("2020-07-12", [100, 120, "", 150, 170, 160, 180, 190])),
                "vaccinations": _write(tmp, "vaccinations.csv", _daily("2020-07-15", [5, 6])),
            }
            dataset = load_dataset(paths, {"schedules": {}})
        self.assertEqual(dataset.T, 10)
        self.assertEqual(dataset.start, 2)
        self.assertTrue(np.isnan(dataset.cases[0]))
        self.assertTrue(np.isnan(dataset.cases[4]))
        assert_array_equal(dataset.schedules.nu, [0, 0, 0, 0, 0, 5, 6, 0, 0, 0])
        assert_array_equal(dataset.schedules.ur, np.ones(10))
        self.assertEqual(dataset.schedules.ifr[7], 0.01035)
        self.assertEqual(dataset.schedules.ifr[8], 0.0095)
        self.assertEqual(dataset.schedules.f_delay.shape, (27,))
        observations = dataset.observations()
        self.assertEqual(len(observations), 8)
        self.assertEqual(observations.meta["start_date"], "2020-07-12")
        self.assertEqual(dataset.fit_schedules().nu.shape, (8,))

    def test_start_override(self):
        with tempfile.TemporaryDirectory() as tmp:
            deaths = _write(tmp, "deaths.csv", _daily("2020-03-01", [0, 1, 2]))
            dataset = load_dataset({"deaths": deaths}, {"data": {"start": 0}})
        self.assertEqual(dataset.start, 0)

    def test_missing_deaths_file(self):
        with self.assertRaises(DataValidationError):
            load_dataset({}, None)
        with self.assertRaises(DataValidationError):
            load_dataset({"deaths": "/nonexistent/deaths.csv"})

    def test_load_write_load_is_identity(self):
        with tempfile.TemporaryDirectory() as tmp:
            ur = [(d, 0.5 + 0.01 * i) for i, (d, _) in enumerate(_daily("2020-09-20", range(20)))]
            paths = {
                "deaths": _write(tmp, "deaths.csv", _daily("2020-09-20", [12 + i for i in range(20)])),
                "cases": _write(tmp, "cases.csv", _daily("2020-09-20", [300 + 7 * i for i in range(20)])),
                "under_reporting": _write(tmp, "ur.csv", ur),
            }
            first = load_dataset(paths)
            second = load_dataset(first.write(os.path.join(tmp, "copy")))
        self.assertTrue(first.dates.equals(second.dates))
        assert_array_equal(first.cases, second.cases)
        assert_array_equal(first.deaths, second.deaths)
        for name in ("nu", "ifr", "ur", "f_delay"):
            assert_array_equal(getattr(first.schedules, name), getattr(second.schedules, name))
        self.assertEqual(first.start, second.start)
