import numpy as np
from django.test import SimpleTestCase

from .exceptions import (
    NUMERICAL_ERRORS, VALIDATION_ERRORS, ConstraintError, DataValidationError, DegeneracyError,
)
from .logging import WarningCounter
from .random import generator_state, make_rng, restore_generator, spawn


class RandomStreamTests(SimpleTestCase):
    def test_restored_generator_continues_the_stream(self):
        """Test that a restored generator reproduces the original's next draws"""
        rng = make_rng(42)
        rng.normal(size=5)
        clone = restore_generator(generator_state(rng))
        np.testing.assert_array_equal(rng.normal(size=8), clone.normal(size=8))

    def test_spawned_streams_are_reproducible(self):
        """Test that children of equal seeds agree and differ from each other"""
        first = [child.integers(1 << 30) for child in spawn(make_rng(3), 3)]
        second = [child.integers(1 << 30) for child in spawn(make_rng(3), 3)]
        self.assertEqual(first, second)
        self.assertEqual(len(set(first)), 3)


class ExceptionTests(SimpleTestCase):
    def test_data_validation_error_names_its_location(self):
        """Test that file, row and column appear in the message"""
        error = DataValidationError("not a number", path="deaths.csv", row=4, column="value")
        self.assertEqual(str(error), "file deaths.csv, row 4, column value: not a number")
        self.assertEqual(str(DataValidationError("empty")), "empty")

    def test_error_groups(self):
        """Test the exit-code groups"""
        self.assertIsInstance(ConstraintError("psi", "must be positive"), VALIDATION_ERRORS)
        self.assertIsInstance(DegeneracyError("collapsed", t=2), NUMERICAL_ERRORS)
        self.assertEqual(str(ConstraintError("psi", "must be positive")), "psi: must be positive")


class WarningCounterTests(SimpleTestCase):
    def test_logging_is_thinned(self):
        """Test that only the first few and every n-th hit are logged"""
        counter = WarningCounter("core.tests", "state clamped", verbose_limit=2, every=5)
        with self.assertLogs("core.tests", level="WARNING") as logs:
            for _ in range(7):
                counter.hit()
        self.assertEqual(counter.count, 7)
        self.assertEqual(len(logs.output), 3)
        self.assertIn("total 5", logs.output[-1])
        counter.reset()
        self.assertEqual(counter.count, 0)
