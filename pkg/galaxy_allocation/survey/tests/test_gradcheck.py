"""Test module for the finite-difference gradient suite."""
import numpy as np
from django.test import SimpleTestCase

from galaxy_allocation.services import autodiff as ad
from galaxy_allocation.services.gradcheck import (
    GROUP_SIZES,
    GradientCase,
    build_cases,
    check_case,
    run_gradcheck,
)

SMALL_SUITE = {'primitives': 27, 'mlp': 3, 'gn_block': 4, 'posterior': 2, 'end_to_end': 2}


def wrong_square(tape, t):
    """Square whose backward rule forgets the factor 2."""
    value = tape.record('bad_square', t.data ** 2, (t,), lambda g: (g * t.data,))
    return ad.sum_(value)


class GradcheckTests(SimpleTestCase):

    def test_small_suite_passes(self):
        """Every group agrees with central differences."""
        report = run_gradcheck(seed=7, sizes=SMALL_SUITE)
        self.assertTrue(report.passed, report.by_group())
        self.assertEqual(set(report.by_group()), set(GROUP_SIZES))
        self.assertEqual(len(report.results), sum(SMALL_SUITE.values()))

    def test_default_suite_size(self):
        """The full suite holds at least 100 cases across all groups."""
        self.assertGreaterEqual(sum(GROUP_SIZES.values()), 100)
        cases = build_cases(0, {'primitives': 1, 'mlp': 1, 'gn_block': 1, 'posterior': 1, 'end_to_end': 1})
        self.assertEqual([case.group for case in cases], list(GROUP_SIZES))

    def test_detects_wrong_rule(self):
        case = GradientCase('primitives', 'bad_square', wrong_square, np.array([0.5, -1.0, 2.0]))
        self.assertGreater(check_case(case), 0.1)

    def test_correct_rule(self):
        case = GradientCase('primitives', 'square', lambda tape, t: ad.sum_(ad.square(t)),
                            np.array([0.5, -1.0, 2.0]))
        self.assertLess(check_case(case), 1e-8)

    def test_step_across_kink_is_skipped(self):
        """A coordinate within one step of a relu kink is not compared."""
        case = GradientCase('primitives', 'relu_near_kink', lambda tape, t: ad.sum_(ad.relu(t)),
                            np.array([1e-6, 2.0, -3.0]))
        self.assertLess(check_case(case), 1e-8)
        explicit = GradientCase('primitives', 'relu_near_kink', case.fn, case.x, indices=[0, 1])
        self.assertLess(check_case(explicit), 1e-8)

    def test_full_suite_passes(self):
        """The default suite at seed 7 stays within tolerance."""
        report = run_gradcheck(seed=7)
        self.assertEqual(len(report.results), sum(GROUP_SIZES.values()))
        self.assertTrue(report.passed, report.by_group())
        self.assertLessEqual(report.max_error, 1e-5)

    def test_end_to_end_loss_is_small(self):
        """End-to-end targets sit near the estimate, keeping the loss of order one."""
        for case in build_cases(7, {'primitives': 0, 'mlp': 0, 'gn_block': 0,
                                    'posterior': 0, 'end_to_end': 4}):
            tape = ad.Tape()
            value = case.fn(tape, tape.constant(case.x)).item()
            self.assertLess(value, 100.0)
            self.assertGreaterEqual(value, 1.0 - 1e-9)
