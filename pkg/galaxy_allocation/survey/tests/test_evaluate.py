"""Test module for the held-out method comparison."""
import numpy as np
from django.test import SimpleTestCase

from galaxy_allocation.services.baselines import BASELINE1, BASELINE2, GaConfig
from galaxy_allocation.services.config import AllocationConfig
from galaxy_allocation.services.evaluate import (
    GNN,
    NONE,
    PRIOR,
    UNIFORM,
    EvalConfig,
    EvalReport,
    MethodResult,
    PolicyFitness,
    draw_fields,
    precision_metric,
    run_evaluation,
)
from galaxy_allocation.services.exceptions import ConfigError, InvalidParametersError
from galaxy_allocation.services.networks import init_parameters
from galaxy_allocation.services.simulator import SimulatorConfig
from galaxy_allocation.services.trainer import TrainConfig
from .helpers import TINY_MODEL


def evaluation_config(**options):
    settings = {'n_fields': 4, 'methods': (GNN, BASELINE1, BASELINE2, NONE, UNIFORM),
                'ga_fitness_fields': 3}
    settings.update(options)
    return AllocationConfig(
        simulator=SimulatorConfig(mean_count=30, mean_cluster_size=5),
        model=TINY_MODEL,
        train=TrainConfig(budget=200.0),
        ga=GaConfig(population=4, generations=2),
        evaluation=EvalConfig(**settings),
    )


class PrecisionTests(SimpleTestCase):

    def test_symmetric_residuals(self):
        """Residuals +0.1 and -0.1 have variance 0.01, precision 100 and std 0.1."""
        precision, std = precision_metric([0.1, -0.1])
        self.assertAlmostEqual(precision, 100.0)
        self.assertAlmostEqual(std, 0.1)

    def test_constant_residuals(self):
        precision, std = precision_metric([0.2, 0.2, 0.2])
        self.assertEqual(precision, np.inf)
        self.assertEqual(std, 0.0)

    def test_single_residual(self):
        with self.assertRaises(InvalidParametersError):
            precision_metric([0.1])


class RunEvaluationTests(SimpleTestCase):
    """Every method scored on the same fields by the same estimator."""

    @classmethod
    def setUpClass(cls):
        """Initialise one untrained model and run the comparison once."""
        super().setUpClass()
        cls.cfg = evaluation_config()
        cls.store = init_parameters(TINY_MODEL, seed=1)
        cls.report = run_evaluation(cls.store, TINY_MODEL, cls.cfg, seed=5)

    def test_every_method_is_scored(self):
        self.assertEqual(list(self.report.results), [GNN, BASELINE1, BASELINE2, NONE, UNIFORM])
        for result in self.report.results.values():
            self.assertEqual(result.n_fields, 4)
            self.assertEqual(len(result.allocations), 4)

    def test_fields_are_shared(self):
        phis = {tuple(r.phi for r in result.records) for result in self.report.results.values()}
        self.assertEqual(len(phis), 1)
        self.assertEqual(phis.pop(), (0.3,) * 4)

    def test_zero_allocation_method(self):
        self.assertTrue(all(record.sum_r == 0.0 for record in self.report.results[NONE].records))

    def test_budget_respected_by_policies(self):
        for method in (BASELINE1, BASELINE2):
            for allocations in self.report.results[method].allocations:
                self.assertLessEqual(allocations.sum(), self.cfg.train.budget)

    def test_identical_seeds_identical_reports(self):
        again = run_evaluation(self.store, TINY_MODEL, self.cfg, seed=5)
        for method, result in self.report.results.items():
            self.assertEqual(result.records, again.results[method].records)
            self.assertEqual(result.precision, again.results[method].precision)

    def test_method_subset(self):
        report = run_evaluation(self.store, TINY_MODEL, self.cfg, seed=5, methods=[NONE])
        self.assertEqual(list(report.results), [NONE])
        self.assertEqual(report.results[NONE].records, self.report.results[NONE].records)

    def test_ranking_by_precision(self):
        ranking = self.report.ranking()
        precisions = [result.precision for result in ranking]
        self.assertEqual(precisions, sorted(precisions, reverse=True))

    def test_ranking_ties_keep_configured_order(self):
        report = EvalReport(0, [], {
            'a': MethodResult('a', 5.0, 0.1, 0.0),
            'b': MethodResult('b', 9.0, 0.1, 0.0),
            'c': MethodResult('c', 5.0, 0.1, 0.0),
        })
        self.assertEqual([r.method for r in report.ranking()], ['b', 'a', 'c'])


class FieldProtocolTests(SimpleTestCase):

    def test_prior_protocol_varies_phi(self):
        fields = draw_fields(evaluation_config(phi=PRIOR), seed=2, count=4)
        phis = [example.field.phi for example in fields]
        self.assertEqual(len(set(phis)), 4)
        self.assertTrue(all(0.1 <= phi <= 0.5 for phi in phis))

    def test_labels_separate_streams(self):
        cfg = evaluation_config(phi=PRIOR)
        first = draw_fields(cfg, seed=2, count=1)[0]
        other = draw_fields(cfg, seed=2, count=1, label='ga-fitness')[0]
        self.assertNotEqual(first.field.phi, other.field.phi)

    def test_invalid_protocol(self):
        with self.assertRaises(ConfigError):
            EvalConfig(methods=('gnn', 'oracle'))
        with self.assertRaises(ConfigError):
            EvalConfig(phi='sometimes')
        with self.assertRaises(ConfigError):
            EvalConfig(n_fields=1)


class PolicyFitnessTests(SimpleTestCase):
    """GA fitness of baseline genomes."""

    @classmethod
    def setUpClass(cls):
        """Build one fitness function per policy on shared fields."""
        super().setUpClass()
        cfg = evaluation_config()
        store = init_parameters(TINY_MODEL, seed=1)
        cls.baseline1 = PolicyFitness(BASELINE1, store, TINY_MODEL, cfg, seed=3)
        cls.baseline2 = PolicyFitness(BASELINE2, store, TINY_MODEL, cfg, seed=3)

    def test_fitness_is_deterministic(self):
        self.assertEqual(self.baseline1((1.5,)), self.baseline1((1.5,)))
        self.assertEqual(self.baseline2((2.0, 2.0, 2.0, 0.0)), self.baseline2((2.0, 2.0, 2.0, 0.0)))

    def test_invalid_genome_scores_minus_infinity(self):
        self.assertEqual(self.baseline2((2.0, 2.0, 1.0, -3.0)), -np.inf)

    def test_unknown_policy(self):
        with self.assertRaises(ConfigError):
            PolicyFitness('oracle', None, TINY_MODEL, evaluation_config())
