"""Test module for the management commands."""
import csv
import json
import tempfile
from io import StringIO
from pathlib import Path
from unittest.mock import patch

from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import TestCase

from galaxy_allocation.services.gradcheck import CaseResult, GradcheckReport
from galaxy_allocation.survey.models import BaselineSearch, EvaluationRun, TrainingRun
from .helpers import make_checkpoint, tiny_options


class CommandTestCase(TestCase):
    """Scratch output directory and captured stdout."""

    def setUp(self):
        """Create a scratch output directory per test."""
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.out = Path(self.tmp.name)

    def call(self, name, *args):
        stdout = StringIO()
        call_command(name, '--out', str(self.out), *tiny_options(), *args, stdout=stdout)
        return stdout.getvalue()


class SimulateCommandTest(CommandTestCase):

    def test_writes_fields_and_metadata(self):
        output = self.call('simulate', '--count', '2', '--phi', '0.3', '--seed', '11')
        self.assertIn('FIELDS WRITTEN', output)
        for index in range(2):
            meta = json.loads((self.out / f'field_{index:04d}.meta.json').read_text())
            self.assertEqual(meta['phi'], 0.3)
            self.assertEqual(meta['seed'], 11)
            self.assertEqual(meta['index'], index)
            self.assertIn('config_hash', meta)
            self.assertIn('neighbor_count', meta)
            with open(self.out / f'field_{index:04d}.csv', newline='') as handle:
                rows = list(csv.reader(handle))
            self.assertEqual(len(rows) - 1, meta['count'])

    def test_bad_phi(self):
        with self.assertRaises(CommandError):
            self.call('simulate', '--phi', 'often')

    def test_bad_override(self):
        """Configuration errors surface as command errors."""
        with self.assertRaises(CommandError):
            self.call('simulate', '--set', 'SIM_MEAN_COUNT=-4')


class GradcheckCommandTest(CommandTestCase):

    @patch('galaxy_allocation.survey.management.commands.gradcheck.run_gradcheck')
    def test_passing_suite(self, mock_gradcheck):
        mock_gradcheck.return_value = GradcheckReport([CaseResult('mlp', 'w0', 1e-9)])
        output = self.call('gradcheck', '--seed', '3')
        mock_gradcheck.assert_called_once_with(3)
        self.assertIn('max relative error', output)

    @patch('galaxy_allocation.survey.management.commands.gradcheck.run_gradcheck')
    def test_failing_suite(self, mock_gradcheck):
        """A single bad case fails the command."""
        mock_gradcheck.return_value = GradcheckReport([
            CaseResult('mlp', 'w0', 1e-9),
            CaseResult('primitives', 'relu', 0.5),
        ])
        with self.assertRaises(CommandError) as ctx:
            self.call('gradcheck')
        self.assertIn('exceeds', str(ctx.exception))


class TrainCommandTest(CommandTestCase):

    def test_training_run_is_recorded(self):
        output = self.call('train', '--seed', '5')
        run = TrainingRun.objects.get()
        self.assertEqual(run.status, 'completed')
        self.assertEqual(run.steps_completed, 2)
        self.assertEqual(int(run.seed), 5)
        self.assertEqual(run.config['train']['budget'], 200.0)
        self.assertTrue(Path(run.checkpoint).exists())
        self.assertIn('checkpoint:', output)

    @patch('galaxy_allocation.survey.management.commands.train.run_training.delay')
    def test_background_run_is_queued(self, mock_delay):
        output = self.call('train', '--background')
        run = TrainingRun.objects.get()
        mock_delay.assert_called_once_with(run.id)
        self.assertEqual(run.status, 'pending')
        self.assertIn(f'Queued training run {run.id}', output)

    def test_missing_resume_checkpoint(self):
        """A failed run keeps its error message."""
        with self.assertRaises(CommandError):
            self.call('train', '--checkpoint', str(self.out / 'missing.agnn'))
        run = TrainingRun.objects.get()
        self.assertEqual(run.status, 'failed')
        self.assertIn('Training error', run.error)


class EvaluateCommandTest(CommandTestCase):

    def test_checkpoint_is_required(self):
        with self.assertRaises(CommandError) as ctx:
            self.call('evaluate')
        self.assertIn('--checkpoint', str(ctx.exception))
        self.assertFalse(EvaluationRun.objects.exists())

    def test_evaluation_is_recorded(self):
        checkpoint = make_checkpoint(self.out / 'train')
        output = self.call('evaluate', '--checkpoint', str(checkpoint),
                           '--methods', 'gnn,none,uniform', '--phi', '0.3')
        run = EvaluationRun.objects.get()
        self.assertEqual(run.status, 'completed')
        self.assertEqual(run.phi_protocol, '0.3')
        self.assertEqual(run.n_fields, 3)
        self.assertEqual(sorted(run.scores.values_list('method', flat=True)), ['gnn', 'none', 'uniform'])
        self.assertEqual(list(run.scores.values_list('rank', flat=True)), [1, 2, 3])
        self.assertTrue((self.out / 'report.csv').exists())
        self.assertTrue((self.out / 'allocation_histogram.csv').exists())
        self.assertIn('report written', output)

    def test_genome_of_other_policy(self):
        checkpoint = make_checkpoint(self.out / 'train')
        genome = self.out / 'best_genome.json'
        genome.write_text(json.dumps({'policy': 'baseline2', 'genome': [2.0, 2.0, 2.0, 0.0]}))
        with self.assertRaises(CommandError) as ctx:
            self.call('evaluate', '--checkpoint', str(checkpoint), '--baseline1', str(genome))
        self.assertIn('expected baseline1', str(ctx.exception))


class BaselineCommandTest(CommandTestCase):

    def test_search_is_recorded(self):
        checkpoint = make_checkpoint(self.out / 'train')
        output = self.call('baseline', '--checkpoint', str(checkpoint), '--policy', 'baseline1')
        search = BaselineSearch.objects.get()
        self.assertEqual(search.status, 'completed')
        self.assertEqual(len(search.best_genome), 1)
        self.assertEqual(len(search.history), 2)

        saved = json.loads((self.out / 'baseline1' / 'best_genome.json').read_text())
        self.assertEqual(saved['policy'], 'baseline1')
        self.assertEqual(saved['genome'], search.best_genome)
        with open(self.out / 'baseline1' / 'ga_history.csv', newline='') as handle:
            self.assertEqual(len(list(csv.DictReader(handle))), 2)
        self.assertIn('best baseline1 genome', output)

    @patch('galaxy_allocation.survey.management.commands.baseline.celery_map')
    def test_celery_scoring(self, mock_celery_map):
        """--celery hands each generation to the Celery map."""
        mock_celery_map.return_value = lambda fitness, genomes: [fitness(g) for g in genomes]
        checkpoint = make_checkpoint(self.out / 'train')
        self.call('baseline', '--checkpoint', str(checkpoint), '--celery')
        self.assertEqual(mock_celery_map.call_count, 1)
        self.assertEqual(mock_celery_map.call_args.args[2], 'baseline1')
        self.assertEqual(BaselineSearch.objects.get().status, 'completed')
