"""Test module for API."""
from django.urls import reverse
from rest_framework import status
from rest_framework.test import APITestCase

from galaxy_allocation.survey.api.serializers import TrainingRunSerializer
from galaxy_allocation.survey.models import (
    BaselineSearch,
    EvaluationRun,
    MethodScore,
    TrainingRun,
)


class RunRegistryAPITest(APITestCase):
    """Tests for the read-only run registry endpoints."""

    @classmethod
    def setUpTestData(cls):
        """Set up initial test data: training runs, an evaluation and a search."""
        cls.completed = TrainingRun.objects.create(
            seed=1,
            config={'train': {'budget': 1000.0}},
            out_dir='runs/train',
            status='completed',
            steps_completed=5000,
            final_sum_r=1004.0,
            checkpoint='runs/train/checkpoints/step_005000.agnn',
        )
        cls.failed = TrainingRun.objects.create(
            seed=2,
            out_dir='runs/train2',
            status='failed',
            error='Training error: non-finite loss at step 12',
        )
        cls.evaluation = EvaluationRun.objects.create(
            out_dir='runs/evaluate',
            checkpoint=cls.completed.checkpoint,
            phi_protocol='prior',
            n_fields=50,
            status='completed',
        )
        MethodScore.objects.create(evaluation=cls.evaluation, method='none', rank=2,
                                   precision=40.0, std=0.16, bias=0.01, n_fields=50)
        MethodScore.objects.create(evaluation=cls.evaluation, method='gnn', rank=1,
                                   precision=None, std=0.0, bias=0.0, n_fields=50)
        cls.search = BaselineSearch.objects.create(
            out_dir='runs/baseline/baseline1',
            checkpoint=cls.completed.checkpoint,
            policy='baseline1',
            best_genome=[2.1],
            best_fitness=55.0,
            status='completed',
        )

    def test_list_training_runs(self):
        """List every training run, newest first."""
        response = self.client.get(reverse('training-run-list'))
        self.assertEqual(response.status_code, status.HTTP_200_OK)
        self.assertEqual(response.data['count'], 2)
        self.assertEqual(response.data['results'][0]['id'], self.failed.id)

    def test_filter_by_status(self):
        """The status query parameter narrows the listing."""
        response = self.client.get(reverse('training-run-list'), {'status': 'completed'})
        self.assertEqual(response.data['count'], 1)
        run = response.data['results'][0]
        self.assertEqual(run['steps_completed'], 5000)
        self.assertAlmostEqual(run['budget_violation'], 0.004)

    def test_training_run_detail(self):
        response = self.client.get(reverse('training-run-detail', kwargs={'pk': self.failed.pk}))
        self.assertEqual(response.status_code, status.HTTP_200_OK)
        self.assertIn('non-finite', response.data['error'])
        self.assertIsNone(response.data['budget_violation'])

    def test_evaluation_scores_are_ranked(self):
        """Scores are nested in rank order; infinite precision is null."""
        response = self.client.get(reverse('evaluation-detail', kwargs={'pk': self.evaluation.pk}))
        self.assertEqual(response.status_code, status.HTTP_200_OK)
        scores = response.data['scores']
        self.assertEqual([score['method'] for score in scores], ['gnn', 'none'])
        self.assertIsNone(scores[0]['precision'])

    def test_baseline_search_list(self):
        response = self.client.get(reverse('baseline-search-list'))
        self.assertEqual(response.data['count'], 1)
        self.assertEqual(response.data['results'][0]['best_genome'], [2.1])

    def test_registry_is_read_only(self):
        """Runs are created by commands, never through the API."""
        response = self.client.post(reverse('training-run-list'), {'out_dir': 'x'}, format='json')
        self.assertEqual(response.status_code, status.HTTP_405_METHOD_NOT_ALLOWED)
        response = self.client.delete(reverse('evaluation-detail', kwargs={'pk': self.evaluation.pk}))
        self.assertEqual(response.status_code, status.HTTP_405_METHOD_NOT_ALLOWED)

    def test_schema(self):
        response = self.client.get(reverse('schema'))
        self.assertEqual(response.status_code, status.HTTP_200_OK)

    def test_serializer_fields(self):
        data = TrainingRunSerializer(self.completed).data
        self.assertEqual(data['checkpoint'], self.completed.checkpoint)
        self.assertEqual(data['config']['train']['budget'], 1000.0)
