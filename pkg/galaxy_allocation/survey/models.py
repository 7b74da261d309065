"""Models.

Registry of training runs, evaluations (with per-method scores) and
baseline GA searches. The numerical work lives in
``galaxy_allocation.services``; these rows record what was run, with which
configuration and where its artifacts were written.
"""
import math

from django.db import models
from model_utils import Choices
from model_utils.models import StatusModel, TimeStampedModel

SEED_FIELD = dict(max_digits=20, decimal_places=0)


class RunQuerySet(models.QuerySet):
    """Status shortcuts shared by every run type."""

    def finished(self):
        return self.filter(status='completed')

    def active(self):
        return self.filter(status__in=['pending', 'running'])


class Run(TimeStampedModel, StatusModel):
    """Common bookkeeping: status, seed, configuration and output directory."""

    STATUS = Choices('pending', 'running', 'completed', 'failed')

    seed = models.DecimalField(**SEED_FIELD, default=0)
    config = models.JSONField(default=dict)
    config_digest = models.CharField(max_length=64, blank=True)
    out_dir = models.CharField(max_length=500)
    error = models.TextField(blank=True)

    objects = RunQuerySet.as_manager()

    class Meta:
        abstract = True
        ordering = ['-created', '-id']


class TrainingRun(Run):
    """One invocation of the joint training loop."""

    resume_from = models.CharField(max_length=500, blank=True)
    steps_completed = models.PositiveIntegerField(default=0)
    final_loss = models.FloatField(null=True, blank=True)
    final_sum_r = models.FloatField(null=True, blank=True)
    final_tau = models.FloatField(null=True, blank=True)
    stopped_early = models.BooleanField(default=False)
    checkpoint = models.CharField(max_length=500, blank=True)

    class Meta(Run.Meta):
        pass

    def __str__(self):
        """Training run representation."""
        return f'Training run {self.pk} ({self.status})'

    @property
    def budget(self):
        return self.config.get('train', {}).get('budget')

    @property
    def budget_violation(self):
        """Relative miss ``|sum r - H| / H`` of the last logged step."""
        if self.final_sum_r is None or not self.budget:
            return None
        return abs(self.final_sum_r - self.budget) / self.budget


class EvaluationRun(Run):
    """Comparison of allocation methods on held-out fields."""

    checkpoint = models.CharField(max_length=500)
    phi_protocol = models.CharField(max_length=32)
    n_fields = models.PositiveIntegerField()

    class Meta(Run.Meta):
        pass

    def __str__(self):
        """Evaluation representation."""
        return f'Evaluation {self.pk} of {self.checkpoint}'


class MethodScore(models.Model):
    """Precision of one method in one evaluation; ``precision`` is null for zero variance."""

    evaluation = models.ForeignKey(EvaluationRun, on_delete=models.CASCADE,
                                   related_name='scores')
    method = models.CharField(max_length=32)
    rank = models.PositiveIntegerField()
    precision = models.FloatField(null=True, blank=True)
    std = models.FloatField()
    bias = models.FloatField()
    n_fields = models.PositiveIntegerField()

    class Meta:
        ordering = ['evaluation', 'rank']
        constraints = [
            models.UniqueConstraint(
                fields=['evaluation', 'method'],
                name='unique_method_per_evaluation'
            )
        ]

    def __str__(self):
        """Score representation."""
        return f'{self.method}: {self.precision}'

    @classmethod
    def from_result(cls, evaluation, rank, result):
        precision = result.precision if math.isfinite(result.precision) else None
        return cls(evaluation=evaluation, method=result.method, rank=rank,
                   precision=precision, std=result.std, bias=result.bias,
                   n_fields=result.n_fields)


class BaselineSearch(Run):
    """GA tuning of a classical policy against the trained inference network."""

    POLICY = Choices(('baseline1', 'Luminosity threshold'), ('baseline2', 'Beta template'))

    policy = models.CharField(max_length=16, choices=POLICY)
    checkpoint = models.CharField(max_length=500)
    best_genome = models.JSONField(default=list, blank=True)
    best_fitness = models.FloatField(null=True, blank=True)
    history = models.JSONField(default=list, blank=True)

    class Meta(Run.Meta):
        verbose_name_plural = 'baseline searches'

    def __str__(self):
        """Search representation."""
        return f'{self.get_policy_display()} search {self.pk}'
