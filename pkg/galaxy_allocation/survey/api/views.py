"""Views (API).

Read-only access to training runs, evaluations and baseline searches.
"""
from rest_framework import viewsets

from galaxy_allocation.survey.api.serializers import (
    BaselineSearchSerializer,
    EvaluationRunSerializer,
    TrainingRunSerializer,
)
from galaxy_allocation.survey.models import BaselineSearch, EvaluationRun, TrainingRun


class StatusFilterMixin:
    """Narrow the listing with ``?status=completed``."""

    def get_queryset(self):
        qs = super().get_queryset()
        status = self.request.query_params.get('status')
        if status:
            qs = qs.filter(status=status)
        return qs


class TrainingRunViewSet(StatusFilterMixin, viewsets.ReadOnlyModelViewSet):
    """List and inspect training runs."""

    queryset = TrainingRun.objects.all()
    serializer_class = TrainingRunSerializer


class EvaluationRunViewSet(StatusFilterMixin, viewsets.ReadOnlyModelViewSet):
    """List evaluations with their method rankings."""

    queryset = EvaluationRun.objects.prefetch_related('scores')
    serializer_class = EvaluationRunSerializer


class BaselineSearchViewSet(StatusFilterMixin, viewsets.ReadOnlyModelViewSet):
    """List GA searches over the classical policies."""

    queryset = BaselineSearch.objects.all()
    serializer_class = BaselineSearchSerializer
