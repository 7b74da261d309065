"""Serializers for the run registry."""
from rest_framework import serializers
from ..models import BaselineSearch, EvaluationRun, MethodScore, TrainingRun


class TrainingRunSerializer(serializers.ModelSerializer):
    """Training run with its relative budget miss."""

    budget_violation = serializers.FloatField(read_only=True, allow_null=True)

    class Meta:
        model = TrainingRun
        fields = '__all__'


class MethodScoreSerializer(serializers.ModelSerializer):
    """Score of one method; ``precision`` is null when the residuals had zero variance."""

    class Meta:
        model = MethodScore
        fields = ['rank', 'method', 'precision', 'std', 'bias', 'n_fields']


class EvaluationRunSerializer(serializers.ModelSerializer):
    """Evaluation with its ranking table nested."""

    scores = MethodScoreSerializer(many=True, read_only=True)

    class Meta:
        model = EvaluationRun
        fields = '__all__'


class BaselineSearchSerializer(serializers.ModelSerializer):

    class Meta:
        model = BaselineSearch
        fields = '__all__'
