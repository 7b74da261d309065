"""
Admin configuration for the survey application.

Runs are created by management commands and tasks; the admin is for
browsing them, so result fields are read-only.
"""
from django.contrib import admin
from .models import BaselineSearch, EvaluationRun, MethodScore, TrainingRun


@admin.register(TrainingRun)
class TrainingRunAdmin(admin.ModelAdmin):
    """Admin interface options for the TrainingRun model."""

    list_display = ('id', 'status', 'seed', 'steps_completed', 'final_loss',
                    'final_tau', 'created')
    list_filter = ('status', 'stopped_early')
    search_fields = ('out_dir', 'checkpoint')
    readonly_fields = ('steps_completed', 'final_loss', 'final_sum_r', 'final_tau',
                       'stopped_early', 'checkpoint', 'config_digest', 'error')


class MethodScoreInline(admin.TabularInline):
    """Per-method scores shown inside their evaluation."""

    model = MethodScore
    extra = 0
    can_delete = False
    fields = ('rank', 'method', 'precision', 'std', 'bias', 'n_fields')
    readonly_fields = fields


@admin.register(EvaluationRun)
class EvaluationRunAdmin(admin.ModelAdmin):
    """Admin interface options for the EvaluationRun model."""

    inlines = [MethodScoreInline]
    list_display = ('id', 'status', 'checkpoint', 'phi_protocol', 'n_fields', 'created')
    list_filter = ('status', 'phi_protocol')


@admin.register(BaselineSearch)
class BaselineSearchAdmin(admin.ModelAdmin):
    """Admin interface options for the BaselineSearch model."""

    list_display = ('id', 'policy', 'status', 'best_fitness', 'created')
    list_filter = ('policy', 'status')
    readonly_fields = ('best_genome', 'best_fitness', 'history', 'error')


@admin.register(MethodScore)
class MethodScoreAdmin(admin.ModelAdmin):
    list_display = ('evaluation', 'rank', 'method', 'precision', 'std')
    list_filter = ('method',)
