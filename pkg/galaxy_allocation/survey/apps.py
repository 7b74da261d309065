"""App configuration for the survey application."""
from django.apps import AppConfig


class SurveyConfig(AppConfig):
    """Run registry for training, evaluation and baseline searches."""

    default_auto_field = 'django.db.models.BigAutoField'
    name = 'galaxy_allocation.survey'
    verbose_name = 'Survey allocation runs'
