"""Celery application for background training runs and GA fitness fan-out."""
import os
from celery import Celery

os.environ.setdefault("DJANGO_SETTINGS_MODULE", "galaxy_allocation.settings")
app = Celery("galaxy_allocation")
app.config_from_object("django.conf:settings", namespace="CELERY")
app.autodiscover_tasks()
