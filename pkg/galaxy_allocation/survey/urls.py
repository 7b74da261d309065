"""URL configuration for the survey app."""
from django.urls import include, path

urlpatterns = [
    path('api/', include('galaxy_allocation.survey.api.urls')),
]
