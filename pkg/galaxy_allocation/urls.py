"""
URL configuration for the galaxy_allocation project.

- The survey app: read-only run registry API and its schema.
- The Django admin interface.
"""
from django.contrib import admin
from django.urls import include, path

urlpatterns = [
    path('survey/', include('galaxy_allocation.survey.urls')),
    path('admin/', admin.site.urls),
]
