"""
URL configuration for the run registry API.
"""

from django.urls import include, path
from rest_framework.routers import DefaultRouter
from drf_spectacular.views import SpectacularAPIView, SpectacularSwaggerView
from galaxy_allocation.survey.api import views


router = DefaultRouter()
router.register(r'training-runs', views.TrainingRunViewSet, basename='training-run')
router.register(r'evaluations', views.EvaluationRunViewSet, basename='evaluation')
router.register(r'baseline-searches', views.BaselineSearchViewSet, basename='baseline-search')

urlpatterns = [
    path("", include(router.urls)),
    path("schema/", SpectacularAPIView.as_view(), name='schema'),
    path("docs/", SpectacularSwaggerView.as_view(url_name='schema'), name='swagger-ui'),
]
