from django.urls import path
from . import views

urlpatterns = [
    path('health/', views.health_check, name='health_check'),
    path('api/presets/', views.list_presets, name='list_presets'),
    path('api/render/', views.render_scenario, name='render_scenario'),
]
