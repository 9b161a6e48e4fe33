# silrrt/urls.py
from django.urls import path, include

urlpatterns = [
    path('', include('bench.urls')),
]
