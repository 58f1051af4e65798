"""
URL configuration for vmsched project.

Only the admin is served; runs are driven through the management commands.
"""

from django.contrib import admin
from django.urls import path

urlpatterns = [
    path("admin/", admin.site.urls),
]
