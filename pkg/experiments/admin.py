from django.contrib import admin

from .models import EpisodeRecord, Run

admin.site.register(Run)
admin.site.register(EpisodeRecord)
