from django.contrib import admin

from .models import Experiment, RoundMetric

admin.site.register(Experiment)
admin.site.register(RoundMetric)
