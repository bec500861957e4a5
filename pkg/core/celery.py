from __future__ import absolute_import, unicode_literals
import os
from celery import Celery

# Set the default Django settings module for the 'celery' program.
os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'epiregime.settings')

app = Celery('epiregime')

# Using a string here means the worker doesn't have to serialize
# the configuration object to child processes.
app.config_from_object('django.conf:settings', namespace='CELERY')

# Load task modules from all registered Django app configs.
app.autodiscover_tasks()

app.conf.task_track_started = True
# A long chain can run for hours
app.conf.task_time_limit = 6 * 60 * 60
app.conf.task_soft_time_limit = 5 * 60 * 60 + 45 * 60
