import logging

from django.db import models as models

from core.config import ARMS

logger = logging.getLogger(__name__)

EXPERIMENT_STATUS_CHOICE = (
    ("pending", "pending"),
    ("running", "running"),
    ("done", "done"),
    ("failed", "failed"),
)

ARM_CHOICE = tuple((arm, arm) for arm in ARMS)


class Experiment(models.Model):
    name = models.CharField(max_length=255, blank=True)
    seed = models.BigIntegerField(default=0)
    # validated experiment config, see core.config
    config = models.JSONField(default=dict)
    status = models.CharField(max_length=16, choices=EXPERIMENT_STATUS_CHOICE, default="pending")
    summary = models.JSONField(null=True, blank=True)
    created_at = models.DateTimeField(auto_now_add=True)
    updated_at = models.DateTimeField(auto_now=True)

    def __str__(self):
        return '{}: {} ({})'.format(self.pk, self.name or 'experiment', self.status)


class RoundMetric(models.Model):
    experiment = models.ForeignKey(Experiment, on_delete=models.CASCADE, related_name='rounds')
    rep = models.PositiveIntegerField()
    round = models.PositiveIntegerField()
    arm = models.CharField(max_length=64, choices=ARM_CHOICE)
    server_id = models.CharField(max_length=64)
    # null when the server got no participant
    global_accuracy = models.FloatField(null=True)
    mean_reward = models.FloatField(default=0)
    cohort_size = models.PositiveIntegerField(default=0)
    bootstrap_inquiries = models.PositiveIntegerField(default=0)
    bootstrap_refusals = models.PositiveIntegerField(default=0)
    bootstrap_mse = models.FloatField(null=True)

    class Meta:
        ordering = ['rep', 'round', 'arm', 'server_id']
        unique_together = ['experiment', 'rep', 'round', 'arm', 'server_id']

    def __str__(self):
        return '{}/{}/{}/{}/{}'.format(self.experiment_id, self.rep, self.round, self.arm, self.server_id)
