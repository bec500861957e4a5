from django.db import models


class RunManifest(models.Model):
    """Database mirror of a run directory's manifest.json."""

    STATUS_CHOICES = [
        ("succeeded", "Succeeded"),
        ("failed", "Failed"),
    ]
    command = models.CharField(max_length=32)
    output_dir = models.CharField(max_length=1024)
    config_hash = models.CharField(max_length=64)
    seed = models.CharField(max_length=40, null=True, blank=True, help_text="Root seed as a decimal string")
    versions = models.JSONField(default=dict, blank=True)
    argv = models.JSONField(default=list, blank=True)
    outputs = models.JSONField(default=dict, blank=True)
    wall_clock_seconds = models.FloatField(default=0.0)
    status = models.CharField(max_length=16, choices=STATUS_CHOICES, default="succeeded")
    error = models.TextField(blank=True, default="")
    created_at = models.DateTimeField(auto_now_add=True)

    class Meta:
        ordering = ["-created_at"]

    def __str__(self):
        return f"{self.command} -> {self.output_dir} ({self.status})"
