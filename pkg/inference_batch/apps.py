from django.apps import AppConfig


class InferenceBatchConfig(AppConfig):
    default_auto_field = "django.db.models.BigAutoField"
    name = "inference_batch"
