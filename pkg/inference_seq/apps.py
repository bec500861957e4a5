from django.apps import AppConfig


class InferenceSeqConfig(AppConfig):
    default_auto_field = "django.db.models.BigAutoField"
    name = "inference_seq"
