from django.apps import AppConfig


class HsmmConfig(AppConfig):
    default_auto_field = "django.db.models.BigAutoField"
    name = "hsmm"
