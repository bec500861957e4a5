from django.apps import AppConfig


class ParamsConfig(AppConfig):
    default_auto_field = "django.db.models.BigAutoField"
    name = "params"
