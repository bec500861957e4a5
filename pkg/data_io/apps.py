from django.apps import AppConfig


class DataIoConfig(AppConfig):
    default_auto_field = "django.db.models.BigAutoField"
    name = "data_io"
