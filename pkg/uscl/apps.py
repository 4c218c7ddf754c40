from django.apps import AppConfig


class UsclConfig(AppConfig):
    default_auto_field = "django.db.models.BigAutoField"
    name = "uscl"
    verbose_name = "Ultrasound contrastive pre-training"
