from django.apps import AppConfig


class GrpoConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'grpo'
    verbose_name = 'Group-relative policy optimization'
