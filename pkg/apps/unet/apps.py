from django.apps import AppConfig


class UnetConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'apps.unet'
    verbose_name = 'UNet'
