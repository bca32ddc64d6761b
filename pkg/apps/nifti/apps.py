from django.apps import AppConfig


class NiftiConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'apps.nifti'
    verbose_name = 'NIfTI'
