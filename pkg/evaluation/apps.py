from django.apps import AppConfig


class EvaluationConfig(AppConfig):
    name = 'evaluation'
    verbose_name = 'Reprojection-error evaluation'
