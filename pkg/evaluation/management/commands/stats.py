"""
Management command printing feature-age and RMSE statistics of per-track tables
Run with: python manage.py stats per_track.csv [more.csv ...] [--baseline other.csv]
"""
from django.conf import settings

from core.management.base import EcdtCommand, parse_thresholds
from evaluation.statistics import (
    average_summaries,
    compare_summaries,
    format_comparison,
    format_summary,
    read_per_track,
    summarize,
)


class Command(EcdtCommand):
    help = 'Mean, median and standard deviation of feature age and RMSE per outlier threshold'

    def add_arguments(self, parser):
        parser.add_argument('per_track', nargs='+', type=str, help='Per-track CSVs written by evaluate')
        parser.add_argument(
            '--thresholds',
            type=parse_thresholds,
            default=None,
            help='Comma-separated outlier thresholds in pixels (default: ECDT_THRESHOLDS)',
        )
        parser.add_argument(
            '--baseline',
            nargs='+',
            type=str,
            default=None,
            help='Per-track CSVs of a baseline run; prints the percentage change against them',
        )

    def _summaries(self, paths, thresholds, show):
        per_sequence = []
        for path in paths:
            summaries = summarize(read_per_track(path), thresholds)
            per_sequence.append(summaries)
            if show:
                self.stdout.write(format_summary(summaries, title=f'\n{path}'))
        return per_sequence[0] if len(per_sequence) == 1 else average_summaries(per_sequence)

    def run(self, *args, **options):
        thresholds = options['thresholds'] or list(settings.ECDT_THRESHOLDS)
        paths = options['per_track']
        current = self._summaries(paths, thresholds, show=True)
        if len(paths) > 1:
            self.stdout.write(format_summary(current, title=f'\nAverage over {len(paths)} sequences'))

        if options['baseline']:
            baseline = self._summaries(options['baseline'], thresholds, show=False)
            self.stdout.write('\nChange against baseline')
            self.stdout.write(format_comparison(compare_summaries(current, baseline)))
