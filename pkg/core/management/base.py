"""
Shared plumbing for the toolkit's management commands: parameter flags, exit
codes and removal of partial outputs when a command fails.
"""
from argparse import ArgumentTypeError
from pathlib import Path

from django.conf import settings
from django.core.exceptions import ValidationError
from django.core.management.base import BaseCommand, CommandError

from core.exceptions import InvalidParams, NumericError
from core.params import EcdtParams

EXIT_USAGE = 1
EXIT_IO = 2
EXIT_NUMERIC = 3

PARAM_FLAGS = [
    ('--k', 'k', int, 'Neighbor count for the purity vote'),
    ('--r', 'r', float, 'k-NN search radius in scaled (x, y, t*time_scale) units'),
    ('--phi-min', 'phi_min', float, 'Minimum purity score for a core point'),
    ('--time-scale', 'time_scale', float, 'Pixels per second used to scale timestamps'),
    ('--min-feature-age', 'min_feature_age', float, 'Drop tracks younger than this (s)'),
    ('--t-w', 't_w', float, 'Moving-average window (s)'),
    ('--search-time', 'search_time', float, 'Temporal search limit for head/tail matching (s)'),
    ('--iou-threshold', 'iou_threshold', float, 'Minimum IoU for a head/tail match'),
    ('--delta-t', 'delta_t', float, 'Head/tail descriptor window (s)'),
    ('--proximity-radius', 'proximity_radius', float, 'Max tail/head centroid distance (px)'),
]


def describe(exc):
    """One-line diagnostic for an exception."""
    if isinstance(exc, ValidationError):
        text = '; '.join(exc.messages)
    else:
        text = str(exc)
    return f'{type(exc).__name__}: {" ".join(text.split())}'


def parse_thresholds(value):
    """argparse type for a comma-separated list of positive pixel thresholds."""
    try:
        thresholds = [float(v) for v in value.split(',') if v.strip()]
    except ValueError:
        raise ArgumentTypeError(f'invalid threshold list: {value!r}')
    if not thresholds or not all(th > 0 for th in thresholds):
        raise ArgumentTypeError('thresholds must be a non-empty list of positive pixel values')
    return thresholds


class EcdtCommand(BaseCommand):
    """
    Base class for toolkit commands.

    Subclasses implement ``run`` and call ``register_output`` for every file
    they create; those files are deleted if the command fails.
    """

    def create_parser(self, prog_name, subcommand, **kwargs):
        parser = super().create_parser(prog_name, subcommand, **kwargs)
        argparse_exit = parser.exit

        def exit(status=0, message=None):
            # argparse reports usage problems with status 2
            argparse_exit(EXIT_USAGE if status == 2 else status, message)

        parser.exit = exit
        return parser

    def add_param_arguments(self, parser):
        for flag, dest, cast, help_text in PARAM_FLAGS:
            parser.add_argument(flag, dest=dest, type=cast, default=None, help=f'{help_text} (settings default)')
        parser.add_argument(
            '--print-params',
            action='store_true',
            help='Write the effective configuration as a # header into every output file',
        )

    def add_threads_argument(self, parser):
        parser.add_argument(
            '--threads',
            type=int,
            default=None,
            help='Worker threads (default: ECDT_THREADS, i.e. hardware parallelism)',
        )

    def params_from_options(self, options):
        overrides = {dest: options.get(dest) for _, dest, _, _ in PARAM_FLAGS}
        return EcdtParams.from_settings(**overrides)

    def threads_from_options(self, options):
        threads = options.get('threads')
        if threads is None:
            threads = settings.ECDT_THREADS
        if threads < 1:
            raise CommandError('--threads must be at least 1', returncode=EXIT_USAGE)
        return threads

    def register_output(self, path):
        path = Path(path)
        self._outputs.append(path)
        return path

    def handle(self, *args, **options):
        self._outputs = []
        try:
            self.run(*args, **options)
        except Exception as exc:
            for path in self._outputs:
                path.unlink(missing_ok=True)
            if isinstance(exc, CommandError):
                raise
            if isinstance(exc, InvalidParams):
                raise CommandError(describe(exc), returncode=EXIT_USAGE) from exc
            if isinstance(exc, (ValidationError, OSError)):
                raise CommandError(describe(exc), returncode=EXIT_IO) from exc
            if isinstance(exc, NumericError):
                raise CommandError(describe(exc), returncode=EXIT_NUMERIC) from exc
            raise

    def run(self, *args, **options):
        raise NotImplementedError('subclasses of EcdtCommand must provide a run() method')
