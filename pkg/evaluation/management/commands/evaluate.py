"""
Management command evaluating feature tracks against ground-truth poses
Run with: python manage.py evaluate tracks.csv poses.txt calib.txt
Triangulates every track and reports feature age and reprojection error per outlier threshold
"""
from django.conf import settings

from core.io import read_calib, read_poses, read_tracks
from core.management.base import EcdtCommand, parse_thresholds
from evaluation.statistics import evaluate_tracks, format_summary, write_per_track, write_summary


class Command(EcdtCommand):
    help = 'Triangulate tracks with ground-truth poses and summarise RMSE and feature age per threshold'

    def add_arguments(self, parser):
        parser.add_argument('tracks', type=str, help='Tracks CSV written by the track command')
        parser.add_argument('poses', type=str, help='Ground-truth poses, "t px py pz qx qy qz qw" lines')
        parser.add_argument('calib', type=str, help='Calibration file, "fx fy cx cy k1 k2 p1 p2 k3"')
        parser.add_argument(
            '--thresholds',
            type=parse_thresholds,
            default=None,
            help='Comma-separated outlier thresholds in pixels (default: ECDT_THRESHOLDS)',
        )
        parser.add_argument('--summary-out', type=str, default=None, help='Per-threshold summary CSV')
        parser.add_argument('--per-track-out', type=str, default=None, help='Per-track CSV')
        parser.add_argument(
            '--literal-rmse',
            action='store_true',
            help='Add an rmse_literal_px column computed as sqrt(sum d^2) / N',
        )
        parser.add_argument(
            '--print-params',
            action='store_true',
            help='Write the thresholds and inputs as a # header into every output file',
        )
        self.add_threads_argument(parser)

    def run(self, *args, **options):
        thresholds = options['thresholds'] or list(settings.ECDT_THRESHOLDS)
        threads = self.threads_from_options(options)

        tracks = read_tracks(options['tracks'])
        poses = read_poses(options['poses'])
        intrinsics = read_calib(options['calib'])
        self.stdout.write(f'  Evaluating {len(tracks)} tracks against {len(poses)} poses')

        report = evaluate_tracks(tracks, poses, intrinsics, thresholds, workers=threads)

        header = ''
        if options['print_params']:
            header = ''.join(
                f'# {key}={value}\n' for key, value in (
                    ('tracks', options['tracks']),
                    ('poses', options['poses']),
                    ('calib', options['calib']),
                    ('thresholds', ','.join(f'{th:g}' for th in thresholds)),
                )
            )
        if options['per_track_out']:
            write_per_track(
                report.evaluations, self.register_output(options['per_track_out']),
                header=header, literal=options['literal_rmse'],
            )
        if options['summary_out']:
            write_summary(report.summaries, self.register_output(options['summary_out']), header=header)

        if report.skipped:
            self.stdout.write(self.style.WARNING(f'⚠ {len(report.skipped)} tracks could not be triangulated'))
        self.stdout.write(format_summary(report.summaries))
        self.stdout.write(self.style.SUCCESS(f'✓ Evaluated {report.total} tracks'))
