"""
Management command running the eCDT pipeline on an event file
Run with: python manage.py track events.txt --out tracks.csv
Writes one moving-average track per cluster chain as chain_id,t,x,y rows
"""
from django.conf import settings
from django.core.management.base import CommandError

from core.io import read_calib, read_events, write_tracks
from core.management.base import EXIT_USAGE, EcdtCommand
from tracking.pipeline import run_pipeline, write_labels


class Command(EcdtCommand):
    help = 'Cluster events with KCSCAN, link clusters by head/tail matching and write feature tracks'

    def add_arguments(self, parser):
        parser.add_argument('events', type=str, help='Event file with "t x y p" lines')
        parser.add_argument('--out', type=str, required=True, help='Output tracks CSV')
        parser.add_argument('--calib', type=str, default=None, help='Camera calibration file (validated, recorded in the header)')
        parser.add_argument('--no-ht', action='store_true', help='Skip head/tail matching: one chain per cluster')
        parser.add_argument('--t-begin', type=float, default=None, help='Only process events at or after this time (s)')
        parser.add_argument('--t-end', type=float, default=None, help='Only process events at or before this time (s)')
        parser.add_argument(
            '--sample-period',
            type=float,
            default=None,
            help='Track sampling period in seconds (default: ECDT_SAMPLE_PERIOD)',
        )
        parser.add_argument('--per-event', action='store_true', help='Emit a track point at every event timestamp')
        parser.add_argument(
            '--chunk-duration',
            type=float,
            default=None,
            help='Cluster consecutive chunks of this many seconds independently',
        )
        parser.add_argument(
            '--opposite-polarity-only',
            action='store_true',
            help='Only link clusters whose polarities differ',
        )
        parser.add_argument('--labels-out', type=str, default=None, help='Per-event cluster/chain labels CSV')
        parser.add_argument('--width', type=int, default=None, help='Sensor width in pixels (default: ECDT_SENSOR_WIDTH)')
        parser.add_argument('--height', type=int, default=None, help='Sensor height in pixels (default: ECDT_SENSOR_HEIGHT)')
        self.add_param_arguments(parser)
        self.add_threads_argument(parser)

    def run(self, *args, **options):
        t_begin, t_end = options['t_begin'], options['t_end']
        if t_begin is not None and t_end is not None and t_begin > t_end:
            raise CommandError(f'--t-begin {t_begin} is after --t-end {t_end}', returncode=EXIT_USAGE)
        sample_period = options['sample_period']
        if sample_period is None:
            sample_period = settings.ECDT_SAMPLE_PERIOD
        if sample_period <= 0:
            raise CommandError('--sample-period must be positive', returncode=EXIT_USAGE)
        if options['chunk_duration'] is not None and options['chunk_duration'] <= 0:
            raise CommandError('--chunk-duration must be positive', returncode=EXIT_USAGE)
        params = self.params_from_options(options)
        threads = self.threads_from_options(options)

        intrinsics = read_calib(options['calib']) if options['calib'] else None
        events = read_events(options['events'], width=options['width'], height=options['height'])
        self.stdout.write(f'  Read {len(events)} events from {options["events"]}')

        result = run_pipeline(
            events,
            params,
            t_begin=t_begin,
            t_end=t_end,
            use_ht=not options['no_ht'],
            chunk_duration=options['chunk_duration'],
            sample_period=sample_period,
            per_event=options['per_event'],
            opposite_polarity_only=options['opposite_polarity_only'],
            workers=threads,
        )

        header = ''
        if options['print_params']:
            extra = {
                'ht_matching': not options['no_ht'],
                'opposite_polarity_only': options['opposite_polarity_only'],
                't_begin': t_begin,
                't_end': t_end,
                'sample_period': 'per-event' if options['per_event'] else sample_period,
                'chunk_duration': options['chunk_duration'],
            }
            if intrinsics is not None:
                extra['calib'] = ' '.join(
                    f'{v:g}' for v in (intrinsics.fx, intrinsics.fy, intrinsics.cx, intrinsics.cy, *intrinsics.distortion)
                )
            header = params.as_header(extra)

        write_tracks(result.tracks, self.register_output(options['out']), header=header)
        if options['labels_out']:
            write_labels(result, self.register_output(options['labels_out']), header=header)

        self.stdout.write(self.style.SUCCESS(
            f'✓ {len(result.labeling.clusters)} clusters, {len(result.chains)} chains, '
            f'{len(result.tracks)} tracks written to {options["out"]}'
        ))
