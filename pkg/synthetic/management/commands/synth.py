"""
Management command writing a synthetic ground-truth scene
Run with: python manage.py synth reversal out/reversal --seed 3
"""
from pathlib import Path

from django.core.management.base import CommandError

from core.management.base import EXIT_USAGE, EcdtCommand
from synthetic import scenes

SCENES = ['crossing-bands', 'translating-bar', 'reversal', 'projected', 'projected-rotation']


class Command(EcdtCommand):
    help = 'Generate a deterministic synthetic scene (events or tracks) with its ground truth'

    def add_arguments(self, parser):
        parser.add_argument('scene', choices=SCENES, help='Scene to generate')
        parser.add_argument('out_dir', type=str, help='Directory receiving the scene files (created if missing)')
        parser.add_argument('--seed', type=int, default=0, help='Random seed (default: 0)')
        parser.add_argument('--duration', type=float, default=None, help='Scene duration in seconds')
        parser.add_argument('--velocity', type=float, default=100.0, help='Edge velocity in px/s (default: 100)')
        parser.add_argument('--event-rate', type=float, default=30000.0, help='Events per second per edge')
        parser.add_argument('--length', type=int, default=20, help='Edge length in pixels (default: 20)')
        parser.add_argument('--n-edges', type=int, default=1, help='Reversal scene: number of edges')
        parser.add_argument('--density', type=float, default=2.0, help='Crossing bands: events per square pixel')
        parser.add_argument('--width', type=int, default=None, help='Sensor width in pixels')
        parser.add_argument('--height', type=int, default=None, help='Sensor height in pixels')
        parser.add_argument('--n-points', type=int, default=50, help='Projected scenes: number of 3D points')
        parser.add_argument('--noise', type=float, default=0.0, help='Projected scenes: RMS pixel noise')

    def _sensor(self, options, width, height):
        return {'width': options['width'] or width, 'height': options['height'] or height}

    def run(self, *args, **options):
        name = options['scene']
        duration = options['duration']
        if duration is not None and duration <= 0:
            raise CommandError('--duration must be positive', returncode=EXIT_USAGE)
        out_dir = Path(options['out_dir'])
        out_dir.mkdir(parents=True, exist_ok=True)
        seed = options['seed']

        if name == 'crossing-bands':
            scene = scenes.gen_crossing_bands(
                density=options['density'], seed=seed, duration=duration or 0.004,
                **self._sensor(options, 128, 128),
            )
        elif name == 'translating-bar':
            scene = scenes.gen_translating_bar(
                velocity=options['velocity'], length=options['length'], duration=duration or 1.0,
                event_rate=options['event_rate'], seed=seed, **self._sensor(options, 240, 180),
            )
        elif name == 'reversal':
            scene = scenes.gen_reversal_scene(
                velocity=options['velocity'], phase_duration=duration or 0.5, length=options['length'],
                event_rate=options['event_rate'], seed=seed, n_edges=options['n_edges'],
                **self._sensor(options, 240, 180),
            )
        else:
            scene = scenes.gen_projected_scene(
                n_points=options['n_points'], noise=options['noise'], seed=seed,
                trajectory='rotation' if name == 'projected-rotation' else 'translation',
                duration=duration or 1.0,
            )

        if name.startswith('projected'):
            writer, files = scenes.write_projected_scene, scenes.PROJECTED_SCENE_FILES
        else:
            writer, files = scenes.write_event_scene, scenes.EVENT_SCENE_FILES
        for filename in files:
            self.register_output(out_dir / filename)
        paths = writer(scene, out_dir)
        for path in paths.values():
            self.stdout.write(f'  wrote {path}')
        self.stdout.write(self.style.SUCCESS(f'✓ Scene {name} (seed {seed}) written to {out_dir}'))
