# bench/management/commands/gen_data.py
import logging
from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from bench.cli import (EXIT_CONFIG, build_config, data_dir, ensure_writable_dir, io_error, preset,
                       workbench_config)
from services.config import EnvironmentConfig
from services.dataset import ENV_TO_SPACE, DatasetError, generate_dataset
from services.environment import GenerationError

logger = logging.getLogger(__name__)


class Command(BaseCommand):
    help = 'Generate workspaces and scenarios and collect uniform RRT* demonstrations'

    def add_arguments(self, parser):
        parser.add_argument('--env', choices=sorted(ENV_TO_SPACE), default='2d', help='State space family')
        parser.add_argument('--workspaces', type=int, help='Number of workspaces (preset default)')
        parser.add_argument('--scenarios-per', type=int, help='Scenarios per workspace (preset default)')
        parser.add_argument('--obstacles', type=int, help='Obstacles per workspace (preset default)')
        parser.add_argument('--seed', type=int, default=0, help='Master seed')
        parser.add_argument('--out', help='Output dataset directory')
        parser.add_argument('--max-samples', type=int, help='RRT* budget per scenario (default 2000)')
        parser.add_argument('--test-fraction', type=float, default=0.2,
                            help='Fraction of workspaces held out for evaluation')
        parser.add_argument('--preset', help='desk or full')
        parser.add_argument('--no-progress', action='store_true', help='Hide progress bars')

    def handle(self, *args, **options):
        chosen = preset(options['preset'])
        cfg = workbench_config()
        env_config = build_config(EnvironmentConfig, {
            'angular_weight': cfg.get('ANGULAR_WEIGHT', 1.0),
            'collision_step': cfg.get('COLLISION_STEP', 0.1),
        })
        workspaces = options['workspaces'] or chosen['workspaces']
        scenarios_per = options['scenarios_per'] or chosen['scenarios_per']
        obstacles = chosen['obstacles'] if options['obstacles'] is None else options['obstacles']
        max_samples = options['max_samples'] or chosen['data_max_samples']
        out = options['out'] or str(data_dir() / f"dataset-{options['env']}")
        root = ensure_writable_dir(Path(out))

        self.stdout.write(self.style.SUCCESS(
            f"Generating {workspaces} x {scenarios_per} {options['env']} scenarios "
            f"({obstacles} obstacles, preset {chosen['name']})..."))
        try:
            dataset = generate_dataset(options['env'], workspaces, scenarios_per, obstacles, options['seed'],
                                       env_config, max_samples, options['test_fraction'], chosen['name'],
                                       progress=not options['no_progress'])
        except (ValueError, GenerationError) as exc:
            raise CommandError(str(exc), returncode=EXIT_CONFIG) from exc
        try:
            dataset.save(root)
        except DatasetError as exc:
            raise io_error(exc)

        counts = dataset.manifest['counts']
        rate = 100.0 * dataset.manifest['collection_success_rate']
        self.stdout.write(self.style.SUCCESS(
            f"✓ {counts['paths']} paths from {counts['scenarios']} scenarios "
            f"(collection success {rate:.1f}%) written to {root}"))
        if counts['skipped_scenarios']:
            self.stdout.write(self.style.WARNING(f"⚠️ {counts['skipped_scenarios']} scenarios could not be placed"))
