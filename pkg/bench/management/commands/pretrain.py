# bench/management/commands/pretrain.py
import logging
from pathlib import Path

import numpy as np
from django.core.management.base import BaseCommand, CommandError

from bench.cli import EXIT_CONFIG, build_config, io_error, load_network, preset, read_config_file, workbench_config
from services.autodiff import set_default_dtype
from services.checkpoint import CheckpointError, load_checkpoint
from services.config import DEFAULT_POINT_CLOUD_SIZE, SamplerConfig, TrainConfig
from services.dataset import DatasetError, load_dataset, write_csv
from services.sampler_model import SamplerModel
from services.training import (PRETRAIN_LOG_FIELDS, Demonstration, PretrainService, TrainingError,
                               optimizer_arrays, restore_optimizer)

logger = logging.getLogger(__name__)


class Command(BaseCommand):
    help = 'Pretrain the sampler network on dataset demonstrations (negative log-likelihood)'

    def add_arguments(self, parser):
        parser.add_argument('--data', required=True, help='Dataset directory from gen_data')
        parser.add_argument('--config', help='JSON file with optional "sampler" and "train" sections')
        parser.add_argument('--iters', type=int, help='Gradient steps (preset default)')
        parser.add_argument('--seed', type=int, default=0)
        parser.add_argument('--out-checkpoint', required=True)
        parser.add_argument('--resume', help='Continue from this sampler checkpoint')
        parser.add_argument('--log-csv', help='Training log (default: next to the checkpoint)')
        parser.add_argument('--preset', help='desk or full')
        parser.add_argument('--no-progress', action='store_true')

    def handle(self, *args, **options):
        chosen = preset(options['preset'])
        try:
            dataset = load_dataset(options['data'])
        except DatasetError as exc:
            raise io_error(exc)
        train_entries = dataset.entries_for('train')
        if not train_entries:
            raise CommandError(f"Dataset {options['data']} has no training paths", returncode=EXIT_CONFIG)

        file_config = read_config_file(options['config'])
        train_values = {'dtype': workbench_config().get('TRAIN_DTYPE', 'float64')}
        train_values.update(file_config.get('train', {}))
        train_config = build_config(TrainConfig, train_values)
        iters = chosen['pretrain_iters'] if options['iters'] is None else options['iters']
        set_default_dtype(train_config.dtype)

        space = dataset.scenarios[train_entries[0].scenario_id].space
        sampler_values = {'state_dim': space.dim, 'point_dim': space.ambient_dim}
        sampler_values.update(file_config.get('sampler', {}))

        start_iteration = 0
        optimizer_state = None
        meta = {}
        if options['resume']:
            model = load_network(SamplerModel, options['resume'], 'Sampler')
            if 'sampler' in file_config and build_config(SamplerConfig, sampler_values) != model.config:
                raise CommandError('--config sampler section does not match the checkpoint architecture',
                                   returncode=EXIT_CONFIG)
            try:
                checkpoint = load_checkpoint(options['resume'], expected_kind=SamplerModel.model_kind)
            except CheckpointError as exc:
                raise CommandError(str(exc), returncode=EXIT_CONFIG) from exc
            optimizer_state = restore_optimizer(checkpoint.arrays)
            meta = dict(checkpoint.meta)
            start_iteration = int(meta.get('iterations', 0))
        else:
            model = SamplerModel.create(build_config(SamplerConfig, sampler_values), seed=options['seed'])
        if model.config.state_dim != space.dim or model.config.point_dim != space.ambient_dim:
            raise CommandError(f'Checkpoint expects {model.config.state_dim}D states, dataset has {space.dim}D',
                               returncode=EXIT_CONFIG)
        model.astype(train_config.dtype)

        demos = [Demonstration(dataset.scenarios[e.scenario_id], e.path) for e in train_entries]
        service = PretrainService(model, demos, train_config, DEFAULT_POINT_CLOUD_SIZE, optimizer_state)
        self.stdout.write(self.style.SUCCESS(
            f'Pretraining {model.parameter_count} parameters on {len(demos)} paths for {iters} iterations...'))
        rng = np.random.default_rng([options['seed'], start_iteration])
        try:
            rows = service.run(iters, rng, start_iteration, progress=not options['no_progress'])
        except TrainingError as exc:
            raise CommandError(f'Training failed: {exc}') from exc

        meta.update(iterations=start_iteration + iters, seed=options['seed'], preset=chosen['name'],
                    dataset=str(options['data']), train=train_config.model_dump(mode='json'))
        out = Path(options['out_checkpoint'])
        log_path = Path(options['log_csv']) if options['log_csv'] else out.with_suffix('.log.csv')
        try:
            model.save(out, extra=optimizer_arrays(service.optimizer.state), meta=meta)
            write_csv(log_path, PRETRAIN_LOG_FIELDS, rows)
        except (OSError, DatasetError) as exc:
            raise io_error(exc)
        final = f', final loss {rows[-1]["loss"]:.4f}' if rows else ''
        self.stdout.write(self.style.SUCCESS(f'✓ Checkpoint written to {out}{final}'))
