# bench/management/commands/finetune.py
import logging
from pathlib import Path

import numpy as np
from django.core.management.base import BaseCommand, CommandError

from bench.cli import EXIT_CONFIG, build_config, io_error, load_network, preset, read_config_file, workbench_config
from services.autodiff import set_default_dtype
from services.checkpoint import CheckpointError, load_checkpoint
from services.config import (DEFAULT_POINT_CLOUD_SIZE, EstimatorConfig, TrainConfig, WsilConfig,
                             planner_config_for)
from services.dataset import DatasetError, load_scenarios, write_csv
from services.estimator import EstimatorModel
from services.sampler_model import SamplerModel
from services.training import TrainingError, optimizer_arrays, restore_optimizer
from services.wsil import WSIL_LOG_FIELDS, ReplayBuffer, WsilTrainer

logger = logging.getLogger(__name__)


class Command(BaseCommand):
    help = 'Fine-tune a pretrained sampler with weighted self-imitation'

    def add_arguments(self, parser):
        parser.add_argument('--data-scenarios', required=True,
                            help='Dataset directory (train split is used) or scenarios JSON-lines file')
        parser.add_argument('--checkpoint', required=True, help='Pretrained sampler checkpoint')
        parser.add_argument('--estimator-checkpoint', help='Start from this estimator instead of a fresh one')
        parser.add_argument('--resume', action='store_true',
                            help='--checkpoint is an earlier finetune output: continue its optimizer state, '
                                 'K and iteration count (estimator defaults to the checkpoint sibling)')
        parser.add_argument('--wsil-config', help='JSON file with WsilConfig fields (and an optional "train" section)')
        parser.add_argument('--iters', type=int,
                            help='Iterations to run now (default: the rest of total_iterations)')
        parser.add_argument('--max-samples', type=int, help='Planner budget per query (default 200)')
        parser.add_argument('--seed', type=int, default=0)
        parser.add_argument('--out-checkpoint', required=True)
        parser.add_argument('--out-estimator', help='Estimator checkpoint (default: next to --out-checkpoint)')
        parser.add_argument('--log-csv', help='Training log (default: next to the checkpoint)')
        parser.add_argument('--resume-buffer', help='Restore the replay buffer from this JSON-lines dump')
        parser.add_argument('--dump-buffer', help='Write the final replay buffer here')
        parser.add_argument('--preset', help='desk or full')
        parser.add_argument('--no-progress', action='store_true')

    def _resume_state(self, options):
        """Optimizer moments, K, iteration count and schedule stored by an earlier finetune run."""
        sampler_path = Path(options['checkpoint'])
        estimator_path = Path(options['estimator_checkpoint']) if options['estimator_checkpoint'] \
            else sampler_path.with_name(sampler_path.stem + '.estimator' + sampler_path.suffix)
        try:
            sampler_ckpt = load_checkpoint(sampler_path, expected_kind=SamplerModel.model_kind)
        except CheckpointError as exc:
            raise CommandError(f'Cannot resume: {exc}', returncode=EXIT_CONFIG) from exc
        state = sampler_ckpt.meta.get('wsil_state')
        if not state:
            raise CommandError(f'{sampler_path} was not written by finetune, nothing to resume',
                               returncode=EXIT_CONFIG)
        try:
            estimator_ckpt = load_checkpoint(estimator_path, expected_kind=EstimatorModel.model_kind)
        except CheckpointError as exc:
            raise CommandError(f'Cannot resume: {exc}', returncode=EXIT_CONFIG) from exc
        self.stdout.write(self.style.SUCCESS(
            f"✓ Resuming after iteration {state['iteration']} with K={state['K']:.4g}"))
        return {'iteration': int(state['iteration']), 'K': float(state['K']),
                'wsil': dict(sampler_ckpt.meta.get('wsil', {})),
                'base_checkpoint': sampler_ckpt.meta.get('base_checkpoint', str(sampler_path)),
                'sampler_state': restore_optimizer(sampler_ckpt.arrays),
                'estimator_state': restore_optimizer(estimator_ckpt.arrays),
                'estimator_path': str(estimator_path)}

    def handle(self, *args, **options):
        chosen = preset(options['preset'])
        try:
            scenarios = load_scenarios(options['data_scenarios'], split='train')
        except DatasetError as exc:
            raise io_error(exc)
        if not scenarios:
            raise CommandError('No training scenarios found', returncode=EXIT_CONFIG)

        sampler = load_network(SamplerModel, options['checkpoint'], 'Sampler')
        space = scenarios[0].space
        if sampler.config.state_dim != space.dim or sampler.config.point_dim != space.ambient_dim:
            raise CommandError(f'Sampler expects {sampler.config.state_dim}D states, scenarios are {space.dim}D',
                               returncode=EXIT_CONFIG)

        resumed = {}
        if options['resume']:
            resumed = self._resume_state(options)

        file_config = read_config_file(options['wsil_config'])
        train_values = {'dtype': workbench_config().get('TRAIN_DTYPE', 'float64')}
        train_values.update(file_config.pop('train', {}))
        train_config = build_config(TrainConfig, train_values)
        wsil_values = dict(resumed.get('wsil', {}))
        wsil_values.update(file_config)
        start_iteration = resumed.get('iteration', 0)
        # the schedule length defaults to this invocation's --iters
        if 'total_iterations' not in wsil_values:
            wsil_values['total_iterations'] = chosen['finetune_iters'] if options['iters'] is None \
                else start_iteration + options['iters']
        wsil_config = build_config(WsilConfig, wsil_values)
        iters = options['iters'] if options['iters'] is not None else \
            max(wsil_config.total_iterations - start_iteration, 0)
        set_default_dtype(train_config.dtype)
        sampler.astype(train_config.dtype)

        estimator_path = options['estimator_checkpoint'] or resumed.get('estimator_path')
        if estimator_path:
            estimator = load_network(EstimatorModel, estimator_path, 'Estimator')
        else:
            diagonal = scenarios[0].workspace.diagonal
            estimator = EstimatorModel.create(build_config(EstimatorConfig, {
                'state_dim': space.dim, 'point_dim': space.ambient_dim,
                'd_model': sampler.config.d_model, 'latent_len': sampler.config.latent_len,
                'n_heads': sampler.config.n_heads, 'length_scale': 0.5 * diagonal,
            }), seed=options['seed'] + 1)
        estimator.astype(train_config.dtype)

        overrides = {'collision_step': scenarios[0].collision_step}
        if options['max_samples']:
            overrides['max_samples'] = options['max_samples']
        planner_config = planner_config_for(space.kind.value, learned=True, **overrides)

        buffer = None
        if options['resume_buffer']:
            try:
                buffer = ReplayBuffer.restore(options['resume_buffer'], wsil_config.buffer_capacity, scenarios)
            except DatasetError as exc:
                raise io_error(exc)
            self.stdout.write(self.style.SUCCESS(f'✓ Restored {len(buffer)} buffer records'))

        trainer = WsilTrainer(sampler, estimator, scenarios, wsil_config, planner_config, train_config,
                              DEFAULT_POINT_CLOUD_SIZE, buffer, sampler_state=resumed.get('sampler_state'),
                              estimator_state=resumed.get('estimator_state'), start_iteration=start_iteration,
                              K=resumed.get('K'))
        self.stdout.write(self.style.SUCCESS(
            f'Fine-tuning on {len(scenarios)} scenarios for {iters} iterations '
            f'(starting at {start_iteration}, K={trainer.K:.4g})...'))
        rng = np.random.default_rng([options['seed'], start_iteration])
        try:
            rows = trainer.run(rng, iterations=iters, progress=not options['no_progress'])
        except TrainingError as exc:
            raise CommandError(f'Fine-tuning failed: {exc}') from exc

        out = Path(options['out_checkpoint'])
        estimator_out = Path(options['out_estimator']) if options['out_estimator'] \
            else out.with_name(out.stem + '.estimator' + out.suffix)
        log_path = Path(options['log_csv']) if options['log_csv'] else out.with_suffix('.log.csv')
        meta = {'wsil': wsil_config.model_dump(mode='json'), 'seed': options['seed'], 'preset': chosen['name'],
                'base_checkpoint': resumed.get('base_checkpoint', str(options['checkpoint'])),
                'final_K': trainer.K, 'wsil_state': trainer.state_meta()}
        try:
            sampler.save(out, extra=optimizer_arrays(trainer.sampler_opt.state), meta=meta)
            estimator.save(estimator_out, extra=optimizer_arrays(trainer.estimator_opt.state), meta=meta)
            write_csv(log_path, WSIL_LOG_FIELDS, rows)
            if options['dump_buffer']:
                trainer.buffer.dump(options['dump_buffer'])
        except (OSError, DatasetError) as exc:
            raise io_error(exc)
        successes = sum(r['success'] for r in rows)
        self.stdout.write(self.style.SUCCESS(
            f'✓ {successes}/{len(rows)} successful queries, buffer {len(trainer.buffer)}; '
            f'checkpoints written to {out} and {estimator_out}'))
