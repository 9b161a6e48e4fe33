# bench/management/commands/evaluate.py
import logging
from pathlib import Path

from django.core.management.base import BaseCommand, CommandError
from tabulate import tabulate

from bench.cli import EXIT_CONFIG, io_error, load_network, preset, workbench_config
from services.dataset import DatasetError, load_scenarios, write_csv, write_json, write_jsonl
from services.evaluation import (LEARNED_PLANNERS, REPORT_FIELDS, UNIFORM_PLANNERS, EvaluationService,
                                 PlannerSpec)
from services.sampler_model import SamplerModel

logger = logging.getLogger(__name__)


class Command(BaseCommand):
    help = 'Benchmark planners on held-out scenarios and write the summary report'

    def add_arguments(self, parser):
        parser.add_argument('--scenarios', required=True,
                            help='Dataset directory (test split by default) or scenarios JSON-lines file')
        parser.add_argument('--split', default='test', help='Dataset split to evaluate')
        parser.add_argument('--planners', default='rrtstar,silrrt,silrrt-wsil',
                            help='Comma-separated: ' + ','.join(UNIFORM_PLANNERS + LEARNED_PLANNERS))
        parser.add_argument('--checkpoint', help='Pretrained sampler checkpoint (silrrt)')
        parser.add_argument('--wsil-checkpoint', help='Fine-tuned sampler checkpoint (silrrt-wsil)')
        parser.add_argument('--max-samples', type=int,
                            help='Budget for every planner (default 200, 400 for uniform RRT* in 3D)')
        parser.add_argument('--trials', type=int, help='Trials per scenario (preset default 3)')
        parser.add_argument('--seed', type=int, default=0, help='Master seed')
        parser.add_argument('--limit', type=int, help='Evaluate only the first N scenarios')
        parser.add_argument('--threads', type=int, help='Worker threads (default SILRRT_THREADS)')
        parser.add_argument('--out-csv', required=True)
        parser.add_argument('--records', help='Per-query JSON lines (default: next to the CSV)')
        parser.add_argument('--trace-dir', help='Also write one full result (with trees) per query here')
        parser.add_argument('--preset', help='desk or full')
        parser.add_argument('--no-progress', action='store_true')

    def _planner_specs(self, names, options):
        specs = []
        for name in names:
            if name == 'silrrt':
                specs.append(PlannerSpec(name, load_network(SamplerModel, options['checkpoint'], 'silrrt')))
            elif name == 'silrrt-wsil':
                specs.append(PlannerSpec(name, load_network(SamplerModel, options['wsil_checkpoint'], 'silrrt-wsil')))
            elif name in UNIFORM_PLANNERS:
                specs.append(PlannerSpec(name))
            else:
                raise CommandError(f"Unknown planner '{name}'", returncode=EXIT_CONFIG)
        return specs

    def handle(self, *args, **options):
        chosen = preset(options['preset'])
        try:
            scenarios = load_scenarios(options['scenarios'], split=options['split'])
        except DatasetError as exc:
            raise io_error(exc)
        if options['limit']:
            scenarios = scenarios[:options['limit']]
        if not scenarios:
            raise CommandError('No scenarios to evaluate', returncode=EXIT_CONFIG)

        names = [n.strip() for n in options['planners'].split(',') if n.strip()]
        specs = self._planner_specs(names, options)
        for spec in specs:
            if spec.model is not None and spec.model.config.state_dim != scenarios[0].space.dim:
                raise CommandError(f'{spec.name} checkpoint does not match the scenario state space',
                                   returncode=EXIT_CONFIG)

        trials = options['trials'] or chosen['trials']
        threads = options['threads'] or workbench_config().get('THREADS')
        service = EvaluationService(specs, trials=trials, seed=options['seed'], max_samples=options['max_samples'],
                                    threads=threads, preset=chosen['name'], keep_trees=bool(options['trace_dir']))
        self.stdout.write(self.style.SUCCESS(
            f"Evaluating {', '.join(names)} on {len(scenarios)} scenarios x {trials} trials..."))
        report = service.run(scenarios, progress=not options['no_progress'])

        out_csv = Path(options['out_csv'])
        records_path = Path(options['records']) if options['records'] else out_csv.with_suffix('.records.jsonl')
        try:
            write_csv(out_csv, REPORT_FIELDS, report.rows)
            if options['trace_dir']:
                trace_dir = Path(options['trace_dir'])
                for rec in report.records:
                    write_json(trace_dir / f"{rec['planner']}_s{rec['scenario_id']}_t{rec['trial']}.json", rec)
                records = [{k: v for k, v in rec.items() if k != 'trees'} for rec in report.records]
            else:
                records = report.records
            write_jsonl(records_path, records)
        except DatasetError as exc:
            raise io_error(exc)

        table = [[r['environment'], r['planner'], f"{r['success_rate']:.1f}%",
                  f"{r['avg_samples']:.2f} ± {r['std_samples']:.2f}",
                  f"{r['avg_path_length']:.2f} ± {r['std_path_length']:.2f}",
                  f"{r['avg_time']:.3f} ± {r['std_time']:.3f}"] for r in report.rows]
        self.stdout.write(tabulate(table, headers=['env', 'planner', 'success', 'samples', 'path length', 'time (s)']))
        self.stdout.write(self.style.SUCCESS(
            f'✓ Report written to {out_csv} ({report.population} statistics), records in {records_path}'))
