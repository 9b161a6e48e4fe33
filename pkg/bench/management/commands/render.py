# bench/management/commands/render.py
from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from bench.cli import EXIT_CONFIG, EXIT_UNSUPPORTED, io_error
from services.dataset import DatasetError, read_json, read_jsonl
from services.environment import scenario_from_dict
from services.rendering import UnsupportedRenderError, check_renderable, render_svg


class Command(BaseCommand):
    help = 'Render a scenario, and optionally a planner result with its trees, to SVG'

    def add_arguments(self, parser):
        parser.add_argument('--scenario', required=True, help='Scenario JSON, or JSON lines of scenarios')
        parser.add_argument('--scenario-id', type=int, help='Pick this scenario from a JSON-lines file')
        parser.add_argument('--result', help='Planner result JSON (evaluate --trace-dir output)')
        parser.add_argument('--out', required=True, help='Output SVG path')

    def _scenario_data(self, options):
        path = Path(options['scenario'])
        try:
            if path.suffix == '.jsonl':
                rows = read_jsonl(path)
            else:
                rows = [read_json(path)]
        except DatasetError as exc:
            raise io_error(exc)
        if options['scenario_id'] is not None:
            rows = [r for r in rows if r.get('scenario_id') == options['scenario_id']]
        if not rows:
            raise CommandError(f'No matching scenario in {path}', returncode=EXIT_CONFIG)
        return rows[0]

    def handle(self, *args, **options):
        data = self._scenario_data(options)
        result = None
        if options['result']:
            try:
                result = read_json(options['result'])
            except DatasetError as exc:
                raise io_error(exc)
        try:
            check_renderable(data)
            scenario = scenario_from_dict(data)
            svg = render_svg(scenario, result)
        except UnsupportedRenderError as exc:
            raise CommandError(str(exc), returncode=EXIT_UNSUPPORTED) from exc
        except (KeyError, ValueError) as exc:
            raise CommandError(f'Malformed scenario or result: {exc}', returncode=EXIT_CONFIG) from exc

        out = Path(options['out'])
        try:
            out.parent.mkdir(parents=True, exist_ok=True)
            out.write_text(svg, encoding='utf-8')
        except OSError as exc:
            raise io_error(exc)
        edges = sum(max(len(t['parents']) - 1, 0) for t in (result or {}).get('trees') or [])
        self.stdout.write(self.style.SUCCESS(f'✓ Wrote {out} ({edges} tree edges)'))
