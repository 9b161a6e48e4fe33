import math

import numpy as np
from django.test import SimpleTestCase

from services.evaluation import (POPULATION_RULE, TIME_FIELDS, EvaluationService, PlannerSpec, query_seed,
                                 summarize)

from .helpers import open_field, tiny_sampler


def _record(planner, success, samples, length, time_s, environment='point2d'):
    return {'environment': environment, 'planner': planner, 'success': success, 'samples_generated': samples,
            'path_length': length if success else None, 'wall_time': time_s}


class SummaryTests(SimpleTestCase):

    def test_averages_cover_successes_only(self):
        records = [_record('rrtstar', True, 100, 20.0, 0.5), _record('rrtstar', True, 140, 24.0, 0.7),
                   _record('rrtstar', False, 200, None, 1.0)]
        (row,) = summarize(records, preset='desk', seed=3)
        self.assertEqual(row['queries'], 3)
        self.assertEqual(row['successes'], 2)
        self.assertAlmostEqual(row['success_rate'], 200.0 / 3)
        self.assertEqual(row['avg_samples'], 120.0)
        self.assertEqual(row['std_samples'], 20.0)
        self.assertEqual(row['avg_path_length'], 22.0)
        self.assertEqual(row['std_path_length'], 2.0)
        self.assertAlmostEqual(row['avg_time'], 0.6)
        self.assertEqual(row['population'], POPULATION_RULE)
        self.assertEqual((row['preset'], row['seed']), ('desk', 3))

    def test_no_success_gives_nan(self):
        (row,) = summarize([_record('rrt', False, 200, None, 1.0)])
        self.assertEqual(row['success_rate'], 0.0)
        self.assertTrue(math.isnan(row['avg_path_length']))
        self.assertTrue(math.isnan(row['avg_samples']))

    def test_groups_by_environment_and_planner(self):
        records = [_record('rrt', True, 10, 5.0, 0.1), _record('rrtstar', True, 10, 5.0, 0.1),
                   _record('rrt', True, 10, 5.0, 0.1, environment='snake')]
        rows = summarize(records)
        self.assertEqual(sorted((r['environment'], r['planner']) for r in rows),
                         [('point2d', 'rrt'), ('point2d', 'rrtstar'), ('snake', 'rrt')])


class QuerySeedTests(SimpleTestCase):

    def test_stable_and_distinct(self):
        self.assertEqual(query_seed(0, 1, 2, 3), query_seed(0, 1, 2, 3))
        seeds = {query_seed(0, s, t, p) for s in range(3) for t in range(3) for p in range(3)}
        self.assertEqual(len(seeds), 27)
        self.assertNotEqual(query_seed(0, 0, 0, 0), query_seed(1, 0, 0, 0))


class PlannerSpecTests(SimpleTestCase):

    def test_learned_needs_a_model(self):
        with self.assertRaises(ValueError):
            PlannerSpec('silrrt').run(open_field(), 50, np.random.default_rng(0))

    def test_unknown_planner(self):
        with self.assertRaises(ValueError):
            PlannerSpec('prm').run(open_field(), 50, np.random.default_rng(0))

    def test_learned_planner_runs(self):
        result = PlannerSpec('silrrt', tiny_sampler()).run(open_field(), 60, np.random.default_rng(0),
                                                            point_cloud_size=32)
        self.assertEqual(result.planner, 'silrrt')
        self.assertLessEqual(result.samples_generated, 60)
        self.assertEqual(len(result.trees), 2)

    def test_protocol_budget_when_unset(self):
        result = PlannerSpec('rrt').run(open_field(), None, np.random.default_rng(0))
        self.assertEqual(result.config['max_samples'], 200)


class EvaluationServiceTests(SimpleTestCase):

    def setUp(self):
        self.scenarios = [open_field(scenario_id=0), open_field(seed=2, scenario_id=1)]
        self.planners = [PlannerSpec('rrtstar'), PlannerSpec('birrtstar')]

    def test_one_query_one_row(self):
        report = EvaluationService([PlannerSpec('rrtstar')], trials=1, threads=1).run(self.scenarios[:1],
                                                                                     progress=False)
        self.assertEqual(len(report.rows), 1)
        self.assertEqual(report.rows[0]['queries'], 1)
        self.assertEqual(len(report.records), 1)

    def test_grid_and_reproducibility(self):
        seen = []
        parallel = EvaluationService(self.planners, trials=2, seed=5, threads=4).run(
            self.scenarios, progress=False, on_record=seen.append)
        serial = EvaluationService(self.planners, trials=2, seed=5, threads=1).run(self.scenarios, progress=False)
        self.assertEqual(len(parallel.records), 8)
        self.assertEqual(len(seen), 8)
        self.assertEqual(len(parallel.rows), 2)

        def strip(rows, keys):
            return [{k: v for k, v in r.items() if k not in keys} for r in rows]
        self.assertEqual(strip(parallel.records, {'wall_time'}), strip(serial.records, {'wall_time'}))
        np.testing.assert_equal(strip(parallel.rows, TIME_FIELDS), strip(serial.rows, TIME_FIELDS))

    def test_records_identify_the_query(self):
        report = EvaluationService(self.planners[:1], trials=2, seed=1, threads=1).run(self.scenarios[:1],
                                                                                      progress=False)
        self.assertEqual([(r['scenario_id'], r['trial']) for r in report.records], [(0, 0), (0, 1)])
        self.assertEqual(report.records[0]['seed'], query_seed(1, 0, 0, 0))
        self.assertNotIn('trees', report.records[0])

    def test_keep_trees(self):
        report = EvaluationService(self.planners[:1], trials=1, threads=1, keep_trees=True).run(
            self.scenarios[:1], progress=False)
        self.assertIn('trees', report.records[0])

    def test_trials_must_be_positive(self):
        with self.assertRaises(ValueError):
            EvaluationService(self.planners, trials=0)
