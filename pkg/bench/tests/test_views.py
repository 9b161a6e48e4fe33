import json

from django.test import SimpleTestCase

from services.environment import scenario_to_dict

from .helpers import open_field


class HealthAndPresetTests(SimpleTestCase):

    def test_health(self):
        response = self.client.get('/health/')
        self.assertEqual(response.status_code, 200)
        self.assertEqual(response.json()['status'], 'healthy')
        self.assertIn('timestamp', response.json())

    def test_presets(self):
        data = self.client.get('/api/presets/').json()
        self.assertEqual(set(data['presets']), {'desk', 'full'})
        self.assertIn('silrrt-wsil', data['planners'])
        self.assertEqual(data['defaults']['max_samples'], 200)
        self.assertEqual(data['defaults']['point_cloud_size'], 1000)

    def test_presets_is_get_only(self):
        self.assertEqual(self.client.post('/api/presets/').status_code, 405)


class RenderEndpointTests(SimpleTestCase):

    def _post(self, body):
        payload = body if isinstance(body, str) else json.dumps(body)
        return self.client.post('/api/render/', data=payload, content_type='application/json')

    def test_renders_svg(self):
        response = self._post({'scenario': scenario_to_dict(open_field())})
        self.assertEqual(response.status_code, 200)
        self.assertEqual(response['Content-Type'], 'image/svg+xml')
        self.assertIn(b'<svg', response.content)

    def test_renders_result_path(self):
        scenario = open_field()
        result = {'planner': 'rrtstar', 'success': True, 'path': [scenario.start.tolist(), [16.0, 15.5]]}
        response = self._post({'scenario': scenario_to_dict(scenario), 'result': result})
        self.assertEqual(response.status_code, 200)
        self.assertIn(b'id="path"', response.content)

    def test_unsupported_dimension(self):
        data = scenario_to_dict(open_field())
        data['bounds'] = [[0.0, 20.0]] * 4
        response = self._post({'scenario': data})
        self.assertEqual(response.status_code, 400)
        self.assertIn('error', response.json())

    def test_malformed_scenario(self):
        data = scenario_to_dict(open_field())
        del data['start']
        self.assertEqual(self._post({'scenario': data}).status_code, 400)

    def test_missing_scenario(self):
        self.assertEqual(self._post({'result': {}}).status_code, 400)

    def test_bad_json(self):
        self.assertEqual(self._post('{not json').status_code, 400)

    def test_get_not_allowed(self):
        self.assertEqual(self.client.get('/api/render/').status_code, 405)
