import json
import logging
from datetime import datetime

from django.http import HttpResponse, JsonResponse
from django.views.decorators.csrf import csrf_exempt
from django.views.decorators.http import require_GET, require_POST

from services.config import (DEFAULT_CONTEXT_WINDOW, DEFAULT_GOAL_RADIUS, DEFAULT_MAX_SAMPLES,
                             DEFAULT_MAX_SAMPLES_UNIFORM_3D, DEFAULT_POINT_CLOUD_SIZE, DEFAULT_TRIALS,
                             PRESETS, SNAKE_JOINT_LIMIT)
from services.environment import scenario_from_dict
from services.evaluation import LEARNED_PLANNERS, UNIFORM_PLANNERS
from services.rendering import UnsupportedRenderError, check_renderable, render_svg

logger = logging.getLogger(__name__)


@require_GET
def health_check(request):
    """Basic health check endpoint"""
    return JsonResponse({'status': 'healthy', 'timestamp': datetime.now().isoformat()})


@require_GET
def list_presets(request):
    """Experiment presets and the planner names evaluate accepts."""
    return JsonResponse({
        'presets': {name: dict(values) for name, values in PRESETS.items()},
        'planners': list(UNIFORM_PLANNERS + LEARNED_PLANNERS),
        'defaults': {
            'goal_radius': DEFAULT_GOAL_RADIUS,
            'max_samples': DEFAULT_MAX_SAMPLES,
            'max_samples_uniform_3d': DEFAULT_MAX_SAMPLES_UNIFORM_3D,
            'point_cloud_size': DEFAULT_POINT_CLOUD_SIZE,
            'context_window': DEFAULT_CONTEXT_WINDOW,
            'snake_joint_limit': SNAKE_JOINT_LIMIT,
            'trials': DEFAULT_TRIALS,
        },
    })


@require_POST
@csrf_exempt
def render_scenario(request):
    """SVG for a posted ``{"scenario": {...}, "result": {...}}`` body."""
    try:
        body = json.loads(request.body or b'{}')
    except json.JSONDecodeError:
        return JsonResponse({'error': 'Request body must be JSON'}, status=400)
    scenario_data = body.get('scenario') if isinstance(body, dict) else None
    if not isinstance(scenario_data, dict):
        return JsonResponse({'error': 'Missing "scenario" object'}, status=400)

    try:
        check_renderable(scenario_data)
        svg = render_svg(scenario_from_dict(scenario_data), body.get('result'))
    except UnsupportedRenderError as e:
        logger.warning(f"⚠️ Unsupported render request: {e}")
        return JsonResponse({'error': str(e)}, status=400)
    except (KeyError, ValueError, TypeError) as e:
        return JsonResponse({'error': f'Malformed scenario: {e}'}, status=400)
    except Exception as e:
        logger.error(f"❌ Error rendering scenario: {str(e)}")
        return JsonResponse({'error': 'Render failed'}, status=500)
    logger.info(f"✅ Rendered scenario {scenario_data.get('scenario_id')}")
    return HttpResponse(svg, content_type='image/svg+xml')
