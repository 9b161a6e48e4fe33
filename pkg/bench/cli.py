"""Shared plumbing for the management commands: settings, config files, exit codes."""
import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Type

from django.conf import settings
from django.core.management.base import CommandError
from pydantic import BaseModel, ValidationError

from services.blocks import NetworkModel
from services.checkpoint import CheckpointError
from services.config import get_preset
from services.dataset import DatasetError

logger = logging.getLogger(__name__)

EXIT_IO = 2
EXIT_CONFIG = 3
EXIT_UNSUPPORTED = 4


def workbench_config() -> Dict[str, Any]:
    return getattr(settings, 'SILRRT_CONFIG', {})


def preset(name: Optional[str]) -> Dict[str, Any]:
    try:
        return get_preset(name or workbench_config().get('PRESET', 'desk'))
    except ValueError as exc:
        raise CommandError(str(exc), returncode=EXIT_CONFIG) from exc


def data_dir() -> Path:
    return Path(workbench_config().get('DATA_DIR', 'runs'))


def read_config_file(path: Optional[str]) -> Dict[str, Any]:
    if not path:
        return {}
    try:
        data = json.loads(Path(path).read_text(encoding='utf-8'))
    except OSError as exc:
        raise CommandError(f'Cannot read config {path}: {exc}', returncode=EXIT_IO) from exc
    except json.JSONDecodeError as exc:
        raise CommandError(f'Config {path} is not valid JSON: {exc}', returncode=EXIT_CONFIG) from exc
    if not isinstance(data, dict):
        raise CommandError(f'Config {path} must hold a JSON object', returncode=EXIT_CONFIG)
    return data


def build_config(model: Type[BaseModel], values: Dict[str, Any]) -> BaseModel:
    try:
        return model.model_validate(values)
    except ValidationError as exc:
        raise CommandError(f'Invalid {model.__name__}: {exc}', returncode=EXIT_CONFIG) from exc


def load_network(model_cls: Type[NetworkModel], path: Optional[str], label: str) -> NetworkModel:
    if not path:
        raise CommandError(f'{label} checkpoint is required', returncode=EXIT_CONFIG)
    if not Path(path).is_file():
        raise CommandError(f'{label} checkpoint {path} does not exist', returncode=EXIT_CONFIG)
    try:
        return model_cls.load(path)
    except CheckpointError as exc:
        raise CommandError(f'{label} checkpoint {path}: {exc}', returncode=EXIT_CONFIG) from exc


def io_error(exc: Exception) -> CommandError:
    logger.error(f'I/O failure: {exc}')
    return CommandError(str(exc), returncode=EXIT_IO)


def ensure_writable_dir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise io_error(DatasetError(f'Cannot create {path}: {exc}'))
    if not path.is_dir():
        raise io_error(DatasetError(f'{path} is not a directory'))
    return path
