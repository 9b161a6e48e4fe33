"""Binary checkpoint format.

Layout: 8-byte magic, little-endian uint32 header length, UTF-8 JSON header,
then the raw little-endian data of every entry in header order. The header
carries ``format_version``, ``model_kind``, ``hyperparameters`` and one
``{name, shape, dtype, offset, nbytes}`` record per entry, so a checkpoint
loads without any sidecar config.
"""
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

logger = logging.getLogger(__name__)

MAGIC = b'SILRRTCK'
FORMAT_VERSION = 1
_DTYPES = {'f64': '<f8', 'f32': '<f4'}


class CheckpointError(ValueError):
    """Unreadable checkpoint or one that does not match the requested model."""


@dataclass
class Checkpoint:
    model_kind: str
    hyperparameters: Dict[str, Any]
    arrays: Dict[str, np.ndarray]
    meta: Dict[str, Any] = field(default_factory=dict)


def _dtype_tag(arr: np.ndarray) -> str:
    if arr.dtype == np.float64:
        return 'f64'
    if arr.dtype == np.float32:
        return 'f32'
    raise CheckpointError(f'Unsupported dtype {arr.dtype}')


def save_checkpoint(path, model_kind: str, hyperparameters: Dict[str, Any],
                    arrays: Dict[str, np.ndarray], meta: Optional[Dict[str, Any]] = None) -> Path:
    path = Path(path)
    entries = []
    blobs = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        tag = _dtype_tag(arr)
        blob = np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes()
        entries.append({'name': name, 'shape': list(arr.shape), 'dtype': tag,
                        'offset': offset, 'nbytes': len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = {
        'format_version': FORMAT_VERSION,
        'model_kind': model_kind,
        'hyperparameters': hyperparameters,
        'meta': meta or {},
        'entries': entries,
    }
    raw_header = json.dumps(header, sort_keys=True).encode('utf-8')
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'wb') as fh:
        fh.write(MAGIC)
        fh.write(struct.pack('<I', len(raw_header)))
        fh.write(raw_header)
        for blob in blobs:
            fh.write(blob)
    logger.info(f'Saved {model_kind} checkpoint with {len(entries)} entries to {path}')
    return path


def load_checkpoint(path, expected_kind: Optional[str] = None) -> Checkpoint:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f'Cannot read checkpoint {path}: {exc}') from exc
    if raw[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f'{path} is not a workbench checkpoint')
    (header_len,) = struct.unpack('<I', raw[len(MAGIC):len(MAGIC) + 4])
    start = len(MAGIC) + 4
    try:
        header = json.loads(raw[start:start + header_len].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f'Corrupt checkpoint header in {path}') from exc
    if header.get('format_version') != FORMAT_VERSION:
        raise CheckpointError(f"Unsupported checkpoint format {header.get('format_version')}")
    if expected_kind and header.get('model_kind') != expected_kind:
        raise CheckpointError(f"Expected a '{expected_kind}' checkpoint, found '{header.get('model_kind')}'")
    body = raw[start + header_len:]
    arrays = {}
    for entry in header['entries']:
        chunk = body[entry['offset']:entry['offset'] + entry['nbytes']]
        if len(chunk) != entry['nbytes']:
            raise CheckpointError(f"Truncated entry '{entry['name']}' in {path}")
        arr = np.frombuffer(chunk, dtype=_DTYPES[entry['dtype']]).reshape(entry['shape'])
        arrays[entry['name']] = arr.astype(arr.dtype.newbyteorder('='), copy=True)
    return Checkpoint(header['model_kind'], header['hyperparameters'], arrays, header.get('meta', {}))
