"""Binary checkpoint format for parameter stores.

Layout: magic ``AGNN``, little-endian uint32 version, uint64 manifest length,
UTF-8 JSON manifest, then the float64 payloads (little-endian) at the byte
offsets listed in the manifest. Offsets are relative to the payload start.
Optimizer moments are stored as extra entries prefixed ``opt.m:`` / ``opt.v:``.
"""
import json
import logging
import os
import struct
from pathlib import Path

import numpy as np

from .autodiff import ParameterStore
from .exceptions import CheckpointError

logger = logging.getLogger(__name__)

MAGIC = b'AGNN'
VERSION = 1
FIRST_MOMENT = 'opt.m:'
SECOND_MOMENT = 'opt.v:'


def _entries(store):
    yield from store.params.items()
    for prefix, moments in ((FIRST_MOMENT, store.first_moment),
                            (SECOND_MOMENT, store.second_moment)):
        for name, value in (moments or {}).items():
            yield prefix + name, value


def save_checkpoint(path, store, metadata=None):
    """Write ``store`` and a JSON-serialisable ``metadata`` dict to ``path``."""
    path = Path(path)
    manifest = {'step': store.step, 'entries': [], 'metadata': metadata or {}}
    payload = bytearray()
    for name, value in _entries(store):
        manifest['entries'].append({
            'name': name,
            'shape': list(value.shape),
            'offset': len(payload),
        })
        payload += np.ascontiguousarray(value, dtype='<f8').tobytes()
    manifest_bytes = json.dumps(manifest, sort_keys=True).encode('utf-8')

    tmp_path = path.with_name(path.name + '.tmp')
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(tmp_path, 'wb') as handle:
            handle.write(MAGIC)
            handle.write(struct.pack('<IQ', VERSION, len(manifest_bytes)))
            handle.write(manifest_bytes)
            handle.write(payload)
        os.replace(tmp_path, path)
    except OSError as exc:
        raise CheckpointError(f'cannot write checkpoint {path}: {exc}') from exc
    logger.info('Checkpoint written: %s (step %d)', path, store.step)
    return path


def load_checkpoint(path):
    """Read a checkpoint; returns ``(ParameterStore, metadata)``."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f'cannot read checkpoint {path}: {exc}') from exc
    if raw[:4] != MAGIC:
        raise CheckpointError(f'{path} is not an AGNN checkpoint')
    header_end = 4 + struct.calcsize('<IQ')
    if len(raw) < header_end:
        raise CheckpointError(f'{path} is truncated')
    version, manifest_length = struct.unpack('<IQ', raw[4:header_end])
    if version != VERSION:
        raise CheckpointError(f'{path}: unsupported checkpoint version {version}')
    try:
        manifest = json.loads(raw[header_end:header_end + manifest_length])
    except ValueError as exc:
        raise CheckpointError(f'{path}: corrupt manifest') from exc
    payload = memoryview(raw)[header_end + manifest_length:]

    params, first, second = {}, {}, {}
    for entry in manifest['entries']:
        shape = tuple(entry['shape'])
        count = int(np.prod(shape, dtype=np.int64))
        start = entry['offset']
        if start + 8 * count > len(payload):
            raise CheckpointError(f'{path}: entry {entry["name"]} exceeds payload')
        value = np.frombuffer(payload, dtype='<f8', count=count, offset=start)
        value = value.astype(np.float64).reshape(shape)
        name = entry['name']
        if name.startswith(FIRST_MOMENT):
            first[name[len(FIRST_MOMENT):]] = value
        elif name.startswith(SECOND_MOMENT):
            second[name[len(SECOND_MOMENT):]] = value
        else:
            params[name] = value
    store = ParameterStore(params, step=manifest['step'],
                           first_moment=first or None,
                           second_moment=second or None)
    return store, manifest['metadata']
