"""``model.json`` + ``weights.bin`` checkpoints.

weights.bin holds little-endian float32 values: every parameter in model
order, then every batch-norm buffer, each flattened row-major. Training
ends with `round_to_storage` so a reloaded model predicts exactly like the
one that was saved.
"""
import json
import logging
import zlib
from pathlib import Path

import numpy as np

from ..exceptions import ChecksumError, ManifestError
from .inception import build_inception_time, set_freeze

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
_DTYPE = np.dtype('<f4')


def round_to_storage(model):
    """Round parameters and batch-norm buffers in place to the stored precision."""
    for value in model.parameters().values():
        value[...] = value.astype(_DTYPE)
    for name, value in model.buffers().items():
        model.load_buffer(name, value.astype(_DTYPE).astype(np.float64))
    return model


def save_checkpoint(model, path, epoch=None, extra=None):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    tensors = [('param', name, value) for name, value in model.parameters().items()]
    tensors += [('buffer', name, value) for name, value in model.buffers().items()]
    payload = b''.join(np.ascontiguousarray(value, dtype=_DTYPE).tobytes() for _, _, value in tensors)
    meta = {
        'format_version': FORMAT_VERSION,
        'architecture': model.config,
        'seed': model.config.get('seed'),
        'epoch': epoch,
        'frozen_blocks': model.frozen_blocks,
        'layout': [{'kind': kind, 'name': name, 'shape': list(value.shape)} for kind, name, value in tensors],
        'data_bytes': len(payload),
        'crc32': zlib.crc32(payload),
        'extra': extra or {},
    }
    (path / 'weights.bin').write_bytes(payload)
    with open(path / 'model.json', 'w', encoding='utf-8') as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    logger.info('Saved checkpoint (%d tensors) to %s', len(tensors), path)
    return path


def load_checkpoint(path):
    """Rebuild the model stored at ``path``; returns (model, metadata)."""
    path = Path(path)
    try:
        with open(path / 'model.json', encoding='utf-8') as fh:
            meta = json.load(fh)
        architecture = dict(meta['architecture'])
        layout = meta['layout']
        expected_crc = int(meta['crc32'])
        expected_bytes = int(meta['data_bytes'])
    except FileNotFoundError as exc:
        raise ManifestError(f'No model.json in {path}') from exc
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f'Corrupt model.json in {path}: {exc}') from exc

    try:
        payload = (path / 'weights.bin').read_bytes()
    except FileNotFoundError as exc:
        raise ChecksumError(f'No weights.bin in {path}') from exc
    if len(payload) != expected_bytes or zlib.crc32(payload) != expected_crc:
        raise ChecksumError(f'Checksum mismatch for {path / "weights.bin"}')

    architecture['kernel_sizes'] = tuple(architecture['kernel_sizes'])
    model = build_inception_time(**architecture)
    params = model.parameters()
    offset = 0
    for entry in layout:
        shape = tuple(entry['shape'])
        count = int(np.prod(shape)) if shape else 1
        end = offset + count * _DTYPE.itemsize
        if end > len(payload):
            raise ManifestError(f"Checkpoint layout overruns weights.bin at {entry['name']}")
        value = np.frombuffer(payload[offset:end], dtype=_DTYPE).astype(np.float64).reshape(shape)
        offset = end
        if entry['kind'] == 'param':
            if entry['name'] not in params or params[entry['name']].shape != shape:
                raise ManifestError(f"Checkpoint tensor {entry['name']} does not fit the architecture")
            params[entry['name']][...] = value
        else:
            try:
                model.load_buffer(entry['name'], value)
            except KeyError as exc:
                raise ManifestError(f"Checkpoint buffer {entry['name']} does not fit the architecture") from exc
    set_freeze(model, int(meta.get('frozen_blocks', 0)))
    return model, meta
