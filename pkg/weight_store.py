"""
Weight store - the UBW1 weight file container

Layout (little-endian):
    "UBW1" | u32 version | u32 config length | config JSON (UTF-8)
    u32 entry count
    per entry: u16 name length | name | u8 rank | u32 dims[rank] | f32 data

The config JSON is a ModelConfig. Loading checks the entry table against the
tensor names and shapes that config implies.
"""

import os
import struct
import logging
import tempfile
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from config import ModelConfig
from errors import BadMagic, InvalidConfig, ShapeTableMismatch, TruncatedFile

MAGIC = b'UBW1'
VERSION = 1


@dataclass
class WeightStore:
    config: ModelConfig
    entries: Dict[str, np.ndarray] = field(default_factory=dict)

    def param_count(self) -> int:
        return sum(int(v.size) for v in self.entries.values())

    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {name: tuple(v.shape) for name, v in self.entries.items()}


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def remaining(self) -> int:
        return len(self.data) - self.offset

    def take(self, count: int, what: str) -> bytes:
        if count > self.remaining():
            raise TruncatedFile(f"Weight file ends inside {what} (need {count} bytes, {self.remaining()} left)")
        chunk = self.data[self.offset:self.offset + count]
        self.offset += count
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def save_weights(store: WeightStore) -> bytes:
    config_text = store.config.model_dump_json().encode('utf-8')
    parts = [MAGIC, struct.pack('<II', VERSION, len(config_text)), config_text, struct.pack('<I', len(store.entries))]
    for name, value in store.entries.items():
        encoded = name.encode('utf-8')
        value = np.ascontiguousarray(value, dtype='<f4')
        parts.append(struct.pack('<H', len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack('<B', value.ndim))
        parts.append(struct.pack(f'<{value.ndim}I', *value.shape))
        parts.append(value.tobytes())
    return b''.join(parts)


def _expected_table(config: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    # generator builds on this module
    from generator import expected_shape_table
    return expected_shape_table(config)


def load_weights(data: bytes,
                 expected: Optional[Callable[[ModelConfig], Dict[str, Tuple[int, ...]]]] = _expected_table) -> WeightStore:
    """
    Parse a UBW1 weight file

    Args:
        data: File contents
        expected: Maps the stored config to the required name -> shape table;
            None skips the table check

    Raises:
        BadMagic, TruncatedFile, InvalidConfig, ShapeTableMismatch
    """
    reader = _Reader(data)
    magic = reader.take(4, 'magic')
    if magic != MAGIC:
        raise BadMagic(f"Not a UBW1 weight file (magic {magic!r})")
    version, config_length = reader.unpack('<II', 'header')
    if version != VERSION:
        raise BadMagic(f"Unsupported weight file version {version}")

    try:
        config_text = reader.take(config_length, 'config').decode('utf-8')
    except UnicodeDecodeError:
        raise InvalidConfig("Weight file config is not valid UTF-8")
    config = ModelConfig.from_json(config_text)

    (count,) = reader.unpack('<I', 'entry count')
    entries: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_length,) = reader.unpack('<H', 'entry name length')
        name = reader.take(name_length, 'entry name').decode('utf-8', errors='replace')
        (rank,) = reader.unpack('<B', f"rank of '{name}'")
        dims = reader.unpack(f'<{rank}I', f"dims of '{name}'")
        size = int(np.prod(dims, dtype=np.int64)) if rank else 1
        raw = reader.take(4 * size, f"data of '{name}'")
        if name in entries:
            raise ShapeTableMismatch(f"Duplicate tensor '{name}'")
        entries[name] = np.frombuffer(raw, dtype='<f4').astype(np.float32).reshape(dims)

    if reader.remaining():
        raise TruncatedFile(f"{reader.remaining()} trailing bytes after the last entry")

    store = WeightStore(config, entries)
    if expected is not None:
        validate(store, expected(config))
    logging.info(f"Loaded {len(entries)} tensors ({store.param_count()} parameters), mode {config.mode}")
    return store


def validate(store: WeightStore, table: Dict[str, Tuple[int, ...]]):
    """Every expected tensor present with its shape; nothing else"""
    missing = [name for name in table if name not in store.entries]
    unknown = [name for name in store.entries if name not in table]
    if missing:
        raise ShapeTableMismatch(f"Weight file lacks {len(missing)} tensor(s), first '{missing[0]}'")
    if unknown:
        raise ShapeTableMismatch(f"Weight file has unknown tensor '{unknown[0]}'")
    for name, shape in table.items():
        if tuple(store.entries[name].shape) != tuple(shape):
            raise ShapeTableMismatch(f"Tensor '{name}' has shape {store.entries[name].shape}, expected {shape}")


def write_weights(path: str, store: WeightStore):
    data = save_weights(store)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp_path = tempfile.mkstemp(suffix='.ubw', dir=directory)
    try:
        with os.fdopen(fd, 'wb') as f:
            f.write(data)
        os.replace(tmp_path, path)
    except Exception:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise
    logging.info(f"Wrote {len(store.entries)} tensors to {path}")


def read_weights(path: str,
                 expected: Optional[Callable[[ModelConfig], Dict[str, Tuple[int, ...]]]] = _expected_table) -> WeightStore:
    with open(path, 'rb') as f:
        return load_weights(f.read(), expected)
