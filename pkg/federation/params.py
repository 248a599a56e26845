"""Named-tensor parameter sets and the algebra the aggregator runs on them.

Checkpoint layout (``.ckpt``), all integers little-endian::

    8 bytes   magic b"RSAGCKPT"
    4 bytes   uint32 header length H
    H bytes   UTF-8 JSON header:
              {"format": 1, "dtype": "<f8", "schema_hash": "<sha256 hex>",
               "tensors": [{"name": str, "shape": [int, ...]}, ...],
               "meta": {...}}
    payload   every tensor's values as little-endian float64, in header order

The schema hash is the SHA-256 of the compact JSON list ``[[name, shape], ...]``.
"""
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import (
    BadConfig, CorruptCheckpoint, EmptyInput, InvalidTensor, LengthMismatch, SchemaMismatch,
)

logger = logging.getLogger(__name__)

NORMS = ('l1', 'l2')
SCOPES = ('global', 'per_tensor')

CHECKPOINT_MAGIC = b'RSAGCKPT'
CHECKPOINT_FORMAT = 1
PAYLOAD_DTYPE = '<f8'


def schema_digest(schema):
    """Digest of a ``[(name, shape), ...]`` sequence"""
    payload = json.dumps([[name, list(shape)] for name, shape in schema], separators=(',', ':'))
    return hashlib.sha256(payload.encode('utf-8')).hexdigest()


@dataclass(frozen=True, eq=False)
class TensorEntry:
    name: str
    shape: tuple
    values: np.ndarray

    def __post_init__(self):
        if not isinstance(self.name, str) or not self.name:
            raise InvalidTensor(f"Tensor name must be a non-empty string, got {self.name!r}")
        shape = tuple(int(dim) for dim in self.shape)
        if any(dim < 1 for dim in shape):
            raise InvalidTensor(f"Tensor {self.name!r} has non-positive dimension in shape {shape}")

        values = np.array(self.values, dtype=np.float64).reshape(-1)
        if values.size != math.prod(shape):
            raise InvalidTensor(
                f"Tensor {self.name!r} holds {values.size} values but shape {shape} needs {math.prod(shape)}"
            )
        if not np.all(np.isfinite(values)):
            raise InvalidTensor(f"Tensor {self.name!r} contains NaN or Inf")
        values.flags.writeable = False

        object.__setattr__(self, 'shape', shape)
        object.__setattr__(self, 'values', values)

    @property
    def size(self):
        return self.values.size

    def array(self):
        """Read-only view with the declared shape"""
        return self.values.reshape(self.shape)


@dataclass(frozen=True, eq=False)
class ParameterSet:
    """Immutable ordered collection of named tensors"""
    entries: tuple
    schema_hash: str = field(init=False)

    def __post_init__(self):
        entries = tuple(self.entries)
        names = [entry.name for entry in entries]
        if len(set(names)) != len(names):
            raise InvalidTensor(f"Duplicate tensor names in {names}")
        object.__setattr__(self, 'entries', entries)
        object.__setattr__(self, 'schema_hash', schema_digest(self.schema))

    @classmethod
    def from_arrays(cls, arrays):
        """Build from an ordered ``{name: array}`` mapping"""
        return cls(tuple(
            TensorEntry(name, np.shape(value), np.asarray(value, dtype=np.float64))
            for name, value in arrays.items()
        ))

    @property
    def schema(self):
        return tuple((entry.name, entry.shape) for entry in self.entries)

    @property
    def names(self):
        return tuple(entry.name for entry in self.entries)

    @property
    def size(self):
        return sum(entry.size for entry in self.entries)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, name):
        for entry in self.entries:
            if entry.name == name:
                return entry.array()
        raise KeyError(name)

    def to_arrays(self):
        """Writable copies, keyed by name, in declared order"""
        return {entry.name: entry.array().copy() for entry in self.entries}

    def flat(self):
        return np.concatenate([entry.values for entry in self.entries])

    def select(self, names):
        wanted = set(names)
        return ParameterSet(tuple(entry for entry in self.entries if entry.name in wanted))

    def is_compatible(self, other):
        return self.schema_hash == other.schema_hash

    def equals(self, other):
        """Same schema and bit-identical values"""
        return self.is_compatible(other) and all(
            np.array_equal(mine.values, theirs.values) for mine, theirs in zip(self.entries, other.entries)
        )

    def __repr__(self):
        return f"ParameterSet({', '.join(f'{n}{list(s)}' for n, s in self.schema)})"


def require_compatible(sets):
    """Raise unless ``sets`` is non-empty and shares one schema"""
    if not sets:
        raise EmptyInput("Expected at least one parameter set")
    reference = sets[0].schema_hash
    for index, params in enumerate(sets[1:], start=1):
        if params.schema_hash != reference:
            raise SchemaMismatch(
                f"Parameter set {index} has schema {params.schema} but set 0 has {sets[0].schema}"
            )


def mean_params(sets):
    """Elementwise arithmetic mean of schema-compatible parameter sets"""
    sets = list(sets)
    require_compatible(sets)
    count = len(sets)
    entries = []
    for position, template in enumerate(sets[0].entries):
        total = sets[0].entries[position].values.copy()
        for params in sets[1:]:
            total += params.entries[position].values
        entries.append(TensorEntry(template.name, template.shape, total / count))
    return ParameterSet(tuple(entries))


def vector_norm(delta, norm='l2'):
    if norm == 'l2':
        return float(np.linalg.norm(delta, ord=2))
    if norm == 'l1':
        return float(np.sum(np.abs(delta)))
    raise BadConfig(f"Unknown norm {norm!r}; expected one of {', '.join(NORMS)}")


def distance(a, b, scope='global', norm='l2'):
    """Norm of ``a - b`` over the whole set, or per named tensor

    Returns a float for ``scope="global"`` and a ``{name: float}`` dict for
    ``scope="per_tensor"``.
    """
    require_compatible([a, b])
    if scope == 'global':
        return vector_norm(a.flat() - b.flat(), norm)
    if scope == 'per_tensor':
        return {
            mine.name: vector_norm(mine.values - theirs.values, norm)
            for mine, theirs in zip(a.entries, b.entries)
        }
    raise BadConfig(f"Unknown scope {scope!r}; expected one of {', '.join(SCOPES)}")


def _weighted_sum(weights, arrays):
    total = weights[0] * arrays[0]
    for weight, values in zip(weights[1:], arrays[1:]):
        total = total + weight * values
    return total


def axpy_combine(weights, sets):
    """Elementwise ``sum_i weights[i] * sets[i]``; no normalization applied"""
    weights = [float(weight) for weight in weights]
    sets = list(sets)
    if not sets or len(weights) != len(sets):
        raise LengthMismatch(f"Got {len(weights)} weights for {len(sets)} parameter sets")
    require_compatible(sets)
    entries = []
    for position, template in enumerate(sets[0].entries):
        total = _weighted_sum(weights, [params.entries[position].values for params in sets])
        entries.append(TensorEntry(template.name, template.shape, total))
    return ParameterSet(tuple(entries))


def axpy_combine_per_tensor(weight_map, sets):
    """Like :func:`axpy_combine` with one weight vector per tensor name"""
    sets = list(sets)
    require_compatible(sets)
    entries = []
    for position, template in enumerate(sets[0].entries):
        try:
            weights = [float(weight) for weight in weight_map[template.name]]
        except KeyError:
            raise LengthMismatch(f"No weights given for tensor {template.name!r}") from None
        if len(weights) != len(sets):
            raise LengthMismatch(
                f"Tensor {template.name!r}: got {len(weights)} weights for {len(sets)} parameter sets"
            )
        total = _weighted_sum(weights, [params.entries[position].values for params in sets])
        entries.append(TensorEntry(template.name, template.shape, total))
    return ParameterSet(tuple(entries))


# Checkpoint format

def _header_bytes(params, meta=None):
    header = {
        'format': CHECKPOINT_FORMAT,
        'dtype': PAYLOAD_DTYPE,
        'schema_hash': params.schema_hash,
        'tensors': [{'name': name, 'shape': list(shape)} for name, shape in params.schema],
        'meta': meta or {},
    }
    return json.dumps(header, sort_keys=True, separators=(',', ':')).encode('utf-8')


def header_size(params):
    """Bytes of framing in front of the payload (magic, length, JSON header)"""
    return len(CHECKPOINT_MAGIC) + 4 + len(_header_bytes(params))


def payload_size(params):
    return header_size(params) + 8 * params.size


def dumps_params(params, meta=None):
    header = _header_bytes(params, meta)
    chunks = [CHECKPOINT_MAGIC, len(header).to_bytes(4, 'little'), header]
    chunks.extend(np.asarray(entry.values, dtype=PAYLOAD_DTYPE).tobytes() for entry in params.entries)
    return b''.join(chunks)


def loads_checkpoint(blob):
    """Parse checkpoint bytes into ``(ParameterSet, meta)``"""
    prefix = len(CHECKPOINT_MAGIC) + 4
    if len(blob) < prefix or blob[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CorruptCheckpoint("Missing checkpoint magic")
    header_length = int.from_bytes(blob[len(CHECKPOINT_MAGIC):prefix], 'little')
    try:
        header = json.loads(blob[prefix:prefix + header_length].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpoint(f"Unreadable checkpoint header: {exc}") from exc
    if header.get('format') != CHECKPOINT_FORMAT or header.get('dtype') != PAYLOAD_DTYPE:
        raise CorruptCheckpoint(f"Unsupported checkpoint format {header.get('format')!r}/{header.get('dtype')!r}")

    offset = prefix + header_length
    entries = []
    try:
        for tensor in header['tensors']:
            count = math.prod(tensor['shape'])
            if offset + 8 * count > len(blob):
                raise CorruptCheckpoint(f"Truncated payload for tensor {tensor['name']!r}")
            values = np.frombuffer(blob, dtype=PAYLOAD_DTYPE, count=count, offset=offset).astype(np.float64)
            entries.append(TensorEntry(tensor['name'], tuple(tensor['shape']), values))
            offset += 8 * count
        params = ParameterSet(tuple(entries))
    except (KeyError, TypeError, InvalidTensor) as exc:
        raise CorruptCheckpoint(f"Malformed checkpoint: {exc}") from exc

    if offset != len(blob):
        raise CorruptCheckpoint(f"{len(blob) - offset} trailing bytes after payload")
    if params.schema_hash != header.get('schema_hash'):
        raise CorruptCheckpoint("Schema hash in header does not match the declared tensors")
    return params, header.get('meta', {})


def loads_params(blob):
    return loads_checkpoint(blob)[0]


def save_params(path, params, meta=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dumps_params(params, meta))
    logger.debug(f"Wrote {params!r} to {path}")


def read_checkpoint(path):
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CorruptCheckpoint(f"Cannot read checkpoint {path}: {exc}") from exc
    return loads_checkpoint(blob)


def load_params(path):
    return read_checkpoint(path)[0]
