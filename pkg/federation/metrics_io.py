"""Round records, experiment summaries and their on-disk formats.

``records.jsonl`` holds one JSON object per completed round, schema version 1::

    {"schema": 1, "round": int, "selected": [id, ...],
     "local_loss_before": [hexfloat, ...], "local_loss_after": [hexfloat, ...],
     "weights": {"scope", "collab_ids", "keys", "u", "v", "w", "final",
                 "regularized", "drift", "key_drift"},
     "drift": hexfloat|null, "val_loss": hexfloat|null, "val_accuracy": hexfloat|null,
     "cum_comm_cost": hexfloat, "cum_payload_bytes": int, "wall_ms": hexfloat}

Floats are written with ``float.hex`` so a record reloads bit-for-bit.
``rounds.csv`` carries the same data as shortest round-trip decimals (see
:func:`csv_columns` for the column order).
"""
import csv
import json
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .exceptions import EmptyRecords

logger = logging.getLogger(__name__)

RECORD_SCHEMA = 1
WEIGHT_VECTORS = ('u', 'v', 'w', 'final')
SERIES = ('val_loss', 'val_accuracy', 'drift', 'cum_comm_cost')


def encode_float(value):
    return None if value is None else float(value).hex()


def decode_float(value):
    return None if value is None else float.fromhex(value)


def _encode_nested(value):
    if isinstance(value, list):
        return [_encode_nested(item) for item in value]
    return encode_float(value)


def _decode_nested(value):
    if isinstance(value, list):
        return [_decode_nested(item) for item in value]
    return decode_float(value)


@dataclass(frozen=True, eq=False)
class RoundRecord:
    round_index: int
    selected: tuple
    local_loss_before: tuple
    local_loss_after: tuple
    weights: dict
    drift: float = None
    val_loss: float = None
    val_accuracy: float = None
    cum_comm_cost: float = 0.0
    cum_payload_bytes: int = 0
    wall_ms: float = 0.0

    @property
    def evaluated(self):
        return self.val_accuracy is not None

    def to_json_dict(self):
        weights = dict(self.weights)
        for name in WEIGHT_VECTORS:
            weights[name] = _encode_nested(weights[name])
        weights['drift'] = encode_float(weights.get('drift'))
        if weights.get('key_drift') is not None:
            weights['key_drift'] = _encode_nested(weights['key_drift'])
        return {
            'schema': RECORD_SCHEMA,
            'round': self.round_index,
            'selected': list(self.selected),
            'local_loss_before': _encode_nested(list(self.local_loss_before)),
            'local_loss_after': _encode_nested(list(self.local_loss_after)),
            'weights': weights,
            'drift': encode_float(self.drift),
            'val_loss': encode_float(self.val_loss),
            'val_accuracy': encode_float(self.val_accuracy),
            'cum_comm_cost': encode_float(self.cum_comm_cost),
            'cum_payload_bytes': self.cum_payload_bytes,
            'wall_ms': encode_float(self.wall_ms),
        }

    def to_json(self):
        return json.dumps(self.to_json_dict(), sort_keys=True, separators=(',', ':'))

    @classmethod
    def from_json_dict(cls, data):
        if data.get('schema') != RECORD_SCHEMA:
            raise ValueError(f"Unsupported record schema {data.get('schema')!r}")
        weights = dict(data['weights'])
        for name in WEIGHT_VECTORS:
            weights[name] = _decode_nested(weights[name])
        weights['drift'] = decode_float(weights.get('drift'))
        if weights.get('key_drift') is not None:
            weights['key_drift'] = _decode_nested(weights['key_drift'])
        return cls(
            round_index=data['round'],
            selected=tuple(data['selected']),
            local_loss_before=tuple(_decode_nested(data['local_loss_before'])),
            local_loss_after=tuple(_decode_nested(data['local_loss_after'])),
            weights=weights,
            drift=decode_float(data['drift']),
            val_loss=decode_float(data['val_loss']),
            val_accuracy=decode_float(data['val_accuracy']),
            cum_comm_cost=decode_float(data['cum_comm_cost']),
            cum_payload_bytes=data['cum_payload_bytes'],
            wall_ms=decode_float(data['wall_ms']),
        )

    def replay_key(self):
        """Serialized form without wall-clock time, for trajectory comparisons"""
        return replace(self, wall_ms=0.0).to_json()


def write_records(path, records):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w', encoding='utf-8') as handle:
        for record in records:
            handle.write(record.to_json() + '\n')


def append_record(path, record):
    with Path(path).open('a', encoding='utf-8') as handle:
        handle.write(record.to_json() + '\n')
        handle.flush()


def read_records(path):
    with Path(path).open(encoding='utf-8') as handle:
        return [RoundRecord.from_json_dict(json.loads(line)) for line in handle if line.strip()]


@dataclass(frozen=True)
class CommCostModel:
    """Participation-based cost model; payload counts one ParameterSet per transfer"""
    per_update_payload: int
    roster_size: int
    rounds: int

    def __post_init__(self):
        if self.per_update_payload <= 0:
            raise ValueError(f"Payload must be positive, got {self.per_update_payload}")

    @property
    def total_possible(self):
        return self.roster_size * self.rounds

    def round_payload(self, participants):
        # master down + update up
        return 2 * participants * self.per_update_payload


def communication_cost(records, roster_size):
    """Fraction of possible collaborator-round participations actually used"""
    if not records:
        raise EmptyRecords("No round records to cost")
    participations = sum(len(record.selected) for record in records)
    return participations / (len(records) * roster_size)


@dataclass(frozen=True)
class ConvergenceStat:
    auc_val_metric: float
    final_val_loss: float
    rounds_to_threshold: int = None

    def to_dict(self):
        return {
            'auc_val_metric': self.auc_val_metric,
            'final_val_loss': self.final_val_loss,
            'rounds_to_threshold': self.rounds_to_threshold,
        }


def trapezoid_auc(rounds, values):
    """Area under ``values`` over the round axis rescaled to [0, 1]"""
    rounds = np.asarray(rounds, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if len(values) == 1:
        return float(values[0])
    axis = (rounds - rounds[0]) / (rounds[-1] - rounds[0])
    return float(np.sum(np.diff(axis) * (values[1:] + values[:-1]) / 2.0))


def convergence_stat(records, threshold=None):
    evaluated = [record for record in records if record.evaluated]
    if not evaluated:
        raise EmptyRecords("No evaluated rounds to summarize")
    reached = None
    if threshold is not None:
        reached = next((record.round_index for record in evaluated if record.val_accuracy >= threshold), None)
    return ConvergenceStat(
        auc_val_metric=trapezoid_auc(
            [record.round_index for record in evaluated], [record.val_accuracy for record in evaluated]
        ),
        final_val_loss=evaluated[-1].val_loss,
        rounds_to_threshold=reached,
    )


def mean_and_std(values):
    """Mean and sample standard deviation (ddof=1; 0.0 for a single value)"""
    values = np.asarray(values, dtype=np.float64)
    std = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
    return float(values.mean()), std


# Export

def csv_columns(roster):
    columns = ['round', 'selected_ids']
    for collab_id in roster:
        columns.extend(f"{collab_id}_{name}" for name in WEIGHT_VECTORS)
    columns.extend(['drift', 'val_loss', 'val_acc', 'cum_comm_cost', 'wall_ms', 'cum_payload_bytes'])
    return columns


def _decimal(value):
    return '' if value is None else repr(float(value))


def _collab_weights(record):
    """Per-collaborator u/v/w/final, averaged over tensors in per_tensor scope"""
    weights = record.weights
    positions = {collab_id: index for index, collab_id in enumerate(weights['collab_ids'])}
    averaged = {
        'u': np.mean(weights['u'], axis=0),
        'v': np.asarray(weights['v']),
        'w': np.mean(weights['w'], axis=0),
        'final': np.mean(weights['final'], axis=0),
    }
    return {
        collab_id: {name: float(vector[index]) for name, vector in averaged.items()}
        for collab_id, index in positions.items()
    }


def record_to_row(record, roster):
    per_collab = _collab_weights(record)
    row = {'round': str(record.round_index), 'selected_ids': ';'.join(record.selected)}
    for collab_id in roster:
        values = per_collab.get(collab_id, {})
        for name in WEIGHT_VECTORS:
            row[f"{collab_id}_{name}"] = _decimal(values.get(name))
    row.update({
        'drift': _decimal(record.drift),
        'val_loss': _decimal(record.val_loss),
        'val_acc': _decimal(record.val_accuracy),
        'cum_comm_cost': _decimal(record.cum_comm_cost),
        'wall_ms': _decimal(record.wall_ms),
        'cum_payload_bytes': str(record.cum_payload_bytes),
    })
    return row


def write_rounds_csv(path, records, roster):
    columns = csv_columns(roster)
    with Path(path).open('w', newline='', encoding='utf-8') as handle:
        writer = csv.DictWriter(handle, fieldnames=columns)
        writer.writeheader()
        for record in records:
            writer.writerow(record_to_row(record, roster))


def read_rounds_csv(path):
    """Rows as dicts; numeric cells parsed to float, empty cells to None"""
    rows = []
    with Path(path).open(newline='', encoding='utf-8') as handle:
        for raw in csv.DictReader(handle):
            row = {}
            for column, cell in raw.items():
                if column == 'selected_ids':
                    row[column] = cell.split(';') if cell else []
                elif column in ('round', 'cum_payload_bytes'):
                    row[column] = int(cell)
                else:
                    row[column] = float(cell) if cell != '' else None
            rows.append(row)
    return rows


def series_values(records, name):
    """``(round, value)`` pairs for one metric, skipping rounds without it"""
    pairs = []
    for record in records:
        value = getattr(record, name)
        if value is not None:
            pairs.append((record.round_index, value))
    return pairs


def write_series(directory, records):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name in SERIES:
        with (directory / f"{name}.csv").open('w', newline='', encoding='utf-8') as handle:
            writer = csv.writer(handle)
            writer.writerow(['round', name])
            for round_index, value in series_values(records, name):
                writer.writerow([round_index, repr(float(value))])


def build_summary(result):
    records = result.records
    model = CommCostModel(result.payload_bytes, len(result.roster), max(1, len(records)))
    summary = {
        'schema': RECORD_SCHEMA,
        'name': result.config.name,
        'strategy': result.config.aggregation.strategy,
        'config': result.config.to_dict(),
        'roster_size': len(result.roster),
        'rounds_completed': len(records),
        'payload_bytes_per_update': model.per_update_payload,
        'total_payload_bytes': records[-1].cum_payload_bytes if records else 0,
        'communication_cost': communication_cost(records, len(result.roster)) if records else None,
        'convergence': None,
        'final_val_loss': result.final_metrics.loss,
        'final_val_accuracy': result.final_metrics.accuracy,
    }
    if any(record.evaluated for record in records):
        summary['convergence'] = convergence_stat(records, result.config.accuracy_threshold).to_dict()
    return summary


def export_report(result, output_dir, formats=('json', 'csv')):
    """Write summary.json, rounds.csv and series/*.csv; returns the written paths

    rounds.csv is a flattened view: per-collaborator weights are averaged over
    tensor keys and local losses are left out. records.jsonl stays the
    lossless record of every round.
    """
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if 'json' in formats:
        path = output_dir / 'summary.json'
        path.write_text(json.dumps(build_summary(result), indent=2, sort_keys=True) + '\n', encoding='utf-8')
        written.append(path)
    if 'csv' in formats:
        path = output_dir / 'rounds.csv'
        write_rounds_csv(path, result.records, result.roster)
        write_series(output_dir / 'series', result.records)
        written.extend([path, output_dir / 'series'])
    logger.info(f"Exported report for {result.config.name} to {output_dir}")
    return written


def format_table(rows, columns):
    """Aligned plain-text table"""
    cells = [[str(column) for column in columns]]
    for row in rows:
        cells.append([_format_cell(row.get(column)) for column in columns])
    widths = [max(len(line[index]) for line in cells) for index in range(len(columns))]
    lines = ['  '.join(cell.ljust(width) for cell, width in zip(line, widths)).rstrip() for line in cells]
    lines.insert(1, '  '.join('-' * width for width in widths))
    return '\n'.join(lines)


def _format_cell(value):
    if value is None:
        return '-'
    if isinstance(value, float):
        return 'nan' if math.isnan(value) else f"{value:.6f}"
    return str(value)
