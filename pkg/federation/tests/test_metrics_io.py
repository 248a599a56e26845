import json
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from federation.engine import run_experiment
from federation.exceptions import EmptyRecords
from federation.metrics_io import (
    CommCostModel, RoundRecord, build_summary, communication_cost, convergence_stat, csv_columns, export_report,
    format_table, mean_and_std, read_records, read_rounds_csv, series_values, trapezoid_auc, write_records,
)
from federation.partitioner import collaborator_ids
from federation.selection import plan_schedule
from federation.tests import oracles
from federation.tests.test_engine import small_config


def bare_record(round_index, selected, val_accuracy=None, val_loss=None):
    return RoundRecord(
        round_index=round_index,
        selected=tuple(selected),
        local_loss_before=(),
        local_loss_after=(),
        weights={},
        val_loss=val_loss,
        val_accuracy=val_accuracy,
    )


def sample_record():
    return RoundRecord(
        round_index=4,
        selected=('col02', 'col01'),
        local_loss_before=(0.1, 1 / 3),
        local_loss_after=(0.05, 2 / 7),
        weights={
            'scope': 'global', 'collab_ids': ['col02', 'col01'], 'keys': ['*'],
            'u': [[0.1, 0.9]], 'v': [0.3, 0.7], 'w': [[0.2, 0.8]], 'final': [[0.2, 0.8]],
            'regularized': False, 'drift': 0.125, 'key_drift': [0.125],
        },
        drift=0.125,
        val_loss=1 / 3,
        val_accuracy=0.7,
        cum_comm_cost=2 / 9,
        cum_payload_bytes=1234,
        wall_ms=12.5,
    )


class CommunicationCostTests(SimpleTestCase):
    def test_window_seven_of_thirty_three(self):
        plans = plan_schedule(collaborator_ids(33), 0.2, 0, 33)
        records = [bare_record(plan.round_index, plan.selected) for plan in plans]
        self.assertAlmostEqual(communication_cost(records, 33), 7 / 33, delta=1e-12)

    def test_full_participation(self):
        roster = collaborator_ids(4)
        records = [bare_record(round_index, roster) for round_index in range(1, 6)]
        self.assertEqual(communication_cost(records, 4), 1.0)
        self.assertEqual(communication_cost([bare_record(1, ['solo'])], 1), 1.0)

    def test_empty(self):
        with self.assertRaises(EmptyRecords):
            communication_cost([], 3)

    @settings(max_examples=50, deadline=None)
    @given(
        roster_size=st.integers(min_value=1, max_value=40),
        fractions=st.lists(st.floats(min_value=0.01, max_value=1.0), min_size=2, max_size=2),
        rounds=st.integers(min_value=1, max_value=30),
        seed=st.integers(min_value=0, max_value=2 ** 32 - 1),
    )
    def test_monotone_in_window_fraction(self, roster_size, fractions, rounds, seed):
        roster = collaborator_ids(roster_size)
        costs = []
        for fraction in sorted(fractions):
            plans = plan_schedule(roster, fraction, seed, rounds)
            costs.append(communication_cost([bare_record(plan.round_index, plan.selected) for plan in plans], roster_size))
        self.assertLessEqual(costs[0], costs[1] + 1e-12)

    def test_payload_model(self):
        model = CommCostModel(per_update_payload=100, roster_size=10, rounds=4)
        self.assertEqual(model.total_possible, 40)
        self.assertEqual(model.round_payload(3), 600)
        with self.assertRaises(ValueError):
            CommCostModel(0, 10, 4)


class ConvergenceTests(SimpleTestCase):
    def test_constant_accuracy(self):
        self.assertAlmostEqual(trapezoid_auc([1, 2, 3, 4], [0.8] * 4), 0.8, delta=1e-12)

    def test_linear_rise(self):
        rounds = list(range(1, 12))
        self.assertAlmostEqual(trapezoid_auc(rounds, np.linspace(0.0, 1.0, 11)), 0.5, delta=1e-12)

    def test_matches_scalar_trapezoid(self):
        rng = np.random.default_rng(1)
        rounds = [1, 2, 4, 5, 9, 10]
        values = rng.uniform(size=6).tolist()
        self.assertAlmostEqual(trapezoid_auc(rounds, values), oracles.trapezoid(rounds, values), delta=1e-12)

    def test_single_point(self):
        self.assertEqual(trapezoid_auc([3], [0.4]), 0.4)

    def test_stat(self):
        records = [
            bare_record(1, ['a'], 0.5, 1.2),
            bare_record(2, ['a']),
            bare_record(3, ['a'], 0.85, 0.7),
            bare_record(4, ['a'], 0.9, 0.6),
        ]
        stat = convergence_stat(records, threshold=0.8)
        self.assertEqual(stat.rounds_to_threshold, 3)
        self.assertEqual(stat.final_val_loss, 0.6)
        self.assertAlmostEqual(stat.auc_val_metric, oracles.trapezoid([1, 3, 4], [0.5, 0.85, 0.9]), delta=1e-12)
        self.assertIsNone(convergence_stat(records, threshold=0.95).rounds_to_threshold)
        with self.assertRaises(EmptyRecords):
            convergence_stat([bare_record(1, ['a'])])

    def test_sample_std(self):
        values = [0.41, 0.47, 0.39]
        mean, std = mean_and_std(values)
        self.assertAlmostEqual(mean, sum(values) / 3, delta=1e-15)
        self.assertAlmostEqual(std, oracles.sample_std(values), delta=1e-15)
        self.assertEqual(mean_and_std([2.0]), (2.0, 0.0))


class RecordFileTests(SimpleTestCase):
    def test_hex_floats_reload_exactly(self):
        record = sample_record()
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'records.jsonl'
            write_records(path, [record])
            line = json.loads(path.read_text().splitlines()[0])
            self.assertEqual(line['schema'], 1)
            self.assertEqual(line['val_loss'], (1 / 3).hex())
            loaded = read_records(path)[0]
        self.assertEqual(loaded.to_json(), record.to_json())
        self.assertEqual(loaded.val_loss, 1 / 3)

    def test_replay_key_ignores_wall_time(self):
        record = sample_record()
        self.assertEqual(record.replay_key(), replace(record, wall_ms=99.0).replay_key())
        self.assertNotEqual(record.to_json(), replace(record, wall_ms=99.0).to_json())


class ExportTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls._tmp = tempfile.TemporaryDirectory()
        cls.tmp = Path(cls._tmp.name)
        cls.result = run_experiment(small_config(cls.tmp / 'run', rounds=4))

    @classmethod
    def tearDownClass(cls):
        cls._tmp.cleanup()
        super().tearDownClass()

    def test_column_order(self):
        self.assertEqual(csv_columns(['col01', 'col02']), [
            'round', 'selected_ids',
            'col01_u', 'col01_v', 'col01_w', 'col01_final',
            'col02_u', 'col02_v', 'col02_w', 'col02_final',
            'drift', 'val_loss', 'val_acc', 'cum_comm_cost', 'wall_ms', 'cum_payload_bytes',
        ])

    def test_csv_round_trip(self):
        output = self.tmp / 'report'
        export_report(self.result, output, formats=('csv',))
        rows = read_rounds_csv(output / 'rounds.csv')
        self.assertEqual(len(rows), 4)
        for row, record in zip(rows, self.result.records):
            self.assertEqual(row['round'], record.round_index)
            self.assertEqual(row['selected_ids'], list(record.selected))
            self.assertEqual(row['val_loss'], record.val_loss)
            self.assertEqual(row['cum_comm_cost'], record.cum_comm_cost)
            finals = [row[f"{collab_id}_final"] for collab_id in self.result.roster if row[f"{collab_id}_final"] is not None]
            self.assertEqual(len(finals), len(record.selected))
            assert_allclose(sum(finals), 1.0, rtol=0, atol=1e-9)
        header = (output / 'rounds.csv').read_text().splitlines()[0]
        self.assertEqual(header.split(','), csv_columns(self.result.roster))

    def test_series_files(self):
        output = self.tmp / 'series_report'
        export_report(self.result, output, formats=('csv',))
        lines = (output / 'series' / 'val_loss.csv').read_text().splitlines()
        self.assertEqual(lines[0], 'round,val_loss')
        expected = series_values(self.result.records, 'val_loss')
        self.assertEqual([(int(r), float(v)) for r, v in (line.split(',') for line in lines[1:])], expected)

    def test_summary(self):
        output = self.tmp / 'summary_report'
        export_report(self.result, output, formats=('json',))
        summary = json.loads((output / 'summary.json').read_text())
        self.assertEqual(summary, json.loads(json.dumps(build_summary(self.result))))
        self.assertEqual(summary['rounds_completed'], 4)
        self.assertEqual(summary['strategy'], 'regsimagg')
        self.assertAlmostEqual(summary['communication_cost'], 0.5, delta=1e-12)
        self.assertEqual(summary['total_payload_bytes'], self.result.records[-1].cum_payload_bytes)
        self.assertEqual(summary['total_payload_bytes'], 4 * 2 * 3 * self.result.payload_bytes)
        self.assertFalse((output / 'rounds.csv').exists())

    def test_format_table(self):
        table = format_table([{'name': 'a', 'loss': 0.5}, {'name': 'bb', 'loss': None}], ['name', 'loss'])
        self.assertEqual(table.splitlines(), [
            'name  loss',
            '----  --------',
            'a     0.500000',
            'bb    -',
        ])
