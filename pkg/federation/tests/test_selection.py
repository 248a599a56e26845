import json
from collections import Counter

from django.test import SimpleTestCase
from hypothesis import given, settings, strategies as st

from federation.exceptions import BadConfig, BadFraction, DuplicateId, EmptyRoster
from federation.partitioner import collaborator_ids
from federation.selection import (
    SchedulerState, make_generator, new_scheduler, next_round, plan_schedule, window_size,
)
from federation.tests import oracles


def run_rounds(state, rounds):
    plans = []
    for _ in range(rounds):
        state, plan = next_round(state)
        plans.append(plan)
    return state, plans


class WindowSizeTests(SimpleTestCase):
    def test_sizes(self):
        self.assertEqual(window_size(33, 0.2), 7)
        self.assertEqual(window_size(33, 0.2, 'floor'), 6)
        self.assertEqual(window_size(10, 0.3), 3)
        self.assertEqual(window_size(5, 0.01), 1)
        self.assertEqual(window_size(4, 1.0), 4)


class NewSchedulerTests(SimpleTestCase):
    def test_validation(self):
        with self.assertRaises(EmptyRoster):
            new_scheduler([], 0.2, 0)
        with self.assertRaises(DuplicateId):
            new_scheduler(['a', 'b', 'a'], 0.2, 0)
        with self.assertRaises(BadFraction):
            new_scheduler(['a', 'b'], 0.0, 0)
        with self.assertRaises(BadFraction):
            new_scheduler(['a', 'b'], 1.5, 0)
        with self.assertRaises(BadConfig):
            new_scheduler(['a', 'b'], 0.5, 0, tail_policy='wrap')

    def test_first_window_follows_seeded_shuffle(self):
        roster = collaborator_ids(33)
        rng = make_generator(42)
        order = oracles.fisher_yates(33, lambda high: int(rng.integers(0, high + 1)))
        _, plan = next_round(new_scheduler(roster, 0.2, 42))
        self.assertEqual(plan.round_index, 1)
        self.assertEqual(plan.selected, tuple(roster[index] for index in order[:7]))

    def test_full_participation_is_logged(self):
        with self.assertLogs('federation.selection', level='WARNING'):
            new_scheduler(['a', 'b', 'c'], 1.0, 0)


class NextRoundTests(SimpleTestCase):
    def test_tail_top_up(self):
        roster = [chr(ord('A') + i) for i in range(10)]
        _, plans = run_rounds(new_scheduler(roster, 0.3, 9), 4)
        first_pass = [collab_id for plan in plans[:3] for collab_id in plan.selected]
        self.assertEqual(len(set(first_pass)), 9)
        leftover = (set(roster) - set(first_pass)).pop()
        self.assertEqual(len(plans[3].selected), 3)
        self.assertEqual(plans[3].selected[0], leftover)

    def test_truncate_policy(self):
        roster = collaborator_ids(10)
        _, plans = run_rounds(new_scheduler(roster, 0.3, 1, tail_policy='truncate'), 8)
        self.assertEqual([len(plan.selected) for plan in plans], [3, 3, 3, 1, 3, 3, 3, 1])

    def test_singleton_roster(self):
        _, plans = run_rounds(new_scheduler(['solo'], 1.0, 0), 5)
        self.assertTrue(all(plan.selected == ('solo',) for plan in plans))

    def test_full_fraction_selects_everyone(self):
        roster = collaborator_ids(6)
        _, plans = run_rounds(new_scheduler(roster, 1.0, 3), 10)
        self.assertTrue(all(set(plan.selected) == set(roster) for plan in plans))

    def test_fairness_over_long_schedule(self):
        roster = collaborator_ids(33)
        plans = plan_schedule(roster, 0.2, 17, 500)
        stream = [collab_id for plan in plans for collab_id in plan.selected]
        for start in range(0, len(stream) - 32, 33):
            self.assertEqual(sorted(stream[start:start + 33]), sorted(roster))
        counts = Counter(stream)
        self.assertLessEqual(max(counts.values()) - min(counts.values()), 1)
        for previous, current in zip(plans, plans[1:]):
            self.assertNotEqual(set(previous.selected), set(current.selected))

    @settings(max_examples=50, deadline=None)
    @given(
        roster_size=st.integers(min_value=2, max_value=40),
        fraction=st.floats(min_value=0.05, max_value=0.95),
        seed=st.integers(min_value=0, max_value=2 ** 32 - 1),
    )
    def test_consecutive_rounds_differ(self, roster_size, fraction, seed):
        plans = plan_schedule(collaborator_ids(roster_size), fraction, seed, 3 * roster_size)
        window = window_size(roster_size, fraction)
        for previous, current in zip(plans, plans[1:]):
            self.assertEqual(len(current.selected), window)
            if window < roster_size:
                self.assertNotEqual(set(previous.selected), set(current.selected))

    def test_divisible_roster_never_repeats(self):
        plans = plan_schedule(collaborator_ids(10), 0.5, 4, 200)
        for previous, current in zip(plans, plans[1:]):
            self.assertNotEqual(set(previous.selected), set(current.selected))

    def test_same_seed_same_schedule(self):
        roster = collaborator_ids(12)
        first = [plan.to_json() for plan in plan_schedule(roster, 0.25, 5, 100)]
        second = [plan.to_json() for plan in plan_schedule(roster, 0.25, 5, 100)]
        other = [plan.to_json() for plan in plan_schedule(roster, 0.25, 6, 100)]
        self.assertEqual(first, second)
        self.assertNotEqual(first, other)

    def test_state_survives_serialization(self):
        roster = collaborator_ids(11)
        state, _ = run_rounds(new_scheduler(roster, 0.3, 8), 7)
        stored = json.loads(json.dumps(state.to_dict()))
        rng_state = json.loads(json.dumps(state.rng_state))
        restored = SchedulerState.from_dict(stored, rng_state)

        _, expected = run_rounds(state, 12)
        _, resumed = run_rounds(restored, 12)
        self.assertEqual([plan.to_dict() for plan in resumed], [plan.to_dict() for plan in expected])
        self.assertEqual(resumed[0].round_index, 8)
