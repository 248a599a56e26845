"""Sliding-window collaborator scheduler.

The roster is shuffled with a seeded PCG64 stream (Fisher-Yates, swapping from
the highest index down). Each round takes the next window of ``s`` indices;
when fewer than ``s`` remain, the tail is taken, the roster is reshuffled and
the round is topped up from the front of the new permutation, skipping IDs
already in the round. IDs chosen as top-up are moved to the front of the new
pass so that every pass still selects each collaborator exactly once.
"""
import json
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import BadConfig, BadFraction, DuplicateId, EmptyRoster

logger = logging.getLogger(__name__)

TAIL_POLICIES = ('top_up', 'truncate')
ROUNDINGS = ('ceil', 'floor')
MAX_RESHUFFLE_ATTEMPTS = 32


def window_size(roster_size, fraction, rounding='ceil'):
    # Tolerance keeps 0.3 * 10 at 3, not 4.
    raw = fraction * roster_size
    size = math.ceil(raw - 1e-9) if rounding == 'ceil' else math.floor(raw + 1e-9)
    return max(1, min(roster_size, size))


def make_generator(seed):
    return np.random.Generator(np.random.PCG64(seed))


def restore_generator(bit_state):
    generator = np.random.Generator(np.random.PCG64())
    generator.bit_generator.state = bit_state
    return generator


def fisher_yates(count, rng):
    order = list(range(count))
    for high in range(count - 1, 0, -1):
        low = int(rng.integers(0, high + 1))
        order[high], order[low] = order[low], order[high]
    return order


@dataclass(frozen=True)
class RoundPlan:
    round_index: int
    selected: tuple

    def __post_init__(self):
        selected = tuple(self.selected)
        if not selected:
            raise EmptyRoster(f"Round {self.round_index} selected no collaborators")
        if len(set(selected)) != len(selected):
            raise DuplicateId(f"Round {self.round_index} selected duplicates: {selected}")
        object.__setattr__(self, 'selected', selected)

    def to_dict(self):
        return {'round': self.round_index, 'selected': list(self.selected)}

    def to_json(self):
        return json.dumps(self.to_dict(), separators=(',', ':'))


@dataclass(frozen=True)
class SchedulerState:
    roster: tuple
    permutation: tuple
    cursor: int
    window_fraction: float
    rng_seed: int
    round_index: int = 0
    last_selected: frozenset = frozenset()
    rng_state: dict = field(default=None, repr=False)
    tail_policy: str = 'top_up'
    rounding: str = 'ceil'

    @property
    def window(self):
        return window_size(len(self.roster), self.window_fraction, self.rounding)

    def to_dict(self):
        order = {collab_id: index for index, collab_id in enumerate(self.roster)}
        return {
            'roster': list(self.roster),
            'permutation': list(self.permutation),
            'cursor': self.cursor,
            'window_fraction': self.window_fraction,
            'rng_seed': self.rng_seed,
            'round_index': self.round_index,
            'last_selected': sorted(self.last_selected, key=order.__getitem__),
            'tail_policy': self.tail_policy,
            'rounding': self.rounding,
        }

    @classmethod
    def from_dict(cls, data, rng_state):
        return cls(
            roster=tuple(data['roster']),
            permutation=tuple(data['permutation']),
            cursor=int(data['cursor']),
            window_fraction=float(data['window_fraction']),
            rng_seed=int(data['rng_seed']),
            round_index=int(data['round_index']),
            last_selected=frozenset(data['last_selected']),
            rng_state=rng_state,
            tail_policy=data['tail_policy'],
            rounding=data['rounding'],
        )


def new_scheduler(roster, window_fraction, seed, tail_policy='top_up', rounding='ceil'):
    roster = tuple(str(collab_id) for collab_id in roster)
    if not roster:
        raise EmptyRoster("Roster is empty")
    if len(set(roster)) != len(roster):
        duplicates = sorted({collab_id for collab_id in roster if roster.count(collab_id) > 1})
        raise DuplicateId(f"Roster contains duplicate IDs: {duplicates}")
    if not 0 < window_fraction <= 1:
        raise BadFraction(f"window_fraction must lie in (0, 1], got {window_fraction}")
    if tail_policy not in TAIL_POLICIES:
        raise BadConfig(f"Unknown tail_policy {tail_policy!r}; expected one of {', '.join(TAIL_POLICIES)}")
    if rounding not in ROUNDINGS:
        raise BadConfig(f"Unknown rounding {rounding!r}; expected one of {', '.join(ROUNDINGS)}")
    if seed < 0:
        raise BadConfig(f"Scheduler seed must be non-negative, got {seed}")

    rng = make_generator(seed)
    state = SchedulerState(
        roster=roster,
        permutation=tuple(fisher_yates(len(roster), rng)),
        cursor=0,
        window_fraction=float(window_fraction),
        rng_seed=int(seed),
        rng_state=rng.bit_generator.state,
        tail_policy=tail_policy,
        rounding=rounding,
    )
    if state.window >= len(roster) and len(roster) > 1:
        logger.warning(
            f"Window of {state.window} covers the whole roster of {len(roster)}; "
            f"consecutive rounds will repeat the same collaborator set"
        )
    return state


def _reshuffle(rng, count, taken, needed, previous, window):
    """New permutation with the round's top-up indices moved to the front"""
    excluded = set(taken)
    for attempt in range(MAX_RESHUFFLE_ATTEMPTS):
        order = fisher_yates(count, rng)
        candidates = [index for index in order if index not in excluded]
        fill = candidates[:needed]
        if window >= count or excluded.union(fill) != previous:
            break
        logger.debug(f"Reshuffle attempt {attempt + 1} repeated the previous round; drawing again")
    else:
        # candidates[needed] lies outside the previous round, so this set differs.
        fill = candidates[1:needed + 1]

    chosen = set(fill)
    permutation = fill + [index for index in order if index not in chosen]
    return permutation, len(fill), fill


def next_round(state):
    """Advance the scheduler by one round; returns ``(state, RoundPlan)``"""
    rng = restore_generator(state.rng_state)
    count = len(state.roster)
    window = state.window
    index_of = {collab_id: index for index, collab_id in enumerate(state.roster)}
    previous = {index_of[collab_id] for collab_id in state.last_selected}

    permutation = list(state.permutation)
    taken = permutation[state.cursor:state.cursor + window]
    cursor = state.cursor + len(taken)

    if len(taken) < window and (state.tail_policy == 'top_up' or not taken):
        permutation, cursor, fill = _reshuffle(rng, count, taken, window - len(taken), previous, window)
        taken = taken + fill

    selected = tuple(state.roster[index] for index in taken)
    plan = RoundPlan(state.round_index + 1, selected)
    next_state = replace(
        state,
        permutation=tuple(permutation),
        cursor=cursor,
        round_index=plan.round_index,
        last_selected=frozenset(selected),
        rng_state=rng.bit_generator.state,
    )
    return next_state, plan


def plan_schedule(roster, window_fraction, seed, rounds, **options):
    """The first ``rounds`` plans for a fresh scheduler"""
    state = new_scheduler(roster, window_fraction, seed, **options)
    plans = []
    for _ in range(rounds):
        state, plan = next_round(state)
        plans.append(plan)
    return plans
