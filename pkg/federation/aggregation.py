"""Server-side fusion: FedAvg, plain mean, SimAgg and RegSimAgg.

Weights flow through four stages for every collaborator ``c`` in the round:

    u_c   similarity weight, inverse distance to the round mean, normalized
    v_c   sample weight, N_c / sum(N)
    w_c   combined weight, (u_c + v_c) / sum(u + v)
    final the weight actually applied to p_c; for regsimagg past the onset
          round this is w_c divided by the drift (+ epsilon), renormalized

The master parameters are the convex combination ``sum_c final_c * p_c``.
In ``per_tensor`` scope every named tensor gets its own u, w and final
vectors; v is shared.
"""
import logging
from dataclasses import asdict, dataclass

import numpy as np

from .exceptions import BadConfig, EmptyInput, EmptyShard, LengthMismatch, MissingPrevParams, SchemaMismatch
from .params import NORMS, SCOPES, axpy_combine, axpy_combine_per_tensor, distance, mean_params, require_compatible

logger = logging.getLogger(__name__)

STRATEGIES = ('fedavg', 'plain_mean', 'simagg', 'regsimagg')
DRIFT_MODES = ('round_mean', 'per_collaborator')
GLOBAL_KEY = '*'
DEFAULT_EPSILON = 1e-5


@dataclass(frozen=True, eq=False)
class CollaboratorUpdate:
    collab_id: str
    params: object
    sample_count: int
    prev_params: object = None

    def __post_init__(self):
        if int(self.sample_count) < 1:
            raise EmptyShard(f"Collaborator {self.collab_id} reported sample_count={self.sample_count}")
        if self.prev_params is not None and not self.prev_params.is_compatible(self.params):
            raise SchemaMismatch(f"Collaborator {self.collab_id}: prev_params schema differs from params")


@dataclass(frozen=True)
class AggregationConfig:
    strategy: str = 'regsimagg'
    epsilon: float = DEFAULT_EPSILON
    regularization_start_round: int = 10
    scope: str = 'per_tensor'
    norm: str = 'l2'
    drift_mode: str = 'round_mean'

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise BadConfig(f"Unknown strategy {self.strategy!r}; expected one of {', '.join(STRATEGIES)}")
        if not self.epsilon > 0:
            raise BadConfig(f"epsilon must be positive, got {self.epsilon}")
        if self.regularization_start_round < 0:
            raise BadConfig(f"regularization_start_round must be >= 0, got {self.regularization_start_round}")
        if self.scope not in SCOPES:
            raise BadConfig(f"Unknown scope {self.scope!r}; expected one of {', '.join(SCOPES)}")
        if self.norm not in NORMS:
            raise BadConfig(f"Unknown norm {self.norm!r}; expected one of {', '.join(NORMS)}")
        if self.drift_mode not in DRIFT_MODES:
            raise BadConfig(f"Unknown drift_mode {self.drift_mode!r}; expected one of {', '.join(DRIFT_MODES)}")

    def regularizes(self, round_index):
        return self.strategy == 'regsimagg' and round_index > self.regularization_start_round

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True, eq=False)
class AggregationWeights:
    """Every intermediate weight vector of one aggregation, for reporting

    Arrays are indexed ``[key, collaborator]`` where keys are tensor names in
    ``per_tensor`` scope and ``("*",)`` in ``global`` scope.
    """
    strategy: str
    scope: str
    collab_ids: tuple
    keys: tuple
    similarity: np.ndarray
    sample: np.ndarray
    combined: np.ndarray
    final: np.ndarray
    regularized: bool
    drift: float = None
    key_drift: np.ndarray = None

    def final_for(self, key):
        return self.final[self.keys.index(key)]

    def mean_over_keys(self, name):
        """Tensor-averaged vector for ``similarity``, ``combined`` or ``final``"""
        return getattr(self, name).mean(axis=0)

    def to_dict(self):
        return {
            'scope': self.scope,
            'collab_ids': list(self.collab_ids),
            'keys': list(self.keys),
            'u': self.similarity.tolist(),
            'v': self.sample.tolist(),
            'w': self.combined.tolist(),
            'final': self.final.tolist(),
            'regularized': self.regularized,
            'drift': self.drift,
            'key_drift': None if self.key_drift is None else self.key_drift.tolist(),
        }

    @classmethod
    def from_dict(cls, data, strategy=''):
        return cls(
            strategy=strategy,
            scope=data['scope'],
            collab_ids=tuple(data['collab_ids']),
            keys=tuple(data['keys']),
            similarity=np.asarray(data['u'], dtype=np.float64),
            sample=np.asarray(data['v'], dtype=np.float64),
            combined=np.asarray(data['w'], dtype=np.float64),
            final=np.asarray(data['final'], dtype=np.float64),
            regularized=bool(data['regularized']),
            drift=data.get('drift'),
            key_drift=None if data.get('key_drift') is None else np.asarray(data['key_drift'], dtype=np.float64),
        )


def _param_views(updates, tensor=None, attribute='params'):
    if not updates:
        raise EmptyInput("Expected at least one collaborator update")
    sets = [getattr(update, attribute) for update in updates]
    if tensor is not None:
        sets = [params.select([tensor]) for params in sets]
    return sets


def similarity_weights(updates, epsilon=DEFAULT_EPSILON, norm='l2', tensor=None):
    """u_c from inverse distance to the unweighted round mean

    When every collaborator sits exactly on the mean the ratio is 0/0; the
    weights are then uniform, which is the limit of the formula.
    """
    sets = _param_views(updates, tensor)
    require_compatible(sets)
    centre = mean_params(sets)
    distances = np.array([distance(params, centre, 'global', norm) for params in sets])
    total = distances.sum()
    if total == 0.0:
        return np.full(len(sets), 1.0 / len(sets))
    similarity = total / (distances + epsilon)
    return similarity / similarity.sum()


def sample_weights(updates):
    """v_c proportional to each collaborator's sample count"""
    if not updates:
        raise EmptyInput("Expected at least one collaborator update")
    counts = np.array([update.sample_count for update in updates], dtype=np.float64)
    return counts / counts.sum()


def combine_weights(u, v):
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise LengthMismatch(f"Similarity weights {u.shape} and sample weights {v.shape} differ in length")
    total = u + v
    return total / total.sum()


def collaborator_drifts(updates, norm='l2', tensor=None):
    """d(prev_c, p_c) for every update; requires prev_params everywhere"""
    missing = [update.collab_id for update in updates if update.prev_params is None]
    if missing:
        raise MissingPrevParams(f"Collaborators {missing} did not report the parameters they started from")
    current = _param_views(updates, tensor)
    previous = _param_views(updates, tensor, attribute='prev_params')
    return np.array([distance(prev, params, 'global', norm) for prev, params in zip(previous, current)])


def round_drift(updates, norm='l2', tensor=None):
    """Mean over the round's collaborators of the parameter displacement norm"""
    return float(collaborator_drifts(updates, norm, tensor).mean())


def scale_by_drift(w, drift, epsilon=DEFAULT_EPSILON):
    """Divide weights by ``drift + epsilon`` (scalar or per-collaborator)"""
    return np.asarray(w, dtype=np.float64) / (np.asarray(drift, dtype=np.float64) + epsilon)


def regularize_weights(w, updates, round_index, cfg, tensor=None):
    """Damp the combined weights by the round drift once past the onset round"""
    if round_index < 0:
        raise BadConfig(f"round_index must be >= 0, got {round_index}")
    w = np.asarray(w, dtype=np.float64)
    if round_index <= cfg.regularization_start_round:
        return w.copy()

    drifts = collaborator_drifts(updates, cfg.norm, tensor)
    if cfg.drift_mode == 'round_mean':
        scaled = scale_by_drift(w, drifts.mean(), cfg.epsilon)
    else:
        scaled = scale_by_drift(w, drifts, cfg.epsilon)
    return scaled / scaled.sum()


def _final_weights(strategy, u, v, w, updates, round_index, cfg, tensor):
    if strategy == 'fedavg':
        return v.copy()
    if strategy == 'plain_mean':
        return np.full(len(updates), 1.0 / len(updates))
    if strategy == 'simagg':
        return w.copy()
    return regularize_weights(w, updates, round_index, cfg, tensor)


def aggregate(updates, round_index, cfg):
    """Fuse one round of collaborator updates into the master parameters

    Returns ``(master, AggregationWeights)``.
    """
    updates = list(updates)
    if not updates:
        raise EmptyInput("Expected at least one collaborator update")
    params = [update.params for update in updates]
    require_compatible(params)

    keys = params[0].names if cfg.scope == 'per_tensor' else (GLOBAL_KEY,)
    v = sample_weights(updates)
    u_rows, w_rows, final_rows = [], [], []
    for key in keys:
        tensor = None if key == GLOBAL_KEY else key
        u = similarity_weights(updates, cfg.epsilon, cfg.norm, tensor)
        w = combine_weights(u, v)
        u_rows.append(u)
        w_rows.append(w)
        final_rows.append(_final_weights(cfg.strategy, u, v, w, updates, round_index, cfg, tensor))

    if cfg.scope == 'per_tensor':
        master = axpy_combine_per_tensor(dict(zip(keys, final_rows)), params)
    else:
        master = axpy_combine(final_rows[0], params)

    drift = key_drift = None
    if all(update.prev_params is not None for update in updates):
        drift = round_drift(updates, cfg.norm)
        if cfg.scope == 'per_tensor':
            key_drift = np.array([round_drift(updates, cfg.norm, key) for key in keys])
        else:
            key_drift = np.array([drift])

    weights = AggregationWeights(
        strategy=cfg.strategy,
        scope=cfg.scope,
        collab_ids=tuple(update.collab_id for update in updates),
        keys=tuple(keys),
        similarity=np.vstack(u_rows),
        sample=v,
        combined=np.vstack(w_rows),
        final=np.vstack(final_rows),
        regularized=cfg.regularizes(round_index),
        drift=drift,
        key_drift=key_drift,
    )
    logger.debug(
        f"Round {round_index} {cfg.strategy}: final weights "
        f"{dict(zip(weights.collab_ids, np.round(weights.mean_over_keys('final'), 4).tolist()))}"
    )
    return master, weights
