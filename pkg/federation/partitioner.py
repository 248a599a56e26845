"""Synthetic non-IID shards: Dirichlet label skew, Dirichlet quantity skew and per-collaborator feature shift."""
import logging
from dataclasses import asdict, dataclass

import numpy as np
from joblib import Parallel, delayed

from .collaborator import Shard
from .exceptions import BadConfig, BadSpec
from .params import ParameterSet, read_checkpoint, save_params

logger = logging.getLogger(__name__)

PARTITION_STREAM = 0x5EED
SHARD_STREAM = 0x5A4D
VALIDATION_STREAM = 0x7E57


@dataclass(frozen=True)
class PartitionConfig:
    num_collaborators: int = 33
    total_samples: int = 3300
    skew: float = 0.3
    num_classes: int = 4
    num_features: int = 8
    seed: int = 0
    quantity_skew: float = 1.0
    feature_shift_scale: float = 0.5
    noise_scale: float = 0.1

    def __post_init__(self):
        if self.num_collaborators < 1:
            raise BadConfig(f"num_collaborators must be >= 1, got {self.num_collaborators}")
        if self.total_samples < self.num_collaborators:
            raise BadConfig(
                f"total_samples ({self.total_samples}) must cover one sample per collaborator ({self.num_collaborators})"
            )
        if not self.skew > 0 or not self.quantity_skew > 0:
            raise BadConfig(f"Dirichlet concentrations must be positive (skew={self.skew}, quantity_skew={self.quantity_skew})")
        if self.num_classes < 2 or self.num_features < 1:
            raise BadConfig(f"Need >= 2 classes and >= 1 feature, got {self.num_classes} and {self.num_features}")
        if self.feature_shift_scale < 0 or self.noise_scale < 0:
            raise BadConfig("feature_shift_scale and noise_scale must be non-negative")
        if self.seed < 0:
            raise BadConfig(f"Partition seed must be non-negative, got {self.seed}")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class ShardSpec:
    collab_id: str
    sample_count: int
    label_mixture: tuple
    feature_shift: tuple
    noise_scale: float
    seed: int

    def __post_init__(self):
        mixture = tuple(float(p) for p in self.label_mixture)
        if self.sample_count < 1:
            raise BadSpec(f"Shard {self.collab_id} needs at least one sample, got {self.sample_count}")
        if any(p < 0 for p in mixture) or abs(sum(mixture) - 1.0) > 1e-9:
            raise BadSpec(f"Shard {self.collab_id} label mixture {mixture} is not a probability vector")
        if self.noise_scale < 0:
            raise BadSpec(f"Shard {self.collab_id} has negative noise_scale {self.noise_scale}")
        object.__setattr__(self, 'label_mixture', mixture)
        object.__setattr__(self, 'feature_shift', tuple(float(x) for x in self.feature_shift))

    def to_dict(self):
        data = asdict(self)
        data['label_mixture'] = list(self.label_mixture)
        data['feature_shift'] = list(self.feature_shift)
        return data

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


def collaborator_ids(count):
    width = max(2, len(str(count)))
    return [f"col{index:0{width}d}" for index in range(1, count + 1)]


def split_counts(total, proportions):
    """Integer counts >= 1 summing to ``total``, largest-remainder rounding"""
    proportions = np.asarray(proportions, dtype=np.float64)
    remainder = total - len(proportions)
    raw = proportions / proportions.sum() * remainder
    counts = np.floor(raw).astype(np.int64)
    leftover = remainder - int(counts.sum())
    order = np.argsort(-(raw - counts), kind='stable')
    counts[order[:leftover]] += 1
    return counts + 1


def _label_mixtures(rng, cfg):
    mixtures = rng.dirichlet(np.full(cfg.num_classes, cfg.skew), size=cfg.num_collaborators)
    totals = mixtures.sum(axis=1)
    # Very small concentrations can underflow a whole row to zero.
    for row in np.flatnonzero(~(totals > 0)):
        mixtures[row] = np.eye(cfg.num_classes)[int(rng.integers(cfg.num_classes))]
        totals[row] = 1.0
    return mixtures / totals[:, None]


def make_partition(cfg):
    """Deterministic ShardSpecs for every collaborator"""
    rng = np.random.default_rng([cfg.seed, PARTITION_STREAM])
    mixtures = _label_mixtures(rng, cfg)
    counts = split_counts(cfg.total_samples, rng.dirichlet(np.full(cfg.num_collaborators, cfg.quantity_skew)))
    shifts = rng.normal(0.0, cfg.feature_shift_scale, size=(cfg.num_collaborators, cfg.num_features))
    seeds = np.random.SeedSequence([cfg.seed, SHARD_STREAM]).generate_state(cfg.num_collaborators)

    specs = [
        ShardSpec(
            collab_id=collab_id,
            sample_count=int(counts[index]),
            label_mixture=tuple(mixtures[index]),
            feature_shift=tuple(shifts[index]),
            noise_scale=cfg.noise_scale,
            seed=int(seeds[index]),
        )
        for index, collab_id in enumerate(collaborator_ids(cfg.num_collaborators))
    ]
    logger.info(
        f"Partitioned {cfg.total_samples} samples over {cfg.num_collaborators} collaborators "
        f"(skew={cfg.skew}, sizes {int(counts.min())}..{int(counts.max())})"
    )
    return specs


def materialize_shard(spec, task):
    """Draw the shard's rows from the task's class clusters"""
    if len(spec.label_mixture) != task.num_classes:
        raise BadSpec(f"Shard {spec.collab_id} mixes {len(spec.label_mixture)} classes, task has {task.num_classes}")
    if len(spec.feature_shift) != task.num_features:
        raise BadSpec(f"Shard {spec.collab_id} shifts {len(spec.feature_shift)} features, task has {task.num_features}")

    rng = np.random.default_rng(spec.seed)
    count, width = spec.sample_count, task.num_features
    labels = rng.choice(task.num_classes, size=count, p=np.asarray(spec.label_mixture))
    features = task.class_centers()[labels] + task.cluster_std * rng.standard_normal((count, width))
    features = features + np.asarray(spec.feature_shift) + spec.noise_scale * rng.standard_normal((count, width))
    return Shard(features=features, labels=labels.astype(np.int64))


def materialize_all(specs, task, workers=1):
    return dict(zip(
        [spec.collab_id for spec in specs],
        Parallel(n_jobs=workers, prefer='threads')(delayed(materialize_shard)(spec, task) for spec in specs),
    ))


def validation_spec(task, size, seed):
    """IID held-out set: uniform labels, no shift, no extra noise"""
    return ShardSpec(
        collab_id='validation',
        sample_count=size,
        label_mixture=tuple(np.full(task.num_classes, 1.0 / task.num_classes)),
        feature_shift=tuple(np.zeros(task.num_features)),
        noise_scale=0.0,
        seed=int(np.random.SeedSequence([seed, VALIDATION_STREAM]).generate_state(1)[0]),
    )


def shard_to_params(shard):
    return ParameterSet.from_arrays({
        'features': shard.features,
        'labels': shard.labels.astype(np.float64),
    })


def save_shard(path, shard, collab_id):
    save_params(path, shard_to_params(shard), meta={'kind': 'shard', 'collab_id': collab_id})


def load_shard(path):
    params, meta = read_checkpoint(path)
    if meta.get('kind') != 'shard':
        raise BadSpec(f"{path} is not a shard file")
    return Shard(features=params['features'].copy(), labels=params['labels'].astype(np.int64))
