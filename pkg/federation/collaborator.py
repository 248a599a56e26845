"""Client side of the federation: local SGD on a private shard.

Two model families are supported, both trained with mean cross-entropy:

* ``linear_softmax``: ``logits = X @ output.weight + output.bias``
* ``mlp_1hidden``: ``logits = tanh(X @ hidden.weight + hidden.bias) @ output.weight + output.bias``

tanh keeps the loss smooth so finite-difference gradient checks stay exact.
"""
import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from .aggregation import CollaboratorUpdate
from .exceptions import BadConfig, EmptyShard, SchemaMismatch
from .params import ParameterSet, schema_digest

logger = logging.getLogger(__name__)

MODEL_FAMILIES = ('linear_softmax', 'mlp_1hidden')
CLASS_CENTER_STREAM = 0xC1A55


@dataclass(frozen=True)
class TaskSpec:
    model_family: str = 'linear_softmax'
    num_features: int = 8
    num_classes: int = 4
    hidden_width: int = 16
    loss: str = 'cross_entropy'
    cluster_std: float = 1.0
    class_separation: float = 2.0
    task_seed: int = 0
    init_scale: float = 0.1

    def __post_init__(self):
        if self.model_family not in MODEL_FAMILIES:
            raise BadConfig(f"Unknown model_family {self.model_family!r}; expected one of {', '.join(MODEL_FAMILIES)}")
        if self.loss != 'cross_entropy':
            raise BadConfig(f"Only cross_entropy loss is supported, got {self.loss!r}")
        if self.num_features < 1 or self.num_classes < 2 or self.hidden_width < 1:
            raise BadConfig(
                f"Task dimensions must be positive with at least two classes "
                f"(features={self.num_features}, classes={self.num_classes}, hidden={self.hidden_width})"
            )
        if self.cluster_std < 0 or self.class_separation < 0 or self.init_scale < 0:
            raise BadConfig("cluster_std, class_separation and init_scale must be non-negative")

    @property
    def schema(self):
        features, classes, hidden = self.num_features, self.num_classes, self.hidden_width
        if self.model_family == 'linear_softmax':
            return (('output.weight', (features, classes)), ('output.bias', (classes,)))
        return (
            ('hidden.weight', (features, hidden)),
            ('hidden.bias', (hidden,)),
            ('output.weight', (hidden, classes)),
            ('output.bias', (classes,)),
        )

    @property
    def schema_hash(self):
        return schema_digest(self.schema)

    def class_centers(self):
        """Ground-truth Gaussian cluster centres, one row per class"""
        rng = np.random.default_rng([self.task_seed, CLASS_CENTER_STREAM])
        return rng.normal(0.0, self.class_separation, size=(self.num_classes, self.num_features))

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class LocalTrainConfig:
    learning_rate: float = 5e-5
    epochs_per_round: float = 1.0
    batch_size: int = 16
    seed: int = 0
    momentum: float = 0.0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise BadConfig(f"learning_rate must be positive, got {self.learning_rate}")
        if not self.epochs_per_round > 0:
            raise BadConfig(f"epochs_per_round must be positive, got {self.epochs_per_round}")
        if self.batch_size < 1:
            raise BadConfig(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0 <= self.momentum < 1:
            raise BadConfig(f"momentum must lie in [0, 1), got {self.momentum}")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True, eq=False)
class Shard:
    """A collaborator's private dataset"""
    features: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.labels)

    def subset(self, indices):
        return Shard(self.features[indices], self.labels[indices])


@dataclass(frozen=True)
class EvalMetrics:
    loss: float
    accuracy: float


def init_params(task, seed=0):
    """Initial master parameters: zeros for the linear model, small Gaussians for the MLP"""
    if task.model_family == 'linear_softmax':
        return ParameterSet.from_arrays({name: np.zeros(shape) for name, shape in task.schema})
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in task.schema:
        arrays[name] = rng.normal(0.0, task.init_scale, size=shape) if name.endswith('weight') else np.zeros(shape)
    return ParameterSet.from_arrays(arrays)


def _check_schema(params, task):
    if params.schema_hash != task.schema_hash:
        raise SchemaMismatch(f"Parameters {params.schema} do not match the {task.model_family} task schema {task.schema}")


def log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _forward(arrays, features, task):
    if task.model_family == 'linear_softmax':
        return features @ arrays['output.weight'] + arrays['output.bias'], None
    hidden = np.tanh(features @ arrays['hidden.weight'] + arrays['hidden.bias'])
    return hidden @ arrays['output.weight'] + arrays['output.bias'], hidden


def _loss_and_gradient(arrays, features, labels, task):
    logits, hidden = _forward(arrays, features, task)
    log_probs = log_softmax(logits)
    count = len(labels)
    loss = -log_probs[np.arange(count), labels].mean()

    delta = np.exp(log_probs)
    delta[np.arange(count), labels] -= 1.0
    delta /= count

    if task.model_family == 'linear_softmax':
        return loss, {'output.weight': features.T @ delta, 'output.bias': delta.sum(axis=0)}

    hidden_delta = (delta @ arrays['output.weight'].T) * (1.0 - hidden ** 2)
    return loss, {
        'hidden.weight': features.T @ hidden_delta,
        'hidden.bias': hidden_delta.sum(axis=0),
        'output.weight': hidden.T @ delta,
        'output.bias': delta.sum(axis=0),
    }


def loss_and_gradient(params, features, labels, task):
    """Mean cross-entropy and its analytic gradient as a ParameterSet"""
    _check_schema(params, task)
    loss, grads = _loss_and_gradient(params.to_arrays(), features, np.asarray(labels), task)
    return float(loss), ParameterSet.from_arrays({name: grads[name] for name in params.names})


def evaluate(params, dataset, task):
    _check_schema(params, task)
    if len(dataset) == 0:
        raise EmptyShard("Cannot evaluate on an empty dataset")
    logits, _ = _forward(params.to_arrays(), dataset.features, task)
    log_probs = log_softmax(logits)
    labels = dataset.labels
    loss = -log_probs[np.arange(len(labels)), labels].mean()
    accuracy = np.mean(np.argmax(logits, axis=1) == labels)
    return EvalMetrics(loss=float(loss), accuracy=float(accuracy))


def training_steps(sample_count, cfg):
    """Number of mini-batch steps: floor(epochs * batches per epoch)"""
    batch = min(cfg.batch_size, sample_count)
    batches = math.ceil(sample_count / batch)
    return batch, batches, math.floor(cfg.epochs_per_round * batches + 1e-9)


def local_train(master, shard, task, cfg, collab_id=''):
    """Mini-batch SGD from ``master`` on ``shard``; returns the CollaboratorUpdate"""
    _check_schema(master, task)
    if len(shard) == 0:
        raise EmptyShard(f"Collaborator {collab_id} has an empty shard")

    batch, batches, steps = training_steps(len(shard), cfg)
    if steps == 0:
        logger.warning(f"Collaborator {collab_id}: {cfg.epochs_per_round} epochs rounds down to zero steps")

    rng = np.random.default_rng(cfg.seed)
    arrays = master.to_arrays()
    velocity = {name: np.zeros_like(value) for name, value in arrays.items()}
    order = None
    for step in range(steps):
        position = step % batches
        if position == 0:
            order = rng.permutation(len(shard))
        indices = order[position * batch:(position + 1) * batch]
        _, grads = _loss_and_gradient(arrays, shard.features[indices], shard.labels[indices], task)
        for name, value in arrays.items():
            if cfg.momentum:
                velocity[name] = cfg.momentum * velocity[name] + grads[name]
                value -= cfg.learning_rate * velocity[name]
            else:
                value -= cfg.learning_rate * grads[name]

    return CollaboratorUpdate(
        collab_id=collab_id,
        params=ParameterSet.from_arrays(arrays),
        sample_count=len(shard),
        prev_params=master,
    )
