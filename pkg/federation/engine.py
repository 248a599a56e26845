"""Synchronous federation loop with checkpoint/resume.

Output directory layout::

    experiment.json        config echo, roster, shard manifest (no data)
    records.jsonl          one RoundRecord per completed round
    round_<k>/master.ckpt  master parameters after round k (round_0 = initial)
    round_<k>/scheduler.json
    round_<k>/rng.json     scheduler PCG64 state and the master seed

Every random stream is derived from ``master_seed`` (scheduler, initial
parameters, per-round per-collaborator training) so a run, and any resumed
continuation of it, is a pure function of the config.
"""
import hashlib
import json
import logging
import os
import shutil
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed

from .aggregation import AggregationConfig, aggregate
from .collaborator import LocalTrainConfig, TaskSpec, evaluate, init_params, local_train
from .exceptions import BadConfig, ConfigMismatch, CorruptCheckpoint
from .metrics_io import CommCostModel, RoundRecord, append_record, read_records, write_records
from .params import payload_size, read_checkpoint, save_params
from .partitioner import PartitionConfig, make_partition, materialize_all, materialize_shard, validation_spec
from .selection import ROUNDINGS, TAIL_POLICIES, SchedulerState, new_scheduler, next_round

logger = logging.getLogger(__name__)

SCHEDULER_STREAM = 1
INIT_STREAM = 2
TRAIN_STREAM = 3

# Fields that do not change a run's trajectory, so resume may alter them.
NON_TRAJECTORY_FIELDS = ('name', 'rounds', 'output_dir', 'workers', 'checkpoint_every')


def derive_seed(master_seed, stream, *keys):
    """Independent 64-bit seed for one named random stream"""
    sequence = np.random.SeedSequence([master_seed, stream, *keys])
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class SchedulerConfig:
    window_fraction: float = 0.2
    tail_policy: str = 'top_up'
    rounding: str = 'ceil'

    def __post_init__(self):
        if self.tail_policy not in TAIL_POLICIES:
            raise BadConfig(f"Unknown tail_policy {self.tail_policy!r}")
        if self.rounding not in ROUNDINGS:
            raise BadConfig(f"Unknown rounding {self.rounding!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = 'experiment'
    rounds: int = 20
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    aggregation: AggregationConfig = field(default_factory=AggregationConfig)
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    task: TaskSpec = field(default_factory=TaskSpec)
    training: LocalTrainConfig = field(default_factory=LocalTrainConfig)
    eval_every: int = 1
    checkpoint_every: int = 5
    output_dir: Path = Path('runs/experiment')
    master_seed: int = 0
    workers: int = 1
    validation_fraction: float = 0.1
    accuracy_threshold: float = 0.8

    def __post_init__(self):
        object.__setattr__(self, 'output_dir', Path(self.output_dir))
        if self.rounds < 1:
            raise BadConfig(f"rounds must be >= 1, got {self.rounds}")
        if self.eval_every < 1 or self.checkpoint_every < 1:
            raise BadConfig("eval_every and checkpoint_every must be >= 1")
        if self.workers < 1:
            raise BadConfig(f"workers must be >= 1, got {self.workers}")
        if self.master_seed < 0:
            raise BadConfig(f"master_seed must be non-negative, got {self.master_seed}")
        if not 0 < self.validation_fraction <= 1:
            raise BadConfig(f"validation_fraction must lie in (0, 1], got {self.validation_fraction}")
        if (self.partition.num_classes, self.partition.num_features) != (self.task.num_classes, self.task.num_features):
            raise BadConfig(
                f"Partition ({self.partition.num_classes} classes, {self.partition.num_features} features) "
                f"does not match task ({self.task.num_classes} classes, {self.task.num_features} features)"
            )

    def to_dict(self):
        data = asdict(self)
        data['output_dir'] = str(self.output_dir)
        return data

    def fingerprint(self):
        """Digest of every field that shapes the trajectory"""
        data = self.to_dict()
        for name in NON_TRAJECTORY_FIELDS:
            data.pop(name)
        return hashlib.sha256(json.dumps(data, sort_keys=True).encode('utf-8')).hexdigest()

    def stream_seed(self, stream, *keys):
        return derive_seed(self.master_seed, stream, *keys)

    @property
    def scheduler_seed(self):
        return self.stream_seed(SCHEDULER_STREAM)

    @property
    def init_seed(self):
        return self.stream_seed(INIT_STREAM)

    def training_seed(self, round_index, roster_index):
        return self.stream_seed(TRAIN_STREAM, round_index, roster_index)

    @property
    def validation_size(self):
        return max(1, round(self.validation_fraction * self.partition.total_samples))


@dataclass(frozen=True, eq=False)
class ExperimentResult:
    config: ExperimentConfig
    master: object
    records: list
    roster: tuple
    shard_specs: list
    payload_bytes: int
    final_metrics: object


def _write_json(path, data):
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + '\n', encoding='utf-8')


def _read_json(path):
    try:
        return json.loads(Path(path).read_text(encoding='utf-8'))
    except (OSError, json.JSONDecodeError) as exc:
        raise CorruptCheckpoint(f"Cannot read {path}: {exc}") from exc


def checkpoint_dir(output_dir, round_index):
    return Path(output_dir) / f"round_{round_index}"


def write_checkpoint(cfg, round_index, master, state):
    """Write ``round_<k>/`` atomically: build in a temp directory, then rename"""
    final = checkpoint_dir(cfg.output_dir, round_index)
    staging = cfg.output_dir / f".round_{round_index}.tmp"
    shutil.rmtree(staging, ignore_errors=True)
    staging.mkdir(parents=True)

    save_params(staging / 'master.ckpt', master, meta={'round': round_index, 'fingerprint': cfg.fingerprint()})
    _write_json(staging / 'scheduler.json', state.to_dict())
    _write_json(staging / 'rng.json', {
        'master_seed': cfg.master_seed,
        'scheduler_seed': state.rng_seed,
        'scheduler_bit_generator': state.rng_state,
    })
    if final.exists():
        shutil.rmtree(final)
    os.replace(staging, final)
    logger.info(f"Checkpointed round {round_index} to {final}")
    return final


def latest_checkpoint(output_dir):
    rounds = [
        int(path.name.split('_', 1)[1])
        for path in Path(output_dir).glob('round_*')
        if path.is_dir() and path.name.split('_', 1)[1].isdigit()
    ]
    if not rounds:
        raise CorruptCheckpoint(f"No checkpoints under {output_dir}")
    return checkpoint_dir(output_dir, max(rounds))


class Federation:
    """One experiment's collaborators, validation set and round loop"""

    def __init__(self, cfg):
        self.cfg = cfg
        self.shard_specs = make_partition(cfg.partition)
        self.roster = tuple(spec.collab_id for spec in self.shard_specs)
        self.roster_index = {collab_id: index for index, collab_id in enumerate(self.roster)}
        self.shards = materialize_all(self.shard_specs, cfg.task, cfg.workers)
        self.validation = materialize_shard(
            validation_spec(cfg.task, cfg.validation_size, cfg.partition.seed), cfg.task
        )
        self.master = None
        self.state = None
        self.records = []

    @classmethod
    def start(cls, cfg):
        federation = cls(cfg)
        federation.master = init_params(cfg.task, cfg.init_seed)
        federation.state = new_scheduler(
            federation.roster,
            cfg.scheduler.window_fraction,
            cfg.scheduler_seed,
            tail_policy=cfg.scheduler.tail_policy,
            rounding=cfg.scheduler.rounding,
        )
        federation._prepare_output()
        for stale in cfg.output_dir.glob('round_*'):
            shutil.rmtree(stale)
        write_records(cfg.output_dir / 'records.jsonl', [])
        write_checkpoint(cfg, 0, federation.master, federation.state)
        return federation

    @classmethod
    def from_checkpoint(cls, checkpoint, cfg):
        federation = cls.restore(checkpoint, cfg)
        federation._prepare_output()
        write_records(cfg.output_dir / 'records.jsonl', federation.records)
        logger.info(f"Resuming {cfg.name} from round {federation.completed_rounds} ({checkpoint})")
        return federation

    @classmethod
    def restore(cls, checkpoint, cfg):
        """Rebuild in-memory state from ``round_<k>/`` without touching the output directory"""
        checkpoint = Path(checkpoint)
        if checkpoint.is_file():
            checkpoint = checkpoint.parent
        master, meta = read_checkpoint(checkpoint / 'master.ckpt')
        if master.schema_hash != cfg.task.schema_hash:
            raise ConfigMismatch(
                f"Checkpoint parameters {master.schema} do not fit the configured task schema {cfg.task.schema}"
            )
        if meta.get('fingerprint') != cfg.fingerprint():
            raise ConfigMismatch("Config differs from the checkpointed run in a field that shapes the trajectory")

        rng = _read_json(checkpoint / 'rng.json')
        try:
            state = SchedulerState.from_dict(_read_json(checkpoint / 'scheduler.json'), rng['scheduler_bit_generator'])
            round_index = int(meta['round'])
        except (KeyError, TypeError, ValueError) as exc:
            raise CorruptCheckpoint(f"Malformed checkpoint in {checkpoint}: {exc}") from exc

        federation = cls(cfg)
        if state.roster != federation.roster:
            raise ConfigMismatch("Checkpointed scheduler roster differs from the configured partition")

        source_records = checkpoint.parent / 'records.jsonl'
        try:
            records = read_records(source_records)[:round_index] if round_index else []
        except (OSError, ValueError, KeyError) as exc:
            raise CorruptCheckpoint(f"Cannot read {source_records}: {exc}") from exc
        if len(records) != round_index:
            raise CorruptCheckpoint(f"{source_records} holds {len(records)} records, checkpoint is at round {round_index}")

        federation.master = master
        federation.state = state
        federation.records = records
        return federation

    def _prepare_output(self):
        cfg = self.cfg
        cfg.output_dir.mkdir(parents=True, exist_ok=True)
        _write_json(cfg.output_dir / 'experiment.json', {
            'config': cfg.to_dict(),
            'roster': list(self.roster),
            'payload_bytes': payload_size(self.master),
            'shards': [spec.to_dict() for spec in self.shard_specs],
        })

    @property
    def completed_rounds(self):
        return self.state.round_index

    def _train_one(self, collab_id, master, round_index):
        cfg = self.cfg
        shard = self.shards[collab_id]
        training = replace(cfg.training, seed=cfg.training_seed(round_index, self.roster_index[collab_id]))
        before = evaluate(master, shard, cfg.task).loss
        update = local_train(master, shard, cfg.task, training, collab_id)
        after = evaluate(update.params, shard, cfg.task).loss
        return update, before, after

    def run_round(self):
        cfg = self.cfg
        started = time.perf_counter()
        self.state, plan = next_round(self.state)
        round_index = plan.round_index

        jobs = max(1, min(cfg.workers, len(plan.selected)))
        results = Parallel(n_jobs=jobs, prefer='threads')(
            delayed(self._train_one)(collab_id, self.master, round_index) for collab_id in plan.selected
        )
        updates = [update for update, _, _ in results]
        self.master, weights = aggregate(updates, round_index, cfg.aggregation)

        metrics = None
        if round_index % cfg.eval_every == 0:
            metrics = evaluate(self.master, self.validation, cfg.task)

        cost = CommCostModel(payload_size(self.master), len(self.roster), round_index)
        participations = sum(len(record.selected) for record in self.records) + len(plan.selected)
        previous_bytes = self.records[-1].cum_payload_bytes if self.records else 0
        record = RoundRecord(
            round_index=round_index,
            selected=plan.selected,
            local_loss_before=tuple(before for _, before, _ in results),
            local_loss_after=tuple(after for _, _, after in results),
            weights=weights.to_dict(),
            drift=weights.drift,
            val_loss=None if metrics is None else metrics.loss,
            val_accuracy=None if metrics is None else metrics.accuracy,
            cum_comm_cost=participations / cost.total_possible,
            cum_payload_bytes=previous_bytes + cost.round_payload(len(plan.selected)),
            wall_ms=(time.perf_counter() - started) * 1000.0,
        )
        self.records.append(record)
        append_record(cfg.output_dir / 'records.jsonl', record)

        if metrics is not None:
            logger.info(
                f"Round {round_index}: {len(plan.selected)} collaborators, "
                f"val loss {metrics.loss:.6f}, val acc {metrics.accuracy:.4f}"
            )
        else:
            logger.info(f"Round {round_index}: {len(plan.selected)} collaborators")
        if round_index % cfg.checkpoint_every == 0 or round_index == cfg.rounds:
            write_checkpoint(cfg, round_index, self.master, self.state)
        return record

    def run(self):
        cfg = self.cfg
        logger.info(
            f"Running {cfg.name}: {cfg.aggregation.strategy}, {len(self.roster)} collaborators, "
            f"rounds {self.completed_rounds + 1}..{cfg.rounds}"
        )
        while self.completed_rounds < cfg.rounds:
            try:
                self.run_round()
            except Exception:
                logger.exception(
                    f"Round {self.completed_rounds + 1} of {cfg.name} failed; "
                    f"checkpoints under {cfg.output_dir} are left as they were"
                )
                raise
        return self.result()

    def result(self):
        return ExperimentResult(
            config=self.cfg,
            master=self.master,
            records=list(self.records),
            roster=self.roster,
            shard_specs=self.shard_specs,
            payload_bytes=payload_size(self.master),
            final_metrics=evaluate(self.master, self.validation, self.cfg.task),
        )


def run_experiment(cfg):
    return Federation.start(cfg).run()


def resume(checkpoint, cfg):
    return Federation.from_checkpoint(checkpoint, cfg).run()


def load_result(cfg):
    """Rebuild the result of a finished run from its output directory"""
    federation = Federation.restore(latest_checkpoint(cfg.output_dir), cfg)
    federation.records = read_records(cfg.output_dir / 'records.jsonl')
    return federation.result()
