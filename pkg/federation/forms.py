"""Experiment config validation.

A config is a JSON object with top-level scalars plus the sections
``scheduler``, ``aggregation``, ``partition``, ``task`` and ``training``. Each
section is validated by its own form; missing fields take the dataclass
defaults, overlaid with ``settings.FEDERATION``.
"""
import json
import os
from dataclasses import asdict
from pathlib import Path

from django import forms
from django.conf import settings
from django.core.exceptions import ValidationError

from .aggregation import DRIFT_MODES, STRATEGIES, AggregationConfig
from .collaborator import MODEL_FAMILIES, LocalTrainConfig, TaskSpec
from .engine import ExperimentConfig, SchedulerConfig
from .exceptions import ConfigError, FederationError
from .params import NORMS, SCOPES
from .partitioner import PartitionConfig
from .selection import ROUNDINGS, TAIL_POLICIES

SECTIONS = ('scheduler', 'aggregation', 'partition', 'task', 'training')


def _choices(values):
    return [(value, value) for value in values]


def _invalid_choice(label, values):
    return {'invalid_choice': f"Unknown {label} %(value)s; expected one of {', '.join(values)}."}


class SectionForm(forms.Form):
    """Base form: known keys only, defaults filled before binding"""
    target = None
    setting_defaults = {}

    def __init__(self, data, **kwargs):
        self.unknown_keys = sorted(set(data) - set(self.base_fields))
        super().__init__(data={**self.defaults(), **data}, **kwargs)

    @classmethod
    def defaults(cls):
        values = asdict(cls.target()) if cls.target else {}
        values.update({field: settings.FEDERATION[key] for field, key in cls.setting_defaults.items()})
        return values

    def clean(self):
        cleaned_data = super().clean()
        if self.unknown_keys:
            raise ValidationError(f"Unknown keys: {', '.join(self.unknown_keys)}")
        return cleaned_data

    def build(self):
        return self.target(**self.cleaned_data)


class SchedulerForm(SectionForm):
    target = SchedulerConfig
    setting_defaults = {'window_fraction': 'WINDOW_FRACTION'}

    window_fraction = forms.FloatField()
    tail_policy = forms.ChoiceField(choices=_choices(TAIL_POLICIES), error_messages=_invalid_choice('tail_policy', TAIL_POLICIES))
    rounding = forms.ChoiceField(choices=_choices(ROUNDINGS), error_messages=_invalid_choice('rounding', ROUNDINGS))

    def clean_window_fraction(self):
        fraction = self.cleaned_data['window_fraction']
        if not 0 < fraction <= 1:
            raise ValidationError("Window fraction must lie in (0, 1]")
        return fraction


class AggregationForm(SectionForm):
    target = AggregationConfig
    setting_defaults = {
        'strategy': 'STRATEGY',
        'epsilon': 'EPSILON',
        'regularization_start_round': 'REGULARIZATION_START_ROUND',
    }

    strategy = forms.ChoiceField(choices=_choices(STRATEGIES), error_messages=_invalid_choice('strategy', STRATEGIES))
    epsilon = forms.FloatField()
    regularization_start_round = forms.IntegerField(min_value=0)
    scope = forms.ChoiceField(choices=_choices(SCOPES), error_messages=_invalid_choice('scope', SCOPES))
    norm = forms.ChoiceField(choices=_choices(NORMS), error_messages=_invalid_choice('norm', NORMS))
    drift_mode = forms.ChoiceField(choices=_choices(DRIFT_MODES), error_messages=_invalid_choice('drift_mode', DRIFT_MODES))

    def clean_epsilon(self):
        epsilon = self.cleaned_data['epsilon']
        if epsilon <= 0:
            raise ValidationError("Epsilon must be greater than 0")
        return epsilon


class PartitionForm(SectionForm):
    target = PartitionConfig

    num_collaborators = forms.IntegerField(min_value=1)
    total_samples = forms.IntegerField(min_value=1)
    skew = forms.FloatField()
    num_classes = forms.IntegerField(min_value=2)
    num_features = forms.IntegerField(min_value=1)
    seed = forms.IntegerField(min_value=0)
    quantity_skew = forms.FloatField()
    feature_shift_scale = forms.FloatField(min_value=0)
    noise_scale = forms.FloatField(min_value=0)

    def clean(self):
        cleaned_data = super().clean()
        collaborators = cleaned_data.get('num_collaborators')
        samples = cleaned_data.get('total_samples')
        if collaborators and samples and samples < collaborators:
            raise ValidationError(f"total_samples ({samples}) must be at least num_collaborators ({collaborators})")
        for name in ('skew', 'quantity_skew'):
            if name in cleaned_data and cleaned_data[name] <= 0:
                self.add_error(name, "Dirichlet concentration must be greater than 0")
        return cleaned_data


class TaskForm(SectionForm):
    target = TaskSpec

    model_family = forms.ChoiceField(choices=_choices(MODEL_FAMILIES), error_messages=_invalid_choice('model_family', MODEL_FAMILIES))
    num_features = forms.IntegerField(min_value=1)
    num_classes = forms.IntegerField(min_value=2)
    hidden_width = forms.IntegerField(min_value=1)
    loss = forms.ChoiceField(choices=[('cross_entropy', 'cross_entropy')])
    cluster_std = forms.FloatField(min_value=0)
    class_separation = forms.FloatField(min_value=0)
    task_seed = forms.IntegerField(min_value=0)
    init_scale = forms.FloatField(min_value=0)


class TrainingForm(SectionForm):
    target = LocalTrainConfig
    setting_defaults = {
        'learning_rate': 'LEARNING_RATE',
        'epochs_per_round': 'EPOCHS_PER_ROUND',
        'batch_size': 'BATCH_SIZE',
    }

    learning_rate = forms.FloatField()
    epochs_per_round = forms.FloatField()
    batch_size = forms.IntegerField(min_value=1)
    seed = forms.IntegerField(min_value=0)
    momentum = forms.FloatField(min_value=0)

    def clean_learning_rate(self):
        rate = self.cleaned_data['learning_rate']
        if rate <= 0:
            raise ValidationError("Learning rate must be greater than 0")
        return rate

    def clean_epochs_per_round(self):
        epochs = self.cleaned_data['epochs_per_round']
        if epochs <= 0:
            raise ValidationError("Epochs per round must be greater than 0")
        return epochs

    def clean_momentum(self):
        momentum = self.cleaned_data['momentum']
        if momentum >= 1:
            raise ValidationError("Momentum must be below 1")
        return momentum


class ExperimentForm(SectionForm):
    setting_defaults = {
        'rounds': 'ROUNDS',
        'eval_every': 'EVAL_EVERY',
        'checkpoint_every': 'CHECKPOINT_EVERY',
        'validation_fraction': 'VALIDATION_FRACTION',
        'accuracy_threshold': 'ACCURACY_THRESHOLD',
    }

    name = forms.CharField(max_length=100)
    rounds = forms.IntegerField(min_value=1)
    master_seed = forms.IntegerField(min_value=0)
    eval_every = forms.IntegerField(min_value=1)
    checkpoint_every = forms.IntegerField(min_value=1)
    output_dir = forms.CharField(required=False)
    workers = forms.IntegerField(min_value=1)
    validation_fraction = forms.FloatField()
    accuracy_threshold = forms.FloatField(min_value=0, max_value=1)

    @classmethod
    def defaults(cls):
        values = super().defaults()
        values.update({'name': 'experiment', 'master_seed': 0, 'output_dir': '', 'workers': os.cpu_count() or 1})
        return values

    def clean_validation_fraction(self):
        fraction = self.cleaned_data['validation_fraction']
        if not 0 < fraction <= 1:
            raise ValidationError("Validation fraction must lie in (0, 1]")
        return fraction


SECTION_FORMS = {
    'scheduler': SchedulerForm,
    'aggregation': AggregationForm,
    'partition': PartitionForm,
    'task': TaskForm,
    'training': TrainingForm,
}


def _collect(errors, prefix, form):
    for field, messages in form.errors.items():
        key = prefix if field == '__all__' else f"{prefix}.{field}" if prefix else field
        errors.setdefault(key or 'config', []).extend(messages)


def load_experiment_config(data):
    """Validate a config mapping and build the ExperimentConfig"""
    if not isinstance(data, dict):
        raise ConfigError({'config': ["Config must be a JSON object"]})
    errors = {}
    top_level = {key: value for key, value in data.items() if key not in SECTIONS}
    experiment = ExperimentForm(top_level)
    _collect(errors, '', experiment)

    sections = {}
    for section, form_class in SECTION_FORMS.items():
        values = data.get(section, {})
        if not isinstance(values, dict):
            errors.setdefault(section, []).append("Section must be a JSON object")
            continue
        if section == 'partition' and experiment.is_valid():
            values = {'seed': experiment.cleaned_data['master_seed'], **values}
        if section == 'partition':
            task = data.get('task', {}) if isinstance(data.get('task'), dict) else {}
            task_defaults = TaskForm.defaults()
            values = {
                'num_classes': task.get('num_classes', task_defaults['num_classes']),
                'num_features': task.get('num_features', task_defaults['num_features']),
                **values,
            }
        form = form_class(values)
        if form.is_valid():
            sections[section] = form
        else:
            _collect(errors, section, form)
    if errors:
        raise ConfigError(errors)

    top = experiment.cleaned_data
    output_dir = top['output_dir'] or str(Path(settings.FEDERATION['OUTPUT_ROOT']) / top['name'])
    try:
        built = {section: form.build() for section, form in sections.items()}
        return ExperimentConfig(**{**top, 'output_dir': Path(output_dir)}, **built)
    except FederationError as exc:
        raise ConfigError({'config': [str(exc)]}) from exc


def parse_override_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(data, assignments):
    """Apply ``section.key=value`` (or ``key=value``) assignments to a config mapping"""
    data = json.loads(json.dumps(data))
    errors = {}
    for assignment in assignments:
        key, separator, text = assignment.partition('=')
        if not separator or not key:
            errors.setdefault('overrides', []).append(f"Expected key=value, got {assignment!r}")
            continue
        path = key.split('.')
        if len(path) > 2 or (len(path) == 2 and path[0] not in SECTIONS):
            errors.setdefault('overrides', []).append(f"Unknown config key {key!r}")
            continue
        target = data.setdefault(path[0], {}) if len(path) == 2 else data
        target[path[-1]] = parse_override_value(text)
    if errors:
        raise ConfigError(errors)
    return data


def read_config_file(path):
    try:
        return json.loads(Path(path).read_text(encoding='utf-8'))
    except OSError as exc:
        raise ConfigError({'config': [f"Cannot read {path}: {exc.strerror or exc}"]}) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError({'config': [f"{path} is not valid JSON: {exc}"]}) from exc
