"""Shared plumbing for the federation management commands.

Exit codes: 0 ok, 1 runtime failure, 2 usage or config error.
"""
from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError
from django.db import DatabaseError

from federation.exceptions import (
    BadConfig, BadFraction, ConfigError, ConfigMismatch, FederationError, IncomparableConfigs,
)
from federation.forms import apply_overrides, load_experiment_config, read_config_file

USAGE_ERRORS = (ConfigError, BadConfig, BadFraction, ConfigMismatch, IncomparableConfigs)

FORMAT_HELP = (
    'Report files to write (default: both). rounds.csv averages weights over tensors and leaves out '
    'local losses; records.jsonl always holds every round losslessly'
)


def resolve_config_path(path):
    """Accept a path as given, else look it up in the shipped configs directory"""
    candidate = Path(path)
    if candidate.exists() or candidate.is_absolute():
        return candidate
    shipped = Path(settings.FEDERATION['CONFIG_DIR']) / candidate
    return shipped if shipped.exists() else candidate


class FederationCommand(BaseCommand):
    """Translates federation errors into CommandError exit codes"""

    def execute(self, *args, **options):
        try:
            return super().execute(*args, **options)
        except USAGE_ERRORS as exc:
            raise CommandError(str(exc), returncode=2) from exc
        except (FederationError, OSError) as exc:
            raise CommandError(str(exc), returncode=1) from exc
        except DatabaseError as exc:
            raise CommandError(f"Run registry unavailable: {exc}. Run 'manage.py migrate' first", returncode=1) from exc

    def add_config_arguments(self, parser, config_required=False):
        if config_required is not None:
            parser.add_argument('--config', required=config_required, help='Experiment config JSON file')
        parser.add_argument(
            '--set', action='append', default=[], metavar='KEY=VALUE', dest='overrides',
            help=(
                'Override any config field as section.key=value, or key=value for top-level fields '
                '(repeatable), e.g. --set aggregation.drift_mode=per_collaborator --set eval_every=2. '
                'The dedicated flags below are shortcuts for the most common fields'
            ),
        )
        parser.add_argument('--rounds', type=int, help='Number of federation rounds')
        parser.add_argument('--strategy', help='Aggregation strategy: fedavg, plain_mean, simagg or regsimagg')
        parser.add_argument('--seed', type=int, help='Master seed (also used as the partition seed)')
        parser.add_argument('--output-dir', help='Directory for every artifact of this command')
        parser.add_argument('--workers', type=int, help='Worker threads for local training')
        parser.add_argument('--window-fraction', type=float, help='Fraction of the roster selected per round')

    def flag_overrides(self, options):
        assignments = list(options.get('overrides') or [])
        flags = {
            'rounds': 'rounds',
            'strategy': 'aggregation.strategy',
            'output_dir': 'output_dir',
            'workers': 'workers',
            'window_fraction': 'scheduler.window_fraction',
        }
        for option, key in flags.items():
            if options.get(option) is not None:
                assignments.append(f"{key}={options[option]}")
        if options.get('seed') is not None:
            assignments.extend([f"master_seed={options['seed']}", f"partition.seed={options['seed']}"])
        return assignments

    def load_config(self, options, path=None, extra=()):
        path = path or options.get('config')
        data = read_config_file(resolve_config_path(path)) if path else {}
        data = apply_overrides(data, [*self.flag_overrides(options), *extra])
        return load_experiment_config(data)
