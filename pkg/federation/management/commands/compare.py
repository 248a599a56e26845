import csv
from dataclasses import replace
from pathlib import Path

from django.conf import settings

from federation.engine import run_experiment
from federation.exceptions import IncomparableConfigs
from federation.management.base import FederationCommand
from federation.metrics_io import build_summary, export_report, format_table, mean_and_std
from federation.models import ExperimentRun

# Config fields a comparison is allowed to vary; everything else must match.
VARIABLE_FIELDS = ('name', 'aggregation', 'scheduler', 'output_dir', 'workers', 'checkpoint_every', 'master_seed')

METRICS = ('final_val_loss', 'final_val_accuracy', 'auc_val_metric', 'communication_cost')

TABLE_COLUMNS = (
    'config', 'strategy', 'seeds',
    'final_val_loss', 'final_val_loss_std',
    'final_val_accuracy', 'final_val_accuracy_std',
    'auc_val_metric', 'auc_val_metric_std',
    'communication_cost', 'communication_cost_std',
)


def comparison_key(cfg):
    data = cfg.to_dict()
    for name in VARIABLE_FIELDS:
        data.pop(name)
    # the partition seed follows the master seed of each run
    data['partition'].pop('seed')
    return data


def check_comparable(configs):
    reference = comparison_key(configs[0])
    for cfg in configs[1:]:
        other = comparison_key(cfg)
        differing = sorted(name for name in reference if reference[name] != other[name])
        if differing:
            raise IncomparableConfigs(
                f"{configs[0].name} and {cfg.name} differ in {', '.join(differing)}; "
                f"only {', '.join(VARIABLE_FIELDS)} may vary"
            )


def _csv_cell(value):
    if value is None:
        return ''
    return repr(value) if isinstance(value, float) else value


def summary_metrics(summary):
    convergence = summary['convergence'] or {}
    return {
        'final_val_loss': summary['final_val_loss'],
        'final_val_accuracy': summary['final_val_accuracy'],
        'auc_val_metric': convergence.get('auc_val_metric'),
        'communication_cost': summary['communication_cost'],
    }


class Command(FederationCommand):
    help = 'Run several configs over the same seeds and tabulate mean and std of their metrics'

    def add_arguments(self, parser):
        parser.add_argument('configs', nargs='+', help='Two or more experiment config files')
        parser.add_argument('--seeds', type=int, nargs='+', default=[0], help='Master seeds to run every config with')
        parser.add_argument('--set', action='append', default=[], metavar='KEY=VALUE', dest='overrides',
                            help='Override applied to every config (repeatable)')
        parser.add_argument('--rounds', type=int, help='Number of federation rounds')
        parser.add_argument('--workers', type=int, help='Worker threads for local training')
        parser.add_argument('--output-dir', help='Base directory for every run of the comparison')

    def handle(self, *args, **options):
        if len(options['configs']) < 2:
            raise IncomparableConfigs("compare needs at least two configs")
        base = Path(options['output_dir'] or Path(settings.FEDERATION['OUTPUT_ROOT']) / 'comparison')
        seeds = options['seeds']
        shared = {'overrides': options['overrides'], 'rounds': options['rounds'], 'workers': options['workers']}

        configs = [self.load_config(shared, path=path) for path in options['configs']]
        check_comparable(configs)

        rows = []
        for index, cfg in enumerate(configs):
            per_seed = {metric: [] for metric in METRICS}
            for seed in seeds:
                run_cfg = replace(
                    cfg,
                    master_seed=seed,
                    partition=replace(cfg.partition, seed=seed),
                    output_dir=base / f"{index}_{cfg.name}" / f"seed_{seed}",
                )
                summary = self.run_one(run_cfg)
                for metric, value in summary_metrics(summary).items():
                    per_seed[metric].append(value)
                self.stdout.write(
                    f"{cfg.name} seed {seed}: final val loss {summary['final_val_loss']:.6f}, "
                    f"accuracy {summary['final_val_accuracy']:.4f}"
                )

            row = {'config': cfg.name, 'strategy': cfg.aggregation.strategy, 'seeds': len(seeds)}
            for metric, values in per_seed.items():
                present = [value for value in values if value is not None]
                mean, std = mean_and_std(present) if present else (None, None)
                row[metric] = mean
                row[f"{metric}_std"] = std
            rows.append(row)

        base.mkdir(parents=True, exist_ok=True)
        with (base / 'comparison.csv').open('w', newline='', encoding='utf-8') as handle:
            writer = csv.DictWriter(handle, fieldnames=TABLE_COLUMNS)
            writer.writeheader()
            for row in rows:
                writer.writerow({column: _csv_cell(row[column]) for column in TABLE_COLUMNS})
        table = format_table(rows, TABLE_COLUMNS)
        (base / 'comparison.txt').write_text(table + '\n', encoding='utf-8')

        self.stdout.write(table)
        self.stdout.write(self.style.SUCCESS(f'Comparison written to {base}'))

    def run_one(self, cfg):
        run = ExperimentRun.open(cfg)
        try:
            result = run_experiment(cfg)
        except Exception as exc:
            run.mark_failed(exc)
            raise
        export_report(result, cfg.output_dir)
        summary = build_summary(result)
        run.mark_completed(summary)
        return summary
