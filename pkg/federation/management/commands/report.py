import json
from pathlib import Path

from federation.engine import load_result
from federation.exceptions import ConfigError
from federation.forms import load_experiment_config
from federation.management.base import FORMAT_HELP, FederationCommand
from federation.metrics_io import build_summary, export_report, format_table
from federation.models import ExperimentRun

RUN_COLUMNS = ('id', 'name', 'strategy', 'master_seed', 'status', 'rounds_completed', 'final_val_loss', 'auc', 'comm_cost')


class Command(FederationCommand):
    help = 'Re-export the summary and CSV files of a finished run, or list registered runs'

    def add_arguments(self, parser):
        parser.add_argument('--output-dir', help='Output directory of a finished run')
        parser.add_argument(
            '--format', choices=['json', 'csv', 'both'], default='both', help=FORMAT_HELP,
        )
        parser.add_argument('--runs', action='store_true', help='List the experiment registry instead')
        parser.add_argument('--limit', type=int, default=20, help='Number of registry entries to list')

    def handle(self, *args, **options):
        if options['runs']:
            return self.list_runs(options['limit'])
        if not options['output_dir']:
            raise ConfigError({'output_dir': ["Pass --output-dir of a finished run, or --runs"]})

        output_dir = Path(options['output_dir'])
        experiment = output_dir / 'experiment.json'
        try:
            data = json.loads(experiment.read_text(encoding='utf-8'))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError({'output_dir': [f"No readable experiment.json in {output_dir}: {exc}"]}) from exc

        config = dict(data['config'])
        config['output_dir'] = str(output_dir)
        cfg = load_experiment_config(config)
        result = load_result(cfg)
        formats = ('json', 'csv') if options['format'] == 'both' else (options['format'],)
        written = export_report(result, output_dir, formats)
        summary = build_summary(result)

        for path in written:
            self.stdout.write(str(path))
        self.stdout.write(self.style.SUCCESS(
            f"{cfg.name}: {summary['rounds_completed']} rounds, final val loss {summary['final_val_loss']:.6f}"
        ))

    def list_runs(self, limit):
        runs = ExperimentRun.objects.all()[:limit]
        if not runs:
            self.stdout.write('No experiment runs registered')
            return
        rows = [{column: getattr(run, column) for column in RUN_COLUMNS} for run in runs]
        self.stdout.write(format_table(rows, RUN_COLUMNS))
