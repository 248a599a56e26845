from federation.engine import resume, run_experiment
from federation.management.base import FORMAT_HELP, FederationCommand
from federation.metrics_io import build_summary, export_report
from federation.models import ExperimentRun


class Command(FederationCommand):
    help = 'Run a federation experiment and export its report'

    def add_arguments(self, parser):
        self.add_config_arguments(parser)
        parser.add_argument('--resume', metavar='CHECKPOINT', help='Continue from a round_<k> checkpoint directory')
        parser.add_argument(
            '--format', choices=['json', 'csv', 'both'], default='both', help=FORMAT_HELP,
        )

    def handle(self, *args, **options):
        cfg = self.load_config(options)
        run = ExperimentRun.open(cfg)
        try:
            if options['resume']:
                result = resume(options['resume'], cfg)
            else:
                result = run_experiment(cfg)
        except Exception as exc:
            run.mark_failed(exc)
            raise

        formats = ('json', 'csv') if options['format'] == 'both' else (options['format'],)
        export_report(result, cfg.output_dir, formats)
        summary = build_summary(result)
        run.mark_completed(summary)

        self.stdout.write(
            f"{cfg.name}: {summary['rounds_completed']} rounds, "
            f"final val loss {summary['final_val_loss']:.6f}, "
            f"accuracy {summary['final_val_accuracy']:.4f}, "
            f"communication cost {summary['communication_cost']:.4f}"
        )
        self.stdout.write(self.style.SUCCESS(f'Artifacts written to {cfg.output_dir}'))
