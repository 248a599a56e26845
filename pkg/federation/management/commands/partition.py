import json
from pathlib import Path

from federation.management.base import FederationCommand
from federation.partitioner import make_partition, materialize_all, materialize_shard, save_shard, validation_spec


class Command(FederationCommand):
    help = 'Generate the synthetic non-IID partition: shard manifest plus binary shard files'

    def add_arguments(self, parser):
        self.add_config_arguments(parser)
        parser.add_argument('--manifest-only', action='store_true', help='Write manifest.json without shard data')

    def handle(self, *args, **options):
        cfg = self.load_config(options)
        output_dir = Path(options['output_dir']) if options['output_dir'] else cfg.output_dir / 'partition'
        output_dir.mkdir(parents=True, exist_ok=True)

        specs = make_partition(cfg.partition)
        validation = validation_spec(cfg.task, cfg.validation_size, cfg.partition.seed)
        manifest = {
            'partition': cfg.partition.to_dict(),
            'task': cfg.task.to_dict(),
            'shards': [spec.to_dict() for spec in specs],
            'validation': validation.to_dict(),
        }
        (output_dir / 'manifest.json').write_text(json.dumps(manifest, indent=2) + '\n', encoding='utf-8')

        if not options['manifest_only']:
            shards = materialize_all(specs, cfg.task, cfg.workers)
            for collab_id, shard in shards.items():
                save_shard(output_dir / f'{collab_id}.shard', shard, collab_id)
            save_shard(output_dir / 'validation.shard', materialize_shard(validation, cfg.task), 'validation')

        total = sum(spec.sample_count for spec in specs)
        self.stdout.write(f'{len(specs)} shards, {total} samples, validation set of {validation.sample_count}')
        self.stdout.write(self.style.SUCCESS(f'Partition written to {output_dir}'))
