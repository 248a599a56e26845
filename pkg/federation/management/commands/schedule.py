from federation.engine import SCHEDULER_STREAM, derive_seed
from federation.exceptions import ConfigError
from federation.management.base import FederationCommand
from federation.partitioner import collaborator_ids
from federation.selection import ROUNDINGS, TAIL_POLICIES, new_scheduler, next_round


class Command(FederationCommand):
    help = 'Print the collaborator schedule a run would use, one JSON RoundPlan per line'

    def add_arguments(self, parser):
        parser.add_argument('--config', help='Take roster size, window fraction, seed and rounds from this config')
        parser.add_argument('--roster-size', type=int, help='Number of collaborators (IDs col01, col02, ...)')
        parser.add_argument('--fraction', type=float, help='Fraction of the roster selected per round')
        parser.add_argument('--seed', type=int, help='Master seed of the run')
        parser.add_argument('--rounds', type=int, help='Number of rounds to print')
        parser.add_argument('--tail-policy', choices=TAIL_POLICIES, help='Handling of a short final window')
        parser.add_argument('--rounding', choices=ROUNDINGS, help='Window size rounding of fraction * roster')

    def handle(self, *args, **options):
        cfg = self.load_config({'config': options['config']}) if options['config'] else None
        roster_size = self.pick(options['roster_size'], cfg.partition.num_collaborators if cfg else 33)
        fraction = self.pick(options['fraction'], cfg.scheduler.window_fraction if cfg else 0.2)
        seed = self.pick(options['seed'], cfg.master_seed if cfg else 0)
        rounds = self.pick(options['rounds'], cfg.rounds if cfg else 20)
        tail_policy = self.pick(options['tail_policy'], cfg.scheduler.tail_policy if cfg else 'top_up')
        rounding = self.pick(options['rounding'], cfg.scheduler.rounding if cfg else 'ceil')

        errors = {}
        if roster_size < 1:
            errors['roster_size'] = [f"must be >= 1, got {roster_size}"]
        if rounds < 1:
            errors['rounds'] = [f"must be >= 1, got {rounds}"]
        if seed < 0:
            errors['seed'] = [f"must be non-negative, got {seed}"]
        if errors:
            raise ConfigError(errors)

        state = new_scheduler(
            collaborator_ids(roster_size), fraction, derive_seed(seed, SCHEDULER_STREAM),
            tail_policy=tail_policy, rounding=rounding,
        )
        for _ in range(rounds):
            state, plan = next_round(state)
            self.stdout.write(plan.to_json())

    @staticmethod
    def pick(value, default):
        return default if value is None else value
