from django.db import DatabaseError, models, transaction
from django.utils import timezone
import logging

logger = logging.getLogger(__name__)


class ExperimentRun(models.Model):
    """Registry entry for every experiment launched from the command line"""
    STRATEGY_CHOICES = [
        ('fedavg', 'FedAvg'),
        ('plain_mean', 'Plain mean'),
        ('simagg', 'SimAgg'),
        ('regsimagg', 'RegSimAgg'),
    ]
    STATUS_CHOICES = [
        ('RUNNING', 'Running'),
        ('COMPLETED', 'Completed'),
        ('FAILED', 'Failed'),
    ]

    name = models.CharField(max_length=100)
    strategy = models.CharField(max_length=20, choices=STRATEGY_CHOICES)
    status = models.CharField(max_length=10, choices=STATUS_CHOICES, default='RUNNING')
    config = models.JSONField(default=dict)
    output_dir = models.CharField(max_length=500)
    master_seed = models.PositiveBigIntegerField(default=0)
    rounds_completed = models.PositiveIntegerField(default=0)
    final_val_loss = models.FloatField(null=True, blank=True)
    auc = models.FloatField(null=True, blank=True)
    comm_cost = models.FloatField(null=True, blank=True)
    error = models.TextField(blank=True)
    started_at = models.DateTimeField(auto_now_add=True)
    finished_at = models.DateTimeField(null=True, blank=True)

    class Meta:
        ordering = ['-started_at', '-id']

    def __str__(self):
        return f"{self.name} [{self.get_strategy_display()}] seed {self.master_seed} - {self.status}"

    @classmethod
    def open(cls, cfg):
        """Register a run that is about to start

        Without a migrated database the run still proceeds; the returned
        entry is simply never stored.
        """
        run = cls(
            name=cfg.name,
            strategy=cfg.aggregation.strategy,
            config=cfg.to_dict(),
            output_dir=str(cfg.output_dir),
            master_seed=cfg.master_seed,
        )
        run.store()
        return run

    @property
    def registered(self):
        return self.pk is not None

    def store(self):
        try:
            with transaction.atomic():
                self.save()
        except DatabaseError as exc:
            self.pk = None
            logger.warning(
                f"Run registry unavailable ({exc}); continuing without it. "
                f"Run 'manage.py migrate' to record experiment runs"
            )

    def mark_completed(self, summary):
        convergence = summary.get('convergence') or {}
        self.status = 'COMPLETED'
        self.rounds_completed = summary['rounds_completed']
        self.final_val_loss = summary['final_val_loss']
        self.auc = convergence.get('auc_val_metric')
        self.comm_cost = summary['communication_cost']
        self.finished_at = timezone.now()
        if self.registered:
            self.store()
            logger.info(f"Run {self.pk} ({self.name}) completed after {self.rounds_completed} rounds")

    def mark_failed(self, exc):
        self.status = 'FAILED'
        self.error = f"{type(exc).__name__}: {exc}"
        self.finished_at = timezone.now()
        if self.registered:
            self.store()
            logger.info(f"Run {self.pk} ({self.name}) failed: {self.error}")
