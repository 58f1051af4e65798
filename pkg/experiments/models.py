import logging
import uuid
from pathlib import Path

from django.db import models, transaction
from django.utils import timezone

from experiments.forms import resolve_config
from experiments.utils import RUNNERS, write_manifest

logger = logging.getLogger(__name__)


class Run(models.Model):
    KIND_CHOICES = [
        ("gen_trace", "Generate trace"),
        ("train", "Train"),
        ("eval", "Evaluate"),
        ("compare", "Compare"),
        ("ablate", "Ablate"),
    ]
    STATUS_CHOICES = [
        ("pending", "Pending"),
        ("running", "Running"),
        ("completed", "Completed"),
        ("error", "Error"),
    ]
    uid = models.UUIDField(default=uuid.uuid4, editable=False, unique=True, db_index=True)
    kind = models.CharField(max_length=10, choices=KIND_CHOICES)
    status = models.CharField(max_length=10, choices=STATUS_CHOICES, default="pending")
    config = models.JSONField(help_text="Resolved run configuration, overrides applied.")
    manifest = models.JSONField(blank=True, null=True)
    out_dir = models.CharField(max_length=500)
    created_at = models.DateTimeField(auto_now_add=True)
    finished_at = models.DateTimeField(null=True, blank=True)

    class Meta:
        ordering = ["-created_at"]

    def __str__(self):
        return f"{self.kind} run {self.uid}"

    def _set_status(self, status):
        self.status = status
        fields = ["status"]
        if status in ("completed", "error"):
            self.finished_at = timezone.now()
            fields.append("finished_at")
        self.save(update_fields=fields)

    def process(self):
        """
        Execute the run: write the manifest, call the runner for this kind and
        store one EpisodeRecord per evaluated episode.

        Returns the runner's result rows. On any error the run is marked as
        error and the exception is re-raised.
        """
        self._set_status("running")
        logger.info(f"Starting {self}")
        try:
            config = resolve_config(self.config)
            out_dir = Path(self.out_dir)
            out_dir.mkdir(parents=True, exist_ok=True)
            self.manifest = write_manifest(out_dir, self.kind, config)
            self.save(update_fields=["manifest"])

            rows = RUNNERS[self.kind](config, out_dir)
            self._record_episodes(rows)
        except Exception:
            logger.error(f"{self} failed", exc_info=True)
            self._set_status("error")
            raise

        self._set_status("completed")
        logger.info(f"Finished {self}; outputs in {self.out_dir}")
        return rows

    @transaction.atomic
    def _record_episodes(self, rows):
        records = [
            EpisodeRecord(
                run=self,
                policy=row["policy"],
                scenario=row["scenario"],
                warm_start=row["warm_start"],
                seed=row["seed"],
                scheduled_length=row["length"],
                avg_cpu_utilization=row["cpu_allo"],
                income=row["income"],
                steps=row["steps"],
            )
            for row in rows
        ]
        if records:
            EpisodeRecord.objects.bulk_create(records)


class EpisodeRecord(models.Model):
    run = models.ForeignKey(Run, on_delete=models.CASCADE, related_name="episodes")
    policy = models.CharField(max_length=50)
    scenario = models.CharField(max_length=100)
    warm_start = models.FloatField()
    seed = models.IntegerField()
    scheduled_length = models.IntegerField()
    avg_cpu_utilization = models.FloatField()
    income = models.FloatField()
    steps = models.IntegerField()

    class Meta:
        ordering = ["run", "scenario", "warm_start", "policy", "seed"]

    def __str__(self):
        return f"{self.policy} on {self.scenario} (seed {self.seed})"
