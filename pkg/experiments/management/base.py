from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from cluster.exceptions import ClusterError
from experiments.exceptions import ExperimentError
from experiments.forms import OVERRIDE_TARGETS, load_config
from experiments.models import Run
from experiments.tasks import process_run
from learning.exceptions import LearningError
from reports.exceptions import ReportError
from simulation.exceptions import SimulationError
from traces.exceptions import TraceError
from traces.utils import ScenarioMode

RUN_ERRORS = (
    ExperimentError,
    TraceError,
    ClusterError,
    LearningError,
    SimulationError,
    ReportError,
    OSError,
)


class RunCommand(BaseCommand):
    """Shared flags and run lifecycle of the experiment commands."""

    kind = None

    def add_arguments(self, parser):
        parser.add_argument("--config", help="JSON run config, or the manifest.json of an earlier run.")
        parser.add_argument("--out", help="Output directory (default: a fresh directory under VMSCHED_DEFAULT_OUT).")
        parser.add_argument("--seed", type=int, help="Seed for the scenario, trace and agent.")
        parser.add_argument(
            "--background",
            action="store_true",
            help="Queue the run on Celery instead of running it in this process.",
        )
        self.add_run_arguments(parser)

    def add_run_arguments(self, parser):
        pass

    def add_scenario_arguments(self, parser):
        parser.add_argument("--pms", type=int, help="Initial number of PMs.")
        parser.add_argument("--warm-start", type=float, help="Warm-start CPU utilization ratio in [0, 1).")
        parser.add_argument("--mode", choices=[mode.value for mode in ScenarioMode])
        parser.add_argument("--trace", help="Trace file to replay instead of synthetic traces.")

    def handle(self, *args, **options):
        overrides = {name: options[name] for name in OVERRIDE_TARGETS if name in options}
        try:
            config = load_config(options["config"], overrides)
        except ExperimentError as e:
            raise CommandError(str(e)) from e

        run = Run(kind=self.kind, config=config.raw)
        run.out_dir = options["out"] or str(Path(settings.VMSCHED_DEFAULT_OUT) / f"{self.kind}-{run.uid}")
        run.save()

        if options["background"]:
            process_run.delay(run.id)
            self.stdout.write(f"Queued {run}; outputs will be written to {run.out_dir}")
            return

        try:
            run.process()
        except RUN_ERRORS as e:
            raise CommandError(f"{run} failed: {e}") from e
        self.stdout.write(self.style.SUCCESS(f"Completed {run}; outputs in {run.out_dir}"))
