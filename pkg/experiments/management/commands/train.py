from experiments.management.base import RunCommand


class Command(RunCommand):
    help = "Train a scheduling agent, or resume one from --checkpoint."
    kind = "train"

    def add_run_arguments(self, parser):
        self.add_scenario_arguments(parser)
        parser.add_argument("--epochs", type=int, help="Epochs to train (more epochs when resuming).")
        parser.add_argument("--checkpoint", help="Checkpoint to resume training from.")
