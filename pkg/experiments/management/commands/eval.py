from experiments.management.base import RunCommand


class Command(RunCommand):
    help = "Evaluate one policy over several seeds on one scenario."
    kind = "eval"

    def add_run_arguments(self, parser):
        self.add_scenario_arguments(parser)
        parser.add_argument("--policy", help="Policy name.")
        parser.add_argument("--checkpoint", help="Checkpoint of a learned policy.")
