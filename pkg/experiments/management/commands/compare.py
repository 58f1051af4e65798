from experiments.management.base import RunCommand


class Command(RunCommand):
    help = "Compare policies across scenarios and warm-start ratios; writes table.csv."
    kind = "compare"

    def add_run_arguments(self, parser):
        self.add_scenario_arguments(parser)
        parser.add_argument("--policy", help="Learned policy that --checkpoint belongs to.")
        parser.add_argument("--checkpoint", help="Checkpoint of a learned policy.")
