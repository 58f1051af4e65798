from experiments.management.base import RunCommand


class Command(RunCommand):
    help = "Generate a synthetic request trace from the configured VM catalog."
    kind = "gen_trace"

    def add_run_arguments(self, parser):
        parser.add_argument("--length", type=int, help="Number of create requests.")
        parser.add_argument("--arrival-rate", type=float, help="Creates per time unit.")
