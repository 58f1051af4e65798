from experiments.management.base import RunCommand


class Command(RunCommand):
    help = "Train ablation variants (operators, filter variants, k sweep) side by side."
    kind = "ablate"

    def add_run_arguments(self, parser):
        self.add_scenario_arguments(parser)
        parser.add_argument("--epochs", type=int, help="Epochs per variant.")
        parser.add_argument("--variants", nargs="+", help="Variant or variant-set names.")
