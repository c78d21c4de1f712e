from core.forms import TruthConfigForm
from core.simlab import true_values

from ._base import InterferenceCommand


class Command(InterferenceCommand):
    help = 'Prints the analytic mean outcomes and direct effect of the simulation design'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--group-sizes', help='Comma-separated group sizes N')
        parser.add_argument('--alphas', help='Comma-separated policies')

    def handle(self, *args, **options):
        form = TruthConfigForm.from_sources(
            options['config'],
            truth_group_sizes=options['group_sizes'],
            truth_alphas=options['alphas'],
        )
        self.stdout.write('N\talpha\tmu0\tmu1\tde\tmu_marginal')
        for n in form.cleaned_data['truth_group_sizes']:
            for alpha in form.cleaned_data['truth_alphas']:
                truth = true_values(group_size=n, alpha=alpha)
                self.stdout.write(
                    f'{n}\t{alpha:g}\t{truth.mu0:.6f}\t{truth.mu1:.6f}\t{truth.de:.6f}\t{truth.mu_marginal:.6f}'
                )
