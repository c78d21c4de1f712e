from pathlib import Path

from core.choices import Scenario
from core.data import save_study
from core.exceptions import ConfigError
from core.simlab import ScenarioSpec, generate_study

from ._base import InterferenceCommand


class Command(InterferenceCommand):
    help = 'Writes one generated study of the simulation design as a CSV file'

    def add_arguments(self, parser):
        parser.add_argument('path', help='Destination CSV')
        parser.add_argument('--seed', type=int, default=20190101)
        parser.add_argument('--replicate', type=int, default=0, help='Replicate index within the seed')
        parser.add_argument('--groups', type=int, default=100)
        parser.add_argument('--group-size', type=int, default=30)
        parser.add_argument('--treat-all', type=int, choices=[0, 1], help='Force every treatment to 0 or 1')

    def handle(self, *args, **options):
        if options['replicate'] < 0:
            raise ConfigError('Replicate index must be non-negative')
        spec = ScenarioSpec(
            scenario=Scenario.BOTH_CORRECT,
            k=options['groups'],
            group_size=options['group_size'],
            replications=1,
            master_seed=options['seed'],
        )
        study = generate_study(spec, options['replicate'], treatment_override=options['treat_all'])
        path = Path(options['path'])
        path.parent.mkdir(parents=True, exist_ok=True)
        save_study(study, path)
        self.stdout.write(self.style.SUCCESS(
            f'Wrote {study.k} groups ({study.n_individuals} individuals) to {path}'
        ))
