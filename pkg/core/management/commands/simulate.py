from django.db import transaction

from core.forms import SimulateConfigForm
from core.models import SimulationRun, SummaryRow
from core.simlab import run_replications, summary_frame, write_plot_csv, write_summary_csv

from ._base import InterferenceCommand


class Command(InterferenceCommand):
    help = 'Runs the replication study for one scenario and writes summary and plot-ready CSVs'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--scenario', help='i, ii, iii or iv')
        parser.add_argument('--replications', type=int)
        parser.add_argument('--groups', type=int, help='Number of groups k')
        parser.add_argument('--group-size', type=int)
        parser.add_argument('--alpha', type=float)
        parser.add_argument('--families', help='Comma-separated estimator families')
        parser.add_argument('--engine', choices=['exact', 'mc'])

    def handle(self, *args, **options):
        form = SimulateConfigForm.from_sources(
            options['config'],
            simulate_scenario=options['scenario'],
            simulate_replications=options['replications'],
            simulate_k=options['groups'],
            simulate_group_size=options['group_size'],
            simulate_alpha=options['alpha'],
            simulate_families=options['families'],
            simulate_workers=options['workers'],
            engine_kind=options['engine'],
            engine_seed=options['seed'],
            output_dir=options['output_dir'],
        )
        spec = form.to_spec()
        workers = form.cleaned_data['simulate_workers']

        with self.step(f'Scenario {spec.scenario}: {spec.replications} replications'):
            results, summary = run_replications(spec, workers)

        output_dir = self.ensure_dir(form.output_path)
        stem = f'scenario_{spec.scenario.value}'
        write_summary_csv(summary, output_dir / f'{stem}_summary.csv')
        write_plot_csv(spec, results, output_dir / f'{stem}_replicates.csv')
        self.write_json(output_dir / f'{stem}.json', {
            'config': form.resolved(),
            'config_digest': form.digest(),
            'replications': summary.replications,
            'failures': summary.failures,
            'failed_replicates': [
                {'index': r.index, 'seed': list(r.seed), 'error': r.error} for r in results if r.failed
            ],
        })

        if options['record']:
            self.record(form, spec, summary)

        self.stdout.write(summary_frame(summary).to_string(index=False))
        self.stdout.write(self.style.SUCCESS(f'Wrote {output_dir / stem}_summary.csv'))

    @transaction.atomic
    def record(self, form, spec, summary) -> SimulationRun:
        run = SimulationRun.objects.create(
            scenario=spec.scenario,
            k=spec.k,
            group_size=spec.group_size,
            alpha=spec.alpha_eval,
            replications=summary.replications,
            master_seed=spec.master_seed,
            failures=summary.failures,
            config=form.resolved(),
        )
        SummaryRow.objects.bulk_create([
            SummaryRow(
                run=run, family=row.family, estimand=row.estimand, truth=row.truth, bias=row.bias,
                sd=row.sd, ase=row.ase, coverage=row.coverage, n_reps=row.n_reps,
            )
            for row in summary.rows
        ])
        self.stdout.write(f'Recorded simulation run {run.pk}')
        return run
