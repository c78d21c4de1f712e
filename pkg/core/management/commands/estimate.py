from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import pandas as pd
from django.db import transaction

from core.choices import Family
from core.conf import get_setting
from core.data import load_study
from core.estimators import Engine, FittedModels, effect_targets, ipw_group_values
from core.forms import EstimateConfigForm
from core.inference import infer_effect
from core.models import EffectResult, EstimationRun
from core.propensity import fit_propensity

from ._base import InterferenceCommand

RESULT_COLUMNS = ['family', 'effect', 'alpha1', 'alpha0', 'estimate', 'se', 'lower', 'upper']


class Command(InterferenceCommand):
    help = 'Estimates direct, indirect, total and overall effects on a grouped CSV study'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--data', help='Study CSV (overrides [data] path)')
        parser.add_argument('--families', help='Comma-separated estimator families')
        parser.add_argument('--effects', help='Comma-separated effect kinds (DE, IE, TE, OE)')
        parser.add_argument('--alphas', help='Comma-separated policy grid')
        parser.add_argument('--alpha0', type=float, help='Reference policy for IE, TE and OE')
        parser.add_argument('--engine', choices=['exact', 'mc'], help='Policy average engine')
        parser.add_argument('--mc-draws', type=int, help='Monte Carlo draws per group')
        parser.add_argument('--prefix', default='results', help='File name stem of the outputs')

    def handle(self, *args, **options):
        form = EstimateConfigForm.from_sources(
            options['config'],
            data_path=options['data'],
            estimate_families=options['families'],
            estimate_effects=options['effects'],
            estimate_alphas=options['alphas'],
            estimate_alpha0=options['alpha0'],
            engine_kind=options['engine'],
            engine_mc_draws=options['mc_draws'],
            engine_seed=options['seed'],
            output_dir=options['output_dir'],
        )
        config = form.cleaned_data
        workers = options['workers'] or get_setting('WORKERS')

        with self.step('Loading study'):
            study = load_study(config['data_path'], form.schema)
        with self.step('Fitting propensity model'):
            propensity = fit_propensity(
                study, config['propensity_map'],
                estimate_sigma=config['propensity_estimate_sigma'],
                nodes=config['propensity_quadrature_nodes'],
                floor=config['propensity_floor'],
            )
        models = FittedModels(
            study, propensity, config['outcome_map'],
            marginal_extension=config['engine_marginal_extension'],
        )
        engine = Engine.from_settings(
            config['engine_kind'], mc_draws=config['engine_mc_draws'], seed=config['engine_seed'],
        )

        cells = [(family, request) for family in config['estimate_families'] for request in form.effect_requests()]
        with self.step(f'Estimating {len(cells)} cell(s)'):
            if workers > 1:
                with ThreadPoolExecutor(max_workers=workers) as pool:
                    results = list(pool.map(
                        lambda cell: infer_effect(cell[1], cell[0], models, engine, config['estimate_level']), cells,
                    ))
            else:
                results = [infer_effect(request, family, models, engine, config['estimate_level'])
                           for family, request in cells]

        output_dir = self.ensure_dir(form.output_path)
        frame = pd.DataFrame.from_records([
            {
                'family': r.family.value, 'effect': r.kind.value, 'alpha1': r.alpha1, 'alpha0': r.alpha0,
                'estimate': r.estimate, 'se': r.se, 'lower': r.ci.lower, 'upper': r.ci.upper,
            }
            for r in results
        ], columns=RESULT_COLUMNS)
        csv_path = output_dir / f'{options["prefix"]}.csv'
        frame.to_csv(csv_path, index=False, float_format='%.10g')

        sidecar = self.metadata(form, study, models, engine, cells, results)
        self.write_json(output_dir / f'{options["prefix"]}.json', sidecar)

        if options['record']:
            self.record(form, study, engine, sidecar, results)

        self.stdout.write(frame.to_string(index=False))
        self.stdout.write(self.style.SUCCESS(f'Wrote {csv_path}'))

    def metadata(self, form, study, models, engine, cells, results) -> dict:
        prop = models.propensity
        info = prop.fit_info
        weights = {}
        if any(family != Family.REG for family, _ in cells):
            targets = sorted({t for _, request in cells for t in effect_targets(request)},
                             key=lambda t: (t[0] is None, t[0] or 0, t[1]))
            for a, alpha in targets:
                key = f'{"marginal" if a is None else a},{alpha:g}'
                weights[key] = ipw_group_values(study, models.log_f, a, alpha)[1]
        outcome = None
        if models.outcome is not None:
            outcome = {
                'coefficients': dict(zip(models.outcome.labels, models.outcome.beta.tolist())),
                'rank': models.outcome.fit_info.rank,
            }
        return {
            'config': form.resolved(),
            'config_digest': form.digest(),
            'data': {
                'path': str(Path(form.cleaned_data['data_path'])),
                'groups': study.k,
                'individuals': study.n_individuals,
                'covariates': list(study.covariate_names),
            },
            'propensity': {
                'parameters': dict(zip(prop.param_labels, prop.params.tolist())),
                'sigma_b': prop.sigma_b,
                'converged': info.converged,
                'log_likelihood': info.log_likelihood,
                'iterations': info.iterations,
                'gradient_norm': info.gradient_norm,
                'relaxed_convergence': info.relaxed_convergence,
                'sigma_at_boundary': info.sigma_at_boundary,
                'quadrature_nodes': prop.quadrature_nodes,
                'floor': prop.floor,
            },
            'outcome': outcome,
            'engine': {
                'kind': engine.kind.value,
                'mc_draws': engine.mc_draws if engine.kind == 'mc' else None,
                'seed': engine.seed,
                'enumeration_limit': engine.limit,
            },
            'parameter_counts': {
                f'{r.family.value}:{r.kind.value}({r.alpha1:g},{r.alpha0:g})': r.n_parameters for r in results
            },
            'max_weight': weights,
        }

    @transaction.atomic
    def record(self, form, study, engine, sidecar, results) -> EstimationRun:
        run = EstimationRun.objects.create(
            data_path=sidecar['data']['path'],
            config_digest=sidecar['config_digest'],
            engine=engine.kind,
            seed=engine.seed,
            mc_draws=sidecar['engine']['mc_draws'],
            n_groups=study.k,
            n_individuals=study.n_individuals,
            propensity_converged=sidecar['propensity']['converged'],
            config=sidecar['config'],
            parameter_counts=sidecar['parameter_counts'],
        )
        EffectResult.objects.bulk_create([
            EffectResult(
                run=run, family=r.family, kind=r.kind, alpha1=r.alpha1, alpha0=r.alpha0,
                estimate=r.estimate, se=r.se, lower=r.ci.lower, upper=r.ci.upper,
            )
            for r in results
        ])
        self.stdout.write(f'Recorded estimation run {run.pk}')
        return run
