"""Run configuration: TOML files with flat sections, validated by Django forms.

A file such as::

    [data]
    path = "study.csv"
    covariates = ["x1", "x2"]

    [estimate]
    families = ["IPW", "DRBC"]
    effects = ["DE", "IE"]
    alphas = [0.3, 0.45, 0.6]
    alpha0 = 0.4

is flattened to ``data_path``, ``data_covariates``, ``estimate_families`` ...
which are the field names of the forms below. Command-line flags override
the same keys.
"""
import hashlib
import json
import tomllib
from pathlib import Path

from django import forms

from .choices import EffectKind, EngineKind, Family, Scenario
from .conf import get_setting
from .data import EffectRequest, Policy, StudySchema
from .exceptions import ConfigError
from .features import FeatureMap

SECTIONS = ('data', 'propensity', 'outcome', 'estimate', 'engine', 'simulate', 'truth', 'output')


def load_config(path: str | Path | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, 'rb') as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f'Config file {path} does not exist') from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f'Config file {path} is not valid TOML: {exc}') from None

    flat = {}
    for section, values in raw.items():
        if section not in SECTIONS or not isinstance(values, dict):
            raise ConfigError(f'Unknown config section [{section}]')
        for key, value in values.items():
            flat[f'{section}_{key}'] = value
    return flat


class ListField(forms.Field):
    """A TOML array, or a comma-separated string from the command line."""

    def __init__(self, *, item=str, **kwargs):
        self.item = item
        super().__init__(**kwargs)

    def to_python(self, value):
        if value in self.empty_values:
            return []
        if isinstance(value, str):
            value = [part for part in value.split(',') if part.strip()]
        if not isinstance(value, (list, tuple)):
            raise forms.ValidationError('Expected a list')
        try:
            return [self.item(v.strip() if isinstance(v, str) else v) for v in value]
        except (TypeError, ValueError):
            raise forms.ValidationError(f'Every entry must be a {self.item.__name__}') from None


class ChoiceListField(ListField):
    def __init__(self, *, choices, **kwargs):
        self.choice_class = choices
        super().__init__(**kwargs)

    def to_python(self, value):
        values = super().to_python(value)
        bad = [v for v in values if v not in self.choice_class.values]
        if bad:
            raise forms.ValidationError(
                f'Unknown value(s) {bad}; choose from {list(self.choice_class.values)}'
            )
        return [self.choice_class(v) for v in values]


def _check_alpha(value, label='alpha'):
    if value is not None and not 0 < value < 1:
        raise forms.ValidationError(f'{label} must lie strictly between 0 and 1, got {value}')
    return value


class RunConfigForm(forms.Form):
    engine_kind = forms.ChoiceField(choices=EngineKind.choices, required=False)
    engine_mc_draws = forms.IntegerField(min_value=1, required=False)
    engine_seed = forms.IntegerField(min_value=0, required=False)
    output_dir = forms.CharField(required=False)

    def __init__(self, data=None, **kwargs):
        merged = {**self.defaults(), **(data or {})}
        super().__init__(data=merged, **kwargs)

    @classmethod
    def defaults(cls) -> dict:
        return {
            'engine_kind': EngineKind.EXACT.value,
            'engine_mc_draws': get_setting('MC_DRAWS'),
            'engine_seed': get_setting('SEED'),
            'output_dir': '.',
        }

    @classmethod
    def from_sources(cls, path=None, **overrides) -> 'RunConfigForm':
        """Bind defaults < file < overrides and raise ConfigError unless valid."""
        data = load_config(path)
        data.update({key: value for key, value in overrides.items() if value is not None})
        unknown = sorted(set(data) - set(cls.base_fields))
        form = cls(data)
        if unknown:
            raise ConfigError(f'Unknown config keys: {", ".join(unknown)}')
        form.raise_for_errors()
        return form

    def raise_for_errors(self) -> None:
        if not self.is_valid():
            details = '; '.join(
                f'{field}: {" ".join(messages)}' for field, messages in self.errors.items()
            )
            raise ConfigError(details)

    def resolved(self) -> dict:
        """Cleaned values as plain JSON types, for the metadata sidecar."""
        def plain(value):
            if isinstance(value, (list, tuple)):
                return [plain(v) for v in value]
            if isinstance(value, (EffectKind, EngineKind, Family, Scenario)):
                return value.value
            return value
        return {key: plain(self.cleaned_data[key]) for key in sorted(self.base_fields)}

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.resolved(), sort_keys=True).encode()).hexdigest()

    @property
    def output_path(self) -> Path:
        return Path(self.cleaned_data['output_dir'])


class EstimateConfigForm(RunConfigForm):
    data_path = forms.CharField()
    data_group = forms.CharField(required=False)
    data_treatment = forms.CharField(required=False)
    data_outcome = forms.CharField(required=False)
    data_covariates = ListField(required=False)
    propensity_terms = ListField()
    propensity_estimate_sigma = forms.NullBooleanField(required=False)
    propensity_floor = forms.FloatField(min_value=0, max_value=0.5, required=False)
    propensity_quadrature_nodes = forms.IntegerField(min_value=1, max_value=101, required=False)
    outcome_terms = ListField(required=False)
    estimate_families = ChoiceListField(choices=Family)
    estimate_effects = ChoiceListField(choices=EffectKind)
    estimate_alphas = ListField(item=float)
    estimate_alpha0 = forms.FloatField(required=False)
    estimate_level = forms.FloatField(required=False)
    engine_marginal_extension = forms.NullBooleanField(required=False)

    @classmethod
    def defaults(cls) -> dict:
        return {
            **super().defaults(),
            'data_group': 'group',
            'data_treatment': 'treatment',
            'data_outcome': 'outcome',
            'estimate_level': get_setting('CI_LEVEL'),
            'propensity_quadrature_nodes': get_setting('QUADRATURE_NODES'),
        }

    def clean_estimate_alphas(self):
        alphas = self.cleaned_data['estimate_alphas']
        if not alphas:
            raise forms.ValidationError('At least one alpha is required')
        return [_check_alpha(a) for a in dict.fromkeys(alphas)]

    def clean_estimate_alpha0(self):
        return _check_alpha(self.cleaned_data.get('estimate_alpha0'), 'alpha0')

    def clean_estimate_level(self):
        level = self.cleaned_data.get('estimate_level')
        return _check_alpha(level, 'level')

    def _clean_map(self, field: str):
        terms = self.cleaned_data.get(field)
        if not terms:
            return None
        try:
            return FeatureMap.parse(terms)
        except ConfigError as exc:
            self.add_error(field, str(exc))

    def clean(self):
        cleaned = super().clean()
        if self.errors:
            return cleaned
        if cleaned.get('propensity_estimate_sigma') is None:
            cleaned['propensity_estimate_sigma'] = True
        if cleaned.get('engine_marginal_extension') is None:
            cleaned['engine_marginal_extension'] = get_setting('MARGINAL_EXTENSION')

        families = cleaned.get('estimate_families') or []
        effects = cleaned.get('estimate_effects') or []
        if not families:
            self.add_error('estimate_families', 'At least one estimator family is required')
        if not effects:
            self.add_error('estimate_effects', 'At least one effect is required')
        if any(kind != EffectKind.DE for kind in effects) and cleaned.get('estimate_alpha0') is None:
            self.add_error('estimate_alpha0', 'IE, TE and OE need the reference policy alpha0')
        if any(f != Family.IPW for f in families) and not cleaned.get('outcome_terms'):
            self.add_error('outcome_terms', 'Every family except IPW needs an outcome model')

        propensity_map = self._clean_map('propensity_terms')
        if propensity_map is not None and propensity_map.uses_treatment:
            self.add_error('propensity_terms', 'The propensity model takes covariate terms only')
        outcome_map = self._clean_map('outcome_terms')
        cleaned['propensity_map'] = propensity_map
        cleaned['outcome_map'] = outcome_map
        return cleaned

    @property
    def schema(self) -> StudySchema:
        c = self.cleaned_data
        covariates = tuple(c['data_covariates']) or None
        return StudySchema(c['data_group'], c['data_treatment'], c['data_outcome'], covariates)

    def effect_requests(self) -> list[EffectRequest]:
        c = self.cleaned_data
        requests = []
        for kind in c['estimate_effects']:
            for alpha in c['estimate_alphas']:
                if kind == EffectKind.DE:
                    requests.append(EffectRequest.direct(Policy(alpha)))
                else:
                    requests.append(EffectRequest(kind, Policy(alpha), Policy(c['estimate_alpha0'])))
        return requests

    def resolved(self) -> dict:
        out = super().resolved()
        out['propensity_map'] = self.cleaned_data['propensity_map'].labels
        outcome_map = self.cleaned_data.get('outcome_map')
        out['outcome_map'] = outcome_map.labels if outcome_map is not None else None
        return out


class SimulateConfigForm(RunConfigForm):
    simulate_scenario = forms.ChoiceField(choices=Scenario.choices)
    simulate_k = forms.IntegerField(min_value=2, required=False)
    simulate_group_size = forms.IntegerField(min_value=1, required=False)
    simulate_alpha = forms.FloatField(required=False)
    simulate_replications = forms.IntegerField(min_value=1, required=False)
    simulate_families = ChoiceListField(choices=Family, required=False)
    simulate_random_effect_variance = forms.FloatField(min_value=0, required=False)
    simulate_outcome_noise_sd = forms.FloatField(min_value=0, required=False)
    simulate_level = forms.FloatField(required=False)
    simulate_workers = forms.IntegerField(min_value=1, required=False)

    @classmethod
    def defaults(cls) -> dict:
        return {
            **super().defaults(),
            'simulate_k': 100,
            'simulate_group_size': 30,
            'simulate_alpha': 0.5,
            'simulate_random_effect_variance': get_setting('RANDOM_EFFECT_VARIANCE'),
            'simulate_outcome_noise_sd': 1.0,
            'simulate_level': get_setting('CI_LEVEL'),
            'simulate_workers': get_setting('WORKERS'),
        }

    def clean_simulate_alpha(self):
        return _check_alpha(self.cleaned_data.get('simulate_alpha'))

    def clean_simulate_level(self):
        return _check_alpha(self.cleaned_data.get('simulate_level'), 'level')

    def to_spec(self):
        from .simlab import DEFAULT_FAMILIES, ScenarioSpec

        c = self.cleaned_data
        return ScenarioSpec(
            scenario=Scenario(c['simulate_scenario']),
            k=c['simulate_k'],
            group_size=c['simulate_group_size'],
            alpha_eval=c['simulate_alpha'],
            replications=c['simulate_replications'],
            master_seed=c['engine_seed'],
            families=tuple(c['simulate_families']) or DEFAULT_FAMILIES,
            random_effect_variance=c['simulate_random_effect_variance'],
            outcome_noise_sd=c['simulate_outcome_noise_sd'],
            engine=EngineKind(c['engine_kind']),
            mc_draws=c['engine_mc_draws'],
            level=c['simulate_level'],
        )


class TruthConfigForm(RunConfigForm):
    truth_group_sizes = ListField(item=int, required=False)
    truth_alphas = ListField(item=float, required=False)

    @classmethod
    def defaults(cls) -> dict:
        return {**super().defaults(), 'truth_group_sizes': [30], 'truth_alphas': [0.5]}

    def clean_truth_group_sizes(self):
        sizes = self.cleaned_data['truth_group_sizes']
        if any(n < 1 for n in sizes):
            raise forms.ValidationError('Group sizes must be positive')
        return sizes

    def clean_truth_alphas(self):
        return [_check_alpha(a) for a in self.cleaned_data['truth_alphas']]
