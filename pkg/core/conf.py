"""Settings for the estimation code, overridable through ``settings.INTERFERENCE``."""
from django.conf import settings

DEFAULTS = {
    # policy averages
    'EXACT_ENUM_LIMIT': 15,
    'MC_DRAWS': 1000,
    'SEED': 20190101,
    # propensity model
    'QUADRATURE_NODES': 21,
    'PROPENSITY_GTOL': 1e-6,
    'PROPENSITY_FTOL': 1e-10,
    'PROPENSITY_MAX_ITER': 500,
    'PROPENSITY_FLOOR': None,
    'SCORE_STEP': 1e-4,
    # outcome model
    'RANK_TOLERANCE': 1e-10,
    # inference
    'JACOBIAN_STEP': 1e-5,
    'CI_LEVEL': 0.95,
    'MARGINAL_EXTENSION': False,
    # simulation
    'RANDOM_EFFECT_VARIANCE': 0.3,
    'MAX_FAILURE_RATE': 0.01,
    'WORKERS': 1,
}


def get_config() -> dict:
    user = getattr(settings, 'INTERFERENCE', {}) if settings.configured else {}
    unknown = set(user) - set(DEFAULTS)
    if unknown:
        raise KeyError(f'Unknown INTERFERENCE settings: {sorted(unknown)}')
    return {**DEFAULTS, **user}


def get_setting(name: str):
    return get_config()[name]
