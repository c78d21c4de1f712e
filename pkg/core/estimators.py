"""Estimators of mu_{a alpha} and mu_alpha and the effects built from them.

Every estimator is an average of group-level values Y_i; the group values are
kept on the result because the sandwich variance needs them per group.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .choices import EffectKind, EngineKind, Family, OutcomeMode
from .conf import get_setting
from .data import EffectRequest, Policy, Study
from .exceptions import ContractError, UnsupportedCombinationError
from .features import FeatureMap
from .outcome import OutcomeModel, OutcomeModelCache, fit_ols
from .policy import (
    MARGINAL, derive_seed, log_pi_minus_rows, log_pi_rows, policy_averages_exact, policy_averages_mc,
)
from .propensity import PropensityModel, StudyArrays, study_log_probs

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Engine:
    kind: EngineKind = EngineKind.EXACT
    mc_draws: int = 1000
    seed: int = 20190101
    limit: int = 15

    @classmethod
    def from_settings(cls, kind=EngineKind.EXACT, **overrides) -> 'Engine':
        values = {
            'mc_draws': get_setting('MC_DRAWS'),
            'seed': get_setting('SEED'),
            'limit': get_setting('EXACT_ENUM_LIMIT'),
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(kind=EngineKind(kind), **values)


@dataclass(frozen=True)
class ComputationMeta:
    engine: str
    mc_draws: int | None = None
    seed: int | None = None
    max_weight: float | None = None
    propensity_relaxed: bool = False


@dataclass(frozen=True, eq=False)
class MuEstimate:
    value: float
    a: int | None
    alpha: float
    family: Family
    group_values: np.ndarray
    meta: ComputationMeta = field(default_factory=lambda: ComputationMeta('none'))

    @property
    def target(self) -> tuple:
        return (self.a, self.alpha) if self.a is not None else (self.alpha,)


@dataclass(frozen=True)
class EffectEstimate:
    kind: EffectKind
    alpha1: float
    alpha0: float
    value: float
    components: tuple[MuEstimate, MuEstimate]


def population_mean(group_values) -> float:
    """Exactly rounded mean, so the order of the groups never matters."""
    return math.fsum(group_values) / len(group_values)


def _alpha(alpha) -> float:
    return alpha.alpha if isinstance(alpha, Policy) else float(alpha)


def _a(a):
    return None if a is None or a == MARGINAL else int(a)


def _require_converged(prop: PropensityModel) -> None:
    if not prop.fit_info.converged:
        raise ContractError('The propensity model has not converged')


# group-level pieces, shared with the inference module


def ipw_group_values(study: Study, log_f: np.ndarray, a, alpha) -> tuple[np.ndarray, float]:
    """N_i^-1 sum_j 1(A_ij = a) Y_ij pi/f for every group, plus the largest weight used."""
    values = np.empty(study.k)
    largest = 0.0
    for i, (group, log_fi) in enumerate(zip(study.groups, log_f)):
        treatments = group.treatments[None, :]
        if a is None:
            weights = np.full(group.size, math.exp(log_pi_rows(treatments, alpha)[0] - log_fi))
            selected = np.ones(group.size, dtype=bool)
        else:
            weights = np.exp(log_pi_minus_rows(treatments, alpha)[0] - log_fi)
            selected = group.treatments == a
        contribution = np.where(selected, group.outcomes * weights, 0.0)
        values[i] = contribution.sum() / group.size
        if selected.any():
            largest = max(largest, float(weights[selected].max()))
    return values, largest


def _mc_key(a) -> int:
    return 2 if a is None else int(a)


def policy_group_values(study: Study, model: OutcomeModel, a, alpha, engine: Engine) -> np.ndarray:
    """N_i^-1 sum_j sum_v m_ij(v) pi(v; alpha) for every group."""
    values = np.empty(study.k)
    for i, group in enumerate(study.groups):
        if engine.kind == EngineKind.MC:
            seed = derive_seed(engine.seed, group.group_id, _mc_key(a))
            averages = policy_averages_mc(model, group, a, alpha, engine.mc_draws, seed)
        else:
            averages = policy_averages_exact(model, group, a, alpha, engine.limit)
        values[i] = math.fsum(averages) / group.size
    return values


def residual_group_values(study: Study, log_f: np.ndarray, model: OutcomeModel, a, alpha) -> np.ndarray:
    """N_i^-1 sum_j 1(A_ij = a) (Y_ij - m_ij(A_i)) pi/f for every group."""
    values = np.empty(study.k)
    for i, (group, log_fi) in enumerate(zip(study.groups, log_f)):
        treatments = group.treatments[None, :]
        residuals = group.outcomes - model.predict_observed(group)
        if a is None:
            weights = np.full(group.size, math.exp(log_pi_rows(treatments, alpha)[0] - log_fi))
            selected = np.ones(group.size, dtype=bool)
        else:
            weights = np.exp(log_pi_minus_rows(treatments, alpha)[0] - log_fi)
            selected = group.treatments == a
        values[i] = np.where(selected, residuals * weights, 0.0).sum() / group.size
    return values


def _meta(engine: Engine | None, max_weight=None, prop: PropensityModel | None = None) -> ComputationMeta:
    relaxed = bool(prop is not None and prop.fit_info.relaxed_convergence)
    if engine is None:
        return ComputationMeta('none', max_weight=max_weight, propensity_relaxed=relaxed)
    if engine.kind == EngineKind.MC:
        return ComputationMeta(engine.kind.value, engine.mc_draws, engine.seed, max_weight, relaxed)
    return ComputationMeta(engine.kind.value, max_weight=max_weight, propensity_relaxed=relaxed)


def _estimate(values, a, alpha, family, meta) -> MuEstimate:
    return MuEstimate(population_mean(values), a, alpha, Family(family), values, meta)


# population-level estimators


def ipw_mu(study: Study, prop: PropensityModel, a, alpha, log_f=None) -> MuEstimate:
    _require_converged(prop)
    a, alpha = _a(a), _alpha(alpha)
    log_f = study_log_probs(prop, study) if log_f is None else log_f
    values, largest = ipw_group_values(study, log_f, a, alpha)
    return _estimate(values, a, alpha, Family.IPW, _meta(None, largest, prop))


def ipw_mu_marginal(study: Study, prop: PropensityModel, alpha, log_f=None) -> MuEstimate:
    return ipw_mu(study, prop, None, alpha, log_f)


def reg_mu(study: Study, out: OutcomeModel, a, alpha, engine: Engine | None = None) -> MuEstimate:
    engine = engine or Engine.from_settings()
    a, alpha = _a(a), _alpha(alpha)
    values = policy_group_values(study, out, a, alpha, engine)
    return _estimate(values, a, alpha, Family.REG, _meta(engine))


def reg_mu_marginal(study: Study, out: OutcomeModel, alpha, engine: Engine | None = None) -> MuEstimate:
    return reg_mu(study, out, None, alpha, engine)


def drbc_mu(study: Study, prop: PropensityModel, out: OutcomeModel, a, alpha,
            engine: Engine | None = None, log_f=None, family=Family.DRBC) -> MuEstimate:
    _require_converged(prop)
    engine = engine or Engine.from_settings()
    a, alpha = _a(a), _alpha(alpha)
    log_f = study_log_probs(prop, study) if log_f is None else log_f
    values = (
        policy_group_values(study, out, a, alpha, engine)
        + residual_group_values(study, log_f, out, a, alpha)
    )
    _, largest = ipw_group_values(study, log_f, a, alpha)
    return _estimate(values, a, alpha, family, _meta(engine, largest, prop))


def drbc_mu_marginal(study: Study, prop: PropensityModel, out: OutcomeModel, alpha,
                     engine: Engine | None = None) -> MuEstimate:
    return drbc_mu(study, prop, out, None, alpha, engine)


def _weighted_fit_mu(family, mode, study, prop, out, a, alpha, engine) -> MuEstimate:
    _require_converged(prop)
    engine = engine or Engine.from_settings()
    a, alpha = _a(a), _alpha(alpha)
    if out.mode != mode:
        raise ContractError(f'{family} needs a {mode} outcome model, got {out.mode}')
    out.check_target(a, alpha)
    values = policy_group_values(study, out, a, alpha, engine)
    return _estimate(values, a, alpha, family, _meta(engine, prop=prop))


def drwls_mu(study: Study, prop: PropensityModel, out: OutcomeModel, a, alpha,
             engine: Engine | None = None) -> MuEstimate:
    return _weighted_fit_mu(Family.DRWLS, OutcomeMode.WLS, study, prop, out, a, alpha, engine)


def drpicov_mu(study: Study, prop: PropensityModel, out: OutcomeModel, a, alpha,
               engine: Engine | None = None) -> MuEstimate:
    return _weighted_fit_mu(Family.DRPICOV, OutcomeMode.PICOV, study, prop, out, a, alpha, engine)


class FittedModels:
    """The propensity and OLS outcome models of one study, plus lazily fitted WLS/PICOV models."""

    def __init__(self, study: Study, propensity: PropensityModel | None = None,
                 outcome_map: FeatureMap | None = None, outcome: OutcomeModel | None = None,
                 marginal_extension: bool | None = None):
        self.study = study
        self.propensity = propensity
        self.outcome_map = outcome_map
        if outcome is None and outcome_map is not None:
            outcome = fit_ols(study, outcome_map)
        self.outcome = outcome
        self.marginal_extension = (
            get_setting('MARGINAL_EXTENSION') if marginal_extension is None else marginal_extension
        )
        self.cache = OutcomeModelCache(study, outcome_map) if outcome_map is not None else None
        self._log_f = None

    @property
    def log_f(self) -> np.ndarray:
        if self._log_f is None:
            self._log_f = study_log_probs(self.propensity, self.study, StudyArrays(self.study, self.propensity.feature_map))
        return self._log_f

    def require(self, family: Family) -> None:
        needs_propensity = family != Family.REG
        needs_outcome = family != Family.IPW
        if needs_propensity and self.propensity is None:
            raise ContractError(f'{family} needs a propensity model')
        if needs_outcome and self.outcome is None:
            raise ContractError(f'{family} needs an outcome model')

    def outcome_for(self, family: Family, a, alpha) -> OutcomeModel:
        if family in (Family.REG, Family.DRBC):
            return self.outcome
        if a is None and not self.marginal_extension:
            raise UnsupportedCombinationError(
                f'Marginal (overall-effect) estimates for {family} need the marginal extension flag'
            )
        mode = OutcomeMode.WLS if family == Family.DRWLS else OutcomeMode.PICOV
        return self.cache.get(mode, self.propensity, a, _alpha(alpha))


def mu(family: Family, models: FittedModels, a, alpha, engine: Engine | None = None) -> MuEstimate:
    family = Family(family)
    a, alpha = _a(a), _alpha(alpha)
    models.require(family)
    study = models.study
    if family == Family.IPW:
        return ipw_mu(study, models.propensity, a, alpha, models.log_f)
    if family == Family.REG:
        return reg_mu(study, models.outcome, a, alpha, engine)
    if family == Family.DRBC:
        return drbc_mu(study, models.propensity, models.outcome, a, alpha, engine, models.log_f)
    out = models.outcome_for(family, a, alpha)
    if family == Family.DRWLS:
        return drwls_mu(study, models.propensity, out, a, alpha, engine)
    return drpicov_mu(study, models.propensity, out, a, alpha, engine)


def effect_targets(request: EffectRequest) -> tuple[tuple, tuple]:
    """The (a, alpha) pair of the first and of the subtracted mean; a=None is marginal."""
    a1, a0 = request.alpha1.alpha, request.alpha0.alpha
    return {
        EffectKind.DE: ((1, a1), (0, a1)),
        EffectKind.IE: ((0, a1), (0, a0)),
        EffectKind.TE: ((1, a1), (0, a0)),
        EffectKind.OE: ((None, a1), (None, a0)),
    }[request.kind]


def effect(request: EffectRequest, family: Family, models: FittedModels,
           engine: Engine | None = None) -> EffectEstimate:
    first, second = (mu(family, models, a, alpha, engine) for a, alpha in effect_targets(request))
    return EffectEstimate(
        kind=request.kind,
        alpha1=request.alpha1.alpha,
        alpha0=request.alpha0.alpha,
        value=first.value - second.value,
        components=(first, second),
    )
