"""Stacked estimating equations and the empirical sandwich covariance.

theta = (mu targets, beta blocks, gamma). Each group contributes
G(O_i; theta); at theta-hat the contributions average to zero, and

    Sigma = U^-1 V U^-T / k,  U = -mean_i dG_i/dtheta,  V = mean_i G_i G_i^T.

U is taken by central differences of the stacked evaluator, which re-enters
the propensity quadrature at every perturbed gamma.
"""
import logging
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
from scipy import linalg, stats

from .choices import EffectKind, Family, OutcomeMode
from .conf import get_setting
from .data import EffectRequest, Study
from .estimators import (
    Engine, FittedModels, effect_targets, ipw_group_values, mu, policy_group_values, residual_group_values,
)
from .exceptions import ContractError, NumericalError, SingularJacobianError
from .outcome import normal_equation_contributions
from .propensity import StudyArrays, propensity_score_equations, study_log_probs

logger = logging.getLogger(__name__)

CONDITION_LIMIT = 1e12


@dataclass(frozen=True)
class Block:
    name: str
    labels: tuple[str, ...]

    @property
    def size(self) -> int:
        return len(self.labels)


@dataclass(frozen=True, eq=False)
class ThetaStack:
    family: Family | None
    targets: tuple[tuple, ...]
    blocks: tuple[Block, ...]
    values: np.ndarray
    evaluator: Callable[[np.ndarray], np.ndarray]

    @property
    def dimension(self) -> int:
        return sum(block.size for block in self.blocks)

    @property
    def labels(self) -> list[str]:
        return [label for block in self.blocks for label in block.labels]

    def evaluate(self, theta=None) -> np.ndarray:
        """Per-group estimating functions, shape (k, P)."""
        return self.evaluator(self.values if theta is None else np.asarray(theta, dtype=float))

    def residual_norm(self) -> float:
        return float(np.linalg.norm(self.evaluate().mean(axis=0)))

    def target_index(self, target) -> int:
        return self.targets.index(target)


@dataclass(frozen=True)
class WaldInterval:
    lower: float
    upper: float
    level: float


@dataclass(frozen=True, eq=False)
class SandwichResult:
    U_hat: np.ndarray
    V_hat: np.ndarray
    sigma: np.ndarray
    labels: tuple[str, ...]
    contrast: np.ndarray | None = None
    target_variance: float | None = None
    ci: WaldInterval | None = None

    def with_contrast(self, contrast, estimate: float, level: float | None = None) -> 'SandwichResult':
        level = get_setting('CI_LEVEL') if level is None else level
        variance = effect_variance(self, contrast)
        return replace(
            self, contrast=np.asarray(contrast, dtype=float), target_variance=variance,
            ci=wald_ci(estimate, variance, level),
        )


def _target_label(target) -> str:
    a, alpha = target
    return f'mu[{"marginal" if a is None else a},{alpha:g}]'


def _dedupe(targets) -> tuple[tuple, ...]:
    out = []
    for a, alpha in targets:
        target = (None if a is None else int(a), float(alpha))
        if target not in out:
            out.append(target)
    return tuple(out)


def build_stack(family: Family, models: FittedModels, targets, engine: Engine | None = None) -> ThetaStack:
    """The stacked system of a family for the requested mu targets."""
    family = Family(family)
    engine = engine or Engine.from_settings()
    targets = _dedupe(targets)
    models.require(family)
    study = models.study

    mus = np.array([mu(family, models, a, alpha, engine).value for a, alpha in targets])
    blocks = [Block('mu', tuple(_target_label(t) for t in targets))]
    values = [mus]

    if family in (Family.REG, Family.DRBC):
        outcomes = [models.outcome]
    elif family in (Family.DRWLS, Family.DRPICOV):
        outcomes = [models.outcome_for(family, a, alpha) for a, alpha in targets]
    else:
        outcomes = []
    for model in outcomes:
        tag = 'beta' if model.mode == OutcomeMode.OLS else (
            f'beta[{model.mode},{"marginal" if model.marginal else model.a},{model.alpha:g}]'
        )
        blocks.append(Block(tag, tuple(f'{tag}:{label}' for label in model.labels)))
        values.append(model.beta)

    prop = models.propensity if family != Family.REG else None
    arrays = StudyArrays(study, prop.feature_map) if prop is not None else None
    if prop is not None:
        blocks.append(Block('gamma', tuple(prop.param_labels)))
        values.append(prop.params)

    sizes = [block.size for block in blocks]
    splits = np.cumsum(sizes)[:-1]

    def evaluator(theta: np.ndarray) -> np.ndarray:
        parts = np.split(theta, splits)
        mu_values = parts[0]
        prop_t = prop.with_params(parts[-1]) if prop is not None else None
        betas = parts[1:len(outcomes) + 1]
        outcomes_t = [
            model.with_beta(beta) if prop_t is None else model.with_beta(beta).with_propensity(prop_t)
            for model, beta in zip(outcomes, betas)
        ]
        log_f = study_log_probs(prop_t, study, arrays) if prop_t is not None else None

        columns = []
        for index, (a, alpha) in enumerate(targets):
            if family == Family.IPW:
                group_values = ipw_group_values(study, log_f, a, alpha)[0]
            elif family == Family.REG:
                group_values = policy_group_values(study, outcomes_t[0], a, alpha, engine)
            elif family == Family.DRBC:
                group_values = (
                    policy_group_values(study, outcomes_t[0], a, alpha, engine)
                    + residual_group_values(study, log_f, outcomes_t[0], a, alpha)
                )
            else:
                group_values = policy_group_values(study, outcomes_t[index], a, alpha, engine)
            columns.append((group_values - mu_values[index])[:, None])
        for model in outcomes_t:
            columns.append(normal_equation_contributions(model, study, prop_t, arrays))
        if prop_t is not None:
            columns.append(propensity_score_equations(prop_t, study, arrays))
        return np.hstack(columns)

    stack = ThetaStack(family, targets, tuple(blocks), np.concatenate(values), evaluator)
    logger.debug('%s stack with %d parameters: %s', family, stack.dimension, stack.labels)
    return stack


def jacobian(stack: ThetaStack, step: float | None = None) -> np.ndarray:
    """mean_i dG_i/dtheta by central differences, shape (P, P)."""
    step = get_setting('JACOBIAN_STEP') if step is None else step
    theta = stack.values
    out = np.empty((stack.dimension, stack.dimension))
    for m in range(stack.dimension):
        h = max(step, step * abs(theta[m]))
        up, down = theta.copy(), theta.copy()
        up[m] += h
        down[m] -= h
        out[:, m] = (stack.evaluate(up).mean(axis=0) - stack.evaluate(down).mean(axis=0)) / (2 * h)
    return out


def sandwich(stack: ThetaStack, study: Study | None = None, step: float | None = None) -> SandwichResult:
    contributions = stack.evaluate()
    k = contributions.shape[0]
    if k < 2:
        raise ContractError('Sandwich variance needs at least two groups')
    if study is not None and study.k != k:
        raise ContractError(f'Stack has {k} groups, study has {study.k}')

    V_hat = contributions.T @ contributions / k
    V_hat = (V_hat + V_hat.T) / 2
    U_hat = -jacobian(stack, step)
    condition = float(np.linalg.cond(U_hat))
    if not np.isfinite(condition) or condition > CONDITION_LIMIT:
        raise SingularJacobianError(
            f'Estimating-equation Jacobian is numerically singular (condition number {condition:.3g})',
            condition,
        )
    U_inv = linalg.inv(U_hat)
    sigma = U_inv @ V_hat @ U_inv.T / k
    sigma = (sigma + sigma.T) / 2
    return SandwichResult(U_hat, V_hat, sigma, tuple(stack.labels))


def wald_ci(estimate: float, variance: float, level: float | None = None) -> WaldInterval:
    level = get_setting('CI_LEVEL') if level is None else level
    if variance < 0:
        raise NumericalError(f'Negative variance {variance}')
    if not 0 < level < 1:
        raise ValueError(f'Confidence level must lie in (0, 1), got {level}')
    half = stats.norm.ppf((1 + level) / 2) * np.sqrt(variance)
    return WaldInterval(float(estimate - half), float(estimate + half), level)


def effect_variance(result: SandwichResult, contrast) -> float:
    contrast = np.asarray(contrast, dtype=float)
    if contrast.shape != (result.sigma.shape[0],):
        raise ValueError(f'Contrast has length {contrast.size}, theta has {result.sigma.shape[0]}')
    variance = float(contrast @ result.sigma @ contrast)
    if variance < 0:
        logger.warning('Contrast variance %.3g is negative; clamped to 0', variance)
        return 0.0
    return variance


def contrast_for(stack: ThetaStack, first, second) -> np.ndarray:
    """tau with +1 on the first target and -1 on the second (0 when they coincide)."""
    tau = np.zeros(stack.dimension)
    tau[stack.target_index(_dedupe([first])[0])] += 1.0
    tau[stack.target_index(_dedupe([second])[0])] -= 1.0
    return tau


@dataclass(frozen=True)
class EffectInference:
    family: Family
    kind: EffectKind
    alpha1: float
    alpha0: float
    estimate: float
    se: float
    ci: WaldInterval
    n_parameters: int


def infer_effect(request: EffectRequest, family: Family, models: FittedModels,
                 engine: Engine | None = None, level: float | None = None) -> EffectInference:
    first, second = effect_targets(request)
    stack = build_stack(family, models, [first, second], engine)
    result = sandwich(stack, models.study)
    tau = contrast_for(stack, first, second)
    estimate = float(tau @ stack.values)
    result = result.with_contrast(tau, estimate, level)
    return EffectInference(
        family=Family(family), kind=request.kind, alpha1=request.alpha1.alpha, alpha0=request.alpha0.alpha,
        estimate=estimate, se=float(np.sqrt(result.target_variance)), ci=result.ci,
        n_parameters=stack.dimension,
    )
