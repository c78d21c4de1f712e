"""Mixed-effects logistic propensity model with a group random intercept.

The group-level probability of a treatment vector integrates the random
intercept b_i ~ N(0, sigma_b^2) out by adaptive Gauss-Hermite quadrature
centred at the posterior mode of b_i.
"""
import hashlib
import logging
import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy import linalg, optimize, special

from .conf import get_setting
from .data import GroupRecord, Study
from .exceptions import ConfigError, PropensityFitError, SingularDesignError
from .features import FeatureMap

logger = logging.getLogger(__name__)

MODE_ITERATIONS = 50
BOUNDARY_LOG_SIGMA = -7.0
DIVERGENCE_LIMIT = 30.0


@lru_cache(maxsize=8)
def hermite_rule(nodes: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.hermite.hermgauss(nodes)
    return x, np.log(w) + x ** 2


def _bernoulli_loglik(eta, treatments):
    return np.where(treatments == 1, special.log_expit(eta), special.log_expit(-eta))


def integrated_log_prob(eta, treatments, log_sigma: float, nodes: int, mask=None) -> np.ndarray:
    """log of the integral over b of prod_j Bernoulli(A_j; expit(eta_j + b)) * N(b; 0, sigma^2).

    ``treatments`` has shape (rows, N); ``eta`` broadcasts against it. Padded
    positions are switched off through ``mask``.
    """
    treatments = np.asarray(treatments, dtype=float)
    eta = np.broadcast_to(np.asarray(eta, dtype=float), treatments.shape)
    mask = np.ones(treatments.shape) if mask is None else np.asarray(mask, dtype=float)

    if log_sigma == -math.inf:
        return (mask * _bernoulli_loglik(eta, treatments)).sum(axis=1)

    precision = math.exp(-2.0 * log_sigma)
    b = np.zeros(treatments.shape[0])
    for _ in range(MODE_ITERATIONS):
        p = special.expit(eta + b[:, None])
        grad = (mask * (treatments - p)).sum(axis=1) - b * precision
        curvature = (mask * p * (1 - p)).sum(axis=1) + precision
        step = grad / curvature
        b = b + step
        if np.max(np.abs(step)) < 1e-13:
            break
    p = special.expit(eta + b[:, None])
    curvature = (mask * p * (1 - p)).sum(axis=1) + precision
    scale = math.sqrt(2.0) / np.sqrt(curvature)

    x, log_w = hermite_rule(nodes)
    points = b[:, None] + scale[:, None] * x[None, :]
    loglik = (
        mask[:, :, None] * _bernoulli_loglik(eta[:, :, None] + points[:, None, :], treatments[:, :, None])
    ).sum(axis=1)
    log_h = loglik - 0.5 * precision * points ** 2
    return (
        special.logsumexp(log_w[None, :] + log_h, axis=1)
        + np.log(scale) - 0.5 * math.log(2 * math.pi) - log_sigma
    )


@dataclass(frozen=True)
class FitInfo:
    converged: bool
    log_likelihood: float
    iterations: int
    gradient_norm: float
    trace: tuple[float, ...] = ()
    sigma_at_boundary: bool = False
    relaxed_convergence: bool = False


@dataclass(frozen=True)
class GroupLikelihood:
    log_prob: float
    quadrature_nodes_used: int

    @property
    def prob(self) -> float:
        return math.exp(self.log_prob)


@dataclass(frozen=True, eq=False)
class PropensityModel:
    feature_map: FeatureMap
    covariate_names: tuple[str, ...]
    fixed_effects: np.ndarray
    log_sigma_b: float
    fit_info: FitInfo
    estimate_sigma: bool = True
    quadrature_nodes: int = 21
    floor: float | None = None

    @property
    def sigma_b(self) -> float:
        return math.exp(self.log_sigma_b)

    @property
    def params(self) -> np.ndarray:
        if self.estimate_sigma:
            return np.append(self.fixed_effects, self.log_sigma_b)
        return np.asarray(self.fixed_effects, dtype=float).copy()

    @property
    def param_labels(self) -> list[str]:
        labels = [f'gamma[{label}]' for label in self.feature_map.labels]
        return labels + ['log_sigma_b'] if self.estimate_sigma else labels

    def with_params(self, params) -> 'PropensityModel':
        params = np.asarray(params, dtype=float)
        d = self.feature_map.dimension
        log_sigma = float(params[d]) if self.estimate_sigma else self.log_sigma_b
        return replace(self, fixed_effects=params[:d].copy(), log_sigma_b=log_sigma)

    @property
    def fingerprint(self) -> str:
        payload = self.params.tobytes() + repr((self.feature_map.labels, self.floor)).encode()
        return hashlib.blake2b(payload, digest_size=12).hexdigest()

    def eta(self, group: GroupRecord) -> np.ndarray:
        return self.feature_map.covariate_part(group, self.covariate_names) @ self.fixed_effects

    def log_prob_vectors(self, group: GroupRecord, vectors) -> np.ndarray:
        """log f(v | X_i) for each row v of ``vectors``."""
        vectors = np.atleast_2d(np.asarray(vectors, dtype=float))
        log_prob = integrated_log_prob(
            self.eta(group)[None, :], vectors, self.log_sigma_b, self.quadrature_nodes
        )
        return self._apply_floor(log_prob)

    def log_prob_overrides(self, group: GroupRecord, a: int) -> np.ndarray:
        """log f(a, A_(-j) | X_i) for every j, shape (N,)."""
        vectors = np.tile(group.treatments.astype(float), (group.size, 1))
        np.fill_diagonal(vectors, a)
        return self.log_prob_vectors(group, vectors)

    def _apply_floor(self, log_prob: np.ndarray) -> np.ndarray:
        if self.floor is None:
            return log_prob
        log_floor = math.log(self.floor)
        clamped = log_prob < log_floor
        if clamped.any():
            logger.warning(
                'Propensity floor %.3g clamped %d group probabilities', self.floor, int(clamped.sum())
            )
        return np.maximum(log_prob, log_floor)


def group_prob(model: PropensityModel, group: GroupRecord) -> GroupLikelihood:
    log_prob = model.log_prob_vectors(group, group.treatments[None, :])[0]
    return GroupLikelihood(float(log_prob), model.quadrature_nodes if model.estimate_sigma else 0)


def group_prob_override(model: PropensityModel, group: GroupRecord, j: int, a: int) -> GroupLikelihood:
    if not 0 <= j < group.size:
        raise IndexError(f'Position {j} out of range for group {group.group_id!r}')
    vector = group.treatments.astype(float).copy()
    vector[j] = a
    log_prob = model.log_prob_vectors(group, vector[None, :])[0]
    return GroupLikelihood(float(log_prob), model.quadrature_nodes if model.estimate_sigma else 0)


class StudyArrays:
    """The study padded to a (k, N_max) rectangle for vectorised likelihoods."""

    def __init__(self, study: Study, feature_map: FeatureMap):
        n_max = max(study.sizes)
        d = feature_map.dimension
        self.design = np.zeros((study.k, n_max, d))
        self.treatments = np.zeros((study.k, n_max))
        self.mask = np.zeros((study.k, n_max))
        for i, group in enumerate(study.groups):
            n = group.size
            self.design[i, :n] = feature_map.covariate_part(group, study.covariate_names)
            self.treatments[i, :n] = group.treatments
            self.mask[i, :n] = 1.0

    def log_probs(self, fixed_effects, log_sigma: float, nodes: int) -> np.ndarray:
        eta = self.design @ fixed_effects
        return integrated_log_prob(eta, self.treatments, log_sigma, nodes, self.mask)


def _split(params, d: int, estimate_sigma: bool):
    return params[:d], (params[d] if estimate_sigma else -math.inf)


def _central_gradient(fun, x: np.ndarray, step: float) -> np.ndarray:
    grad = np.empty_like(x)
    for m in range(len(x)):
        h = step * max(1.0, abs(x[m]))
        up, down = x.copy(), x.copy()
        up[m] += h
        down[m] -= h
        grad[m] = (fun(up) - fun(down)) / (2 * h)
    return grad


def _check_rank(study: Study, feature_map: FeatureMap) -> None:
    pooled = np.vstack([feature_map.covariate_part(g, study.covariate_names) for g in study.groups])
    _, r, pivots = linalg.qr(pooled, mode='economic', pivoting=True)
    diag = np.abs(np.diag(r))
    rank = int((diag > get_setting('RANK_TOLERANCE') * diag.max()).sum()) if diag.size else 0
    if rank < feature_map.dimension:
        terms = [feature_map.labels[p] for p in pivots[rank:]]
        raise SingularDesignError(f'Propensity design is rank deficient; collinear terms {terms}', terms)


def fit_propensity(study: Study, feature_map: FeatureMap, estimate_sigma: bool = True,
                   nodes: int | None = None, floor: float | None = None) -> PropensityModel:
    """Maximum likelihood fit of the random-intercept logistic model.

    Quasi-Newton (BFGS) over (gamma_f, log sigma_b) with central finite
    difference gradients of the mean group log-likelihood.
    """
    if feature_map.uses_treatment:
        raise ConfigError('Propensity feature maps may only use covariates')
    feature_map.check_names(study.covariate_names)
    _check_rank(study, feature_map)
    nodes = nodes or get_setting('QUADRATURE_NODES')
    floor = floor if floor is not None else get_setting('PROPENSITY_FLOOR')

    all_treatments = np.concatenate([g.treatments for g in study.groups])
    if all_treatments.min() == all_treatments.max():
        raise PropensityFitError(
            f'Complete separation: every individual has treatment {all_treatments[0]}'
        )

    arrays = StudyArrays(study, feature_map)
    d = feature_map.dimension

    def objective(params):
        fixed, log_sigma = _split(params, d, estimate_sigma)
        return -float(arrays.log_probs(fixed, log_sigma, nodes).mean())

    step = get_setting('JACOBIAN_STEP')
    gtol = get_setting('PROPENSITY_GTOL')

    def gradient(params):
        return _central_gradient(objective, params, step)

    x0 = np.zeros(d + int(estimate_sigma))
    if estimate_sigma:
        x0[d] = math.log(0.5)

    trace = [-objective(x0) * study.k]

    def record(intermediate_result):
        trace.append(-intermediate_result.fun * study.k)

    result = optimize.minimize(
        objective, x0, jac=gradient, method='BFGS', callback=record,
        options={'gtol': gtol, 'maxiter': get_setting('PROPENSITY_MAX_ITER')},
    )
    params = result.x
    gradient_norm = float(np.max(np.abs(gradient(params))))
    relative_change = (
        abs(trace[-1] - trace[-2]) / max(1.0, abs(trace[-1])) if len(trace) > 1 else math.inf
    )
    # a stalled likelihood with gradient under 100 gtol is accepted, flagged relaxed
    relaxed = not result.success and (
        gradient_norm < 100 * gtol and relative_change < get_setting('PROPENSITY_FTOL')
    )
    converged = bool(result.success) or relaxed
    fixed, log_sigma = _split(params, d, estimate_sigma)
    if np.max(np.abs(fixed)) > DIVERGENCE_LIMIT:
        converged = False

    info = FitInfo(
        converged=converged,
        log_likelihood=-float(result.fun) * study.k,
        iterations=int(result.nit),
        gradient_norm=gradient_norm,
        trace=tuple(trace),
        sigma_at_boundary=bool(estimate_sigma and log_sigma < BOUNDARY_LOG_SIGMA),
        relaxed_convergence=bool(converged and relaxed),
    )
    logger.debug('Propensity fit trace: %s', info.trace)
    if not converged:
        raise PropensityFitError(
            f'Propensity fit did not converge after {info.iterations} iterations '
            f'(gradient {gradient_norm:.2e}): {result.message}',
            trace=list(trace),
        )
    if info.relaxed_convergence:
        logger.warning(
            'Propensity fit accepted with relaxed tolerance (gradient %.2e, optimizer: %s)',
            gradient_norm, result.message,
        )
    if info.sigma_at_boundary:
        logger.warning('Random-effect scale is at the boundary (log sigma_b = %.2f)', log_sigma)
    logger.info(
        'Propensity model fitted: loglik %.4f, %d iterations, sigma_b %.4f',
        info.log_likelihood, info.iterations, math.exp(log_sigma),
    )
    return PropensityModel(
        feature_map=feature_map,
        covariate_names=study.covariate_names,
        fixed_effects=np.asarray(fixed, dtype=float).copy(),
        log_sigma_b=float(log_sigma),
        fit_info=info,
        estimate_sigma=estimate_sigma,
        quadrature_nodes=nodes,
        floor=floor,
    )


def score_contributions(model: PropensityModel, study: Study, arrays: StudyArrays | None = None) -> np.ndarray:
    """Per-group d log f(A_i | X_i; gamma) / d gamma by central differences, shape (k, P)."""
    arrays = arrays or StudyArrays(study, model.feature_map)
    params = model.params
    d = model.feature_map.dimension
    step = get_setting('SCORE_STEP')
    scores = np.empty((study.k, len(params)))
    for m in range(len(params)):
        h = step * max(1.0, abs(params[m]))
        up, down = params.copy(), params.copy()
        up[m] += h
        down[m] -= h
        hi = arrays.log_probs(*_split(up, d, model.estimate_sigma), model.quadrature_nodes)
        lo = arrays.log_probs(*_split(down, d, model.estimate_sigma), model.quadrature_nodes)
        scores[:, m] = (hi - lo) / (2 * h)
    return scores


def propensity_score_equations(model: PropensityModel, data: GroupRecord | Study,
                               arrays: StudyArrays | None = None) -> np.ndarray:
    """Score of the propensity parameters: a vector for one group, shape (k, P) for a study."""
    if isinstance(data, GroupRecord):
        return score_contributions(model, Study((data,), model.covariate_names))[0]
    return score_contributions(model, data, arrays)


def study_log_probs(model: PropensityModel, study: Study, arrays: StudyArrays | None = None) -> np.ndarray:
    """log f(A_i | X_i) for every group of the study, shape (k,)."""
    arrays = arrays or StudyArrays(study, model.feature_map)
    log_probs = arrays.log_probs(model.fixed_effects, model.log_sigma_b, model.quadrature_nodes)
    return model._apply_floor(log_probs)
