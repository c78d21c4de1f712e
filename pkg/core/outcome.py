"""Linear outcome regression m_ij(a_i, X_i; beta) in three fitting modes.

OLS        plain least squares over every individual.
WLS        least squares over the A_ij = a stratum weighted by
           pi(A_i(-j); alpha) / {N_i f(A_i | X_i; gamma)}.
PICOV      least squares over the A_ij = a stratum, weighted by 1 / N_i, with
           the ratio pi(A_i(-j); alpha) / f(A_i | X_i; gamma) added as a regressor.

With the 1 / N_i factor the residual correction of the bias-corrected
estimator vanishes at the fitted coefficients for any group sizes.

The marginal variants of WLS and PICOV use every individual and the
full-vector ratio pi(A_i; alpha) / f(A_i | X_i; gamma).
"""
import logging
import threading
from dataclasses import dataclass, replace

import numpy as np
from scipy import linalg

from .choices import OutcomeMode
from .conf import get_setting
from .data import GroupRecord, Study
from .exceptions import ContractError, EmptyStratumError, SingularDesignError
from .features import FeatureMap
from .policy import log_pi_minus_rows, log_pi_rows
from .propensity import PropensityModel, StudyArrays, study_log_probs

logger = logging.getLogger(__name__)

RATIO_LABEL = 'pi/f'


@dataclass(frozen=True)
class OutcomeFitInfo:
    n_used: int
    rank: int
    weighted_residual_sum: float = 0.0
    weighted_residual_scale: float = 1.0
    ratio_collinear: bool = False


@dataclass(frozen=True, eq=False)
class OutcomeModel:
    beta: np.ndarray
    feature_map: FeatureMap
    covariate_names: tuple[str, ...]
    mode: OutcomeMode = OutcomeMode.OLS
    a: int | None = None
    alpha: float | None = None
    marginal: bool = False
    propensity: PropensityModel | None = None
    fit_info: OutcomeFitInfo | None = None

    @property
    def extra_index(self) -> int | None:
        return self.feature_map.dimension if self.mode == OutcomeMode.PICOV else None

    @property
    def labels(self) -> list[str]:
        labels = self.feature_map.labels
        return labels + [RATIO_LABEL] if self.mode == OutcomeMode.PICOV else labels

    @property
    def is_affine(self) -> bool:
        return self.mode != OutcomeMode.PICOV and self.feature_map.affine_in_neighbors

    @property
    def stratified(self) -> bool:
        return self.mode != OutcomeMode.OLS and not self.marginal

    def check_target(self, a, alpha) -> None:
        if self.mode == OutcomeMode.OLS:
            return
        if self.marginal != (a is None) or (not self.marginal and self.a != a) or self.alpha != float(alpha):
            target = 'marginal' if self.marginal else self.a
            raise ContractError(
                f'{self.mode} model fitted for (a={target}, alpha={self.alpha}) '
                f'cannot serve (a={"marginal" if a is None else a}, alpha={float(alpha)})'
            )

    def with_beta(self, beta) -> 'OutcomeModel':
        return replace(self, beta=np.asarray(beta, dtype=float))

    def with_propensity(self, propensity: PropensityModel) -> 'OutcomeModel':
        return replace(self, propensity=propensity)

    def _own(self, own):
        if self.stratified:
            if own is not None and own != self.a:
                raise ContractError(f'Model fitted for own treatment {self.a}, asked for {own}')
            return self.a
        return own

    def ratio_covariate(self, group: GroupRecord, vectors: np.ndarray) -> np.ndarray:
        """pi/f regressor for index individual j under each vector, shape (draws, N)."""
        vectors = np.asarray(vectors, dtype=float)
        if self.marginal:
            log_f = self.propensity.log_prob_vectors(group, vectors)
            return np.repeat(np.exp(log_pi_rows(vectors, self.alpha) - log_f)[:, None], group.size, axis=1)
        draws, n = vectors.shape
        overridden = np.repeat(vectors[:, None, :], n, axis=1)
        overridden[:, np.arange(n), np.arange(n)] = self.a
        log_f = self.propensity.log_prob_vectors(group, overridden.reshape(draws * n, n)).reshape(draws, n)
        return np.exp(log_pi_minus_rows(vectors, self.alpha) - log_f)

    def predict_draws(self, group: GroupRecord, vectors, own=None) -> np.ndarray:
        """m_ij for every member j under every vector, shape (draws, N)."""
        vectors = np.atleast_2d(np.asarray(vectors, dtype=float))
        own = self._own(own)
        d = self.feature_map.dimension
        design = self.feature_map.design(group, self.covariate_names, vectors, own)
        predictions = design @ self.beta[:d]
        if self.mode == OutcomeMode.PICOV and self.beta[d] != 0.0:
            predictions = predictions + self.beta[d] * self.ratio_covariate(group, vectors)
        return predictions

    def expected_predictions(self, group: GroupRecord, alpha: float, own=None) -> np.ndarray:
        own = self._own(own)
        covariates = self.feature_map.covariate_part(group, self.covariate_names)
        expected = self.feature_map.expected_treatment_part(group.size, alpha, own)
        return (covariates * expected) @ self.beta

    def predict_observed(self, group: GroupRecord) -> np.ndarray:
        """m_ij(A_i, X_i) at the observed treatments (own treatment a for stratified models)."""
        d = self.feature_map.dimension
        design = self.feature_map.design(group, self.covariate_names, own=self._own(None))
        predictions = design @ self.beta[:d]
        if self.mode == OutcomeMode.PICOV:
            predictions = predictions + self.beta[d] * self.ratio_covariate(group, group.treatments[None, :])[0]
        return predictions


def predict(model: OutcomeModel, group: GroupRecord, treatment_vector, j: int) -> float:
    vector = np.asarray(treatment_vector, dtype=float)
    if len(vector) != group.size:
        raise ValueError(f'Treatment vector has length {len(vector)}, group {group.group_id!r} has {group.size}')
    if not 0 <= j < group.size:
        raise IndexError(f'Position {j} out of range for group {group.group_id!r}')
    return float(model.predict_draws(group, vector[None, :])[0, j])


def solve_least_squares(design: np.ndarray, response: np.ndarray, labels, weights=None):
    """QR with column pivoting. Returns (beta, rank); raises on rank deficiency."""
    if weights is not None:
        root = np.sqrt(weights)
        design = design * root[:, None]
        response = response * root
    q, r, pivots = linalg.qr(design, mode='economic', pivoting=True)
    diag = np.abs(np.diag(r))
    tolerance = get_setting('RANK_TOLERANCE') * (diag.max() if diag.size else 0.0)
    rank = int((diag > tolerance).sum())
    if rank < design.shape[1]:
        terms = [labels[p] for p in pivots[rank:]]
        raise SingularDesignError(f'Outcome design is rank deficient; collinear terms {terms}', terms)
    beta = np.empty(design.shape[1])
    beta[pivots] = linalg.solve_triangular(r, q.T @ response)
    return beta, rank


def fit_ols(study: Study, feature_map: FeatureMap) -> OutcomeModel:
    feature_map.check_names(study.covariate_names)
    design = np.vstack([feature_map.design(g, study.covariate_names) for g in study.groups])
    response = np.concatenate([g.outcomes for g in study.groups])
    beta, rank = solve_least_squares(design, response, feature_map.labels)
    logger.debug('OLS outcome model: %s', dict(zip(feature_map.labels, beta.round(6))))
    return OutcomeModel(
        beta=beta, feature_map=feature_map, covariate_names=study.covariate_names,
        fit_info=OutcomeFitInfo(n_used=len(response), rank=rank),
    )


def stratum_rows(study: Study, feature_map: FeatureMap, propensity: PropensityModel, a, alpha,
                 arrays: StudyArrays | None = None):
    """Per-group (design, outcomes, pi/f ratio, 1/N_i) restricted to the rows a fit uses.

    ``a=None`` keeps every individual and uses the full-vector ratio.
    """
    log_f = study_log_probs(propensity, study, arrays)
    rows = []
    for group, log_fi in zip(study.groups, log_f):
        design = feature_map.design(group, study.covariate_names)
        treatments = group.treatments[None, :]
        if a is None:
            select = np.ones(group.size, dtype=bool)
            log_ratio = np.full(group.size, log_pi_rows(treatments, alpha)[0] - log_fi)
        else:
            select = group.treatments == a
            log_ratio = log_pi_minus_rows(treatments, alpha)[0] - log_fi
        rows.append((design[select], group.outcomes[select], np.exp(log_ratio[select]), 1.0 / group.size))
    return rows


def _stack_rows(rows, mode_name: str, a):
    design = np.vstack([r[0] for r in rows])
    response = np.concatenate([r[1] for r in rows])
    ratio = np.concatenate([r[2] for r in rows])
    if len(response) == 0:
        raise EmptyStratumError(f'{mode_name} fit has no individuals with treatment {a}')
    inverse_size = np.concatenate([np.full(len(r[1]), r[3]) for r in rows])
    return design, response, ratio, inverse_size


def _weighted_residual_info(rows, predictions_of, n_used: int, rank: int, collinear=False) -> OutcomeFitInfo:
    """sum_i N_i^-1 sum_j 1(A_ij = a) (Y_ij - m_ij) pi/f, and the same sum over |pi/f Y| as its scale."""
    total, scale = 0.0, 0.0
    for design, response, ratio, inverse_size in rows:
        total += inverse_size * float(ratio @ (response - predictions_of(design, ratio)))
        scale += inverse_size * float(np.abs(ratio * response).sum())
    return OutcomeFitInfo(n_used, rank, total, max(scale, 1e-300), collinear)


def fit_wls(study: Study, feature_map: FeatureMap, prop: PropensityModel, a: int | None, alpha,
            marginal: bool = False) -> OutcomeModel:
    feature_map.check_names(study.covariate_names)
    alpha = float(alpha)
    stratum = None if marginal else int(a)
    fmap = feature_map if marginal else feature_map.restricted(stratum)
    rows = stratum_rows(study, fmap, prop, stratum, alpha)
    design, response, ratio, inverse_size = _stack_rows(rows, 'WLS', stratum)
    beta, rank = solve_least_squares(design, response, fmap.labels, weights=ratio * inverse_size)
    info = _weighted_residual_info(rows, lambda x, w: x @ beta, len(response), rank)
    logger.debug('WLS outcome model (a=%s, alpha=%s): %s', stratum, alpha, beta.round(6))
    return OutcomeModel(
        beta=beta, feature_map=fmap, covariate_names=study.covariate_names, mode=OutcomeMode.WLS,
        a=stratum, alpha=alpha, marginal=marginal, propensity=prop, fit_info=info,
    )


def fit_picov(study: Study, feature_map: FeatureMap, prop: PropensityModel, a: int | None, alpha,
              marginal: bool = False) -> OutcomeModel:
    feature_map.check_names(study.covariate_names)
    alpha = float(alpha)
    stratum = None if marginal else int(a)
    fmap = feature_map if marginal else feature_map.restricted(stratum)
    rows = stratum_rows(study, fmap, prop, stratum, alpha)
    design, response, ratio, inverse_size = _stack_rows(rows, 'PICOV', stratum)

    collinear = False
    try:
        beta, rank = solve_least_squares(
            np.column_stack([design, ratio]), response, fmap.labels + [RATIO_LABEL], weights=inverse_size,
        )
    except SingularDesignError:
        # raises again when the design is singular without the ratio column
        base, rank = solve_least_squares(design, response, fmap.labels, weights=inverse_size)
        logger.warning('Propensity ratio covariate is collinear with the design; its coefficient is fixed at 0')
        beta, collinear = np.append(base, 0.0), True

    d = fmap.dimension
    info = _weighted_residual_info(rows, lambda x, w: x @ beta[:d] + beta[d] * w, len(response), rank, collinear)
    logger.debug('PICOV outcome model (a=%s, alpha=%s): %s', stratum, alpha, beta.round(6))
    return OutcomeModel(
        beta=beta, feature_map=fmap, covariate_names=study.covariate_names, mode=OutcomeMode.PICOV,
        a=stratum, alpha=alpha, marginal=marginal, propensity=prop, fit_info=info,
    )


def normal_equation_contributions(model: OutcomeModel, study: Study, prop: PropensityModel | None = None,
                                  arrays: StudyArrays | None = None) -> np.ndarray:
    """Per-group estimating function of beta, shape (k, len(beta)).

    OLS:   sum_j L_ij (Y_ij - L_ij beta)
    WLS:   N_i^-1 sum_j 1(A_ij = a) w_ij L_ij (Y_ij - L_ij beta)
    PICOV: N_i^-1 sum_j 1(A_ij = a) L~_ij (Y_ij - L~_ij beta)
    The weights and the ratio regressor are evaluated at ``prop``.
    """
    names = study.covariate_names
    if model.mode == OutcomeMode.OLS:
        out = np.empty((study.k, len(model.beta)))
        for i, group in enumerate(study.groups):
            design = model.feature_map.design(group, names)
            out[i] = design.T @ (group.outcomes - design @ model.beta)
        return out

    prop = prop or model.propensity
    stratum = None if model.marginal else model.a
    rows = stratum_rows(study, model.feature_map, prop, stratum, model.alpha, arrays)
    out = np.empty((study.k, len(model.beta)))
    for i, (design, response, ratio, inverse_size) in enumerate(rows):
        if model.mode == OutcomeMode.WLS:
            out[i] = inverse_size * (design.T @ (ratio * (response - design @ model.beta)))
        else:
            augmented = np.column_stack([design, ratio])
            out[i] = inverse_size * (augmented.T @ (response - augmented @ model.beta))
    return out


class OutcomeModelCache:
    """Fitted WLS/PICOV models keyed on (mode, a, alpha, marginal, propensity fingerprint)."""

    def __init__(self, study: Study, feature_map: FeatureMap):
        self.study = study
        self.feature_map = feature_map
        self._models = {}
        self._lock = threading.Lock()

    def get(self, mode: OutcomeMode, prop: PropensityModel, a, alpha) -> OutcomeModel:
        key = (OutcomeMode(mode), a, float(alpha), prop.fingerprint)
        with self._lock:
            if key in self._models:
                return self._models[key]
        fit = fit_wls if mode == OutcomeMode.WLS else fit_picov
        model = fit(self.study, self.feature_map, prop, a, alpha, marginal=a is None)
        with self._lock:
            return self._models.setdefault(key, model)
