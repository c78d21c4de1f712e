"""Declarative regressor maps shared by the propensity and outcome models.

A map is a list of terms; each term is a ``*``-joined product of factors::

    intercept             constant 1
    x1, abs(x1)           a covariate, raw or absolute value
    treatment             own treatment A_ij
    proportion            share treated in the group, j included
    neighbor_sum          number of treated group members other than j
    neighbor[m]           treatment of the m-th other member (0 when absent)

For example ``['intercept', 'treatment', 'proportion', 'abs(x1)', 'x2', 'abs(x1)*x2']``.
"""
import re
from dataclasses import dataclass

import numpy as np

from .data import GroupRecord
from .exceptions import ConfigError

_ABS = re.compile(r'^abs\((\w+)\)$')
_NEIGHBOR = re.compile(r'^neighbor\[(\d+)\]$')
_NAME = re.compile(r'^\w+$')

TREATMENT_KINDS = frozenset({'treatment', 'proportion', 'neighbor_sum', 'neighbor'})


@dataclass(frozen=True)
class Factor:
    kind: str
    name: str | None = None
    index: int | None = None

    @property
    def is_treatment(self) -> bool:
        return self.kind in TREATMENT_KINDS

    def __str__(self):
        if self.kind == 'covariate':
            return self.name
        if self.kind == 'abs':
            return f'abs({self.name})'
        if self.kind == 'neighbor':
            return f'neighbor[{self.index}]'
        return self.kind


@dataclass(frozen=True)
class Term:
    factors: tuple[Factor, ...]

    @property
    def is_intercept(self) -> bool:
        return not self.factors

    @property
    def treatment_factors(self) -> tuple[Factor, ...]:
        return tuple(f for f in self.factors if f.is_treatment)

    def __str__(self):
        return '*'.join(str(f) for f in self.factors) or 'intercept'


def parse_factor(text: str) -> Factor:
    text = text.strip()
    if text in ('treatment', 'proportion', 'neighbor_sum'):
        return Factor(text)
    if match := _NEIGHBOR.match(text):
        return Factor('neighbor', index=int(match.group(1)))
    if match := _ABS.match(text):
        return Factor('abs', name=match.group(1))
    if _NAME.match(text):
        return Factor('covariate', name=text)
    raise ConfigError(f'Cannot parse feature factor {text!r}')


def parse_term(text: str) -> Term:
    text = text.strip()
    if text in ('intercept', '1'):
        return Term(())
    return Term(tuple(parse_factor(part) for part in text.split('*')))


@dataclass(frozen=True)
class FeatureMap:
    terms: tuple[Term, ...]
    own: int | None = None

    def __post_init__(self):
        object.__setattr__(self, 'terms', tuple(self.terms))
        intercepts = sum(term.is_intercept for term in self.terms)
        if intercepts != 1:
            raise ConfigError(f'A feature map needs exactly one intercept, got {intercepts}')
        labels = self.labels
        if len(set(labels)) != len(labels):
            raise ConfigError(f'Duplicate terms in feature map {labels}')

    @classmethod
    def parse(cls, specs) -> 'FeatureMap':
        if isinstance(specs, str):
            specs = [s for s in specs.split(',') if s.strip()]
        return cls(tuple(parse_term(s) for s in specs))

    @property
    def labels(self) -> list[str]:
        return [str(term) for term in self.terms]

    @property
    def dimension(self) -> int:
        return len(self.terms)

    @property
    def uses_treatment(self) -> bool:
        return any(term.treatment_factors for term in self.terms)

    @property
    def affine_in_neighbors(self) -> bool:
        return all(len(term.treatment_factors) <= 1 for term in self.terms)

    def check_names(self, names) -> None:
        unknown = sorted({
            f.name for term in self.terms for f in term.factors
            if f.kind in ('covariate', 'abs') and f.name not in names
        })
        if unknown:
            raise ConfigError(f'Feature map refers to unknown covariates {unknown}')

    def restricted(self, own: int) -> 'FeatureMap':
        """The map for a stratum where every index individual has treatment ``own``."""
        terms = []
        for term in self.terms:
            if any(f.kind == 'treatment' for f in term.factors):
                if own == 0:
                    continue
                term = Term(tuple(f for f in term.factors if f.kind != 'treatment'))
            if term not in terms:
                terms.append(term)
        return FeatureMap(tuple(terms), own=own)

    def covariate_part(self, group: GroupRecord, names) -> np.ndarray:
        columns = []
        for term in self.terms:
            column = np.ones(group.size)
            for factor in term.factors:
                if factor.kind == 'covariate':
                    column = column * group.covariates[:, names.index(factor.name)]
                elif factor.kind == 'abs':
                    column = column * np.abs(group.covariates[:, names.index(factor.name)])
            columns.append(column)
        return np.column_stack(columns)

    def _factor_values(self, factor: Factor, vectors: np.ndarray, own) -> np.ndarray:
        n = vectors.shape[1]
        own_values = vectors if own is None else np.full(vectors.shape, float(own))
        if factor.kind == 'treatment':
            return own_values
        total = vectors.sum(axis=1, keepdims=True)
        if factor.kind == 'proportion':
            return (total - vectors + own_values) / n
        if factor.kind == 'neighbor_sum':
            return total - vectors
        # neighbor[m]: the m-th member other than j, skipping j itself
        m = factor.index
        if m >= n - 1:
            return np.zeros(vectors.shape)
        positions = np.where(np.arange(n) > m, m, m + 1)
        return vectors[:, positions]

    def treatment_part(self, vectors: np.ndarray, own: int | None = None) -> np.ndarray:
        """Treatment-dependent factor products, shape (draws, N, d).

        Row j of draw b is evaluated for index individual j under ``vectors[b]``
        with own treatment replaced by ``own`` when given.
        """
        vectors = np.asarray(vectors, dtype=float)
        if own is None:
            own = self.own
        cache = {}
        out = np.ones((*vectors.shape, self.dimension))
        for col, term in enumerate(self.terms):
            for factor in term.treatment_factors:
                if factor not in cache:
                    cache[factor] = self._factor_values(factor, vectors, own)
                out[:, :, col] *= cache[factor]
        return out

    def design(self, group: GroupRecord, names, vectors=None, own: int | None = None) -> np.ndarray:
        """Regressor rows L_ij; shape (N, d) for the observed vector, else (draws, N, d)."""
        covariates = self.covariate_part(group, names)
        if vectors is None:
            return covariates * self.treatment_part(group.treatments[None, :], own)[0]
        return covariates[None] * self.treatment_part(vectors, own)

    def expected_treatment_part(self, n: int, alpha: float, own: int | None = None) -> np.ndarray:
        """E[treatment part] under independent Bernoulli(alpha) assignment, shape (N, d).

        ``own=None`` draws the index individual too. Exact only for affine maps.
        """
        if not self.affine_in_neighbors:
            raise ValueError('Expected features are only available for affine maps')
        if own is None:
            own = self.own
        own_mean = alpha if own is None else float(own)
        out = np.ones((n, self.dimension))
        for col, term in enumerate(self.terms):
            for factor in term.treatment_factors:
                if factor.kind == 'treatment':
                    value = own_mean
                elif factor.kind == 'proportion':
                    value = (own_mean + (n - 1) * alpha) / n
                elif factor.kind == 'neighbor_sum':
                    value = (n - 1) * alpha
                else:
                    value = alpha if factor.index < n - 1 else 0.0
                out[:, col] *= value
        return out
