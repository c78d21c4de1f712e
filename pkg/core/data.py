"""Grouped observational data: records, validation and the long-format CSV."""
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from django.core.exceptions import ValidationError

from .choices import EffectKind
from .exceptions import ConfigError, DataError, ParseError, SchemaError, StudyValidationError

logger = logging.getLogger(__name__)


def _frozen(values, dtype) -> np.ndarray:
    array = np.array(values, dtype=dtype)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class GroupRecord:
    """One group's covariates X_i (N_i x p), treatments A_i and outcomes Y_i."""

    group_id: str
    covariates: np.ndarray
    treatments: np.ndarray
    outcomes: np.ndarray

    def __post_init__(self):
        covariates = np.asarray(self.covariates, dtype=float)
        if covariates.ndim == 1:
            covariates = covariates.reshape(-1, 1)
        object.__setattr__(self, 'group_id', str(self.group_id))
        object.__setattr__(self, 'covariates', _frozen(covariates, float))
        object.__setattr__(self, 'treatments', _frozen(self.treatments, np.int64))
        object.__setattr__(self, 'outcomes', _frozen(self.outcomes, float))

    @property
    def size(self) -> int:
        return len(self.treatments)

    def __eq__(self, other):
        if not isinstance(other, GroupRecord):
            return NotImplemented
        return (
            self.group_id == other.group_id
            and np.array_equal(self.covariates, other.covariates)
            and np.array_equal(self.treatments, other.treatments)
            and np.array_equal(self.outcomes, other.outcomes)
        )


@dataclass(frozen=True)
class Study:
    groups: tuple[GroupRecord, ...]
    covariate_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, 'groups', tuple(self.groups))
        object.__setattr__(self, 'covariate_names', tuple(self.covariate_names))

    @property
    def k(self) -> int:
        return len(self.groups)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(group.size for group in self.groups)

    @property
    def n_individuals(self) -> int:
        return sum(self.sizes)

    def covariate_index(self, name: str) -> int:
        try:
            return self.covariate_names.index(name)
        except ValueError:
            raise ConfigError(
                f'Unknown covariate {name!r}; study has {list(self.covariate_names)}'
            ) from None

    def permuted(self, order) -> 'Study':
        return Study(tuple(self.groups[i] for i in order), self.covariate_names)


@dataclass(frozen=True)
class Policy:
    """Allocation strategy: everyone treated independently with probability alpha."""

    alpha: float

    def __post_init__(self):
        alpha = float(self.alpha)
        if not 0.0 < alpha < 1.0:
            raise ConfigError(f'Policy alpha must lie strictly between 0 and 1, got {alpha}')
        object.__setattr__(self, 'alpha', alpha)

    def __float__(self):
        return self.alpha


@dataclass(frozen=True)
class EffectRequest:
    kind: EffectKind
    alpha1: Policy
    alpha0: Policy

    @classmethod
    def direct(cls, alpha: Policy) -> 'EffectRequest':
        return cls(EffectKind.DE, alpha, alpha)

    def __post_init__(self):
        object.__setattr__(self, 'kind', EffectKind(self.kind))
        if self.kind == EffectKind.DE and self.alpha1 != self.alpha0:
            raise ConfigError('A direct effect takes a single policy (alpha1 == alpha0)')


@dataclass(frozen=True)
class StudySchema:
    """Column names of the long-format file. ``covariates=None`` takes every other column."""

    group: str = 'group'
    treatment: str = 'treatment'
    outcome: str = 'outcome'
    covariates: tuple[str, ...] | None = None


def validate_study(study: Study) -> None:
    errors = []
    if study.k < 1:
        errors.append(ValidationError('Study has no groups', code='empty'))

    p = len(study.covariate_names)
    seen = set()
    for group in study.groups:
        gid = group.group_id
        if gid in seen:
            errors.append(ValidationError(f'Duplicate group id {gid!r}', code='duplicate'))
        seen.add(gid)

        n = group.size
        if n < 1:
            errors.append(ValidationError(f'Group {gid!r} has no individuals', code='empty_group'))
            continue
        if group.covariates.shape[0] != n or len(group.outcomes) != n:
            errors.append(ValidationError(
                f'Group {gid!r}: {group.covariates.shape[0]} covariate rows, '
                f'{n} treatments, {len(group.outcomes)} outcomes',
                code='shape',
            ))
            continue
        if group.covariates.shape[1] != p:
            errors.append(ValidationError(
                f'Group {gid!r} has {group.covariates.shape[1]} covariates, expected {p}',
                code='dimension',
            ))
        if not np.isin(group.treatments, (0, 1)).all():
            errors.append(ValidationError(f'Group {gid!r} has non-binary treatments', code='treatment'))
        if not (np.isfinite(group.covariates).all() and np.isfinite(group.outcomes).all()):
            errors.append(ValidationError(f'Group {gid!r} has non-finite values', code='finite'))

    if errors:
        raise StudyValidationError(ValidationError(errors))


def _parse_column(frame: pd.DataFrame, column: str) -> np.ndarray:
    values = np.empty(len(frame))
    for row, text in enumerate(frame[column], start=1):
        try:
            values[row - 1] = float(text)
        except ValueError:
            raise ParseError(
                f'Column {column!r}: {text!r} is not a number (row {row})', row=row
            ) from None
    return values


def load_study(path: str | Path, schema: StudySchema = StudySchema(), validate: bool = True) -> Study:
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding='utf-8')
    except FileNotFoundError:
        raise DataError(f'Data file {path} does not exist') from None
    except pd.errors.EmptyDataError:
        raise SchemaError(f'Data file {path} has no header row') from None

    required = [schema.group, schema.treatment, schema.outcome]
    covariates = schema.covariates
    if covariates is None:
        covariates = tuple(c for c in frame.columns if c not in required)
    missing = [c for c in (*required, *covariates) if c not in frame.columns]
    if missing:
        raise SchemaError(f'Missing columns in {path}: {missing}')

    treatments = _parse_column(frame, schema.treatment)
    bad_rows = np.flatnonzero(~np.isin(treatments, (0.0, 1.0))) + 1
    if len(bad_rows):
        raise StudyValidationError(ValidationError([
            ValidationError(f'Treatment must be 0 or 1 (row {row})', code='treatment')
            for row in bad_rows
        ]))

    outcomes = _parse_column(frame, schema.outcome)
    matrix = np.column_stack(
        [_parse_column(frame, c) for c in covariates]
    ) if covariates else np.empty((len(frame), 0))

    groups = []
    for gid, sub in frame.groupby(schema.group, sort=False):
        rows = sub.index.to_numpy()
        groups.append(GroupRecord(
            group_id=gid,
            covariates=matrix[rows],
            treatments=treatments[rows].astype(np.int64),
            outcomes=outcomes[rows],
        ))
    study = Study(tuple(groups), tuple(covariates))
    logger.debug('Loaded %d groups (%d individuals) from %s', study.k, study.n_individuals, path)

    if validate:
        validate_study(study)
    return study


def save_study(study: Study, path: str | Path, schema: StudySchema = StudySchema()) -> None:
    frames = []
    for group in study.groups:
        frame = pd.DataFrame(group.covariates, columns=list(study.covariate_names))
        frame.insert(0, schema.outcome, group.outcomes)
        frame.insert(0, schema.treatment, group.treatments)
        frame.insert(0, schema.group, group.group_id)
        frames.append(frame)
    columns = [schema.group, schema.treatment, schema.outcome, *study.covariate_names]
    frame = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=columns)
    frame.to_csv(path, index=False, float_format='%.17g', encoding='utf-8')
