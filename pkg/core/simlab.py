"""Simulation study: data-generating process, ground truth, replications and summaries.

Each replicate is generated from its own seed streams derived from
(master_seed, replicate index), so scenarios sharing a seed see identical data
and results never depend on the number of worker processes.
"""
import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import django
import numpy as np
import pandas as pd
from scipy import special

from .choices import EngineKind, Estimand, Family, Scenario
from .conf import get_setting
from .data import GroupRecord, Policy, Study
from .estimators import Engine, FittedModels
from .exceptions import ConfigError, EnumerationLimitError, FitError, NumericalError, SimulationError
from .features import FeatureMap
from .inference import build_stack, contrast_for, effect_variance, sandwich, wald_ci
from .outcome import predict
from .propensity import fit_propensity

logger = logging.getLogger(__name__)

COVARIATES = ('x1', 'x2')
CORRECT_PROPENSITY = ('intercept', 'abs(x1)', 'abs(x1)*x2')
WRONG_PROPENSITY = ('intercept', 'x1')
CORRECT_OUTCOME = ('intercept', 'treatment', 'proportion', 'abs(x1)', 'x2', 'abs(x1)*x2')
WRONG_OUTCOME = ('intercept', 'treatment', 'proportion', 'x1', 'x2')
DEFAULT_FAMILIES = (Family.IPW, Family.REG, Family.DRBC, Family.DRWLS)

# E|X1| for X1 standard normal
MEAN_ABS_NORMAL = math.sqrt(2 / math.pi)


@dataclass(frozen=True)
class ScenarioSpec:
    scenario: Scenario = Scenario.BOTH_CORRECT
    k: int = 100
    group_size: int = 30
    alpha_eval: float = 0.5
    replications: int | None = None
    master_seed: int = 20190101
    families: tuple[Family, ...] = DEFAULT_FAMILIES
    random_effect_variance: float | None = None
    outcome_noise_sd: float = 1.0
    engine: EngineKind = EngineKind.EXACT
    mc_draws: int | None = None
    level: float = 0.95

    def __post_init__(self):
        try:
            object.__setattr__(self, 'scenario', Scenario(self.scenario))
            object.__setattr__(self, 'families', tuple(Family(f) for f in self.families))
            object.__setattr__(self, 'engine', EngineKind(self.engine))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        Policy(self.alpha_eval)
        if self.replications is None:
            default = 1400 if self.scenario == Scenario.BOTH_CORRECT else 700
            object.__setattr__(self, 'replications', default)
        if self.random_effect_variance is None:
            object.__setattr__(self, 'random_effect_variance', get_setting('RANDOM_EFFECT_VARIANCE'))
        if self.replications < 1:
            raise ConfigError('A simulation needs at least one replication')
        if self.k < 1 or self.group_size < 1:
            raise ConfigError('Group count and group size must be positive')

    @property
    def propensity_map(self) -> FeatureMap:
        wrong = self.scenario in (Scenario.WRONG_PROPENSITY, Scenario.BOTH_WRONG)
        return FeatureMap.parse(WRONG_PROPENSITY if wrong else CORRECT_PROPENSITY)

    @property
    def outcome_map(self) -> FeatureMap:
        wrong = self.scenario in (Scenario.WRONG_OUTCOME, Scenario.BOTH_WRONG)
        return FeatureMap.parse(WRONG_OUTCOME if wrong else CORRECT_OUTCOME)

    def engine_for(self) -> Engine:
        return Engine.from_settings(self.engine, mc_draws=self.mc_draws, seed=self.master_seed)


def generate_study(spec: ScenarioSpec, replicate_index: int, treatment_override: int | None = None) -> Study:
    """Two covariates, a random-intercept logistic treatment model and a linear outcome."""
    streams = np.random.SeedSequence([spec.master_seed, replicate_index]).spawn(4)
    rng_x, rng_b, rng_a, rng_e = (np.random.default_rng(s) for s in streams)
    shape = (spec.k, spec.group_size)

    x1 = rng_x.standard_normal(shape)
    x2 = rng_x.binomial(1, 0.5, shape).astype(float)
    b = rng_b.normal(0.0, math.sqrt(spec.random_effect_variance), spec.k)
    eta = 0.1 + 0.2 * np.abs(x1) + 0.2 * np.abs(x1) * x2 + b[:, None]
    treatments = (rng_a.random(shape) < special.expit(eta)).astype(np.int64)
    if treatment_override is not None:
        treatments = np.full(shape, int(treatment_override), dtype=np.int64)
    share = treatments.mean(axis=1, keepdims=True)
    noise = rng_e.standard_normal(shape) * spec.outcome_noise_sd
    outcomes = (
        2 + 2 * treatments + share - 1.5 * np.abs(x1) + 2 * x2 - 3 * np.abs(x1) * x2 + noise
    )
    groups = tuple(
        GroupRecord(
            group_id=f'g{i:05d}',
            covariates=np.column_stack([x1[i], x2[i]]),
            treatments=treatments[i],
            outcomes=outcomes[i],
        )
        for i in range(spec.k)
    )
    return Study(groups, COVARIATES)


@dataclass(frozen=True)
class TrueValues:
    mu0: float
    mu1: float
    de: float
    mu_marginal: float

    def __getitem__(self, estimand) -> float:
        return {Estimand.MU0: self.mu0, Estimand.MU1: self.mu1, Estimand.DE: self.de}[Estimand(estimand)]


def true_values(spec: ScenarioSpec | None = None, group_size: int | None = None,
                alpha: float | None = None) -> TrueValues:
    """Analytic means of the generating outcome model under policy alpha."""
    n = group_size if group_size is not None else spec.group_size
    alpha = alpha if alpha is not None else spec.alpha_eval
    # 2 + 2a + p - 1.5|X1| + 2 X2 - 3|X1| X2 with E X2 = 0.5 and X2 independent of X1
    base = 2 - 1.5 * MEAN_ABS_NORMAL + 2 * 0.5 - 3 * MEAN_ABS_NORMAL * 0.5

    def mu(a):
        return base + 2 * a + (a + (n - 1) * alpha) / n

    return TrueValues(mu0=mu(0), mu1=mu(1), de=2 + 1 / n, mu_marginal=base + 2 * alpha + alpha)


@dataclass(frozen=True)
class EstimateRecord:
    estimate: float
    se: float
    lower: float
    upper: float
    covered: bool


@dataclass(frozen=True)
class ReplicationResult:
    index: int
    seed: tuple[int, int]
    estimates: dict = field(default_factory=dict)
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None


@dataclass(frozen=True)
class SummaryRow:
    family: Family
    estimand: Estimand
    truth: float
    bias: float
    sd: float
    ase: float
    coverage: float
    n_reps: int


@dataclass(frozen=True)
class SimulationSummary:
    scenario: Scenario
    rows: tuple[SummaryRow, ...]
    replications: int
    failures: int

    def row(self, family, estimand) -> SummaryRow:
        for row in self.rows:
            if row.family == family and row.estimand == estimand:
                return row
        raise KeyError((family, estimand))


def _unit(stack, target) -> np.ndarray:
    tau = np.zeros(stack.dimension)
    tau[stack.target_index(target)] = 1.0
    return tau


def replicate(spec: ScenarioSpec, index: int) -> ReplicationResult:
    seed = (spec.master_seed, index)
    study = generate_study(spec, index)
    truth = true_values(spec)
    alpha = spec.alpha_eval
    engine = spec.engine_for()
    try:
        prop = fit_propensity(study, spec.propensity_map)
        models = FittedModels(study, prop, spec.outcome_map, marginal_extension=False)
        estimates = {}
        for family in spec.families:
            stack = build_stack(family, models, [(0, alpha), (1, alpha)], engine)
            result = sandwich(stack, study)
            contrasts = {
                Estimand.MU0: _unit(stack, (0, alpha)),
                Estimand.MU1: _unit(stack, (1, alpha)),
                Estimand.DE: contrast_for(stack, (1, alpha), (0, alpha)),
            }
            records = {}
            for estimand, tau in contrasts.items():
                estimate = float(tau @ stack.values)
                variance = effect_variance(result, tau)
                ci = wald_ci(estimate, variance, spec.level)
                records[estimand] = EstimateRecord(
                    estimate, math.sqrt(variance), ci.lower, ci.upper,
                    ci.lower <= truth[estimand] <= ci.upper,
                )
            estimates[family] = records
    except (FitError, NumericalError, EnumerationLimitError) as exc:
        logger.warning('Replicate %d failed: %s: %s', index, exc.error_class, exc)
        return ReplicationResult(index, seed, error=f'{exc.error_class}: {exc}')
    logger.debug('Replicate %d done', index)
    return ReplicationResult(index, seed, estimates)


def _replicate_task(args) -> ReplicationResult:
    spec, index = args
    return replicate(spec, index)


def summarize(spec: ScenarioSpec, results) -> SimulationSummary:
    truth = true_values(spec)
    ok = sorted((r for r in results if not r.failed), key=lambda r: r.index)
    rows = []
    for family in spec.families:
        for estimand in Estimand:
            records = [r.estimates[family][estimand] for r in ok]
            if not records:
                continue
            estimates = np.array([rec.estimate for rec in records])
            rows.append(SummaryRow(
                family=family,
                estimand=estimand,
                truth=truth[estimand],
                bias=math.fsum(estimates) / len(estimates) - truth[estimand],
                sd=float(estimates.std(ddof=1)) if len(estimates) > 1 else 0.0,
                ase=math.fsum(rec.se for rec in records) / len(records),
                coverage=sum(rec.covered for rec in records) / len(records),
                n_reps=len(records),
            ))
    return SimulationSummary(spec.scenario, tuple(rows), len(results), len(results) - len(ok))


def run_replications(spec: ScenarioSpec, workers: int | None = None):
    """Run every replicate of a scenario. Returns (results ordered by index, summary)."""
    workers = workers or get_setting('WORKERS')
    tasks = [(spec, index) for index in range(spec.replications)]
    logger.info(
        'Scenario %s: %d replications, k=%d, N=%d, %d worker(s)',
        spec.scenario, spec.replications, spec.k, spec.group_size, workers,
    )
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers, initializer=django.setup) as pool:
            results = list(pool.map(_replicate_task, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    else:
        results = [_replicate_task(task) for task in tasks]

    failures = sum(r.failed for r in results)
    if failures:
        logger.warning('Scenario %s: %d of %d replications failed', spec.scenario, failures, len(results))
    if failures and failures >= get_setting('MAX_FAILURE_RATE') * len(results):
        raise SimulationError(f'{failures} of {len(results)} replications failed')
    return results, summarize(spec, results)


def summary_frame(summary: SimulationSummary) -> pd.DataFrame:
    return pd.DataFrame([
        {
            'scenario': summary.scenario.value, 'family': row.family.value, 'estimand': row.estimand.value,
            'truth': row.truth, 'bias': row.bias, 'sd': row.sd, 'ase': row.ase,
            'coverage': row.coverage, 'n_reps': row.n_reps,
        }
        for row in summary.rows
    ])


def plot_frame(spec: ScenarioSpec, results) -> pd.DataFrame:
    """One row per replicate x family x estimand, ready for any plotting tool."""
    truth = true_values(spec)
    records = []
    for result in results:
        if result.failed:
            continue
        for family, by_estimand in result.estimates.items():
            for estimand, rec in by_estimand.items():
                records.append({
                    'scenario': spec.scenario.value, 'family': family.value, 'estimand': estimand.value,
                    'replicate': result.index, 'truth': truth[estimand], 'estimate': rec.estimate,
                    'bias': rec.estimate - truth[estimand], 'se': rec.se, 'lower': rec.lower,
                    'upper': rec.upper, 'covered': int(rec.covered),
                })
    return pd.DataFrame.from_records(records)


def write_summary_csv(summary: SimulationSummary, path: str | Path) -> None:
    summary_frame(summary).to_csv(path, index=False, float_format='%.10g')


def write_plot_csv(spec: ScenarioSpec, results, path: str | Path) -> None:
    plot_frame(spec, results).to_csv(path, index=False, float_format='%.10g')


def oracle_policy_sum(model, group: GroupRecord, j: int, a: int, alpha: float, limit: int = 15) -> float:
    """Literal sum over neighbor assignments of m_ij * pi with plain products."""
    n = group.size
    if n > limit:
        raise EnumerationLimitError(f'Oracle enumeration is limited to groups of {limit}')
    alpha = float(alpha)
    total = 0.0
    for neighbors in itertools.product((0, 1), repeat=n - 1):
        vector = list(neighbors[:j]) + [a] + list(neighbors[j:])
        weight = 1.0
        for value in neighbors:
            weight *= alpha if value == 1 else 1 - alpha
        total += predict(model, group, vector, j) * weight
    return total
