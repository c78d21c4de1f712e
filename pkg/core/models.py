from django.core.validators import MaxValueValidator, MinValueValidator
from django.db import models
from django.db.models import F, Q

from .choices import EffectKind, EngineKind, Estimand, Family, Scenario


def open_unit_interval(field: str) -> Q:
    return Q(**{f'{field}__gt': 0}) & Q(**{f'{field}__lt': 1})


class EstimationRun(models.Model):
    """One ``estimate`` invocation; the resolved config is stored with it."""
    data_path = models.CharField(max_length=500)
    config_digest = models.CharField(max_length=64, db_index=True)
    engine = models.CharField(max_length=5, choices=EngineKind.choices, default=EngineKind.EXACT)
    seed = models.BigIntegerField()
    mc_draws = models.PositiveIntegerField(null=True)
    n_groups = models.PositiveIntegerField()
    n_individuals = models.PositiveIntegerField()
    propensity_converged = models.BooleanField(default=True)
    config = models.JSONField(default=dict)
    parameter_counts = models.JSONField(default=dict)
    created = models.DateTimeField(auto_now_add=True)

    class Meta:
        ordering = ('-created', )
        get_latest_by = 'created'

    def __str__(self):
        return f'Estimation on {self.data_path} ({self.config_digest[:8]})'


class EffectResult(models.Model):
    run = models.ForeignKey(EstimationRun, on_delete=models.CASCADE, related_name='results')
    family = models.CharField(max_length=8, choices=Family.choices)
    kind = models.CharField(max_length=2, choices=EffectKind.choices)
    alpha1 = models.FloatField(validators=[MinValueValidator(0), MaxValueValidator(1)])
    alpha0 = models.FloatField(validators=[MinValueValidator(0), MaxValueValidator(1)])
    estimate = models.FloatField()
    se = models.FloatField(validators=[MinValueValidator(0)])
    lower = models.FloatField()
    upper = models.FloatField()

    class Meta:
        ordering = ('run', 'family', 'kind', 'alpha1', 'alpha0')
        constraints = [
            models.CheckConstraint(
                condition=open_unit_interval('alpha1') & open_unit_interval('alpha0'),
                name='effect_alpha_in_unit_interval',
                violation_error_message='Policy parameters must lie strictly between 0 and 1',
            ),
            models.CheckConstraint(
                condition=Q(se__gte=0),
                name='effect_se_non_negative',
            ),
            models.CheckConstraint(
                condition=Q(lower__lte=F('upper')),
                name='effect_interval_ordered',
                violation_error_message='Lower confidence limit exceeds the upper one',
            ),
            models.UniqueConstraint(
                fields=('run', 'family', 'kind', 'alpha1', 'alpha0'), name='effect_unique_per_run',
            ),
        ]

    @property
    def half_width(self) -> float:
        return (self.upper - self.lower) / 2

    def __str__(self):
        return f'{self.family} {self.kind}({self.alpha1:g}, {self.alpha0:g}) = {self.estimate:.4f}'


class SimulationRun(models.Model):
    scenario = models.CharField(max_length=3, choices=Scenario.choices)
    k = models.PositiveIntegerField()
    group_size = models.PositiveIntegerField()
    alpha = models.FloatField()
    replications = models.PositiveIntegerField()
    master_seed = models.BigIntegerField()
    failures = models.PositiveIntegerField(default=0)
    config = models.JSONField(default=dict)
    created = models.DateTimeField(auto_now_add=True)

    class Meta:
        ordering = ('-created', )
        get_latest_by = 'created'
        constraints = [
            models.CheckConstraint(
                condition=open_unit_interval('alpha'),
                name='simulation_alpha_in_unit_interval',
                violation_error_message='Policy parameter must lie strictly between 0 and 1',
            ),
            models.CheckConstraint(
                condition=Q(failures__lte=F('replications')),
                name='simulation_failures_bounded',
            ),
        ]

    @property
    def failure_rate(self) -> float:
        return self.failures / self.replications if self.replications else 0.0

    def __str__(self):
        return f'Scenario {self.scenario}: {self.replications} x (k={self.k}, N={self.group_size})'


class SummaryRow(models.Model):
    run = models.ForeignKey(SimulationRun, on_delete=models.CASCADE, related_name='rows')
    family = models.CharField(max_length=8, choices=Family.choices)
    estimand = models.CharField(max_length=3, choices=Estimand.choices)
    truth = models.FloatField()
    bias = models.FloatField()
    sd = models.FloatField(validators=[MinValueValidator(0)])
    ase = models.FloatField(validators=[MinValueValidator(0)])
    coverage = models.FloatField(validators=[MinValueValidator(0), MaxValueValidator(1)])
    n_reps = models.PositiveIntegerField()

    class Meta:
        ordering = ('run', 'family', 'estimand')
        constraints = [
            models.CheckConstraint(
                condition=Q(coverage__gte=0) & Q(coverage__lte=1),
                name='summary_coverage_is_probability',
                violation_error_message='Coverage must be between 0 and 1',
            ),
            models.CheckConstraint(
                condition=Q(sd__gte=0) & Q(ase__gte=0),
                name='summary_spread_non_negative',
            ),
            models.UniqueConstraint(
                fields=('run', 'family', 'estimand'), name='summary_unique_per_run',
            ),
        ]

    def __str__(self):
        return f'{self.family} {self.estimand}: bias {self.bias:+.4f}, coverage {self.coverage:.3f}'
