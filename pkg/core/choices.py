from django.db import models


class Family(models.TextChoices):
    IPW = ('IPW', 'Inverse probability weighted')
    REG = ('REG', 'Outcome regression')
    DRBC = ('DRBC', 'DR residual bias correction')
    DRWLS = ('DRWLS', 'DR weighted coefficients')
    DRPICOV = ('DRPICOV', 'DR propensity-based covariate')


class EffectKind(models.TextChoices):
    DE = ('DE', 'Direct')
    IE = ('IE', 'Indirect')
    TE = ('TE', 'Total')
    OE = ('OE', 'Overall')


class Scenario(models.TextChoices):
    BOTH_CORRECT = ('i', 'Both models correct')
    WRONG_PROPENSITY = ('ii', 'Propensity model wrong')
    WRONG_OUTCOME = ('iii', 'Outcome model wrong')
    BOTH_WRONG = ('iv', 'Both models wrong')


class Estimand(models.TextChoices):
    MU0 = ('mu0', 'Mean outcome, untreated')
    MU1 = ('mu1', 'Mean outcome, treated')
    DE = ('de', 'Direct effect')


class EngineKind(models.TextChoices):
    EXACT = ('exact', 'Exact')
    MC = ('mc', 'Monte Carlo')


class OutcomeMode(models.TextChoices):
    OLS = ('OLS', 'Least squares')
    WLS = ('WLS', 'Weighted least squares')
    PICOV = ('PICOV', 'Propensity covariate')
