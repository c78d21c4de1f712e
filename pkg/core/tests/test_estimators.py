import dataclasses
import math

import numpy as np
from django.test import SimpleTestCase

from core.choices import EffectKind, EngineKind, Family
from core.data import EffectRequest, Policy, Study
from core.estimators import (
    Engine, FittedModels, drbc_mu, drbc_mu_marginal, drpicov_mu, drwls_mu, effect, effect_targets, ipw_mu,
    ipw_mu_marginal, mu, population_mean, reg_mu,
)
from core.exceptions import ContractError, UnsupportedCombinationError
from core.features import FeatureMap
from core.outcome import fit_ols, fit_picov, fit_wls
from core.propensity import FitInfo

from .factories import OUTCOME_TERMS, fixed_propensity, group, linear_model, random_study

EXACT = Engine(EngineKind.EXACT)


def two_person_study() -> Study:
    # f(A|X) = 0.5 * 0.5 = 0.25 under a zero propensity model
    return Study((group('g', [[0.0], [0.0]], [1, 0], [1.0, 2.0]),), ('x1',))


class InverseWeightingTests(SimpleTestCase):
    def setUp(self):
        self.study = two_person_study()
        self.prop = fixed_propensity(self.study)

    def test_hand_values(self):
        self.assertAlmostEqual(ipw_mu(self.study, self.prop, 1, 0.5).value, 1.0, places=12)
        self.assertAlmostEqual(ipw_mu(self.study, self.prop, 0, Policy(0.5)).value, 2.0, places=12)
        self.assertAlmostEqual(ipw_mu_marginal(self.study, self.prop, 0.5).value, 1.5, places=12)

    def test_largest_weight_is_reported(self):
        estimate = ipw_mu(self.study, self.prop, 1, 0.5)
        self.assertAlmostEqual(estimate.meta.max_weight, 2.0)
        self.assertEqual(estimate.target, (1, 0.5))
        self.assertEqual(estimate.group_values.shape, (1,))

    def test_nobody_treated(self):
        study = Study((group('g', [[0.0], [1.0]], [0, 0], [3.0, 4.0]),), ('x1',))
        self.assertEqual(ipw_mu(study, fixed_propensity(study), 1, 0.3).value, 0.0)

    def test_zero_outcomes(self):
        study = Study((group('g', [[0.0], [1.0]], [0, 1], [0.0, 0.0]),), ('x1',))
        self.assertEqual(ipw_mu_marginal(study, fixed_propensity(study), 0.3).value, 0.0)

    def test_unconverged_propensity_is_refused(self):
        prop = dataclasses.replace(self.prop, fit_info=FitInfo(False, -1.0, 100, 1.0))
        with self.assertRaises(ContractError):
            ipw_mu(self.study, prop, 1, 0.5)

    def test_marginal_is_the_policy_mixture_of_the_stratified_terms(self):
        # with a one-person group pi(A; alpha) = alpha^A (1 - alpha)^(1 - A)
        study = Study((
            group('a', [[0.3]], [1], [2.0]),
            group('b', [[-0.1]], [0], [5.0]),
        ), ('x1',))
        prop = fixed_propensity(study, gamma=[0.2, 1.0])
        alpha = 0.3
        marginal = ipw_mu_marginal(study, prop, alpha).value
        treated = ipw_mu(study, prop, 1, alpha).value
        control = ipw_mu(study, prop, 0, alpha).value
        self.assertAlmostEqual(marginal, alpha * treated + (1 - alpha) * control, places=12)


class RegressionTests(SimpleTestCase):
    def test_intercept_only_model(self):
        study = random_study(k=3, n=3)
        model = linear_model(['intercept'], [1.7], ('x1',))
        for a, alpha in ((0, 0.2), (1, 0.9), (None, 0.5)):
            self.assertAlmostEqual(reg_mu(study, model, a, alpha, EXACT).value, 1.7, places=12)

    def test_affine_hand_value(self):
        study = Study((group('g', np.empty((3, 0)), [0, 0, 0], [0.0, 0.0, 0.0]),), ())
        model = linear_model(['intercept', 'treatment', 'proportion'], [1.0, 2.0, 3.0])
        self.assertAlmostEqual(reg_mu(study, model, 1, 0.5, EXACT).value, 5.0, places=12)

    def test_monte_carlo_engine_agrees_with_exact(self):
        study = random_study(seed=3, k=12, n=5)
        terms = ['intercept', 'treatment', 'proportion', 'treatment*neighbor_sum', 'neighbor[0]*neighbor[1]', 'x1']
        model = linear_model(terms, [0.5, 1.0, 2.0, 0.7, -1.1, 0.3], ('x1',))
        engine = Engine(EngineKind.MC, mc_draws=4000, seed=8)
        for a in (0, 1, None):
            exact = reg_mu(study, model, a, 0.4, EXACT).value
            approx = reg_mu(study, model, a, 0.4, engine)
            self.assertAlmostEqual(approx.value, exact, delta=0.08)
            self.assertEqual(approx.meta.mc_draws, 4000)

    def test_monte_carlo_engine_is_reproducible(self):
        study = random_study(seed=3, k=4, n=5)
        model = linear_model(['intercept', 'treatment*proportion'], [0.5, 2.0])
        engine = Engine(EngineKind.MC, mc_draws=200, seed=3)
        self.assertEqual(reg_mu(study, model, 1, 0.4, engine).value, reg_mu(study, model, 1, 0.4, engine).value)


class DoublyRobustTests(SimpleTestCase):
    def setUp(self):
        self.study = random_study(seed=9, k=16, n=4)
        self.prop = fixed_propensity(self.study, gamma=[0.3, -0.6])

    def test_zero_outcome_model_reduces_to_inverse_weighting(self):
        zero = linear_model(OUTCOME_TERMS, np.zeros(4), ('x1',))
        for a, alpha in ((1, 0.5), (0, 0.3), (None, 0.6)):
            dr = drbc_mu(self.study, self.prop, zero, a, alpha, EXACT).value
            ipw = ipw_mu(self.study, self.prop, a, alpha).value
            self.assertAlmostEqual(dr, ipw, delta=1e-12)

    def test_zero_residuals_reduce_to_regression(self):
        study = random_study(seed=9, k=16, n=4, noise=0.0)
        model = fit_ols(study, FeatureMap.parse(OUTCOME_TERMS))
        prop = fixed_propensity(study, gamma=[0.3, -0.6])
        for a, alpha in ((1, 0.5), (0, 0.3)):
            dr = drbc_mu(study, prop, model, a, alpha, EXACT).value
            self.assertAlmostEqual(dr, reg_mu(study, model, a, alpha, EXACT).value, delta=1e-10)
        self.assertAlmostEqual(
            drbc_mu_marginal(study, prop, model, 0.4, EXACT).value,
            reg_mu(study, model, None, 0.4, EXACT).value,
            delta=1e-10,
        )

    def test_hand_value(self):
        study = two_person_study()
        prop = fixed_propensity(study)
        model = linear_model(['intercept'], [0.5], ('x1',))
        # reg part 0.5; correction 1/2 * (1 - 0.5) * 0.5 / 0.25
        self.assertAlmostEqual(drbc_mu(study, prop, model, 1, 0.5, EXACT).value, 1.0, places=12)
        # reg part 0.5; correction 1/2 * (2 - 0.5) * 0.5 / 0.25
        self.assertAlmostEqual(drbc_mu(study, prop, model, 0, 0.5, EXACT).value, 2.0, places=12)

    def test_weighted_least_squares_is_bias_corrected_at_its_own_coefficients(self):
        fmap = FeatureMap.parse(OUTCOME_TERMS)
        for a, alpha in ((1, 0.5), (0, 0.35)):
            model = fit_wls(self.study, fmap, self.prop, a, alpha)
            value = drwls_mu(self.study, self.prop, model, a, alpha, EXACT).value
            corrected = drbc_mu(self.study, self.prop, model, a, alpha, EXACT).value
            self.assertAlmostEqual(value, corrected, delta=1e-8 * max(1.0, abs(value)))

    def test_ratio_covariate_is_bias_corrected_at_its_own_coefficients(self):
        fmap = FeatureMap.parse(OUTCOME_TERMS)
        for a, alpha in ((1, 0.5), (0, 0.35)):
            model = fit_picov(self.study, fmap, self.prop, a, alpha)
            value = drpicov_mu(self.study, self.prop, model, a, alpha, EXACT).value
            corrected = drbc_mu(self.study, self.prop, model, a, alpha, EXACT).value
            self.assertAlmostEqual(value, corrected, delta=1e-8 * max(1.0, abs(value)))

    def test_weighted_fits_are_bias_corrected_with_unequal_group_sizes(self):
        study = random_study(seed=12, k=20, sizes=(2, 5, 3, 6, 4))
        prop = fixed_propensity(study, gamma=[0.3, -0.6])
        fmap = FeatureMap.parse(OUTCOME_TERMS)
        for a, alpha in ((1, 0.5), (0, 0.35), (None, 0.45)):
            marginal = a is None
            for fit, estimator in ((fit_wls, drwls_mu), (fit_picov, drpicov_mu)):
                model = fit(study, fmap, prop, a, alpha, marginal=marginal)
                value = estimator(study, prop, model, a, alpha, EXACT).value
                corrected = drbc_mu(study, prop, model, a, alpha, EXACT).value
                self.assertAlmostEqual(value, corrected, delta=1e-8 * max(1.0, abs(value)), msg=(fit, a))

    def test_intercept_only_weighted_fit_is_a_weighted_mean(self):
        study = two_person_study()
        prop = fixed_propensity(study)
        model = fit_wls(study, FeatureMap.parse(['intercept']), prop, 0, 0.5)
        # a single control with outcome 2
        self.assertAlmostEqual(drwls_mu(study, prop, model, 0, 0.5, EXACT).value, 2.0, places=12)

    def test_weighted_fit_must_match_the_target(self):
        fmap = FeatureMap.parse(OUTCOME_TERMS)
        model = fit_wls(self.study, fmap, self.prop, 1, 0.5)
        with self.assertRaises(ContractError):
            drwls_mu(self.study, self.prop, model, 0, 0.5, EXACT)
        with self.assertRaises(ContractError):
            drwls_mu(self.study, self.prop, model, 1, 0.45, EXACT)
        with self.assertRaises(ContractError):
            drpicov_mu(self.study, self.prop, model, 1, 0.5, EXACT)
        with self.assertRaises(ContractError):
            drwls_mu(self.study, self.prop, fit_ols(self.study, fmap), 1, 0.5, EXACT)


class EffectTests(SimpleTestCase):
    def setUp(self):
        self.study = random_study(seed=12, k=14, n=4)
        self.prop = fixed_propensity(self.study, gamma=[0.1, 0.4])
        self.models = FittedModels(
            self.study, self.prop, FeatureMap.parse(OUTCOME_TERMS), marginal_extension=False,
        )

    def test_targets(self):
        a1, a0 = Policy(0.6), Policy(0.3)
        self.assertEqual(effect_targets(EffectRequest.direct(a1)), ((1, 0.6), (0, 0.6)))
        self.assertEqual(effect_targets(EffectRequest(EffectKind.IE, a1, a0)), ((0, 0.6), (0, 0.3)))
        self.assertEqual(effect_targets(EffectRequest(EffectKind.TE, a1, a0)), ((1, 0.6), (0, 0.3)))
        self.assertEqual(effect_targets(EffectRequest(EffectKind.OE, a1, a0)), ((None, 0.6), (None, 0.3)))

    def test_total_is_direct_plus_indirect(self):
        a1, a0 = Policy(0.6), Policy(0.3)
        for family in (Family.IPW, Family.REG, Family.DRBC, Family.DRWLS):
            de = effect(EffectRequest.direct(a1), family, self.models, EXACT)
            ie = effect(EffectRequest(EffectKind.IE, a1, a0), family, self.models, EXACT)
            te = effect(EffectRequest(EffectKind.TE, a1, a0), family, self.models, EXACT)
            self.assertAlmostEqual(te.value, de.value + ie.value, places=12)
            self.assertEqual(de.value, de.components[0].value - de.components[1].value)

    def test_equal_policies_give_zero_spillover(self):
        same = Policy(0.45)
        for kind in (EffectKind.IE, EffectKind.OE):
            for family in (Family.IPW, Family.REG, Family.DRBC):
                self.assertEqual(effect(EffectRequest(kind, same, same), family, self.models, EXACT).value, 0.0)

    def test_overall_effect_needs_the_marginal_extension(self):
        request = EffectRequest(EffectKind.OE, Policy(0.6), Policy(0.3))
        for family in (Family.DRWLS, Family.DRPICOV):
            with self.assertRaises(UnsupportedCombinationError):
                effect(request, family, self.models, EXACT)
        extended = FittedModels(
            self.study, self.prop, FeatureMap.parse(OUTCOME_TERMS), marginal_extension=True,
        )
        self.assertTrue(math.isfinite(effect(request, Family.DRWLS, extended, EXACT).value))

    def test_missing_models(self):
        with self.assertRaises(ContractError):
            mu(Family.IPW, FittedModels(self.study, outcome_map=FeatureMap.parse(OUTCOME_TERMS)), 1, 0.5)
        with self.assertRaises(ContractError):
            mu(Family.REG, FittedModels(self.study, self.prop), 1, 0.5)

    def test_group_order_does_not_matter(self):
        permuted = self.study.permuted(list(range(self.study.k))[::-1])
        model = linear_model(OUTCOME_TERMS, [1.0, 2.0, 1.5, -0.5], ('x1',))
        for family in (Family.IPW, Family.REG, Family.DRBC):
            first = mu(family, FittedModels(self.study, self.prop, outcome=model), 1, 0.5, EXACT)
            second = mu(family, FittedModels(permuted, self.prop, outcome=model), 1, 0.5, EXACT)
            self.assertEqual(first.value, second.value)

    def test_population_mean_is_exactly_rounded(self):
        values = [1e16, 1.0, -1e16, 1.0]
        self.assertEqual(population_mean(values), 0.5)
        self.assertEqual(population_mean(values[::-1]), 0.5)
