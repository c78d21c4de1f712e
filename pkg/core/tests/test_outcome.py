import dataclasses
import itertools

import numpy as np
from django.test import SimpleTestCase

from core.choices import OutcomeMode
from core.data import Study
from core.exceptions import ContractError, EmptyStratumError, SingularDesignError
from core.features import FeatureMap
from core.outcome import (
    RATIO_LABEL, OutcomeModelCache, fit_ols, fit_picov, fit_wls, normal_equation_contributions, predict,
    solve_least_squares,
)

from .factories import OUTCOME_TERMS, fixed_propensity, group, random_study


class LeastSquaresTests(SimpleTestCase):
    def test_matches_lstsq(self):
        rng = np.random.default_rng(1)
        design = np.column_stack([np.ones(20), rng.normal(size=(20, 2))])
        response = rng.normal(size=20)
        beta, rank = solve_least_squares(design, response, ['a', 'b', 'c'])
        np.testing.assert_allclose(beta, np.linalg.lstsq(design, response, rcond=None)[0], atol=1e-12)
        self.assertEqual(rank, 3)

    def test_rank_deficiency_names_the_term(self):
        x = np.arange(6.0)
        design = np.column_stack([np.ones(6), x, 3 * x])
        with self.assertRaises(SingularDesignError) as ctx:
            solve_least_squares(design, x, ['intercept', 'x', 'triple'])
        self.assertEqual(len(ctx.exception.terms), 1)
        self.assertIn(ctx.exception.terms[0], ('x', 'triple'))

    def test_hand_weighted_solution(self):
        # one group of three: y = b0 + b1 x with weights (1, 2, 1)
        design = np.array([[1.0, 0.0], [1.0, 1.0], [1.0, 2.0]])
        response = np.array([1.0, 2.0, 4.0])
        beta, _ = solve_least_squares(design, response, ['intercept', 'x'], weights=np.array([1.0, 2.0, 1.0]))
        # normal equations: [[4, 4], [4, 6]] b = [9, 12]
        np.testing.assert_allclose(beta, [0.75, 1.5], atol=1e-10)


class OrdinaryFitTests(SimpleTestCase):
    def setUp(self):
        self.study = random_study(seed=2, k=15, n=4)
        self.fmap = FeatureMap.parse(OUTCOME_TERMS)

    def test_recovers_coefficients_without_noise(self):
        study = random_study(seed=2, k=15, n=4, noise=0.0)
        model = fit_ols(study, self.fmap)
        np.testing.assert_allclose(model.beta, [1.0, 2.0, 1.5, -0.5], atol=1e-10)
        self.assertEqual(model.mode, OutcomeMode.OLS)
        self.assertTrue(model.is_affine)

    def test_normal_equations_vanish(self):
        model = fit_ols(self.study, self.fmap)
        total = normal_equation_contributions(model, self.study).sum(axis=0)
        np.testing.assert_allclose(total, 0.0, atol=1e-9)

    def test_predict_matches_design(self):
        model = fit_ols(self.study, self.fmap)
        g = self.study.groups[0]
        vector = np.array([1, 1, 0, 0])
        design = self.fmap.design(g, ('x1',), vectors=vector[None, :])[0]
        self.assertAlmostEqual(predict(model, g, vector, 2), float(design[2] @ model.beta))
        with self.assertRaises(ValueError):
            predict(model, g, [1, 0], 0)


class WeightedFitTests(SimpleTestCase):
    def setUp(self):
        self.study = random_study(seed=6, k=20, n=4)
        self.fmap = FeatureMap.parse(OUTCOME_TERMS)
        self.prop = fixed_propensity(self.study, gamma=[0.2, 0.8], log_sigma=np.log(0.7), estimate_sigma=True)

    def test_constant_weights_reduce_to_stratum_least_squares(self):
        flat = fixed_propensity(self.study)
        model = fit_wls(self.study, self.fmap, flat, 1, 0.5)
        restricted = self.fmap.restricted(1)
        rows = [
            (restricted.design(g, ('x1',))[g.treatments == 1], g.outcomes[g.treatments == 1])
            for g in self.study.groups
        ]
        design = np.vstack([r[0] for r in rows])
        response = np.concatenate([r[1] for r in rows])
        np.testing.assert_allclose(model.beta, np.linalg.lstsq(design, response, rcond=None)[0], atol=1e-8)
        self.assertEqual(model.labels, ['intercept', 'proportion', 'x1'])

    def test_weighted_residual_sum_vanishes(self):
        for fit in (fit_wls, fit_picov):
            for a in (0, 1):
                model = fit(self.study, self.fmap, self.prop, a, 0.4)
                info = model.fit_info
                self.assertLess(abs(info.weighted_residual_sum) / info.weighted_residual_scale, 1e-8)
                total = normal_equation_contributions(model, self.study).sum(axis=0)
                np.testing.assert_allclose(total, 0.0, atol=1e-8)

    def test_picov_adds_the_ratio_column(self):
        model = fit_picov(self.study, self.fmap, self.prop, 0, 0.4)
        self.assertEqual(model.labels[-1], RATIO_LABEL)
        self.assertEqual(len(model.beta), model.feature_map.dimension + 1)
        self.assertFalse(model.is_affine)
        self.assertFalse(model.fit_info.ratio_collinear)

    def test_picov_with_constant_ratio(self):
        with self.assertLogs('core.outcome', 'WARNING'):
            model = fit_picov(self.study, self.fmap, fixed_propensity(self.study), 1, 0.5)
        self.assertTrue(model.fit_info.ratio_collinear)
        self.assertEqual(model.beta[-1], 0.0)

    def test_stratified_models_refuse_other_targets(self):
        model = fit_wls(self.study, self.fmap, self.prop, 1, 0.4)
        model.check_target(1, 0.4)
        with self.assertRaises(ContractError):
            model.check_target(0, 0.4)
        with self.assertRaises(ContractError):
            model.check_target(1, 0.5)
        with self.assertRaises(ContractError):
            model.predict_draws(self.study.groups[0], self.study.groups[0].treatments, own=0)

    def test_empty_stratum(self):
        treated = Study(tuple(
            group(g.group_id, g.covariates, np.ones(g.size, dtype=int), g.outcomes) for g in self.study.groups
        ), ('x1',))
        with self.assertRaises(EmptyStratumError):
            fit_wls(treated, self.fmap, self.prop, 0, 0.5)

    def test_marginal_variant_uses_everyone(self):
        model = fit_wls(self.study, self.fmap, self.prop, None, 0.4, marginal=True)
        self.assertEqual(model.fit_info.n_used, self.study.n_individuals)
        model.check_target(None, 0.4)

    def test_cache_reuses_fits(self):
        cache = OutcomeModelCache(self.study, self.fmap)
        first = cache.get(OutcomeMode.WLS, self.prop, 1, 0.4)
        self.assertIs(cache.get(OutcomeMode.WLS, self.prop, 1, 0.4), first)
        self.assertIsNot(cache.get(OutcomeMode.WLS, self.prop, 1, 0.5), first)
        self.assertIsNot(cache.get(OutcomeMode.PICOV, self.prop, 1, 0.4), first)


class DesignInvariantTests(SimpleTestCase):
    def test_duplicated_covariate_is_singular(self):
        study = random_study(seed=2, k=8, n=4)
        duplicated = Study(tuple(
            group(g.group_id, np.column_stack([g.covariates[:, 0], g.covariates[:, 0]]), g.treatments, g.outcomes)
            for g in study.groups
        ), ('x1', 'x2'))
        with self.assertRaises(SingularDesignError) as ctx:
            fit_ols(duplicated, FeatureMap.parse(['intercept', 'x1', 'x2']))
        self.assertEqual(len(ctx.exception.terms), 1)
        self.assertIn(ctx.exception.terms[0], ('x1', 'x2'))

    def test_ratio_coefficient_vanishes_without_noise(self):
        study = random_study(seed=6, k=20, n=4, noise=0.0)
        prop = fixed_propensity(study, gamma=[0.2, 0.8], log_sigma=np.log(0.7), estimate_sigma=True)
        fmap = FeatureMap.parse(OUTCOME_TERMS)
        for a in (0, 1):
            model = fit_picov(study, fmap, prop, a, 0.4)
            self.assertFalse(model.fit_info.ratio_collinear)
            self.assertAlmostEqual(model.beta[-1], 0.0, delta=1e-6)
            g = study.groups[1]
            base = dataclasses.replace(model, beta=np.append(model.beta[:-1], 0.0))
            np.testing.assert_allclose(model.predict_observed(g), base.predict_observed(g), atol=1e-6)

    def test_affine_predictions_satisfy_the_lattice_identity(self):
        study = random_study(seed=7, k=10, n=5)
        model = fit_ols(study, FeatureMap.parse(OUTCOME_TERMS + ['neighbor[1]']))
        self.assertTrue(model.is_affine)
        g = study.groups[3]
        rng = np.random.default_rng(7)
        for _ in range(20):
            positions = rng.permutation(g.size)
            low = np.zeros(g.size, dtype=int)
            first, second = low.copy(), low.copy()
            first[positions[:2]] = 1
            second[positions[2:4]] = 1
            high = first | second
            for j in range(g.size):
                self.assertAlmostEqual(
                    predict(model, g, first, j) + predict(model, g, second, j),
                    predict(model, g, low, j) + predict(model, g, high, j),
                    places=10,
                )

    def test_expected_prediction_is_the_policy_average(self):
        study = random_study(seed=7, k=10, n=4)
        model = fit_ols(study, FeatureMap.parse(OUTCOME_TERMS + ['neighbor[0]']))
        g, alpha = study.groups[2], 0.3
        for own in (0, 1):
            expected = model.expected_predictions(g, alpha, own)
            for j in range(g.size):
                total = 0.0
                for others in itertools.product((0, 1), repeat=g.size - 1):
                    vector = np.insert(np.array(others), j, own)
                    weight = alpha ** sum(others) * (1 - alpha) ** (g.size - 1 - sum(others))
                    total += weight * predict(model, g, vector, j)
                self.assertAlmostEqual(expected[j], total, places=10)
