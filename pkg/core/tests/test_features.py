import itertools

import numpy as np
from django.test import SimpleTestCase
from hypothesis import given, settings
from hypothesis import strategies as st

from core.exceptions import ConfigError
from core.features import FeatureMap, parse_factor
from core.policy import log_pi_rows

from .factories import group

ALL_TERMS = ['intercept', 'treatment', 'proportion', 'neighbor_sum', 'neighbor[0]', 'abs(x1)', 'treatment*x1']


class FeatureMapParsingTests(SimpleTestCase):
    def test_labels_round_trip(self):
        fmap = FeatureMap.parse('intercept, treatment, abs(x1)*x2')
        self.assertEqual(fmap.labels, ['intercept', 'treatment', 'abs(x1)*x2'])
        self.assertEqual(fmap.dimension, 3)
        self.assertTrue(fmap.uses_treatment)

    def test_exactly_one_intercept(self):
        with self.assertRaises(ConfigError):
            FeatureMap.parse(['x1'])
        with self.assertRaises(ConfigError):
            FeatureMap.parse(['intercept', '1', 'x1'])

    def test_duplicate_terms(self):
        with self.assertRaises(ConfigError):
            FeatureMap.parse(['intercept', 'x1', 'x1'])

    def test_unparseable_factor(self):
        with self.assertRaises(ConfigError):
            parse_factor('log(x1)')

    def test_affine_in_neighbors(self):
        self.assertTrue(FeatureMap.parse(['intercept', 'treatment', 'proportion*x1']).affine_in_neighbors)
        self.assertFalse(FeatureMap.parse(['intercept', 'treatment*proportion']).affine_in_neighbors)

    def test_unknown_covariates(self):
        with self.assertRaises(ConfigError):
            FeatureMap.parse(['intercept', 'abs(age)']).check_names(('x1',))


class DesignTests(SimpleTestCase):
    def setUp(self):
        self.group = group('g', [[1.0], [-2.0], [3.0]], [1, 0, 1], [0.0, 0.0, 0.0])
        self.fmap = FeatureMap.parse(ALL_TERMS)

    def test_observed_design_by_hand(self):
        design = self.fmap.design(self.group, ('x1',))
        expected = np.array([
            # 1, A_j, p, neighbors treated, neighbor[0], |x|, A_j x
            [1, 1, 2 / 3, 1, 0, 1, 1],
            [1, 0, 2 / 3, 2, 1, 2, 0],
            [1, 1, 2 / 3, 1, 1, 3, 3],
        ])
        np.testing.assert_allclose(design, expected)

    def test_own_override(self):
        design = self.fmap.design(self.group, ('x1',), vectors=self.group.treatments[None, :], own=0)[0]
        np.testing.assert_allclose(design[:, 1], 0.0)
        np.testing.assert_allclose(design[:, 2], [1 / 3, 2 / 3, 1 / 3])
        np.testing.assert_allclose(design[:, 3], [1, 2, 1])

    def test_neighbor_index_past_the_group_is_zero(self):
        fmap = FeatureMap.parse(['intercept', 'neighbor[5]'])
        np.testing.assert_allclose(fmap.design(self.group, ('x1',))[:, 1], 0.0)

    def test_restricted_to_control_drops_own_treatment_terms(self):
        restricted = self.fmap.restricted(0)
        self.assertEqual(
            restricted.labels, ['intercept', 'proportion', 'neighbor_sum', 'neighbor[0]', 'abs(x1)'],
        )
        self.assertEqual(restricted.own, 0)

    def test_restricted_to_treated_removes_the_factor(self):
        fmap = FeatureMap.parse(['intercept', 'treatment', 'x1', 'treatment*x1', 'proportion'])
        restricted = fmap.restricted(1)
        self.assertEqual(restricted.labels, ['intercept', 'x1', 'proportion'])


class ExpectedFeatureTests(SimpleTestCase):
    @settings(max_examples=40, deadline=None)
    @given(
        n=st.integers(min_value=1, max_value=6),
        alpha=st.floats(min_value=0.05, max_value=0.95),
        own=st.sampled_from([None, 0, 1]),
    )
    def test_expected_treatment_part_matches_enumeration(self, n, alpha, own):
        fmap = FeatureMap.parse(['intercept', 'treatment', 'proportion', 'neighbor_sum', 'neighbor[1]'])
        vectors = np.array(list(itertools.product((0, 1), repeat=n)), dtype=float)
        weights = np.exp(log_pi_rows(vectors, alpha))
        enumerated = np.einsum('b,bnd->nd', weights, fmap.treatment_part(vectors, own))
        np.testing.assert_allclose(fmap.expected_treatment_part(n, alpha, own), enumerated, atol=1e-12)

    def test_non_affine_maps_have_no_shortcut(self):
        fmap = FeatureMap.parse(['intercept', 'treatment*proportion'])
        with self.assertRaises(ValueError):
            fmap.expected_treatment_part(3, 0.5)
