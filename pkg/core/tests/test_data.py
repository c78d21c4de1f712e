import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from core.choices import EffectKind
from core.data import (
    EffectRequest, GroupRecord, Policy, Study, StudySchema, load_study, save_study, validate_study,
)
from core.exceptions import (
    ConfigError, DataError, ParseError, SchemaError, StudyValidationError,
)

from .factories import group, random_study


class GroupRecordTests(SimpleTestCase):
    def test_one_dimensional_covariates_become_a_column(self):
        record = GroupRecord('a', [0.5, 1.5], [1, 0], [2.0, 3.0])
        self.assertEqual(record.covariates.shape, (2, 1))
        self.assertEqual(record.size, 2)

    def test_arrays_are_read_only(self):
        record = GroupRecord('a', [[0.5], [1.5]], [1, 0], [2.0, 3.0])
        with self.assertRaises(ValueError):
            record.outcomes[0] = 10.0

    def test_equality_compares_values(self):
        first = GroupRecord('a', [[0.5]], [1], [2.0])
        self.assertEqual(first, GroupRecord('a', [[0.5]], [1], [2.0]))
        self.assertNotEqual(first, GroupRecord('a', [[0.5]], [0], [2.0]))


class StudyValidationTests(SimpleTestCase):
    def test_valid_study_passes(self):
        validate_study(random_study(k=3, n=2))

    def test_every_violation_is_reported(self):
        study = Study((
            group('a', [[0.0]], [1], [1.0]),
            group('a', [[1.0]], [2], [1.0]),
            group('b', [[np.nan]], [0], [1.0]),
        ), ('x1',))
        with self.assertRaises(StudyValidationError) as ctx:
            validate_study(study)
        messages = ctx.exception.messages
        self.assertEqual(len(messages), 3)
        self.assertTrue(any('Duplicate' in m for m in messages))
        self.assertTrue(any('non-binary' in m for m in messages))
        self.assertTrue(any('non-finite' in m for m in messages))

    def test_empty_study_is_invalid(self):
        with self.assertRaises(StudyValidationError):
            validate_study(Study((), ()))

    def test_covariate_dimension_must_match_names(self):
        study = Study((group('a', [[0.0, 1.0]], [1], [1.0]),), ('x1',))
        with self.assertRaises(StudyValidationError) as ctx:
            validate_study(study)
        self.assertIn('expected 1', ctx.exception.messages[0])

    def test_permuted_keeps_groups(self):
        study = random_study(k=3, n=2)
        permuted = study.permuted([2, 0, 1])
        self.assertEqual(permuted.groups[0], study.groups[2])
        self.assertEqual(permuted.n_individuals, study.n_individuals)

    def test_unknown_covariate(self):
        with self.assertRaises(ConfigError):
            random_study(k=2, n=2).covariate_index('age')


class PolicyTests(SimpleTestCase):
    def test_alpha_must_be_strictly_inside_the_unit_interval(self):
        for alpha in (0, 1, -0.2, 1.5):
            with self.assertRaises(ConfigError):
                Policy(alpha)
        self.assertEqual(float(Policy(0.3)), 0.3)

    def test_direct_effect_takes_one_policy(self):
        request = EffectRequest.direct(Policy(0.4))
        self.assertEqual(request.kind, EffectKind.DE)
        with self.assertRaises(ConfigError):
            EffectRequest(EffectKind.DE, Policy(0.4), Policy(0.5))
        EffectRequest(EffectKind.IE, Policy(0.4), Policy(0.5))


class CsvTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.dir = Path(self.tmp.name)

    def write(self, text: str) -> Path:
        path = self.dir / 'study.csv'
        path.write_text(text, encoding='utf-8')
        return path

    def test_load_groups_rows_in_file_order(self):
        path = self.write(
            'group,treatment,outcome,x1\n'
            'b,1,2.5,0.1\n'
            'a,0,1.0,0.2\n'
            'b,0,3.5,0.3\n'
        )
        study = load_study(path)
        self.assertEqual([g.group_id for g in study.groups], ['b', 'a'])
        self.assertEqual(study.covariate_names, ('x1',))
        np.testing.assert_array_equal(study.groups[0].treatments, [1, 0])
        np.testing.assert_array_equal(study.groups[0].covariates[:, 0], [0.1, 0.3])

    def test_schema_selects_columns(self):
        path = self.write('cluster,vaccinated,sick,age,other\nc1,1,0,30,9\nc1,0,1,40,9\n')
        schema = StudySchema(group='cluster', treatment='vaccinated', outcome='sick', covariates=('age',))
        study = load_study(path, schema)
        self.assertEqual(study.covariate_names, ('age',))
        self.assertEqual(study.k, 1)

    def test_missing_column(self):
        path = self.write('group,outcome\na,1.0\n')
        with self.assertRaises(SchemaError):
            load_study(path)

    def test_non_numeric_value_names_the_row(self):
        path = self.write('group,treatment,outcome,x1\na,1,2.0,0.1\na,0,oops,0.2\n')
        with self.assertRaises(ParseError) as ctx:
            load_study(path)
        self.assertEqual(ctx.exception.row, 2)
        self.assertIn('row 2', str(ctx.exception))

    def test_non_binary_treatment_lists_each_row(self):
        path = self.write('group,treatment,outcome\na,1,2.0\na,2,1.0\nb,0.5,1.0\n')
        with self.assertRaises(StudyValidationError) as ctx:
            load_study(path)
        self.assertEqual(len(ctx.exception.messages), 2)
        self.assertIn('(row 2)', ctx.exception.messages[0])
        self.assertIn('(row 3)', ctx.exception.messages[1])

    def test_missing_file(self):
        with self.assertRaises(DataError):
            load_study(self.dir / 'absent.csv')

    def test_header_only_file_is_an_empty_study(self):
        path = self.write('group,treatment,outcome\n')
        self.assertEqual(load_study(path, validate=False).k, 0)
        with self.assertRaises(StudyValidationError):
            load_study(path)

    def test_save_then_load_is_exact(self):
        study = random_study(seed=3, k=4, n=3)
        path = self.dir / 'saved.csv'
        save_study(study, path)
        self.assertEqual(load_study(path), study)
