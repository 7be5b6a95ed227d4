# tests/test_formula.py
import unittest

import numpy as np

from utils.config import MODEL_FORMULAS
from utils.errors import LayoutMismatch, ParseError, RankDeficient, UnknownOperator, UnknownVariable
from utils.formula import Scope, build_design, evaluate_row, format_formula, parse_formula
from tests.helpers import long_dataset, tiny_dataset


class TestParseFormula(unittest.TestCase):

    def test_model_three_terms(self):
        ast = parse_formula("weight ~ tw + grp + tw:grp3")
        self.assertEqual(ast.response, "weight")
        self.assertEqual([t.label for t in ast.terms], ["1", "tw", "grp", "tw:grp3"])

    def test_star_expands_to_main_effects_and_interaction(self):
        ast = parse_formula("weight ~ tw * grp")
        self.assertEqual([t.label for t in ast.terms], ["1", "tw", "grp", "tw:grp"])

    def test_duplicate_terms_are_merged(self):
        ast = parse_formula("weight ~ tw + tw + grp:tw + tw:grp")
        self.assertEqual([t.label for t in ast.terms], ["1", "tw", "grp:tw"])

    def test_explicit_intercept(self):
        ast = parse_formula("weight ~ 1")
        self.assertEqual(len(ast.terms), 1)
        self.assertTrue(ast.terms[0].is_intercept)

    def test_print_parse_fixed_point(self):
        for text in list(MODEL_FORMULAS.values()) + ["weight ~ 1", "weight ~ grp3 + tw"]:
            ast = parse_formula(text)
            self.assertEqual(parse_formula(format_formula(ast)), ast)

    def test_syntax_errors_carry_offset(self):
        cases = {
            "weight ~": 8,
            "weight tw": 7,
            "weight ~ tw +": 13,
            "weight ~ tw ~ grp": 12,
        }
        for text, offset in cases.items():
            with self.subTest(text=text):
                with self.assertRaises(ParseError) as ctx:
                    parse_formula(text)
                self.assertEqual(ctx.exception.offset, offset)

    def test_unknown_operator(self):
        with self.assertRaises(UnknownOperator) as ctx:
            parse_formula("weight ~ tw - grp")
        self.assertEqual(ctx.exception.offset, 12)

    def test_three_way_interaction_rejected(self):
        with self.assertRaises(ParseError):
            parse_formula("weight ~ tw:grp:grp3")

    def test_empty_formula(self):
        with self.assertRaises(ParseError):
            parse_formula("   ")


class TestBuildDesign(unittest.TestCase):

    def setUp(self):
        self.data = tiny_dataset()

    def test_model_three_columns_and_scope(self):
        ds = build_design(parse_formula(MODEL_FORMULAS["m3"]), self.data)
        self.assertEqual(ds.column_names, ("(Intercept)", "tw", "grp2", "grp3", "tw:grp3"))
        self.assertEqual(ds.column_scope,
                         (Scope.OUTER, Scope.INNER, Scope.OUTER, Scope.OUTER, Scope.INNER))
        self.assertEqual((ds.q_outer, ds.q_inner), (3, 2))
        self.assertEqual(ds.n_clusters, 5)
        self.assertEqual(ds.n_obs, 20)

    def test_model_two_columns(self):
        ds = build_design(parse_formula(MODEL_FORMULAS["m2"]), self.data)
        self.assertEqual(ds.column_names,
                         ("(Intercept)", "tw", "grp2", "grp3", "tw:grp2", "tw:grp3"))

    def test_rows_match_evaluate_row(self):
        ds = build_design(parse_formula(MODEL_FORMULAS["m3"]), self.data)
        for cluster in ds.clusters:
            for t, row in zip(cluster.t, cluster.X):
                np.testing.assert_array_equal(row, evaluate_row(ds.column_names, cluster.group, t))

    def test_unknown_variable(self):
        with self.assertRaises(UnknownVariable):
            build_design(parse_formula("weight ~ age"), self.data)

    def test_rank_deficient(self):
        data = long_dataset([("A", 1, t, 20.0 + t) for t in (1, 2, 3)] +
                            [("B", 1, t, 21.0 + t) for t in (1, 2, 3)])
        with self.assertRaises(RankDeficient):
            build_design(parse_formula("weight ~ tw + grp1"), data)

    def test_evaluate_row_rejects_unknown_column(self):
        with self.assertRaises(LayoutMismatch):
            evaluate_row(("(Intercept)", "age"), 1, 3)


if __name__ == '__main__':
    unittest.main()
