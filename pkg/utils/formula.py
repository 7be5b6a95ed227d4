# utils/formula.py
"""
Mini-langage de formules (`weight ~ tw + grp + tw:grp3`) et matrices de
plan d'expérience des effets fixes, avec codage « traitement » (premier
niveau de groupe en référence).
"""

import re
import logging
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import linalg

from .config import GROUP_COLUMN, ID_COLUMN, RANK_TOL, TIME_COLUMN
from .data_loader import LongDataset
from .errors import LayoutMismatch, ParseError, RankDeficient, UnknownOperator, UnknownVariable

INTERCEPT_NAME = "(Intercept)"
_INDICATOR_PATTERN = re.compile(rf"^{GROUP_COLUMN}(\d+)$")


# --- Arbre syntaxique ---

@dataclass(frozen=True)
class Term:
    """Terme de la formule : () = ordonnée à l'origine, (a,) = effet principal, (a, b) = interaction."""
    factors: Tuple[str, ...]

    @property
    def is_intercept(self) -> bool:
        return not self.factors

    @property
    def label(self) -> str:
        return ":".join(self.factors) if self.factors else "1"


INTERCEPT = Term(())


@dataclass(frozen=True)
class FormulaAst:
    response: str
    terms: Tuple[Term, ...]

    def __str__(self) -> str:
        return format_formula(self)


@dataclass(frozen=True)
class _Token:
    kind: str        # NAME, ONE, OP
    text: str
    offset: int      # position en octets dans la chaîne d'origine


_TOKEN_RE = re.compile(r"\s*(?:(?P<name>[A-Za-z_.][A-Za-z0-9_.]*)|(?P<number>\d+)|(?P<op>[~+:*]))")


def _tokenize(text: str) -> List[_Token]:
    tokens: List[_Token] = []
    position = 0
    while position < len(text):
        if text[position].isspace():
            position += 1
            continue
        match = _TOKEN_RE.match(text, position)
        offset = len(text[:position].encode("utf-8"))
        if match is None or match.end() == position:
            raise UnknownOperator(text[position], offset)
        start = match.start(match.lastgroup)
        offset = len(text[:start].encode("utf-8"))
        if match.lastgroup == "name":
            tokens.append(_Token("NAME", match.group("name"), offset))
        elif match.lastgroup == "number":
            if match.group("number") != "1":
                raise ParseError(
                    f"Constante '{match.group('number')}' non prise en charge "
                    "(seul '1' désigne l'ordonnée à l'origine)", offset)
            tokens.append(_Token("ONE", "1", offset))
        else:
            tokens.append(_Token("OP", match.group("op"), offset))
        position = match.end()
    return tokens


def parse_formula(text: str) -> FormulaAst:
    """
    Analyse une formule `réponse ~ terme (+ terme)*`.

    Un terme est un nom, `nom:nom` ou `nom*nom` ; `a*b` est développé en
    `a + b + a:b`, les doublons sont fusionnés et l'ordonnée à l'origine est
    toujours présente en tête.
    """
    if not text or not text.strip():
        raise ParseError("Formule vide", 0)
    tokens = _tokenize(text)
    end_offset = len(text.encode("utf-8"))
    position = 0

    def peek() -> Optional[_Token]:
        return tokens[position] if position < len(tokens) else None

    first = peek()
    if first is None or first.kind != "NAME":
        raise ParseError("Variable réponse attendue avant '~'", first.offset if first else 0)
    response = first.text
    position += 1
    tilde = peek()
    if tilde is None or tilde.text != "~":
        raise ParseError("'~' manquant après la variable réponse", tilde.offset if tilde else end_offset)
    position += 1
    if peek() is None:
        raise ParseError("Membre de droite vide", end_offset)

    raw_terms: List[Term] = []
    while True:
        token = peek()
        if token is None:
            raise ParseError("Terme vide après '+'", end_offset)
        if token.kind == "ONE":
            position += 1
            nxt = peek()
            if nxt is not None and nxt.text in (":", "*"):
                raise ParseError("'1' ne peut pas entrer dans une interaction", nxt.offset)
            raw_terms.append(INTERCEPT)
        elif token.kind == "NAME":
            position += 1
            operator = peek()
            if operator is not None and operator.text in (":", "*"):
                position += 1
                second = peek()
                if second is None or second.kind != "NAME":
                    raise ParseError(f"Opérande manquant après '{operator.text}'",
                                     second.offset if second else end_offset)
                position += 1
                if second.text == token.text:
                    raise ParseError(f"Interaction de '{token.text}' avec elle-même", second.offset)
                extra = peek()
                if extra is not None and extra.text in (":", "*"):
                    raise ParseError("Interactions d'ordre supérieur à deux non prises en charge",
                                     extra.offset)
                pair = Term((token.text, second.text))
                if operator.text == "*":
                    raw_terms.extend([Term((token.text,)), Term((second.text,)), pair])
                else:
                    raw_terms.append(pair)
            else:
                raw_terms.append(Term((token.text,)))
        else:
            raise ParseError(f"Terme vide avant '{token.text}'", token.offset)

        separator = peek()
        if separator is None:
            break
        if separator.text != "+":
            raise ParseError(f"'+' attendu, '{separator.text}' trouvé", separator.offset)
        position += 1

    terms: List[Term] = [INTERCEPT]
    seen = {frozenset()}
    for term in raw_terms:
        key = frozenset(term.factors)
        if key not in seen:
            seen.add(key)
            terms.append(term)
    return FormulaAst(response=response, terms=tuple(terms))


def format_formula(ast: FormulaAst) -> str:
    """Réécrit la formule ; `parse_formula(format_formula(ast)) == ast`."""
    rhs = [term.label for term in ast.terms if not term.is_intercept]
    return f"{ast.response} ~ {' + '.join(rhs) if rhs else '1'}"


# --- Plan d'expérience ---

class Scope(str, Enum):
    OUTER = "outer"      # constante au sein de chaque souris
    INNER = "inner"


@dataclass(frozen=True, eq=False)
class Cluster:
    mouse_id: str
    group: int
    y: np.ndarray
    X: np.ndarray
    t: np.ndarray


@dataclass(frozen=True, eq=False)
class DesignSet:
    formula: FormulaAst
    column_names: Tuple[str, ...]
    clusters: Tuple[Cluster, ...]
    column_scope: Tuple[Scope, ...]
    group_levels: Tuple[int, ...]

    @property
    def n_columns(self) -> int:
        return len(self.column_names)

    @property
    def n_obs(self) -> int:
        return sum(len(c.y) for c in self.clusters)

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    @property
    def q_outer(self) -> int:
        return sum(1 for s in self.column_scope if s is Scope.OUTER)

    @property
    def q_inner(self) -> int:
        return sum(1 for s in self.column_scope if s is Scope.INNER)

    def pooled_X(self) -> np.ndarray:
        return np.vstack([c.X for c in self.clusters])

    def pooled_y(self) -> np.ndarray:
        return np.concatenate([c.y for c in self.clusters])


def _resolve_variable(name: str, frame: pd.DataFrame, levels: Sequence[int]) -> List[Tuple[str, np.ndarray]]:
    """Colonnes (nom, valeurs) engendrées par une variable : facteur développé ou variable numérique."""
    if name == GROUP_COLUMN:
        groups = frame[GROUP_COLUMN].to_numpy()
        return [(f"{GROUP_COLUMN}{level}", (groups == level).astype(float)) for level in levels[1:]]
    indicator = _INDICATOR_PATTERN.match(name)
    if indicator and int(indicator.group(1)) in levels and name not in frame.columns:
        level = int(indicator.group(1))
        return [(name, (frame[GROUP_COLUMN].to_numpy() == level).astype(float))]
    if name in frame.columns and name != ID_COLUMN and pd.api.types.is_numeric_dtype(frame[name]):
        return [(name, frame[name].to_numpy(dtype=float))]
    raise UnknownVariable(f"Variable inconnue dans la formule: '{name}'")


def _scope_of(values: np.ndarray, starts: np.ndarray, stops: np.ndarray) -> Scope:
    for start, stop in zip(starts, stops):
        block = values[start:stop]
        if np.any(block != block[0]):
            return Scope.INNER
    return Scope.OUTER


def build_design(ast: FormulaAst, data: LongDataset) -> DesignSet:
    """Construit les matrices X_i par souris, dans l'ordre des termes de la formule."""
    frame = data.frame
    if ast.response not in frame.columns or ast.response == ID_COLUMN \
            or not pd.api.types.is_numeric_dtype(frame[ast.response]):
        raise UnknownVariable(f"Variable réponse inconnue: '{ast.response}'")
    levels = data.group_levels()

    columns: List[Tuple[str, np.ndarray]] = []
    for term in ast.terms:
        if term.is_intercept:
            columns.append((INTERCEPT_NAME, np.ones(len(frame))))
            continue
        expanded = [_resolve_variable(name, frame, levels) for name in term.factors]
        if len(expanded) == 1:
            columns.extend(expanded[0])
        else:
            for left_name, left in expanded[0]:
                for right_name, right in expanded[1]:
                    columns.append((f"{left_name}:{right_name}", left * right))

    names = tuple(name for name, _ in columns)
    X = np.column_stack([values for _, values in columns])
    n_obs, p = X.shape
    if n_obs < p:
        raise RankDeficient(f"Plus de colonnes ({p}) que d'observations ({n_obs})")
    R, _ = linalg.qr(X, mode="r", pivoting=True)
    diagonal = np.abs(np.diag(R))
    if diagonal.size == 0 or diagonal.min() <= RANK_TOL * diagonal.max():
        raise RankDeficient(f"Matrice X de rang incomplet (colonnes: {', '.join(names)})")

    ids = frame[ID_COLUMN].to_numpy()
    _, starts = np.unique(ids, return_index=True)
    starts = np.sort(starts)
    stops = np.append(starts[1:], len(ids))
    y = frame[ast.response].to_numpy(dtype=float)
    t = frame[TIME_COLUMN].to_numpy(dtype=float)
    groups = frame[GROUP_COLUMN].to_numpy()

    clusters = tuple(
        Cluster(mouse_id=str(ids[start]), group=int(groups[start]), y=y[start:stop].copy(),
                X=X[start:stop].copy(), t=t[start:stop].copy())
        for start, stop in zip(starts, stops)
    )
    scope = tuple(_scope_of(X[:, j], starts, stops) for j in range(p))
    logging.info(f"Plan construit: {p} colonnes ({', '.join(names)}), {len(clusters)} souris")
    return DesignSet(formula=ast, column_names=names, clusters=clusters,
                     column_scope=scope, group_levels=tuple(levels))


def evaluate_row(column_names: Sequence[str], group: int, t: float) -> np.ndarray:
    """
    Ligne du plan pour une souris du groupe `group` à la semaine `t`.

    Chaque colonne est recalculée à partir de son nom ; une colonne qui ne
    dépend pas seulement du groupe et de la semaine lève LayoutMismatch.
    """
    row = np.empty(len(column_names))
    for j, name in enumerate(column_names):
        value = 1.0
        if name != INTERCEPT_NAME:
            for factor in name.split(":"):
                if factor == TIME_COLUMN:
                    value *= float(t)
                    continue
                indicator = _INDICATOR_PATTERN.match(factor)
                if indicator is None:
                    raise LayoutMismatch(f"Colonne '{name}' non évaluable à partir du groupe et de la semaine")
                value *= 1.0 if int(indicator.group(1)) == int(group) else 0.0
        row[j] = value
    return row
