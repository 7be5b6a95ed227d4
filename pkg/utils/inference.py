# utils/inference.py
"""
Tests du rapport de vraisemblance, tableaux de comparaison et moteur de
contrastes c'β̂ (différences hebdomadaires, gains sur l'étude, moyennes de groupe).
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from .config import CI_LEVEL, FIRST_WEEK, GROUP_COLUMN, GROUP_LABELS, LAST_WEEK, STRUCTURE_SHORT, TIME_COLUMN
from .covstruct import RandomIntercept, icc
from .data_loader import group_week_means
from .engine import FittedModel, Method
from .errors import (
    DegenerateVariance, LayoutMismatch, MethodMismatch, NotNested, UnknownGroup, ZeroContrast
)
from .formula import Scope, evaluate_row

WEEKLY_COLUMNS = ["contrast_label", "week", "Estimate", "Std_Error", "Lower_95CI", "Upper_95CI", "p_value"]
GAINS_COLUMNS = ["Group", "Estimate", "Std_Error", "Lower_95CI", "Upper_95CI"]
COMPARE_COLUMNS = ["Model", "AIC", "BIC", "logLik", "k"]
COEFFICIENT_COLUMNS = ["Term", "Estimate", "Std_Error", "Lower_95CI", "Upper_95CI", "p_value"]


@dataclass(frozen=True, eq=False)
class Contrast:
    label: str
    c: np.ndarray
    week: Optional[float] = None


@dataclass(frozen=True)
class ContrastResult:
    label: str
    estimate: float
    se: float
    df: int
    ci_lo: float
    ci_hi: float
    p: float
    week: Optional[float] = None


@dataclass(frozen=True)
class LrtResult:
    stat: float
    df: int
    p: float
    reduced: str = ""
    full: str = ""
    boundary: bool = False      # référence χ² anticonservatrice


# --- Tests du rapport de vraisemblance ---

def lrt_from_logliks(loglik_reduced: float, loglik_full: float, df: int,
                     reduced: str = "", full: str = "", boundary: bool = False) -> LrtResult:
    raw = 2.0 * (loglik_full - loglik_reduced)
    if raw < -1e-6:
        logging.warning(f"Statistique du rapport de vraisemblance négative ({raw:.6g}): "
                        "modèles non emboîtés ou ajustement non convergé")
    stat = max(raw, 0.0)
    p = float(stats.chi2.sf(stat, df)) if df > 0 else 1.0
    return LrtResult(stat=stat, df=df, p=p, reduced=reduced, full=full, boundary=boundary)


def _same_model(a: FittedModel, b: FittedModel) -> bool:
    return (a is b) or (a.spec == b.spec and a.fingerprint == b.fingerprint and a.loglik == b.loglik)


def lrt(reduced: FittedModel, full: FittedModel) -> LrtResult:
    """Test du rapport de vraisemblance entre deux ajustements ML emboîtés sur les mêmes données."""
    if reduced.spec.method is not Method.ML or full.spec.method is not Method.ML:
        raise MethodMismatch("Le test du rapport de vraisemblance exige deux ajustements ML")
    if reduced.fingerprint != full.fingerprint:
        raise NotNested("Les deux modèles n'ont pas été ajustés sur les mêmes données")
    if _same_model(reduced, full):
        return LrtResult(stat=0.0, df=0, p=1.0, reduced=reduced.label, full=full.label)

    same_structure = (reduced.spec.structure == full.spec.structure
                      and reduced.spec.uncorrelated == full.spec.uncorrelated)
    nested_columns = same_structure and set(reduced.column_names) <= set(full.column_names)
    same_columns = reduced.column_names == full.column_names
    nested_structure = same_columns and (
        (reduced.spec.structure == "ri" and full.spec.structure != "ri")
        or (reduced.spec.structure == "ris" and full.spec.structure == "ris"
            and reduced.spec.uncorrelated and not full.spec.uncorrelated)
    )
    df = full.k - reduced.k
    if not (nested_columns or nested_structure) or df <= 0:
        raise NotNested(f"'{reduced.label}' n'est pas emboîté dans '{full.label}'")

    boundary = reduced.boundary or full.boundary or (
        nested_structure and reduced.spec.structure == "ri" and full.spec.structure == "ris")
    if boundary:
        logging.warning(f"Test {reduced.label} vs {full.label}: paramètre en frontière, p-valeur approximative")
    return lrt_from_logliks(reduced.loglik, full.loglik, df, reduced.label, full.label, boundary)


# --- Contrastes ---

def _df_for(m: FittedModel, vector: np.ndarray) -> int:
    active = np.flatnonzero(vector != 0.0)
    return min(m.df_outer if m.column_scope[j] is Scope.OUTER else m.df_inner for j in active)


def contrast(m: FittedModel, c: Contrast) -> ContrastResult:
    """Estimation de c'β̂ avec IC à 95 % et p-valeur bilatérale (ddl par confinement)."""
    vector = np.asarray(c.c, dtype=float)
    if vector.shape != (len(m.beta),):
        raise LayoutMismatch(f"Contraste de longueur {vector.size}, {len(m.beta)} colonnes attendues")
    if not np.any(vector != 0.0):
        raise ZeroContrast(f"Contraste nul: {c.label}")
    estimate = float(vector @ m.beta)
    variance = float(vector @ m.cov_beta @ vector)
    if not variance > 0.0:
        raise DegenerateVariance(f"Variance nulle pour le contraste {c.label}")
    se = math.sqrt(variance)
    df = _df_for(m, vector)
    quantile = float(stats.t.ppf(0.5 + CI_LEVEL / 2.0, df))
    p = float(2.0 * stats.t.sf(abs(estimate / se), df))
    return ContrastResult(label=c.label, estimate=estimate, se=se, df=df,
                          ci_lo=estimate - quantile * se, ci_hi=estimate + quantile * se,
                          p=p, week=c.week)


def _check_group(m: FittedModel, group: int) -> None:
    if group not in m.group_levels:
        raise UnknownGroup(f"Groupe inconnu: {group} (niveaux: {list(m.group_levels)})")


def _row(m: FittedModel, group: int, t: float) -> np.ndarray:
    _check_group(m, group)
    return evaluate_row(m.column_names, group, t)


def group_mean(m: FittedModel, g: int, t: float) -> ContrastResult:
    """μ_g(t), moyenne du modèle pour le groupe g à la semaine t."""
    return contrast(m, Contrast(label=f"Group {g}", c=_row(m, g, t), week=t))


def _pairs(levels: Sequence[int]) -> List[Tuple[int, int]]:
    return [(a, b) for b in levels for a in levels if a > b]


def weekly_differences(m: FittedModel, weeks: Sequence[int] = range(FIRST_WEEK, LAST_WEEK + 1)) -> List[ContrastResult]:
    """Différences de groupes deux à deux à chaque semaine (G2−G1, G3−G1, G3−G2)."""
    results = []
    for a, b in _pairs(m.group_levels):
        for week in weeks:
            vector = _row(m, a, week) - _row(m, b, week)
            results.append(contrast(m, Contrast(label=f"Group {a} – Group {b}", c=vector, week=week)))
    return results


def _group_label(group: int) -> str:
    name = GROUP_LABELS.get(group)
    return f"Group {group}: {name}" if name else f"Group {group}"


def gains(m: FittedModel, first: int = FIRST_WEEK, last: int = LAST_WEEK) -> List[ContrastResult]:
    """Gain μ_g(last) − μ_g(first) par groupe, puis écarts du dernier groupe aux autres."""
    vectors = {g: _row(m, g, last) - _row(m, g, first) for g in m.group_levels}
    results = [contrast(m, Contrast(label=_group_label(g), c=vectors[g])) for g in m.group_levels]
    top = m.group_levels[-1]
    for other in m.group_levels[:-1]:
        difference = vectors[top] - vectors[other]
        if not np.any(difference != 0.0):
            logging.info(f"Écart de gain Group {top} – Group {other} identiquement nul, ligne omise")
            continue
        results.append(contrast(m, Contrast(label=f"Group {top} – Group {other}", c=difference)))
    return results


# --- Tableaux ---

def format_p(p: float) -> str:
    """Trois chiffres significatifs ; en dessous de 1e-300, « 0.00 »."""
    return "0.00" if p < 1e-300 else f"{p:.3g}"


def results_frame(results: Sequence[ContrastResult]) -> pd.DataFrame:
    """Différences hebdomadaires en tableau : label, semaine, estimation, SE, IC, p."""
    return pd.DataFrame(
        [[r.label, r.week, r.estimate, r.se, r.ci_lo, r.ci_hi, r.p] for r in results],
        columns=WEEKLY_COLUMNS,
    )


def gains_frame(results: Sequence[ContrastResult]) -> pd.DataFrame:
    """Gains par groupe et leurs différences, sans colonne de p-valeur."""
    return pd.DataFrame([[r.label, r.estimate, r.se, r.ci_lo, r.ci_hi] for r in results],
                        columns=GAINS_COLUMNS)


def display_frame(frame: pd.DataFrame) -> pd.DataFrame:
    """Arrondi à 3 décimales pour l'affichage ; p-valeurs à 3 chiffres significatifs."""
    shown = frame.copy()
    for column in shown.columns:
        if column == "p_value":
            shown[column] = shown[column].map(format_p)
        elif column == "week":
            shown[column] = shown[column].map(lambda w: "" if pd.isna(w) else f"{w:g}")
        elif pd.api.types.is_float_dtype(shown[column]):
            shown[column] = shown[column].round(3)
    return shown


def compare_table(models: Sequence[FittedModel], labels: Optional[Sequence[str]] = None) -> pd.DataFrame:
    """Une ligne par modèle, dans l'ordre donné : AIC, BIC, logLik, k."""
    labels = list(labels) if labels is not None else [m.label for m in models]
    return pd.DataFrame([[label, m.aic, m.bic, m.loglik, m.k] for label, m in zip(labels, models)],
                        columns=COMPARE_COLUMNS)


def lrt_frame(tests: Sequence[LrtResult]) -> pd.DataFrame:
    """Tests du rapport de vraisemblance, un par paire emboîtée ; `boundary` signale un test conservateur."""
    return pd.DataFrame([[t.reduced, t.full, t.stat, t.df, t.p, t.boundary] for t in tests],
                        columns=["Reduced", "Full", "LR_stat", "df", "p_value", "boundary"])


def coefficient_table(m: FittedModel) -> pd.DataFrame:
    """Estimations des effets fixes d'un modèle, une ligne par colonne du plan."""
    rows = []
    for j, name in enumerate(m.column_names):
        result = contrast(m, Contrast(label=name, c=np.eye(len(m.beta))[j]))
        rows.append([name, result.estimate, result.se, result.ci_lo, result.ci_hi, result.p])
    return pd.DataFrame(rows, columns=COEFFICIENT_COLUMNS)


def _short_label(m: FittedModel) -> str:
    return STRUCTURE_SHORT.get(m.spec.structure, m.label)


def fixed_effects_across_models(fits: Sequence[FittedModel],
                                labels: Optional[Sequence[str]] = None) -> pd.DataFrame:
    labels = list(labels) if labels is not None else [_short_label(m) for m in fits]
    rows = [[label, name, float(beta), float(se)]
            for label, m in zip(labels, fits)
            for name, beta, se in zip(m.column_names, m.beta, m.se)]
    return pd.DataFrame(rows, columns=["Model", "Term", "Estimate", "Std_Error"])


def model_trajectories(m: FittedModel) -> pd.DataFrame:
    """Moyennes observées par groupe et semaine, superposées à μ_g(t) et son IC à 95 %."""
    observed = group_week_means(m.data).frame
    rows = []
    for record in observed.itertuples(index=False):
        group, week = int(getattr(record, GROUP_COLUMN)), getattr(record, TIME_COLUMN)
        mean = group_mean(m, group, week)
        rows.append([group, week, record.mean_weight, mean.estimate, mean.ci_lo, mean.ci_hi])
    return pd.DataFrame(rows, columns=[GROUP_COLUMN, TIME_COLUMN, "observed_mean",
                                       "model_mean", "model_lo", "model_hi"])


def sensitivity_gains(fits: Sequence[FittedModel], labels: Optional[Sequence[str]] = None) -> pd.DataFrame:
    """Gains sur l'étude réestimés sous chaque structure de covariance."""
    labels = list(labels) if labels is not None else [_short_label(m) for m in fits]
    frames = []
    for label, m in zip(labels, fits):
        frame = gains_frame(gains(m))
        frame.insert(0, "Model", label)
        frames.append(frame)
    if not frames:
        return pd.DataFrame(columns=["Model"] + GAINS_COLUMNS)
    return pd.concat(frames, ignore_index=True)


def variance_components(m: FittedModel) -> pd.DataFrame:
    """Écarts-types estimés, paramètres de corrélation et ICC (ordonnée aléatoire seule)."""
    rows = [[name, float(value)] for name, value in m.theta.describe().items()
            if isinstance(value, (int, float)) and not isinstance(value, bool)]
    if isinstance(m.theta, RandomIntercept):
        rows.append(["icc", icc(m.theta)])
    return pd.DataFrame(rows, columns=["Parameter", "Estimate"])
