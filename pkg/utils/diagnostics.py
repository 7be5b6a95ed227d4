# utils/diagnostics.py
"""
Résidus, valeurs ajustées, effets aléatoires prédits (BLUP) et points Q–Q,
produits sous forme de tableaux prêts à tracer.
"""

from dataclasses import dataclass
from typing import Dict, Iterator, Optional, Tuple

import numpy as np
import pandas as pd
from scipy import linalg, stats

from .config import GROUP_COLUMN, ID_COLUMN, TIME_COLUMN
from .engine import FittedModel
from .errors import CholeskyFailure, TooFew
from .formula import Cluster, DesignSet, build_design

DIAGNOSTIC_COLUMNS = [ID_COLUMN, GROUP_COLUMN, TIME_COLUMN, "observed", "fitted_marginal",
                      "fitted_conditional", "resid_marginal", "resid_conditional", "resid_pearson"]


@dataclass(frozen=True, eq=False)
class DiagnosticsTable:
    frame: pd.DataFrame


@dataclass(frozen=True, eq=False)
class RandomEffectsTable:
    frame: pd.DataFrame


def _design(m: FittedModel, ds: Optional[DesignSet]) -> DesignSet:
    return ds if ds is not None else build_design(m.spec.fixed, m.data)


def _cluster_effects(m: FittedModel, ds: DesignSet) -> Iterator[Tuple[Cluster, np.ndarray, np.ndarray, np.ndarray]]:
    """(souris, résidu marginal, b̂_i, Z_i b̂_i) avec b̂_i = D Z_i' V_i⁻¹ r_i."""
    D = m.theta.random_cov()
    for cluster in ds.clusters:
        r = cluster.y - cluster.X @ m.beta
        Z = m.theta.z_matrix(cluster.t)
        try:
            factor = linalg.cho_factor(m.theta.marginal_cov(cluster.t, cluster.group), lower=True)
        except linalg.LinAlgError as e:
            raise CholeskyFailure(f"Covariance de la souris {cluster.mouse_id} non définie positive: {e}")
        b = D @ Z.T @ linalg.cho_solve(factor, r)
        yield cluster, r, b, Z @ b


def blups(m: FittedModel, ds: Optional[DesignSet] = None) -> RandomEffectsTable:
    """Prédictions empiriques bayésiennes des effets aléatoires, une ligne par souris."""
    names = list(m.theta.random_names)
    rows = [[cluster.mouse_id, cluster.group] + [float(v) for v in b]
            for cluster, _, b, _ in _cluster_effects(m, _design(m, ds))]
    return RandomEffectsTable(pd.DataFrame(rows, columns=[ID_COLUMN, GROUP_COLUMN] + names))


def residual_table(m: FittedModel, ds: Optional[DesignSet] = None) -> DiagnosticsTable:
    """Résidus par observation : marginaux (y - Xβ), conditionnels (après BLUP) et de Pearson."""
    frames = []
    for cluster, r, _, zb in _cluster_effects(m, _design(m, ds)):
        fitted = cluster.X @ m.beta
        resid_marginal = cluster.y - fitted
        resid_conditional = resid_marginal - zb
        frames.append(pd.DataFrame({
            ID_COLUMN: cluster.mouse_id,
            GROUP_COLUMN: cluster.group,
            TIME_COLUMN: cluster.t,
            "observed": cluster.y,
            "fitted_marginal": fitted,
            "fitted_conditional": fitted + zb,
            "resid_marginal": resid_marginal,
            "resid_conditional": resid_conditional,
            "resid_pearson": resid_conditional / m.theta.residual_sd(cluster.group),
        }))
    if not frames:
        return DiagnosticsTable(pd.DataFrame(columns=DIAGNOSTIC_COLUMNS))
    return DiagnosticsTable(pd.concat(frames, ignore_index=True)[DIAGNOSTIC_COLUMNS])


def qq_points(values) -> pd.DataFrame:
    """Quantiles théoriques Φ⁻¹((i − 0.5)/n) face aux valeurs triées."""
    values = np.sort(np.asarray(values, dtype=float))
    n = len(values)
    if n < 2:
        raise TooFew(f"Au moins 2 valeurs nécessaires pour un graphique Q–Q ({n} reçue)")
    theoretical = stats.norm.ppf((np.arange(1, n + 1) - 0.5) / n)
    return pd.DataFrame({"theoretical": theoretical, "empirical": values})


def residuals_by_week(table: DiagnosticsTable) -> pd.DataFrame:
    """Moyenne et écart-type des résidus de Pearson par (groupe, semaine) ; ET absent pour une cellule à 1 valeur."""
    summary = (table.frame.groupby([GROUP_COLUMN, TIME_COLUMN])["resid_pearson"]
               .agg(mean_resid_pearson="mean", sd_resid_pearson="std", n="count")
               .reset_index())
    return summary


def diagnostics_bundle(m: FittedModel, ds: Optional[DesignSet] = None) -> Dict[str, pd.DataFrame]:
    """Les cinq fichiers de diagnostic, indexés par nom de fichier."""
    ds = _design(m, ds)
    residuals = residual_table(m, ds)
    effects = blups(m, ds)
    return {
        "diagnostics.csv": residuals.frame,
        "ranef.csv": effects.frame,
        "qq_resid.csv": qq_points(residuals.frame["resid_pearson"]),
        "qq_ranef.csv": qq_points(effects.frame["b0"]),
        "resid_by_week.csv": residuals_by_week(residuals),
    }


def summarize_residuals(table: DiagnosticsTable) -> pd.DataFrame:
    """Résumé pour le rapport : moyenne et écart-type des résidus de Pearson."""
    pearson = table.frame["resid_pearson"]
    return pd.DataFrame([["resid_pearson", float(pearson.mean()), float(pearson.std(ddof=1)), len(pearson)]],
                        columns=["Residual", "Mean", "SD", "n"])
