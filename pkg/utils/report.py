# utils/report.py
"""Rapport markdown de l'analyse complète, sections dans un ordre fixe."""

import logging
from pathlib import Path
from typing import Mapping, Optional, Sequence

import pandas as pd

from .engine import FittedModel
from .inference import display_frame

REPORT_FILE = "report.md"

# (clé du tableau, titre de section)
REPORT_SECTIONS = [
    ("compare_main", "Comparaison des modèles (ML)"),
    ("lrt", "Tests du rapport de vraisemblance"),
    ("coefficients", "Coefficients du modèle retenu"),
    ("variance", "Composantes de variance et ICC"),
    ("reml", "Réajustement REML"),
    ("compare_sensitivity", "Analyse de sensibilité (structures de covariance)"),
    ("weekly", "Différences hebdomadaires entre groupes"),
    ("gains", "Gains de poids sur l'étude"),
    ("diagnostics", "Diagnostics des résidus"),
]

NO_RESULT = "Aucun résultat."


def _render_table(frame: Optional[pd.DataFrame]) -> str:
    if frame is None or frame.empty:
        return NO_RESULT
    return "```\n" + display_frame(frame).to_string(index=False) + "\n```"


def _render_fits(fits: Sequence[FittedModel]) -> str:
    if not fits:
        return NO_RESULT
    lines = []
    for m in fits:
        flags = [] if m.converged else ["non convergé"]
        if m.boundary:
            flags.append("frontière")
        suffix = f" ({', '.join(flags)})" if flags else ""
        lines.append(f"- {m.label} [{m.spec.structure}, {m.spec.method.value}] : "
                     f"N = {m.n_obs}, M = {m.n_clusters}, logLik = {m.loglik:.3f}{suffix}")
    return "\n".join(lines)


def emit_report(fits: Sequence[FittedModel], tables: Mapping[str, Optional[pd.DataFrame]],
                outdir, filename: str = REPORT_FILE) -> Path:
    """Écrit le rapport ; deux exécutions sur les mêmes entrées donnent le même fichier octet pour octet."""
    parts = ["# Rapport d'analyse : modèles linéaires mixtes", "", "## Modèles ajustés", "", _render_fits(fits)]
    for key, heading in REPORT_SECTIONS:
        parts.extend(["", f"## {heading}", "", _render_table(tables.get(key))])
    path = Path(outdir) / filename
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(parts) + "\n", encoding="utf-8")
    logging.info(f"Rapport écrit: {path}")
    return path
