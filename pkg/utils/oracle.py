# utils/oracle.py
"""
Simulation selon le modèle génératif et implémentation dense (matrice N×N)
de la vraisemblance et des moindres carrés généralisés, indépendante du
moteur, pour la vérification croisée.

Règle des flux aléatoires : la souris d'indice i (ordre des groupes puis
des souris) tire ses effets aléatoires et ses résidus dans
`np.random.default_rng([seed, i])`, soit une SeedSequence à deux mots.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy import linalg, stats

from .config import (
    DEFAULT_BETA, DEFAULT_LAYOUT, DEFAULT_SD_INTERCEPT, DEFAULT_SD_RESID, DEFAULT_SEED,
    DEFAULT_WEEKS, DENSE_MAX_N, GROUP_COLUMN, ID_COLUMN, MODEL_FORMULAS, RESPONSE_COLUMN,
    STRUCTURE_SHORT, TIME_COLUMN
)
from .covstruct import (
    STRUCTURE_TOKENS, CovarianceStructure, RandomIntercept, RandomInterceptAR1,
    RandomInterceptHeteroVar, RandomInterceptSlope, initial_structure
)
from .data_loader import LongDataset
from .engine import Method, fit, gls_beta, profile_loglik, spec_for
from .errors import CholeskyFailure, LmmError, SingularInformation, TooFew, TooLarge, UsageError
from .formula import FormulaAst, build_design, evaluate_row, parse_formula
from .inference import Contrast, contrast


@dataclass(frozen=True)
class SimLayout:
    group_sizes: Dict[int, int] = field(default_factory=lambda: dict(DEFAULT_LAYOUT))
    weeks: int = DEFAULT_WEEKS
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        if not self.group_sizes or any(n < 1 for n in self.group_sizes.values()):
            raise UsageError("Chaque groupe doit compter au moins une souris")
        if self.weeks < 2:
            raise UsageError("Au moins 2 semaines sont nécessaires")


@dataclass(frozen=True, eq=False)
class TruthParams:
    beta: np.ndarray
    structure: CovarianceStructure
    formula: str = MODEL_FORMULAS["m3"]

    @property
    def ast(self) -> FormulaAst:
        return parse_formula(self.formula)


def default_truth(structure: Optional[CovarianceStructure] = None) -> TruthParams:
    """Coefficients du modèle 3 (ordonnée aléatoire) servant de vérité par défaut."""
    if structure is None:
        structure = RandomIntercept(DEFAULT_SD_INTERCEPT, DEFAULT_SD_RESID)
    return TruthParams(beta=np.array(DEFAULT_BETA, dtype=float), structure=structure)


# --- Simulation ---

def draw_residuals(structure: CovarianceStructure, t: np.ndarray, group: int,
                   rng: np.random.Generator) -> np.ndarray:
    """Résidus d'une souris ; AR(1) par la récurrence stationnaire ε_j = φ^Δ ε_{j−1} + σ√(1 − φ^{2Δ}) z_j."""
    t = np.asarray(t, dtype=float)
    sd = structure.residual_sd(group)
    z = rng.standard_normal(len(t))
    if not isinstance(structure, RandomInterceptAR1):
        return sd * z
    eps = np.empty(len(t))
    eps[0] = sd * z[0]
    for j in range(1, len(t)):
        decay = structure.phi ** (t[j] - t[j - 1])
        eps[j] = decay * eps[j - 1] + sd * math.sqrt(max(1.0 - decay * decay, 0.0)) * z[j]
    return eps


def _skeleton(layout: SimLayout) -> pd.DataFrame:
    weeks = np.arange(1, layout.weeks + 1)
    width = max(3, len(str(sum(layout.group_sizes.values()))))
    rows, index = [], 0
    for group in sorted(layout.group_sizes):
        for _ in range(layout.group_sizes[group]):
            index += 1
            rows.extend((f"M{index:0{width}d}", group, int(week), 0.0) for week in weeks)
    return pd.DataFrame(rows, columns=[ID_COLUMN, GROUP_COLUMN, TIME_COLUMN, RESPONSE_COLUMN])


def simulate(truth: TruthParams, layout: SimLayout) -> LongDataset:
    """y = Xβ + Zb + ε, une souris à la fois, reproductible à partir de la graine."""
    skeleton = LongDataset.from_frame(_skeleton(layout))
    ds = build_design(truth.ast, skeleton)
    beta = np.asarray(truth.beta, dtype=float)
    if beta.shape != (ds.n_columns,):
        raise UsageError(f"β de longueur {beta.size}, {ds.n_columns} colonnes attendues ({', '.join(ds.column_names)})")

    L = truth.structure.random_factor()
    weights = []
    for index, cluster in enumerate(ds.clusters):
        rng = np.random.default_rng([layout.seed, index])
        b = L @ rng.standard_normal(L.shape[1])
        eps = draw_residuals(truth.structure, cluster.t, cluster.group, rng)
        weights.append(cluster.X @ beta + truth.structure.z_matrix(cluster.t) @ b + eps)

    frame = skeleton.frame.copy()
    frame[RESPONSE_COLUMN] = np.concatenate(weights)
    logging.info(f"Simulation: {len(ds.clusters)} souris, {len(frame)} observations (graine {layout.seed})")
    return LongDataset.from_frame(frame)


# --- Oracle dense ---

def _dense_system(structure: CovarianceStructure, d: LongDataset, ast: FormulaAst):
    if d.n_obs > DENSE_MAX_N:
        raise TooLarge(f"{d.n_obs} observations: oracle dense limité à N ≤ {DENSE_MAX_N}")
    ds = build_design(ast, d)
    V = linalg.block_diag(*[structure.marginal_cov(c.t, c.group) for c in ds.clusters])
    return ds.pooled_X(), ds.pooled_y(), V


def _dense_solution(X: np.ndarray, y: np.ndarray, V: np.ndarray):
    try:
        factor = linalg.cho_factor(V, lower=True)
    except linalg.LinAlgError as e:
        raise CholeskyFailure(f"Covariance dense non définie positive: {e}")
    VinvX = linalg.cho_solve(factor, X)
    information = X.T @ VinvX
    try:
        info_factor = linalg.cho_factor(0.5 * (information + information.T), lower=True)
    except linalg.LinAlgError:
        raise SingularInformation("Matrice d'information singulière (oracle dense)")
    beta = linalg.cho_solve(info_factor, VinvX.T @ y)
    cov_beta = linalg.cho_solve(info_factor, np.eye(X.shape[1]))
    logdet_information = 2.0 * float(np.sum(np.log(np.diag(info_factor[0]))))
    return beta, 0.5 * (cov_beta + cov_beta.T), logdet_information


def dense_gls(theta: CovarianceStructure, d: LongDataset, ast: FormulaAst):
    """β̂ et sa covariance par le système N×N complet."""
    X, y, V = _dense_system(theta, d, ast)
    beta, cov_beta, _ = _dense_solution(X, y, V)
    return beta, cov_beta


def dense_loglik(truth: TruthParams, d: LongDataset, method: Method = Method.ML) -> float:
    """
    Log-densité normale multivariée jointe de toutes les observations.

    ML : évaluée en β = truth.beta. REML : critère restreint, évalué en β̂ dense.
    """
    X, y, V = _dense_system(truth.structure, d, truth.ast)
    if method is Method.ML:
        beta = np.asarray(truth.beta, dtype=float)
    else:
        beta, _, logdet_information = _dense_solution(X, y, V)
    try:
        value = float(stats.multivariate_normal.logpdf(y, mean=X @ beta, cov=V))
    except (np.linalg.LinAlgError, ValueError) as e:
        raise CholeskyFailure(f"Covariance dense non définie positive: {e}")
    if method is Method.REML:
        value += 0.5 * X.shape[1] * math.log(2.0 * math.pi) - 0.5 * logdet_information
    return value


# --- Expériences ---

def random_interior(template: CovarianceStructure, rng: np.random.Generator) -> CovarianceStructure:
    """θ tiré à l'intérieur du domaine : ET dans [0.3, 3], |φ| ≤ 0.8, rapports dans [0.5, 2]."""
    sd_intercept, sd_resid = rng.uniform(0.3, 3.0, size=2)
    if isinstance(template, RandomInterceptSlope):
        sd_slope = rng.uniform(0.3, 3.0)
        corr = rng.uniform(-0.5, 0.5) if template.correlated else 0.0
        return RandomInterceptSlope.from_sds(sd_intercept, sd_slope, corr, sd_resid, template.correlated)
    if isinstance(template, RandomInterceptAR1):
        return RandomInterceptAR1(sd_intercept, sd_resid, rng.uniform(-0.8, 0.8))
    if isinstance(template, RandomInterceptHeteroVar):
        ratios = tuple(float(r) for r in rng.uniform(0.5, 2.0, size=len(template.groups)))
        return replace(template, sd_intercept=sd_intercept, sd_resid=sd_resid, ratios=ratios)
    return RandomIntercept(sd_intercept, sd_resid)


def equivalence_suite(seed: int = DEFAULT_SEED, draws: int = 25, tolerance: float = 1e-8) -> pd.DataFrame:
    """Écarts moteur / oracle dense sur 5 souris × 4 semaines, pour chaque structure et chaque critère."""
    layout = SimLayout(group_sizes={1: 2, 2: 2, 3: 1}, weeks=4, seed=seed)
    rng = np.random.default_rng(seed)
    rows = []
    for token in STRUCTURE_TOKENS:
        template = initial_structure(token, DEFAULT_SD_INTERCEPT, DEFAULT_SD_RESID, sorted(layout.group_sizes))
        truth = default_truth(random_interior(template, rng))
        data = simulate(truth, layout)
        ds = build_design(truth.ast, data)
        for draw in range(draws):
            theta = random_interior(template, rng)
            engine_beta, _ = gls_beta(theta, ds)
            dense_beta, _ = dense_gls(theta, data, truth.ast)
            beta_rel_diff = float(np.max(np.abs(engine_beta - dense_beta)) / max(np.max(np.abs(dense_beta)), 1.0))
            at_optimum = TruthParams(beta=dense_beta, structure=theta, formula=truth.formula)
            for method in Method:
                diff = abs(profile_loglik(theta, ds, method) - dense_loglik(at_optimum, data, method))
                rows.append([STRUCTURE_SHORT[token], draw, method.value, diff, beta_rel_diff,
                             bool(diff < tolerance and beta_rel_diff < tolerance)])
    table = pd.DataFrame(rows, columns=["structure", "draw", "method", "loglik_abs_diff",
                                        "beta_rel_diff", "passed"])
    failed = int((~table["passed"]).sum())
    if failed:
        logging.error(f"Équivalence moteur/oracle: {failed} écart(s) au-delà de {tolerance:g}")
    else:
        logging.info(f"Équivalence moteur/oracle vérifiée sur {len(table)} évaluations")
    return table


def default_contrasts(column_names: Sequence[str], group_levels: Sequence[int],
                      first: int = 1, last: int = DEFAULT_WEEKS) -> List[Contrast]:
    """Chaque coefficient, puis l'écart de gain entre le dernier et le premier groupe."""
    p = len(column_names)
    contrasts = [Contrast(label=name, c=np.eye(p)[j]) for j, name in enumerate(column_names)]
    top, bottom = group_levels[-1], group_levels[0]
    gain = (evaluate_row(column_names, top, last) - evaluate_row(column_names, top, first)
            - evaluate_row(column_names, bottom, last) + evaluate_row(column_names, bottom, first))
    if np.any(gain != 0.0):
        contrasts.append(Contrast(label=f"gain{top} - gain{bottom}", c=gain))
    return contrasts


def coverage_experiment(truth: TruthParams, layout: SimLayout, reps: int,
                        structure: Optional[str] = None, method: Method = Method.REML,
                        contrasts: Optional[Sequence[Contrast]] = None) -> pd.DataFrame:
    """
    Couverture empirique des IC à 95 % : simulation, ajustement puis contraste
    à chaque répétition. Les échecs d'ajustement sont comptés, pas propagés.
    """
    if reps < 100:
        raise TooFew(f"Au moins 100 répétitions nécessaires ({reps} demandées)")
    spec = spec_for(truth.formula, structure or truth.structure.token, method)
    beta = np.asarray(truth.beta, dtype=float)
    covered: Optional[np.ndarray] = None
    failures = 0

    for rep in range(reps):
        rep_seed = int(np.random.SeedSequence([layout.seed, rep]).generate_state(1)[0])
        data = simulate(truth, replace(layout, seed=rep_seed))
        try:
            model = fit(spec, data)
            if contrasts is None:
                contrasts = default_contrasts(model.column_names, model.group_levels, 1, layout.weeks)
            results = [contrast(model, c) for c in contrasts]
        except LmmError as e:
            failures += 1
            logging.warning(f"Répétition {rep}: échec ({e})")
            continue
        hits = np.array([r.ci_lo <= float(c.c @ beta) <= r.ci_hi for r, c in zip(results, contrasts)])
        covered = hits.astype(int) if covered is None else covered + hits

    successes = reps - failures
    rows = []
    for j, c in enumerate(contrasts or []):
        count = int(covered[j]) if covered is not None else 0
        rows.append([c.label, float(c.c @ beta), count / successes if successes else float("nan"),
                     successes, failures])
    logging.info(f"Couverture: {reps} répétitions, {failures} échec(s)")
    return pd.DataFrame(rows, columns=["contrast", "true_value", "coverage", "n_fits", "n_failed"])
