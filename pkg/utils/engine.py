# utils/engine.py
"""
Moteur d'ajustement : log-vraisemblance profilée (ML/REML), estimation de β
par moindres carrés généralisés et optimisation des paramètres de variance.
"""

import hashlib
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import linalg, optimize

from .config import (
    AR1_BOUNDARY, BOUNDARY_REL_TOL, GRADIENT_TOL, MAIN_SET, MODEL_FORMULAS, MODEL_LABELS,
    NM_FATOL, NM_MAXITER_PER_PARAM, NM_XATOL, SENSITIVITY_SET, SIMPLEX_STEP, STRUCTURE_LABELS
)
from .covstruct import (
    STRUCTURE_TOKENS, CovarianceStructure, RandomIntercept, RandomInterceptAR1, initial_structure
)
from .data_loader import LongDataset
from .errors import (
    BoundaryParam, CholeskyFailure, DegenerateVariance, InsufficientData, NonConvergence,
    NumericalError, SingularInformation, UsageError
)
from .formula import DesignSet, FormulaAst, Scope, build_design, format_formula, parse_formula

LOG_2PI = math.log(2.0 * math.pi)


class Method(str, Enum):
    ML = "ML"
    REML = "REML"

    @classmethod
    def parse(cls, text: str) -> "Method":
        try:
            return cls(text.upper())
        except ValueError:
            raise UsageError(f"Méthode inconnue: '{text}' (attendu: ml ou reml)")


@dataclass(frozen=True)
class ModelSpec:
    fixed: FormulaAst
    structure: str = "ri"
    method: Method = Method.ML
    name: str = ""
    uncorrelated: bool = False      # variante `ris` sans corrélation ordonnée/pente

    def __post_init__(self):
        if self.structure not in STRUCTURE_TOKENS:
            raise UsageError(f"Structure inconnue: '{self.structure}'")

    @property
    def label(self) -> str:
        if self.structure != "ri":
            return STRUCTURE_LABELS[self.structure]
        return MODEL_LABELS.get(self.name, self.name or format_formula(self.fixed))


def spec_for(model: str, structure: str = "ri", method: Method = Method.ML,
             uncorrelated: bool = False) -> ModelSpec:
    """Spécification à partir d'un modèle prédéfini (m1, m2, m3) ou d'une formule libre."""
    if model in MODEL_FORMULAS:
        return ModelSpec(parse_formula(MODEL_FORMULAS[model]), structure, method, model, uncorrelated)
    ast = parse_formula(model)
    return ModelSpec(ast, structure, method, format_formula(ast), uncorrelated)


@dataclass(frozen=True, eq=False)
class FittedModel:
    spec: ModelSpec
    beta: np.ndarray
    cov_beta: np.ndarray
    theta: CovarianceStructure
    loglik: float
    k: int
    n_obs: int
    n_clusters: int
    column_names: Tuple[str, ...]
    column_scope: Tuple[Scope, ...]
    group_levels: Tuple[int, ...]
    df_outer: int
    df_inner: int
    converged: bool
    boundary: bool
    data: LongDataset = field(repr=False)
    fingerprint: str = ""
    grad_norm: float = float("nan")

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov_beta), 0.0, None))

    @property
    def aic(self) -> float:
        return information_criteria(self)[0]

    @property
    def bic(self) -> float:
        return information_criteria(self)[1]

    @property
    def label(self) -> str:
        return self.spec.label


# --- Vraisemblance profilée ---

@dataclass(frozen=True, eq=False)
class _GlsPieces:
    beta: np.ndarray
    cov_beta: np.ndarray
    logdet_v: float
    logdet_information: float
    quad: float
    n_obs: int


def _factor(V: np.ndarray) -> Tuple[tuple, float]:
    try:
        factor = linalg.cho_factor(V, lower=True)
    except (linalg.LinAlgError, ValueError) as e:
        raise CholeskyFailure(f"Covariance marginale non définie positive: {e}")
    diagonal = np.diag(factor[0])
    if np.any(diagonal <= 0.0):
        raise CholeskyFailure("Facteur de Cholesky dégénéré")
    return factor, 2.0 * float(np.sum(np.log(diagonal)))


def _accumulate(theta: CovarianceStructure, ds: DesignSet) -> _GlsPieces:
    """Sommes par souris (ordre des identifiants), une factorisation par motif (semaines, groupe)."""
    p = ds.n_columns
    patterns: Dict[tuple, List[int]] = {}
    for index, cluster in enumerate(ds.clusters):
        patterns.setdefault((tuple(cluster.t), cluster.group), []).append(index)

    # V⁻¹[X | y] pour toutes les souris d'un même motif en un seul appel
    solves: List[Optional[np.ndarray]] = [None] * ds.n_clusters
    logdets = np.zeros(ds.n_clusters)
    for members in patterns.values():
        first = ds.clusters[members[0]]
        factor, logdet_i = _factor(theta.marginal_cov(first.t, first.group))
        rhs = np.hstack([np.column_stack([ds.clusters[i].X, ds.clusters[i].y]) for i in members])
        solved = linalg.cho_solve(factor, rhs)
        for j, index in enumerate(members):
            solves[index] = solved[:, j * (p + 1):(j + 1) * (p + 1)]
            logdets[index] = logdet_i

    information = np.zeros((p, p))
    score = np.zeros(p)
    logdet_v = 0.0
    for cluster, solved, logdet_i in zip(ds.clusters, solves, logdets):
        information += cluster.X.T @ solved[:, :p]
        score += cluster.X.T @ solved[:, p]
        logdet_v += logdet_i

    # Symétrisation avant Cholesky
    information = 0.5 * (information + information.T)
    try:
        info_factor = linalg.cho_factor(information, lower=True)
    except (linalg.LinAlgError, ValueError):
        raise SingularInformation("Matrice d'information X'V⁻¹X singulière")
    info_diagonal = np.diag(info_factor[0])
    if np.any(info_diagonal <= 0.0):
        raise SingularInformation("Matrice d'information X'V⁻¹X singulière")
    beta = linalg.cho_solve(info_factor, score)
    cov_beta = linalg.cho_solve(info_factor, np.eye(p))
    cov_beta = 0.5 * (cov_beta + cov_beta.T)

    quad = 0.0
    for cluster, solved in zip(ds.clusters, solves):
        r = cluster.y - cluster.X @ beta
        quad += float(r @ (solved[:, p] - solved[:, :p] @ beta))

    return _GlsPieces(beta=beta, cov_beta=cov_beta, logdet_v=logdet_v,
                      logdet_information=2.0 * float(np.sum(np.log(info_diagonal))),
                      quad=quad, n_obs=ds.n_obs)


def gls_beta(theta: CovarianceStructure, ds: DesignSet) -> Tuple[np.ndarray, np.ndarray]:
    """β̂(θ) = (Σ X_i'V_i⁻¹X_i)⁻¹ Σ X_i'V_i⁻¹y_i et sa covariance."""
    pieces = _accumulate(theta, ds)
    return pieces.beta, pieces.cov_beta


def _criterion(pieces: _GlsPieces, method: Method, p: int) -> float:
    value = -0.5 * (pieces.n_obs * LOG_2PI + pieces.logdet_v + pieces.quad)
    if method is Method.REML:
        value += 0.5 * p * LOG_2PI - 0.5 * pieces.logdet_information
    return value


def profile_loglik(theta: CovarianceStructure, ds: DesignSet, method: Method = Method.ML) -> float:
    """Log-vraisemblance profilée en β (ML ou REML) pour une structure de covariance donnée.

    β est remplacé par son estimation GLS ; une factorisation de Cholesky par motif
    (semaines, groupe) suffit pour toutes les souris qui le partagent.
    """
    return _criterion(_accumulate(theta, ds), method, ds.n_columns)


# --- Ajustement ---

def data_fingerprint(data: LongDataset) -> str:
    hashed = pd.util.hash_pandas_object(data.frame, index=False).to_numpy()
    return hashlib.sha256(hashed.tobytes()).hexdigest()


def moment_start(ds: DesignSet) -> Tuple[float, float]:
    """Échelles de départ (σ_b0, σ) par la méthode des moments."""
    ss_within, dof_within = 0.0, 0
    for cluster in ds.clusters:
        n = len(cluster.y)
        if n >= 3:
            basis = np.column_stack([np.ones(n), cluster.t])
            coef, *_ = linalg.lstsq(basis, cluster.y)
            resid = cluster.y - basis @ coef
            ss_within += float(resid @ resid)
            dof_within += n - 2
        elif n == 2:
            resid = cluster.y - cluster.y.mean()
            ss_within += float(resid @ resid)
            dof_within += 1

    y = ds.pooled_y()
    sd_y = float(np.std(y, ddof=1)) if len(y) > 1 else 0.0
    if sd_y <= 0.0:
        raise DegenerateVariance("Réponse constante: aucune variance à modéliser")
    sd_resid = math.sqrt(ss_within / dof_within) if dof_within > 0 else sd_y
    sd_resid = max(sd_resid, 1e-3 * sd_y)

    X = ds.pooled_X()
    coef, *_ = linalg.lstsq(X, y)
    pooled_resid = y - X @ coef
    offsets = np.cumsum([0] + [len(c.y) for c in ds.clusters])
    cluster_means = np.array([pooled_resid[a:b].mean() for a, b in zip(offsets[:-1], offsets[1:])])
    n_bar = len(y) / len(ds.clusters)
    between = float(np.var(cluster_means, ddof=1)) - sd_resid ** 2 / n_bar if len(cluster_means) > 1 else 0.0
    sd_intercept = max(math.sqrt(max(between, 0.0)), 0.1 * sd_resid)
    return sd_intercept, sd_resid


def _boundary_components(theta: CovarianceStructure, sd_y: float) -> Tuple[bool, List[str]]:
    threshold = BOUNDARY_REL_TOL * sd_y
    low = [name for name, value in theta.sd_components().items() if value < threshold]
    at_boundary = bool(low)
    if isinstance(theta, RandomInterceptAR1) and abs(theta.phi) > AR1_BOUNDARY:
        at_boundary = True
    return at_boundary, low


class _Objective:
    """−critère sur les coordonnées libres ; +inf hors du domaine numérique."""

    def __init__(self, template: CovarianceStructure, ds: DesignSet, method: Method,
                 anchor: np.ndarray, free: np.ndarray):
        self.template = template
        self.ds = ds
        self.method = method
        self.anchor = anchor
        self.free = free

    def full(self, u_free: np.ndarray) -> np.ndarray:
        u = self.anchor.copy()
        u[self.free] = u_free
        return u

    def structure(self, u_free: np.ndarray) -> CovarianceStructure:
        return self.template.from_unconstrained(self.full(u_free))

    def __call__(self, u_free: np.ndarray) -> float:
        try:
            value = profile_loglik(self.structure(u_free), self.ds, self.method)
        except (NumericalError, OverflowError, ValueError):
            return math.inf
        return -value if math.isfinite(value) else math.inf


def _minimize(objective: _Objective, x0: np.ndarray) -> Tuple[np.ndarray, float, bool]:
    n = len(x0)
    simplex = np.vstack([x0] + [x0 + SIMPLEX_STEP * row for row in np.eye(n)])
    result = optimize.minimize(objective, x0, method="Nelder-Mead",
                               options={"initial_simplex": simplex, "xatol": NM_XATOL,
                                        "fatol": NM_FATOL, "maxiter": NM_MAXITER_PER_PARAM * n})
    best_x, best_f, success = np.asarray(result.x), float(result.fun), bool(result.success)

    # Polissage BFGS (gradient par différences finies) ; retenu seulement s'il améliore
    with np.errstate(all="ignore"):
        polished = optimize.minimize(objective, best_x, method="BFGS", options={"gtol": 1e-6})
    if np.isfinite(polished.fun) and polished.fun < best_f:
        best_x, best_f = np.asarray(polished.x), float(polished.fun)
        success = success or bool(polished.success)
    return best_x, best_f, success


def _gradient_norm(objective: _Objective, x: np.ndarray) -> float:
    with np.errstate(all="ignore"):
        gradient = optimize.approx_fprime(x, objective, 1e-6)
    return float(np.linalg.norm(gradient)) if np.all(np.isfinite(gradient)) else math.inf


def _package(spec: ModelSpec, data: LongDataset, ds: DesignSet, theta: CovarianceStructure,
             converged: bool, boundary: bool, grad_norm: float) -> FittedModel:
    pieces = _accumulate(theta, ds)
    p = ds.n_columns
    return FittedModel(
        spec=spec, beta=pieces.beta, cov_beta=pieces.cov_beta, theta=theta,
        loglik=_criterion(pieces, spec.method, p), k=p + theta.n_params,
        n_obs=ds.n_obs, n_clusters=ds.n_clusters, column_names=ds.column_names,
        column_scope=ds.column_scope, group_levels=ds.group_levels,
        df_outer=ds.n_clusters - ds.q_outer, df_inner=ds.n_obs - ds.n_clusters - ds.q_inner,
        converged=converged, boundary=boundary, data=data,
        fingerprint=data_fingerprint(data), grad_norm=grad_norm,
    )


def model_at(spec: ModelSpec, data: LongDataset, theta: CovarianceStructure) -> FittedModel:
    """Modèle évalué à θ fixé, sans optimisation."""
    ds = build_design(spec.fixed, data)
    sd_y = float(np.std(ds.pooled_y(), ddof=1))
    boundary, _ = _boundary_components(theta, sd_y)
    return _package(spec, data, ds, theta, True, boundary, float("nan"))


def fit(spec: ModelSpec, data: LongDataset,
        seeds: Sequence[CovarianceStructure] = ()) -> FittedModel:
    """
    Maximise la log-vraisemblance profilée sur les coordonnées non contraintes.

    Le départ par la méthode des moments est complété par les points `seeds`
    (même variante) ; le meilleur optimum est retenu. Une composante
    d'écart-type en frontière est fixée à BOUNDARY_CLAMP puis les autres
    paramètres sont réajustés.
    """
    ds = build_design(spec.fixed, data)
    sd_intercept, sd_resid = moment_start(ds)
    template = initial_structure(spec.structure, sd_intercept, sd_resid, ds.group_levels,
                                 uncorrelated=spec.uncorrelated)
    if ds.n_obs <= ds.n_columns + template.n_params:
        raise InsufficientData(
            f"{ds.n_obs} observations pour {ds.n_columns + template.n_params} paramètres")
    logging.info(f"Ajustement de {spec.label} ({spec.structure}, {spec.method.value}) "
                 f"sur {ds.n_obs} observations, {ds.n_clusters} souris")

    starts = [template.to_unconstrained()]
    for seed in seeds:
        if type(seed) is not type(template) or seed.n_params != template.n_params:
            logging.warning(f"Point de départ ignoré (variante différente): {seed}")
            continue
        try:
            starts.append(seed.to_unconstrained())
        except (BoundaryParam, NumericalError) as e:
            logging.warning(f"Point de départ ignoré: {e}")

    n = template.n_params
    objective = _Objective(template, ds, spec.method, np.zeros(n), np.ones(n, dtype=bool))
    best: Optional[Tuple[np.ndarray, float, bool]] = None
    for index, x0 in enumerate(starts):
        if not math.isfinite(objective(x0)):
            logging.warning(f"Départ {index} hors du domaine numérique, ignoré")
            continue
        candidate = _minimize(objective, x0)
        if index > 0:
            logging.info(f"Redémarrage {index}: logLik = {-candidate[1]:.6f}")
        if best is None or candidate[1] < best[1]:
            best = candidate
    if best is None:
        raise NonConvergence("Aucun point de départ évaluable")

    x, value, success = best
    theta = objective.structure(x)
    grad_norm = _gradient_norm(objective, x)
    sd_y = float(np.std(ds.pooled_y(), ddof=1))
    boundary, low = _boundary_components(theta, sd_y)

    if low:
        logging.warning(f"Estimation en frontière pour {spec.label}: {', '.join(low)}")
        clamped, fixed = theta, set()
        for component in low:
            result = clamped.clamp(component)
            if result is not None:
                clamped, indices = result
                fixed.update(indices)
        # Composantes fixées au plancher ; seules les coordonnées libres sont réoptimisées
        if fixed:
            anchor = clamped.to_unconstrained()
            free = np.array([i not in fixed for i in range(n)])
            restricted = _Objective(clamped, ds, spec.method, anchor, free)
            if free.any():
                x_free, value_free, success_free = _minimize(restricted, anchor[free])
                grad_free = _gradient_norm(restricted, x_free)
            else:
                x_free, value_free, success_free, grad_free = anchor[free], restricted(anchor[free]), True, 0.0
            if math.isfinite(value_free):
                theta = restricted.structure(x_free)
                x, value, success, grad_norm = restricted.full(x_free), value_free, success_free, grad_free

    converged = success or grad_norm < GRADIENT_TOL
    if not converged or not math.isfinite(value):
        raise NonConvergence(f"Échec de convergence pour {spec.label}", best_point=list(x),
                             gradient_norm=grad_norm)

    model = _package(spec, data, ds, theta, converged, boundary, grad_norm)
    logging.info(f"{spec.label}: logLik = {model.loglik:.3f}, k = {model.k}"
                 + (" (frontière)" if boundary else ""))
    return model


def information_criteria_from(loglik: float, k: int, n_obs: int) -> Tuple[float, float]:
    return -2.0 * loglik + 2.0 * k, -2.0 * loglik + k * math.log(n_obs)


def information_criteria(m: FittedModel) -> Tuple[float, float]:
    """(AIC, BIC) avec N = nombre total d'observations."""
    return information_criteria_from(m.loglik, m.k, m.n_obs)


def refit_reml(m: FittedModel) -> FittedModel:
    """Même spécification en REML, départ à chaud sur θ̂ du modèle ML."""
    return fit(replace(m.spec, method=Method.REML), m.data, seeds=[m.theta])


def fit_nested_sequence(specs: Sequence[ModelSpec], data: LongDataset) -> List[FittedModel]:
    """Ajuste dans l'ordre donné ; chaque ajustement part aussi de l'optimum précédent."""
    fits: List[FittedModel] = []
    for spec in specs:
        previous = fits[-1].theta if fits else None
        seeds = [previous] if previous is not None and fits[-1].spec.structure == spec.structure else []
        fits.append(fit(spec, data, seeds=seeds))
    return fits


def fit_main_set(data: LongDataset, structure: str = "ri", method: Method = Method.ML) -> List[FittedModel]:
    """Modèles 1 à 3, ajustés dans l'ordre d'emboîtement (1 → 3 → 2) et rendus dans l'ordre 1, 2, 3."""
    specs = {token: spec_for(token, structure, method) for token in MAIN_SET}
    fitted = fit_nested_sequence([specs["m1"], specs["m3"], specs["m2"]], data)
    by_name = {m.spec.name: m for m in fitted}
    return [by_name[token] for token in MAIN_SET]


def fit_sensitivity(fixed: FormulaAst, data: LongDataset, method: Method = Method.ML,
                    name: str = "m3") -> List[FittedModel]:
    """Ordonnée aléatoire d'abord, puis chaque structure étendue initialisée par plongement."""
    ri_fit = fit(ModelSpec(fixed, "ri", method, name), data)
    base = ri_fit.theta
    if not isinstance(base, RandomIntercept):
        raise UsageError("L'ajustement de référence doit être à ordonnée aléatoire")
    fits = [ri_fit]
    for token in SENSITIVITY_SET:
        if token == "ri":
            continue
        template = initial_structure(token, base.sd_intercept, base.sd_resid, ri_fit.group_levels)
        fits.append(fit(ModelSpec(fixed, token, method, name), data, seeds=[template.embed(base)]))
    return fits


def to_document(m: FittedModel) -> Dict[str, object]:
    """Document JSON d'un modèle ajusté (précision complète)."""
    aic, bic = information_criteria(m)
    return {
        "model": m.spec.name or format_formula(m.spec.fixed),
        "formula": format_formula(m.spec.fixed),
        "structure": m.spec.structure,
        "method": m.spec.method.value,
        "beta": {name: float(value) for name, value in zip(m.column_names, m.beta)},
        "se": {name: float(value) for name, value in zip(m.column_names, m.se)},
        "cov_beta": m.cov_beta.tolist(),
        "theta": m.theta.describe(),
        "loglik": m.loglik,
        "aic": aic,
        "bic": bic,
        "k": m.k,
        "N": m.n_obs,
        "M": m.n_clusters,
        "df_outer": m.df_outer,
        "df_inner": m.df_inner,
        "converged": m.converged,
        "boundary": m.boundary,
    }
