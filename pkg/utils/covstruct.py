# utils/covstruct.py
"""
Structures de covariance des modèles mixtes.

Chaque structure porte ses paramètres de variance θ et construit la
covariance marginale d'une souris, V_i = Z_i D Z_i' + R_i. Les quatre
variantes sont : ordonnée aléatoire (`ri`), ordonnée et pente aléatoires
(`ris`), ordonnée aléatoire + résidus AR(1) (`ri+ar1`) et ordonnée
aléatoire + variance résiduelle par groupe (`ri+hv`).
"""

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, replace
from typing import ClassVar, Dict, Optional, Sequence, Tuple

import numpy as np

from .config import BOUNDARY_CLAMP
from .errors import (
    BoundaryParam, DegenerateVariance, NonFiniteParam, UnknownGroup, UsageError
)


def _log_positive(value: float, name: str) -> float:
    if not math.isfinite(value):
        raise NonFiniteParam(f"Paramètre non fini: {name}={value}")
    if value <= 0.0:
        raise BoundaryParam(f"{name}={value} est sur la frontière (aucune image non contrainte)")
    return math.log(value)


class CovarianceStructure(ABC):
    """Interface commune des quatre structures."""

    token: ClassVar[str]
    random_names: ClassVar[Tuple[str, ...]] = ("b0",)

    # --- Paramétrage ---

    @property
    @abstractmethod
    def n_params(self) -> int:
        ...

    @abstractmethod
    def values(self) -> Tuple[float, ...]:
        """Paramètres naturels (pour le contrôle de finitude)."""

    @abstractmethod
    def to_unconstrained(self) -> np.ndarray:
        ...

    @abstractmethod
    def from_unconstrained(self, u: Sequence[float]) -> "CovarianceStructure":
        """Nouvelle structure de la même variante (et même disposition de groupes)."""

    # --- Blocs de covariance ---

    @abstractmethod
    def random_factor(self) -> np.ndarray:
        """Facteur L tel que D = L L'."""

    def random_cov(self) -> np.ndarray:
        L = self.random_factor()
        return L @ L.T

    def z_matrix(self, t: np.ndarray) -> np.ndarray:
        return np.ones((len(t), 1))

    def residual_sd(self, group: int) -> float:
        return self.sd_resid

    def residual_corr(self, t: np.ndarray) -> np.ndarray:
        return np.eye(len(t))

    def residual_cov(self, t: np.ndarray, group: int) -> np.ndarray:
        s = np.full(len(t), self.residual_sd(group))
        return s[:, None] * self.residual_corr(t) * s[None, :]

    def marginal_cov(self, t: np.ndarray, group: int) -> np.ndarray:
        """V_i = Z_i D Z_i' + R_i, exactement symétrique."""
        if not all(math.isfinite(v) for v in self.values()):
            raise NonFiniteParam(f"Paramètres non finis: {self.values()}")
        t = np.asarray(t, dtype=float)
        Z = self.z_matrix(t)
        V = Z @ self.random_cov() @ Z.T + self.residual_cov(t, group)
        if not np.all(np.isfinite(V)):
            raise NonFiniteParam("Covariance marginale non finie")
        return 0.5 * (V + V.T)

    # --- Frontières et emboîtement ---

    @abstractmethod
    def sd_components(self) -> Dict[str, float]:
        ...

    def clamp(self, component: str) -> Optional[Tuple["CovarianceStructure", Tuple[int, ...]]]:
        """Fixe une composante d'effet aléatoire à BOUNDARY_CLAMP ; renvoie (structure, indices fixés)."""
        if component == "sd_intercept":
            return replace(self, sd_intercept=BOUNDARY_CLAMP), (0,)
        return None

    @abstractmethod
    def embed(self, ri: "RandomIntercept") -> "CovarianceStructure":
        """Point de cette variante qui reproduit la covariance de `ri`."""

    def describe(self) -> Dict[str, object]:
        document: Dict[str, object] = {"structure": self.token}
        document.update(self.sd_components())
        return document


@dataclass(frozen=True)
class RandomIntercept(CovarianceStructure):
    sd_intercept: float
    sd_resid: float

    token: ClassVar[str] = "ri"

    @property
    def n_params(self) -> int:
        return 2

    def values(self) -> Tuple[float, ...]:
        return (self.sd_intercept, self.sd_resid)

    def to_unconstrained(self) -> np.ndarray:
        return np.array([_log_positive(self.sd_intercept, "sd_intercept"),
                         _log_positive(self.sd_resid, "sd_resid")])

    def from_unconstrained(self, u: Sequence[float]) -> "RandomIntercept":
        return RandomIntercept(sd_intercept=math.exp(u[0]), sd_resid=math.exp(u[1]))

    def random_factor(self) -> np.ndarray:
        return np.array([[self.sd_intercept]])

    def sd_components(self) -> Dict[str, float]:
        return {"sd_intercept": self.sd_intercept, "sd_resid": self.sd_resid}

    def embed(self, ri: "RandomIntercept") -> "RandomIntercept":
        return ri


@dataclass(frozen=True)
class RandomInterceptSlope(CovarianceStructure):
    """D = L L' avec L triangulaire inférieure 2×2 ; Z_i = [1, t_i]."""
    l11: float
    l21: float
    l22: float
    sd_resid: float
    correlated: bool = True

    token: ClassVar[str] = "ris"
    random_names: ClassVar[Tuple[str, ...]] = ("b0", "b1")

    @classmethod
    def from_sds(cls, sd_intercept: float, sd_slope: float, corr: float, sd_resid: float,
                 correlated: bool = True) -> "RandomInterceptSlope":
        corr = corr if correlated else 0.0
        return cls(l11=sd_intercept, l21=corr * sd_slope,
                   l22=sd_slope * math.sqrt(max(1.0 - corr * corr, 0.0)),
                   sd_resid=sd_resid, correlated=correlated)

    @property
    def n_params(self) -> int:
        return 4 if self.correlated else 3

    def values(self) -> Tuple[float, ...]:
        return (self.l11, self.l21, self.l22, self.sd_resid)

    def to_unconstrained(self) -> np.ndarray:
        if not math.isfinite(self.l21):
            raise NonFiniteParam(f"Paramètre non fini: l21={self.l21}")
        head = [_log_positive(self.l11, "l11")]
        if self.correlated:
            head.append(self.l21)
        elif self.l21 != 0.0:
            raise BoundaryParam("l21 doit être nul pour la variante sans corrélation")
        return np.array(head + [_log_positive(self.l22, "l22"), _log_positive(self.sd_resid, "sd_resid")])

    def from_unconstrained(self, u: Sequence[float]) -> "RandomInterceptSlope":
        if self.correlated:
            return replace(self, l11=math.exp(u[0]), l21=float(u[1]), l22=math.exp(u[2]),
                           sd_resid=math.exp(u[3]))
        return replace(self, l11=math.exp(u[0]), l21=0.0, l22=math.exp(u[1]), sd_resid=math.exp(u[2]))

    def random_factor(self) -> np.ndarray:
        return np.array([[self.l11, 0.0], [self.l21, self.l22]])

    def z_matrix(self, t: np.ndarray) -> np.ndarray:
        return np.column_stack([np.ones(len(t)), t])

    @property
    def sd_slope(self) -> float:
        return math.hypot(self.l21, self.l22)

    @property
    def corr(self) -> float:
        return self.l21 / self.sd_slope if self.sd_slope > 0 else 0.0

    def sd_components(self) -> Dict[str, float]:
        return {"sd_intercept": abs(self.l11), "sd_slope": self.sd_slope, "sd_resid": self.sd_resid}

    def clamp(self, component: str) -> Optional[Tuple["CovarianceStructure", Tuple[int, ...]]]:
        if component == "sd_intercept":
            return replace(self, l11=BOUNDARY_CLAMP), (0,)
        if component == "sd_slope":
            fixed = (1, 2) if self.correlated else (1,)
            return replace(self, l21=0.0, l22=BOUNDARY_CLAMP), fixed
        return None

    def embed(self, ri: RandomIntercept) -> "RandomInterceptSlope":
        return RandomInterceptSlope(l11=ri.sd_intercept, l21=0.0, l22=BOUNDARY_CLAMP * ri.sd_intercept,
                                    sd_resid=ri.sd_resid, correlated=self.correlated)

    def describe(self) -> Dict[str, object]:
        document = super().describe()
        document["corr_intercept_slope"] = self.corr
        document["correlated"] = self.correlated
        return document


@dataclass(frozen=True)
class RandomInterceptAR1(CovarianceStructure):
    """Résidus AR(1) : corr(ε_j, ε_k) = φ^|t_j − t_k| (décalage mesuré en semaines)."""
    sd_intercept: float
    sd_resid: float
    phi: float

    token: ClassVar[str] = "ri+ar1"

    @property
    def n_params(self) -> int:
        return 3

    def values(self) -> Tuple[float, ...]:
        return (self.sd_intercept, self.sd_resid, self.phi)

    def to_unconstrained(self) -> np.ndarray:
        if not math.isfinite(self.phi):
            raise NonFiniteParam(f"Paramètre non fini: phi={self.phi}")
        if abs(self.phi) >= 1.0:
            raise BoundaryParam(f"|phi| = {abs(self.phi)} >= 1")
        return np.array([_log_positive(self.sd_intercept, "sd_intercept"),
                         _log_positive(self.sd_resid, "sd_resid"),
                         math.atanh(self.phi)])

    def from_unconstrained(self, u: Sequence[float]) -> "RandomInterceptAR1":
        return RandomInterceptAR1(sd_intercept=math.exp(u[0]), sd_resid=math.exp(u[1]),
                                  phi=math.tanh(u[2]))

    def random_factor(self) -> np.ndarray:
        return np.array([[self.sd_intercept]])

    def residual_corr(self, t: np.ndarray) -> np.ndarray:
        lag = np.abs(t[:, None] - t[None, :])
        with np.errstate(invalid="ignore"):
            return np.power(self.phi, lag)

    def sd_components(self) -> Dict[str, float]:
        return {"sd_intercept": self.sd_intercept, "sd_resid": self.sd_resid}

    def embed(self, ri: RandomIntercept) -> "RandomInterceptAR1":
        return RandomInterceptAR1(sd_intercept=ri.sd_intercept, sd_resid=ri.sd_resid, phi=0.0)

    def describe(self) -> Dict[str, object]:
        document = super().describe()
        document["phi"] = self.phi
        return document


@dataclass(frozen=True)
class RandomInterceptHeteroVar(CovarianceStructure):
    """Écart-type résiduel σ pour le groupe de référence, σ·ratio pour les autres groupes."""
    sd_intercept: float
    sd_resid: float
    ratios: Tuple[float, ...]
    groups: Tuple[int, ...]
    reference: int = 1

    token: ClassVar[str] = "ri+hv"

    @property
    def n_params(self) -> int:
        return 2 + len(self.groups)

    def values(self) -> Tuple[float, ...]:
        return (self.sd_intercept, self.sd_resid) + tuple(self.ratios)

    def ratio_for(self, group: int) -> float:
        if group == self.reference:
            return 1.0
        try:
            return self.ratios[self.groups.index(group)]
        except ValueError:
            raise UnknownGroup(f"Groupe {group} absent de la structure de variance")

    def residual_sd(self, group: int) -> float:
        return self.sd_resid * self.ratio_for(group)

    def to_unconstrained(self) -> np.ndarray:
        head = [_log_positive(self.sd_intercept, "sd_intercept"), _log_positive(self.sd_resid, "sd_resid")]
        return np.array(head + [_log_positive(r, f"ratio_{g}") for g, r in zip(self.groups, self.ratios)])

    def from_unconstrained(self, u: Sequence[float]) -> "RandomInterceptHeteroVar":
        return replace(self, sd_intercept=math.exp(u[0]), sd_resid=math.exp(u[1]),
                       ratios=tuple(math.exp(v) for v in u[2:]))

    def random_factor(self) -> np.ndarray:
        return np.array([[self.sd_intercept]])

    def sd_components(self) -> Dict[str, float]:
        components = {"sd_intercept": self.sd_intercept, "sd_resid": self.sd_resid}
        for group, ratio in zip(self.groups, self.ratios):
            components[f"sd_resid_{group}"] = self.sd_resid * ratio
        return components

    def embed(self, ri: RandomIntercept) -> "RandomInterceptHeteroVar":
        return replace(self, sd_intercept=ri.sd_intercept, sd_resid=ri.sd_resid,
                       ratios=(1.0,) * len(self.groups))

    def describe(self) -> Dict[str, object]:
        document = super().describe()
        document["ratios"] = {str(g): r for g, r in zip(self.groups, self.ratios)}
        return document


STRUCTURE_TOKENS = ("ri", "ris", "ri+ar1", "ri+hv")


def initial_structure(token: str, sd_intercept: float, sd_resid: float, groups: Sequence[int],
                      uncorrelated: bool = False) -> CovarianceStructure:
    """Point de départ intérieur d'une variante à partir d'échelles de type moments."""
    if token == "ri":
        return RandomIntercept(sd_intercept, sd_resid)
    if token == "ris":
        return RandomInterceptSlope.from_sds(sd_intercept, 0.1 * sd_intercept, 0.0, sd_resid,
                                             correlated=not uncorrelated)
    if token == "ri+ar1":
        return RandomInterceptAR1(sd_intercept, sd_resid, 0.0)
    if token == "ri+hv":
        levels = sorted(int(g) for g in groups)
        return RandomInterceptHeteroVar(sd_intercept, sd_resid, ratios=(1.0,) * (len(levels) - 1),
                                        groups=tuple(levels[1:]), reference=levels[0])
    raise UsageError(f"Structure inconnue: '{token}' (attendu: {', '.join(STRUCTURE_TOKENS)})")


def from_unconstrained(variant: CovarianceStructure, u: Sequence[float]) -> CovarianceStructure:
    """Image de `u` dans la variante (et la disposition de groupes) de `variant`."""
    return variant.from_unconstrained(u)


def icc(structure: RandomIntercept) -> float:
    """Corrélation intra-souris σ_b0² / (σ_b0² + σ²)."""
    if not isinstance(structure, RandomIntercept):
        raise UsageError("L'ICC n'est définie que pour la structure à ordonnée aléatoire")
    between = structure.sd_intercept ** 2
    total = between + structure.sd_resid ** 2
    if total <= 0.0:
        raise DegenerateVariance("σ_b0 et σ sont tous deux nuls")
    return between / total
