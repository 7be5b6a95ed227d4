# utils/errors.py
"""
Hiérarchie des exceptions du moteur de modèles mixtes.

Trois familles sont distinguées car la CLI les traduit en codes de sortie :
erreurs de données (3), erreurs d'usage (2) et échecs numériques (4).
"""

from typing import Optional, Sequence


class LmmError(Exception):
    """Classe de base de toutes les erreurs du projet."""


# --- Erreurs de données (code de sortie 3) ---

class DataError(LmmError):
    """Données d'entrée invalides."""


class MissingColumn(DataError):
    pass


class NonContiguousWeeks(DataError):
    pass


class BadNumber(DataError):
    pass


class MalformedFile(DataError):
    """Fichier illisible : encodage invalide ou lignes de longueur incohérente."""


class DuplicateId(DataError):
    pass


class MissingValue(DataError):
    pass


class UnknownVariable(DataError):
    pass


class InsufficientData(DataError):
    pass


class TooLarge(DataError):
    pass


class TooFew(DataError):
    pass


# --- Erreurs d'usage (code de sortie 2) ---

class UsageError(LmmError):
    """Requête mal formée (formule, contraste, comparaison)."""


class FormulaError(UsageError):
    pass


class ParseError(FormulaError):
    """Erreur de syntaxe dans une formule, avec la position (octet) fautive."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (position {offset})")
        self.offset = offset


class UnknownOperator(FormulaError):
    def __init__(self, operator: str, offset: int):
        super().__init__(f"Opérateur inconnu '{operator}' (position {offset})")
        self.operator = operator
        self.offset = offset


class InferenceError(UsageError):
    pass


class NotNested(InferenceError):
    pass


class MethodMismatch(InferenceError):
    pass


class ZeroContrast(InferenceError):
    pass


class LayoutMismatch(InferenceError):
    pass


class UnknownGroup(InferenceError):
    pass


# --- Échecs numériques (code de sortie 4) ---

class NumericalError(LmmError):
    """Échec d'un calcul numérique."""


class RankDeficient(NumericalError):
    pass


class NonFiniteParam(NumericalError):
    pass


class BoundaryParam(NumericalError):
    pass


class DegenerateVariance(NumericalError):
    pass


class CholeskyFailure(NumericalError):
    pass


class SingularInformation(NumericalError):
    pass


class NonConvergence(NumericalError):
    """L'optimiseur n'a pas convergé ; conserve le meilleur point trouvé."""

    def __init__(self, message: str, best_point: Optional[Sequence[float]] = None,
                 gradient_norm: float = float("nan")):
        super().__init__(f"{message} (norme du gradient: {gradient_norm:.3g})")
        self.best_point = None if best_point is None else list(best_point)
        self.gradient_norm = gradient_norm


# Codes de sortie de la CLI
EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


def exit_code_for(error: Exception) -> int:
    """Associe une exception au code de sortie de la CLI."""
    if isinstance(error, DataError):
        return EXIT_DATA
    if isinstance(error, NumericalError):
        return EXIT_NUMERICAL
    if isinstance(error, UsageError):
        return EXIT_USAGE
    if isinstance(error, OSError):
        return EXIT_DATA
    return EXIT_NUMERICAL
