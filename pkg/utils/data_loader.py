# utils/data_loader.py
import io
import re
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from .config import (
    ID_COLUMN, GROUP_COLUMN, TIME_COLUMN, RESPONSE_COLUMN, WEIGHT_PREFIX, LONG_COLUMNS
)
from .errors import (
    BadNumber, DataError, DuplicateId, InsufficientData, MalformedFile, MissingColumn, MissingValue,
    NonContiguousWeeks
)

WEIGHT_COLUMN_PATTERN = re.compile(rf"^{WEIGHT_PREFIX}(\d+)$")


# --- Types de données ---

@dataclass(frozen=True, eq=False)
class WideDataset:
    """Tableau large : une ligne par souris, une colonne de poids par semaine."""
    mouse_ids: Tuple[str, ...]
    groups: Tuple[int, ...]
    weeks: Tuple[int, ...]
    weights: np.ndarray          # (M, W), grammes

    @property
    def n_mice(self) -> int:
        return len(self.mouse_ids)

    @property
    def n_weeks(self) -> int:
        return len(self.weeks)


@dataclass(frozen=True, eq=False)
class LongDataset:
    """Tableau long : une ligne par souris et par semaine, trié par (mouseid, tw)."""
    frame: pd.DataFrame

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "LongDataset":
        data = frame[LONG_COLUMNS].copy()
        data[ID_COLUMN] = data[ID_COLUMN].astype(str)
        data[GROUP_COLUMN] = data[GROUP_COLUMN].astype("int64")
        times = pd.to_numeric(data[TIME_COLUMN]).astype("float64")
        # Les semaines entières restent entières (format de sortie stable)
        if np.all(np.isfinite(times)) and np.all(times == np.round(times)):
            data[TIME_COLUMN] = times.astype("int64")
        else:
            data[TIME_COLUMN] = times
        data[RESPONSE_COLUMN] = data[RESPONSE_COLUMN].astype("float64")
        data = data.sort_values([ID_COLUMN, TIME_COLUMN], kind="mergesort").reset_index(drop=True)
        return cls(frame=data)

    @property
    def n_obs(self) -> int:
        return len(self.frame)

    @property
    def n_mice(self) -> int:
        return int(self.frame[ID_COLUMN].nunique())

    def mouse_ids(self) -> List[str]:
        return list(pd.unique(self.frame[ID_COLUMN]))

    def group_levels(self) -> List[int]:
        return sorted(int(g) for g in pd.unique(self.frame[GROUP_COLUMN]))

    def trajectories(self) -> Dict[str, np.ndarray]:
        """Poids de chaque souris, dans l'ordre des semaines."""
        return {
            mouse: group[RESPONSE_COLUMN].to_numpy()
            for mouse, group in self.frame.groupby(ID_COLUMN, sort=True)
        }


@dataclass(frozen=True)
class Finding:
    kind: str                    # DuplicateObservation, GroupSwitch, NonPositiveWeight, NonFiniteWeight
    mouse_id: str
    tw: Optional[float]
    message: str


@dataclass(frozen=True)
class ValidationReport:
    findings: Tuple[Finding, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.findings

    def count(self, kind: str) -> int:
        return sum(1 for f in self.findings if f.kind == kind)


@dataclass(frozen=True, eq=False)
class GroupWeekMeans:
    """Moyennes observées par (groupe, semaine) ; colonnes grp, tw, mean_weight, n."""
    frame: pd.DataFrame


# --- Lecture des fichiers ---

def _read_table(text: str) -> pd.DataFrame:
    """Lit un tableau délimité par des virgules en conservant les cellules brutes."""
    try:
        frame = pd.read_csv(io.StringIO(text), dtype=str, keep_default_na=False,
                            skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise MissingColumn("Fichier vide: en-tête absent")
    except pd.errors.ParserError as e:
        # Ligne avec plus de champs que l'en-tête
        raise MalformedFile(f"Tableau mal formé: {e}")
    frame.columns = [str(c).strip() for c in frame.columns]
    return frame.apply(lambda col: col.str.strip())


def _numeric_column(frame: pd.DataFrame, column: str, integral: bool = False) -> pd.Series:
    """Convertit une colonne en nombres ; signale la première cellule vide ou invalide."""
    raw = frame[column]
    empty = raw == ""
    if empty.any():
        row = int(np.flatnonzero(empty.to_numpy())[0]) + 2
        raise MissingValue(f"Valeur manquante dans la colonne '{column}' (ligne {row})")
    values = pd.to_numeric(raw, errors="coerce")
    bad = values.isna() | ~np.isfinite(values.astype(float))
    if integral:
        bad |= values != np.round(values)
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        raise BadNumber(f"Valeur non numérique '{raw.iloc[row]}' dans la colonne '{column}' (ligne {row + 2})")
    return values.astype("int64") if integral else values.astype("float64")


def _warn_extra_columns(columns: List[str], used: List[str]) -> None:
    extra = [c for c in columns if c not in used]
    if extra:
        logging.warning(f"Colonnes ignorées: {', '.join(extra)}")


def parse_wide(text: str) -> WideDataset:
    """Analyse un tableau large `mouseid,grp,bw1..bwW`."""
    frame = _read_table(text)
    for required in (ID_COLUMN, GROUP_COLUMN):
        if required not in frame.columns:
            raise MissingColumn(f"Colonne obligatoire absente: '{required}'")

    weight_columns = {}
    for column in frame.columns:
        match = WEIGHT_COLUMN_PATTERN.match(column)
        if match:
            weight_columns[int(match.group(1))] = column
    if not weight_columns:
        raise MissingColumn(f"Aucune colonne de poids '{WEIGHT_PREFIX}<k>' trouvée")
    weeks = sorted(weight_columns)
    if weeks != list(range(1, len(weeks) + 1)):
        raise NonContiguousWeeks(
            f"Semaines non contiguës: {', '.join(f'{WEIGHT_PREFIX}{k}' for k in weeks)}"
        )
    ordered = [weight_columns[k] for k in weeks]
    _warn_extra_columns(list(frame.columns), [ID_COLUMN, GROUP_COLUMN] + ordered)

    if frame.empty:
        raise InsufficientData("Aucune souris dans le fichier large")
    ids = frame[ID_COLUMN]
    if (ids == "").any():
        raise MissingValue(f"Identifiant de souris manquant dans la colonne '{ID_COLUMN}'")
    duplicated = ids[ids.duplicated()]
    if not duplicated.empty:
        raise DuplicateId(f"Identifiant dupliqué: '{duplicated.iloc[0]}'")

    groups = _numeric_column(frame, GROUP_COLUMN, integral=True)
    weights = np.column_stack([_numeric_column(frame, column).to_numpy() for column in ordered])
    weights.setflags(write=False)
    logging.info(f"Fichier large lu: {len(frame)} souris, {len(weeks)} semaines")
    return WideDataset(
        mouse_ids=tuple(ids.tolist()),
        groups=tuple(int(g) for g in groups),
        weeks=tuple(weeks),
        weights=weights,
    )


def pivot_longer(wide: WideDataset) -> LongDataset:
    """Passe du format large au format long (une ligne par souris-semaine)."""
    columns = [f"{WEIGHT_PREFIX}{k}" for k in wide.weeks]
    frame = pd.DataFrame(np.asarray(wide.weights, dtype=float), columns=columns)
    frame.insert(0, ID_COLUMN, list(wide.mouse_ids))
    frame.insert(1, GROUP_COLUMN, list(wide.groups))
    long = frame.melt(id_vars=[ID_COLUMN, GROUP_COLUMN], var_name=TIME_COLUMN,
                      value_name=RESPONSE_COLUMN)
    # La semaine est le suffixe entier de bw<k>
    long[TIME_COLUMN] = long[TIME_COLUMN].str.removeprefix(WEIGHT_PREFIX).astype(int)
    return LongDataset.from_frame(long)


def parse_long(text: str) -> LongDataset:
    """Analyse un tableau long `mouseid,grp,tw,weight`."""
    frame = _read_table(text)
    for required in LONG_COLUMNS:
        if required not in frame.columns:
            raise MissingColumn(f"Colonne obligatoire absente: '{required}'")
    _warn_extra_columns(list(frame.columns), LONG_COLUMNS)
    if (frame[ID_COLUMN] == "").any():
        raise MissingValue(f"Identifiant de souris manquant dans la colonne '{ID_COLUMN}'")
    data = pd.DataFrame({
        ID_COLUMN: frame[ID_COLUMN],
        GROUP_COLUMN: _numeric_column(frame, GROUP_COLUMN, integral=True),
        TIME_COLUMN: _numeric_column(frame, TIME_COLUMN),
        RESPONSE_COLUMN: _numeric_column(frame, RESPONSE_COLUMN),
    })
    return LongDataset.from_frame(data)


def validate_long(data: LongDataset) -> ValidationReport:
    """Liste les anomalies du format long (rapport vide si tout est valide)."""
    frame = data.frame
    findings: List[Finding] = []

    duplicated = frame[frame.duplicated([ID_COLUMN, TIME_COLUMN], keep="first")]
    for _, row in duplicated.iterrows():
        findings.append(Finding(
            "DuplicateObservation", str(row[ID_COLUMN]), float(row[TIME_COLUMN]),
            f"Observation dupliquée pour {row[ID_COLUMN]} en semaine {row[TIME_COLUMN]}",
        ))

    n_groups = frame.groupby(ID_COLUMN, sort=True)[GROUP_COLUMN].nunique()
    for mouse in n_groups[n_groups > 1].index:
        levels = sorted(frame.loc[frame[ID_COLUMN] == mouse, GROUP_COLUMN].unique())
        findings.append(Finding(
            "GroupSwitch", str(mouse), None,
            f"La souris {mouse} change de groupe: {levels}",
        ))

    weights = frame[RESPONSE_COLUMN].to_numpy(dtype=float)
    for position in np.flatnonzero(~np.isfinite(weights)):
        row = frame.iloc[position]
        findings.append(Finding("NonFiniteWeight", str(row[ID_COLUMN]), float(row[TIME_COLUMN]),
                                "Poids non fini"))
    with np.errstate(invalid="ignore"):
        nonpositive = np.isfinite(weights) & (weights <= 0)
    for position in np.flatnonzero(nonpositive):
        row = frame.iloc[position]
        findings.append(Finding("NonPositiveWeight", str(row[ID_COLUMN]), float(row[TIME_COLUMN]),
                                f"Poids non positif: {row[RESPONSE_COLUMN]}"))

    if findings:
        logging.warning(f"{len(findings)} anomalie(s) détectée(s) dans le jeu de données long")
    return ValidationReport(tuple(findings))


def group_week_means(data: LongDataset) -> GroupWeekMeans:
    """Poids moyen observé par groupe et par semaine (tri groupe puis semaine)."""
    cells = (
        data.frame.groupby([GROUP_COLUMN, TIME_COLUMN], sort=True)[RESPONSE_COLUMN]
        .agg(mean_weight="mean", n="count")
        .reset_index()
    )
    return GroupWeekMeans(frame=cells)


# --- Fonctions de chargement ---

def _is_wide_header(text: str) -> bool:
    header = text.splitlines()[0] if text.strip() else ""
    return any(WEIGHT_COLUMN_PATTERN.match(c.strip()) for c in header.split(","))


def read_dataset(path: str) -> LongDataset:
    """Lit un fichier large ou long (détecté via l'en-tête) et renvoie le format long validé."""
    try:
        text = Path(path).read_text(encoding="utf-8-sig")
    except UnicodeDecodeError as e:
        raise MalformedFile(f"Fichier {path} non encodé en UTF-8: {e}")
    if _is_wide_header(text):
        logging.info(f"Lecture du fichier large {path}")
        data = pivot_longer(parse_wide(text))
    else:
        logging.info(f"Lecture du fichier long {path}")
        data = parse_long(text)

    # Mêmes contrôles pour les deux formats (poids > 0, pas de doublon...)
    report = validate_long(data)
    if not report.ok:
        details = "; ".join(f.message for f in report.findings[:5])
        raise DataError(f"Jeu de données invalide ({len(report.findings)} anomalie(s)): {details}")
    logging.info(f"{data.n_obs} observations chargées pour {data.n_mice} souris")
    return data


def write_long(data: LongDataset, path: str) -> None:
    """Écrit le format long `mouseid,grp,tw,weight`."""
    save_table(data.frame[LONG_COLUMNS], path)


def save_table(frame: pd.DataFrame, path: str) -> None:
    """Écrit un tableau délimité (valeurs manquantes notées NA)."""
    output = Path(path)
    output.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(output, index=False, na_rep="NA", lineterminator="\n")
    logging.info(f"Fichier écrit: {output} ({len(frame)} lignes)")
