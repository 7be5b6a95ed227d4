# tests/helpers.py
"""Jeux de données synthétiques partagés par les tests."""

import numpy as np
import pandas as pd

from utils.covstruct import RandomIntercept
from utils.data_loader import LongDataset
from utils.oracle import SimLayout, default_truth, simulate

WIDE_TEXT = (
    "mouseid,grp,bw1,bw2,bw3\n"
    "A1,1,20.1,20.5,21.0\n"
    "A2,1,19.8,20.2,20.9\n"
    "B1,2,35.0,35.6,36.1\n"
    "C1,3,38.2,40.0,41.9\n"
)


def long_dataset(rows) -> LongDataset:
    """rows: itérable de (mouseid, grp, tw, weight)."""
    return LongDataset.from_frame(pd.DataFrame(rows, columns=["mouseid", "grp", "tw", "weight"]))


def tiny_dataset(structure=None, seed: int = 11) -> LongDataset:
    """5 souris × 4 semaines (groupes 1, 1, 2, 2, 3)."""
    truth = default_truth(structure)
    return simulate(truth, SimLayout(group_sizes={1: 2, 2: 2, 3: 1}, weeks=4, seed=seed))


def study_dataset(seed: int = 2024, sd_intercept: float = 1.72, sd_resid: float = 1.37) -> LongDataset:
    """Plan de l'étude : 10, 10 et 11 souris suivies 12 semaines."""
    truth = default_truth(RandomIntercept(sd_intercept, sd_resid))
    return simulate(truth, SimLayout(seed=seed))


def balanced_intercept_dataset(seed: int = 5, mice: int = 8, weeks: int = 6) -> LongDataset:
    """Données équilibrées à un seul groupe pour les formules fermées de l'ordonnée aléatoire."""
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(mice):
        b = rng.normal(0.0, 2.0)
        for t in range(1, weeks + 1):
            rows.append((f"M{i:02d}", 1, t, 20.0 + 0.5 * t + b + rng.normal(0.0, 1.0)))
    return long_dataset(rows)
