"""Per-step measurement of inter-modality conflict and gradient-field energy."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .decoupling import NORM_EPS, GradientField, modality_geometry
from .errors import ContractViolation
from .graphs import DenseAdjacency, dirichlet_energy


@dataclass(frozen=True)
class ConflictStats:
    conflict_rate: float
    mean_cosine: float
    dirichlet_raw: float
    dirichlet_decoupled: float
    degenerate: bool = False


def _conflict_counts(field: GradientField):
    dots, norm_text, norm_image = modality_geometry(field)
    valid = (norm_text >= NORM_EPS) & (norm_image >= NORM_EPS)
    n_valid = int(valid.sum())
    if n_valid == 0:
        return 0, 0, np.zeros(0)
    cosines = dots[valid] / (norm_text[valid] * norm_image[valid])
    return int((dots[valid] < 0.0).sum()), n_valid, cosines


def conflict_rate(field: GradientField) -> float:
    """Fraction of rows whose modality gradient slices oppose each other.

    Rows where either slice norm is below 1e-15 are excluded from both the
    numerator and the denominator; if every row is degenerate the rate is 0.
    """
    n_conflict, n_valid, _ = _conflict_counts(field)
    return n_conflict / n_valid if n_valid else 0.0


def snapshot(field: GradientField, decoupled: GradientField,
             adjacency: DenseAdjacency) -> ConflictStats:
    """Pure measurement of one step's gradient field; no condensation state touched."""
    if field.values.shape != decoupled.values.shape:
        raise ContractViolation("raw and decoupled fields must have equal shapes")
    n_conflict, n_valid, cosines = _conflict_counts(field)
    return ConflictStats(
        conflict_rate=n_conflict / n_valid if n_valid else 0.0,
        mean_cosine=float(cosines.mean()) if n_valid else 0.0,
        dirichlet_raw=dirichlet_energy(field.values, adjacency),
        dirichlet_decoupled=dirichlet_energy(decoupled.values, adjacency),
        degenerate=n_valid == 0,
    )
