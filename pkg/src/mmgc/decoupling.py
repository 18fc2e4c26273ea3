"""Gradient fields over synthetic nodes and inter-modality decoupling.

A conflicted row (negative inner product between its text and image gradient
slices) has each slice projected onto the normal plane of the other; both
projections use the original slices. Non-conflicted rows pass through
bitwise-unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .kernels import modality_mix

NORM_EPS = 1e-15


@dataclass
class GradientField:
    """Per-node feature gradients, sliceable into modality halves."""

    values: np.ndarray
    d_text: int

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ContractViolation("gradient field must be 2-D")
        if not 0 < self.d_text < self.values.shape[1]:
            raise ContractViolation("modality split must be interior to the row")

    @property
    def d_image(self) -> int:
        return self.values.shape[1] - self.d_text

    @property
    def text(self) -> np.ndarray:
        return self.values[:, :self.d_text]

    @property
    def image(self) -> np.ndarray:
        return self.values[:, self.d_text:]

    def require_equal_split(self):
        if self.d_text != self.d_image:
            raise ContractViolation(
                "modality slices must have equal width for projection operations")


def modality_geometry(field: GradientField):
    """Per-row inner products and slice norms (dots, norm_text, norm_image)."""
    field.require_equal_split()
    dots = np.einsum("ij,ij->i", field.text, field.image)
    norm_text = np.sqrt(np.einsum("ij,ij->i", field.text, field.text))
    norm_image = np.sqrt(np.einsum("ij,ij->i", field.image, field.image))
    return dots, norm_text, norm_image


def conflict_mask(field: GradientField) -> np.ndarray:
    """Rows whose slice inner product is negative and both slice norms are at
    least 1e-15; degenerate rows are treated as non-conflicting (the
    projection denominator would vanish)."""
    dots, norm_text, norm_image = modality_geometry(field)
    valid = (norm_text >= NORM_EPS) & (norm_image >= NORM_EPS)
    return valid & (dots < 0.0)


def conflict_coefficients(field: GradientField):
    """Projection branch: (mask, coeff_text, coeff_image)."""
    mask = conflict_mask(field)
    dots = np.einsum("ij,ij->i", field.text, field.image)
    coeff_text = np.zeros_like(dots)
    coeff_image = np.zeros_like(dots)
    if mask.any():
        coeff_text[mask] = dots[mask] / np.einsum(
            "ij,ij->i", field.image[mask], field.image[mask])
        coeff_image[mask] = dots[mask] / np.einsum(
            "ij,ij->i", field.text[mask], field.text[mask])
    return mask, coeff_text, coeff_image


def decouple(field: GradientField) -> GradientField:
    """Project conflicting modality gradients onto each other's normal plane."""
    mask, coeff_text, coeff_image = conflict_coefficients(field)
    out = modality_mix(field.values, field.d_text, mask, coeff_text, coeff_image)
    return GradientField(out, field.d_text)
