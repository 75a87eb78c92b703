"""Correspondence matrix, exemplar warping and the correspondence-network losses."""

from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np

from .config import LossWeights
from .errors import ConfigError, DimensionError
from .feature_core import (
    FeatureGrid,
    Tensor,
    Var,
    add,
    cosine_similarity_matrix,
    l1_distance,
    matmul,
    scale,
    softmax_rows,
    transpose,
)

Rows = Union[FeatureGrid, Var]

OBJECTIVE_TERMS = ("cyc", "fcst", "contrastive", "pse")


def _rows(z: Rows) -> Var:
    return z.tensor if isinstance(z, FeatureGrid) else z


@dataclass(frozen=True)
class CorrespondenceMatrix:
    """Row-stochastic N x N matrix; row i weights exemplar positions for condition position i."""

    t: Var
    sharpness: float

    @property
    def n(self) -> int:
        return self.t.shape[0]

    @property
    def values(self) -> Tensor:
        return self.t.value

    def argmax(self) -> Tensor:
        return np.argmax(self.t.value, axis=1)


@dataclass(frozen=True)
class WarpResult:
    """Warped exemplar T . Z and the best-matching exemplar index per row."""

    warped: Var
    source_argmax: Tensor


def build_correspondence(cond: FeatureGrid, exemplar: FeatureGrid, sharpness: float) -> CorrespondenceMatrix:
    """T = softmax_rows(cosine(cond, exemplar), sharpness).

    Raises:
        DimensionError: On channel mismatch
        ConfigError: If sharpness is not positive
    """
    similarity = cosine_similarity_matrix(cond, exemplar)
    return CorrespondenceMatrix(softmax_rows(similarity, sharpness), sharpness)


def warp(t: CorrespondenceMatrix, z: Rows) -> WarpResult:
    z = _rows(z)
    if z.value.ndim != 2 or z.shape[0] != t.t.shape[1]:
        raise DimensionError(f"T is {t.t.shape}, cannot warp {z.shape}")
    return WarpResult(matmul(t.t, z), t.argmax())


def cycle_loss(t: CorrespondenceMatrix, z: Rows) -> Var:
    """||T^T . T . Z - Z||_1 with T^T the plain transpose."""
    z = _rows(z)
    warped = warp(t, z).warped
    recovered = matmul(transpose(t.t), warped)
    return l1_distance(recovered, z)


def feature_consistency_loss(fx: FeatureGrid, fy: FeatureGrid) -> Var:
    """||E_X(X) - E_Z(Y)||_1 over all elements."""
    if fx.n != fy.n or fx.channels != fy.channels:
        raise DimensionError(f"feature grids differ: {fx.n}x{fx.channels} vs {fy.n}x{fy.channels}")
    return l1_distance(fx.tensor, fy.tensor)


def pseudo_pair_loss(t: CorrespondenceMatrix, z: Rows, y_aug: Rows) -> Var:
    """||T . Z - Y'||_1 where Y' is an augmented ground truth used as exemplar."""
    warped = warp(t, z).warped
    target = _rows(y_aug)
    if warped.shape != target.shape:
        raise DimensionError(f"warped exemplar {warped.shape} vs target {target.shape}")
    return l1_distance(warped, target)


def correspondence_objective(parts: Mapping[str, Var], weights: LossWeights) -> Var:
    """Weighted sum ``cyc * L_cyc + fcst * L_fcst + contrastive * L_contrastive + pse * L_pse``.

    Terms missing from ``parts`` contribute nothing, which is how the
    correspondence-only baseline drops the contrastive term.

    Raises:
        ConfigError: On negative weights or unknown part names
    """
    weights.validate()
    unknown = sorted(set(parts) - set(OBJECTIVE_TERMS))
    if unknown:
        raise ConfigError(f"unknown objective terms: {', '.join(unknown)}")
    if not parts:
        raise ValueError("objective needs at least one part")

    by_name = weights.as_dict()
    total = None
    for name in OBJECTIVE_TERMS:
        if name not in parts:
            continue
        term = scale(parts[name], by_name[name])
        total = term if total is None else add(total, term)
    return total
