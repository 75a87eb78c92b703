"""Self-correlation maps: per-position similarity to every other position.

SCM_i = x_i^T . X encodes where in the image features resemble position i,
i.e. the scene layout around it. The flattened map is projected to a small
dimension by a learned linear layer and concatenated to the base feature
before correspondence is built.
"""

from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from .errors import DimensionError
from .feature_core import (
    FeatureGrid,
    Tape,
    Tensor,
    Var,
    add_row_bias,
    concat_columns,
    gram,
    l2_normalize_rows,
    matmul,
)


@dataclass(frozen=True)
class SelfCorrelationMap:
    """(N, N) node whose row i is SCM_i; exactly symmetric."""

    grid: Var
    height: int
    width: int

    @property
    def n(self) -> int:
        return self.grid.shape[0]

    @property
    def values(self) -> Tensor:
        return self.grid.value

    def heatmap(self, position: int) -> Tensor:
        """Row ``position`` laid out on the H x W grid."""
        return self.values[position].reshape(self.height, self.width)


@dataclass
class ScmProjection:
    """Linear map from a flattened SCM row (length N) to ``d_proj`` dims."""

    weight: Tensor
    bias: Tensor

    def __post_init__(self):
        if self.weight.ndim != 2 or self.weight.shape[1] < 1:
            raise DimensionError(f"projection weight must be N x d_proj, got {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[1],):
            raise DimensionError(f"projection bias must have {self.weight.shape[1]} entries")

    @property
    def d_proj(self) -> int:
        return self.weight.shape[1]

    def named_tensors(self, prefix: str) -> Dict[str, Tensor]:
        return {f"{prefix}.weight": self.weight, f"{prefix}.bias": self.bias}

    @classmethod
    def from_named(cls, prefix: str, tensors: Dict[str, Tensor]) -> "ScmProjection":
        return cls(weight=tensors[f"{prefix}.weight"], bias=tensors[f"{prefix}.bias"])

    @classmethod
    def initialize(cls, n: int, d_proj: int, rng: np.random.Generator) -> "ScmProjection":
        bound = np.sqrt(6.0 / n)
        return cls(weight=rng.uniform(-bound, bound, size=(n, d_proj)), bias=np.zeros(d_proj))


def compute_scm(x: FeatureGrid) -> SelfCorrelationMap:
    """SCM = X . X^T, differentiable through ``x``."""
    return SelfCorrelationMap(gram(x.tensor), x.height, x.width)


def project_scm(
    scm: SelfCorrelationMap,
    proj: ScmProjection,
    tape: Optional[Tape] = None,
    prefix: str = "scm",
) -> FeatureGrid:
    """Row i becomes SCM_i . weight + bias.

    Projection tensors are registered on the tape as parameters named
    ``<prefix>.weight`` / ``<prefix>.bias``.

    Raises:
        DimensionError: If the weight's first dimension is not N
    """
    if proj.weight.shape[0] != scm.n:
        raise DimensionError(f"projection expects N={proj.weight.shape[0]}, SCM has N={scm.n}")
    tape = tape or scm.grid.tape
    weight = tape.parameter(f"{prefix}.weight", proj.weight)
    bias = tape.parameter(f"{prefix}.bias", proj.bias)
    projected = add_row_bias(matmul(scm.grid, weight), bias)
    return FeatureGrid(scm.height, scm.width, proj.d_proj, projected)


def augment_features(base: FeatureGrid, structure: FeatureGrid, epsilon: float = 1e-12) -> FeatureGrid:
    """Concatenate structure features to base features and renormalize rows."""
    if base.n != structure.n:
        raise DimensionError(f"cannot augment {base.n} positions with {structure.n} positions")
    joined = concat_columns(base.tensor, structure.tensor)
    return l2_normalize_rows(FeatureGrid(base.height, base.width, joined.shape[1], joined), epsilon)


def structure_aware(grid: FeatureGrid, proj: ScmProjection, prefix: str) -> FeatureGrid:
    """compute_scm -> project_scm -> augment_features in one call."""
    structure = project_scm(compute_scm(grid), proj, prefix=prefix)
    return augment_features(grid, structure)
