"""InfoNCE and the marginal contrastive loss over spatial positions.

Anchors are the condition features x_i; the positive of x_i is the ground
truth feature y_i at the same position and the other N - 1 ground truth
features are its negatives. Both losses reduce over anchors with a SUM.
"""

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .config import ContrastiveConfig
from .errors import ConfigError
from .feature_core import (
    FeatureGrid,
    Tensor,
    Var,
    add,
    add_scalar,
    arccos,
    clamp_max,
    cos,
    cosine_similarity_matrix,
    diagonal,
    replace_diagonal,
    require_same_shape,
    row_logsumexp,
    scale,
    stable_arccos,
    sub,
    sum_all,
)

DIRECTIONS = ("xy", "yx", "bidirectional")


@dataclass(frozen=True)
class LossReport:
    """A contrastive loss value with its per-anchor terms.

    ``value`` is the differentiable sum of ``per_anchor_terms``.
    """

    value: Var
    per_anchor_terms: Tensor
    direction: str = "xy"

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}, got {self.direction!r}")

    def item(self) -> float:
        return self.value.item()


def _report_from_logits(logits: Var, positive: Var, direction: str) -> LossReport:
    # -log(exp(pos) / sum_j exp(logit_ij)) = logsumexp_i - pos_i
    terms = sub(row_logsumexp(logits), positive)
    return LossReport(sum_all(terms), terms.value.copy(), direction)


def _zero_report(x: FeatureGrid, direction: str) -> LossReport:
    # one position has no negatives: log(1) = 0
    tape = x.tape
    return LossReport(tape.constant(0.0), np.zeros(1), direction)


def info_nce(x: FeatureGrid, y: FeatureGrid, tau: float, direction: str = "xy") -> LossReport:
    """InfoNCE over spatial positions with temperature ``tau``.

    Args:
        x: Row-normalized anchor features
        y: Row-normalized features of the other domain, same shape
        tau: Temperature, > 0
        direction: Label stored on the report

    Raises:
        DimensionError: If the grids differ in N or channels
    """
    require_same_shape(x, y)
    if tau <= 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    if x.n == 1:
        return _zero_report(x, direction)
    logits = scale(cosine_similarity_matrix(x, y), 1.0 / tau)
    return _report_from_logits(logits, diagonal(logits), direction)


def marginal_contrastive(
    x: FeatureGrid,
    y: FeatureGrid,
    cfg: ContrastiveConfig,
    direction: str = "xy",
) -> LossReport:
    """Marginal contrastive loss: InfoNCE on a radius-s sphere with an angular margin.

    For anchor i the positive logit is ``s * cos(min(theta_ii + m, pi))`` with
    ``theta_ii = stable_arccos(x_i . y_i)``; negatives keep ``s * x_i . y_j``.
    With ``m == 0`` the positive logit is ``s * x_i . y_i`` exactly, so the
    loss coincides with :func:`info_nce` at ``tau = 1 / s``.
    """
    require_same_shape(x, y)
    cfg.validate()
    if x.n == 1:
        return _zero_report(x, direction)

    cosine = cosine_similarity_matrix(x, y)
    logits = scale(cosine, cfg.scale_s)
    if cfg.margin_m == 0.0:
        return _report_from_logits(logits, diagonal(logits), direction)

    theta = arccos(diagonal(cosine))
    shifted = clamp_max(add_scalar(theta, cfg.margin_m), math.pi)
    positive = scale(cos(shifted), cfg.scale_s)
    return _report_from_logits(replace_diagonal(logits, positive), positive, direction)


def bidirectional(loss_xy: LossReport, loss_yx: LossReport) -> LossReport:
    """L_cl = L_xy + L_yx."""
    if loss_xy.per_anchor_terms.shape != loss_yx.per_anchor_terms.shape:
        raise ValueError("both directions must be computed over the same pair")
    return LossReport(
        add(loss_xy.value, loss_yx.value),
        loss_xy.per_anchor_terms + loss_yx.per_anchor_terms,
        "bidirectional",
    )


def contrastive_loss(
    x: FeatureGrid,
    y: FeatureGrid,
    kind: str,
    cfg: ContrastiveConfig,
    both_directions: bool = True,
) -> LossReport:
    """Dispatch to the configured contrastive loss (``mcl`` or ``infonce``)."""
    if kind == "mcl":
        forward = marginal_contrastive(x, y, cfg, "xy")
        if not both_directions:
            return forward
        return bidirectional(forward, marginal_contrastive(y, x, cfg, "yx"))
    if kind == "infonce":
        forward = info_nce(x, y, cfg.temperature_tau, "xy")
        if not both_directions:
            return forward
        return bidirectional(forward, info_nce(y, x, cfg.temperature_tau, "yx"))
    raise ValueError(f"unknown contrastive loss {kind!r}")


def feature_separability_stats(x: FeatureGrid, y: FeatureGrid) -> Tuple[float, float]:
    """Mean positive angle theta_ii and mean negative angle theta_ij (i != j).

    Diagnostic only; nothing is recorded on the tape. With N = 1 the
    negative mean is reported as NaN.
    """
    require_same_shape(x, y)
    angles = stable_arccos(x.values @ y.values.T)
    angles = np.atleast_2d(angles)
    n = angles.shape[0]
    positive = float(np.mean(np.diagonal(angles)))
    if n == 1:
        return positive, float("nan")
    off_diagonal = angles[~np.eye(n, dtype=bool)]
    return positive, float(np.mean(off_diagonal))
