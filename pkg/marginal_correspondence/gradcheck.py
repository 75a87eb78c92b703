"""Central finite-difference checks of every differentiable operation.

Each case draws random inputs, reduces the op's output to a scalar with a
fixed random weighting, and compares tape gradients against
``(f(x + h) - f(x - h)) / 2h`` entry by entry. The relative error of an
entry is ``|a - n| / max(|a|, |n|, floor)`` with a floor of 1e-8, so only
gradients that are zero to within rounding are compared absolutely.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .config import ContrastiveConfig, LossWeights
from .contrastive import info_nce, marginal_contrastive
from .correspondence import (
    CorrespondenceMatrix,
    correspondence_objective,
    cycle_loss,
    feature_consistency_loss,
    pseudo_pair_loss,
    warp,
)
from .encoders import EncoderParams, encode
from .feature_core import (
    FeatureGrid,
    Tape,
    Tensor,
    Var,
    arccos,
    cosine_similarity_matrix,
    gram,
    l2_normalize_rows,
    mul,
    normalize_rows,
    softmax_rows,
    sum_all,
    take_rows,
)
from .scm import ScmProjection, structure_aware

logger = logging.getLogger(__name__)

STEP = 1e-5
TOLERANCE = 1e-3
RELATIVE_FLOOR = 1e-8
# small sharpness keeps softmax far from saturation
CHECK_SHARPNESS = 5.0

Inputs = Dict[str, Tensor]
LossFn = Callable[[Tape, Dict[str, Var]], Var]


@dataclass(frozen=True)
class GradCase:
    name: str
    make_inputs: Callable[[np.random.Generator], Inputs]
    loss: LossFn


@dataclass
class CaseResult:
    name: str
    instances: int
    max_rel_error: float
    passed: bool

    def __str__(self) -> str:
        status = "ok" if self.passed else "FAIL"
        return (
            f"{self.name:<22} {status:<4} instances={self.instances} "
            f"max_rel_err={self.max_rel_error:.3e} floor={RELATIVE_FLOOR:g}"
        )


def relative_error(analytic: Tensor, numeric: Tensor) -> Tensor:
    scale = np.maximum(RELATIVE_FLOOR, np.maximum(np.abs(analytic), np.abs(numeric)))
    return np.abs(analytic - numeric) / scale


def _project(out: Var, tape: Tape, seed: int = 7) -> Var:
    weights = np.random.default_rng(seed).standard_normal(out.shape)
    return sum_all(mul(out, tape.constant(weights)))


def _grid(x: Var, height: int, width: int) -> FeatureGrid:
    return l2_normalize_rows(FeatureGrid(height, width, x.shape[1], x))


def _dims(rng: np.random.Generator):
    height = int(rng.integers(2, 4))
    width = int(rng.integers(2, 5))
    channels = int(rng.integers(2, 9))
    return height, width, channels


def _feature_pair(rng: np.random.Generator) -> Inputs:
    h, w, c = _dims(rng)
    x = rng.standard_normal((h * w, c))
    # y near x keeps every positive angle well below pi - margin
    y = x + 0.2 * np.linalg.norm(x, axis=1, keepdims=True) * rng.uniform(-1.0, 1.0, x.shape)
    return {"x": x, "y": y, "hw": np.array([h, w])}


def _hw(values: Dict[str, Var]):
    h, w = (int(v) for v in values["hw"].value)
    return h, w


def _cases() -> List[GradCase]:
    def normalize_case(tape, v):
        return _project(normalize_rows(v["x"]), tape)

    def cosine_case(tape, v):
        h, w = _hw(v)
        return _project(cosine_similarity_matrix(_grid(v["x"], h, w), _grid(v["y"], h, w)), tape)

    def softmax_case(tape, v):
        return _project(softmax_rows(v["m"], CHECK_SHARPNESS), tape)

    def arccos_case(tape, v):
        return _project(arccos(v["c"]), tape)

    def info_nce_case(tape, v):
        h, w = _hw(v)
        return info_nce(_grid(v["x"], h, w), _grid(v["y"], h, w), tau=0.5).value

    def mcl_case(tape, v):
        h, w = _hw(v)
        cfg = ContrastiveConfig(margin_m=0.3, scale_s=4.0)
        return marginal_contrastive(_grid(v["x"], h, w), _grid(v["y"], h, w), cfg).value

    def scm_case(tape, v):
        h, w = _hw(v)
        proj = ScmProjection(v["proj.weight"].value, v["proj.bias"].value)
        out = structure_aware(_grid(v["x"], h, w), proj, prefix="proj")
        return _project(out.tensor, tape)

    def take_rows_case(tape, v):
        n = v["x"].shape[0]
        index = np.random.default_rng(n).integers(0, n, size=n + 2)
        return _project(take_rows(v["x"], index), tape)

    def gram_case(tape, v):
        return _project(gram(v["x"]), tape)

    def warp_case(tape, v):
        t = CorrespondenceMatrix(softmax_rows(v["m"], CHECK_SHARPNESS), CHECK_SHARPNESS)
        return _project(warp(t, v["z"]).warped, tape)

    def cycle_case(tape, v):
        t = CorrespondenceMatrix(softmax_rows(v["m"], CHECK_SHARPNESS), CHECK_SHARPNESS)
        return cycle_loss(t, v["z"])

    def fcst_case(tape, v):
        h, w = _hw(v)
        return feature_consistency_loss(_grid(v["x"], h, w), _grid(v["y"], h, w))

    def pse_case(tape, v):
        t = CorrespondenceMatrix(softmax_rows(v["m"], CHECK_SHARPNESS), CHECK_SHARPNESS)
        return pseudo_pair_loss(t, v["z"], v["target"])

    def objective_case(tape, v):
        h, w = _hw(v)
        x, y = _grid(v["x"], h, w), _grid(v["y"], h, w)
        t = CorrespondenceMatrix(softmax_rows(cosine_similarity_matrix(x, y), CHECK_SHARPNESS), CHECK_SHARPNESS)
        parts = {
            "cyc": cycle_loss(t, v["z"]),
            "fcst": feature_consistency_loss(x, y),
            "contrastive": marginal_contrastive(x, y, ContrastiveConfig(margin_m=0.2, scale_s=4.0)).value,
            "pse": pseudo_pair_loss(t, v["z"], v["z"]),
        }
        return correspondence_objective(parts, LossWeights(cyc=0.5, fcst=1.5, contrastive=0.7, pse=1.2))

    def encoder_case(tape, v):
        params = EncoderParams(
            "enc",
            kernels=[v["enc.0.kernel"].value, v["enc.1.kernel"].value],
            biases=[v["enc.0.bias"].value, v["enc.1.bias"].value],
            strides=[2, 1],
        )
        return _project(encode(params, v["image"], tape).tensor, tape)

    def rows(rng):
        return {"x": rng.standard_normal((int(rng.integers(1, 13)), int(rng.integers(1, 9))))}

    def square(rng):
        n = int(rng.integers(2, 13))
        c = int(rng.integers(1, 9))
        return {
            "m": rng.standard_normal((n, n)),
            "z": rng.standard_normal((n, c)),
            "target": rng.standard_normal((n, c)),
        }

    def with_z(rng):
        values = _feature_pair(rng)
        values["z"] = rng.standard_normal((values["x"].shape[0], int(rng.integers(1, 4))))
        return values

    def scm_inputs(rng):
        values = _feature_pair(rng)
        n = values["x"].shape[0]
        d = int(rng.integers(1, 5))
        values["proj.weight"] = rng.uniform(-1, 1, (n, d))
        values["proj.bias"] = rng.uniform(-0.5, 0.5, d)
        return values

    def encoder_inputs(rng):
        c_in, c_mid, c_out = int(rng.integers(1, 4)), int(rng.integers(2, 5)), int(rng.integers(2, 5))
        return {
            "image": rng.uniform(0, 1, (4, 4, c_in)),
            "enc.0.kernel": rng.uniform(-1, 1, (3, 3, c_in, c_mid)),
            "enc.0.bias": rng.uniform(-0.2, 0.2, c_mid),
            "enc.1.kernel": rng.uniform(-1, 1, (3, 3, c_mid, c_out)),
            "enc.1.bias": rng.uniform(-0.2, 0.2, c_out),
        }

    return [
        GradCase("normalize_rows", rows, normalize_case),
        GradCase("cosine_matrix", _feature_pair, cosine_case),
        GradCase("softmax_rows", square, softmax_case),
        GradCase("arccos", lambda rng: {"c": rng.uniform(-0.9, 0.9, int(rng.integers(1, 13)))}, arccos_case),
        GradCase("info_nce", _feature_pair, info_nce_case),
        GradCase("marginal_contrastive", _feature_pair, mcl_case),
        GradCase("gram", rows, gram_case),
        GradCase("take_rows", rows, take_rows_case),
        GradCase("scm_projection", scm_inputs, scm_case),
        GradCase("warp", square, warp_case),
        GradCase("cycle_loss", square, cycle_case),
        GradCase("feature_consistency", _feature_pair, fcst_case),
        GradCase("pseudo_pair_loss", square, pse_case),
        GradCase("objective", with_z, objective_case),
        GradCase("conv_encoder", encoder_inputs, encoder_case),
    ]


CASES: Dict[str, GradCase] = {case.name: case for case in _cases()}

# integer metadata carried with the inputs, never perturbed
_STATIC_INPUTS = ("hw",)


def _evaluate(case: GradCase, inputs: Inputs, record: bool):
    tape = Tape(record=record)
    values = {
        name: (tape.constant(arr) if name in _STATIC_INPUTS else tape.parameter(name, arr.copy()))
        for name, arr in inputs.items()
    }
    loss = case.loss(tape, values)
    return tape, loss


def check_case(
    case: GradCase,
    rng: np.random.Generator,
    step: float = STEP,
    max_entries: Optional[int] = 24,
) -> float:
    """Max relative error over (a sample of) the entries of one random instance."""
    inputs = case.make_inputs(rng)
    tape, loss = _evaluate(case, inputs, record=True)
    analytic = tape.backward(loss)

    worst = 0.0
    for name, arr in inputs.items():
        if name in _STATIC_INPUTS:
            continue
        flat_count = arr.size
        entries = np.arange(flat_count)
        if max_entries is not None and flat_count > max_entries:
            entries = rng.choice(flat_count, size=max_entries, replace=False)
        grad = analytic[name].ravel()
        for idx in entries:
            plus = {k: v.copy() for k, v in inputs.items()}
            minus = {k: v.copy() for k, v in inputs.items()}
            plus[name].flat[idx] += step
            minus[name].flat[idx] -= step
            f_plus = _evaluate(case, plus, record=False)[1].item()
            f_minus = _evaluate(case, minus, record=False)[1].item()
            numeric = (f_plus - f_minus) / (2.0 * step)
            worst = max(worst, float(relative_error(np.array(grad[idx]), np.array(numeric))))
    return worst


def run_suite(
    instances: int = 100,
    seed: int = 0,
    tolerance: float = TOLERANCE,
    names: Optional[Sequence[str]] = None,
) -> List[CaseResult]:
    """Check ``instances`` random instances of every case (or of ``names``)."""
    selected = list(CASES) if names is None else list(names)
    unknown = [n for n in selected if n not in CASES]
    if unknown:
        raise KeyError(f"unknown gradient cases: {', '.join(unknown)}")

    results = []
    for index, name in enumerate(selected):
        rng = np.random.default_rng([seed, index])
        worst = max(check_case(CASES[name], rng) for _ in range(instances))
        result = CaseResult(name, instances, worst, worst < tolerance)
        log = logger.info if result.passed else logger.error
        log("%s", result)
        results.append(result)
    return results
