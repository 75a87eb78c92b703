"""Training and evaluation of the correspondence network on synthetic pairs."""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig
from .contrastive import contrastive_loss, feature_separability_stats
from .correspondence import (
    CorrespondenceMatrix,
    build_correspondence,
    correspondence_objective,
    cycle_loss,
    feature_consistency_loss,
    pseudo_pair_loss,
)
from .data import (
    PseudoExemplar,
    SyntheticPair,
    block_means,
    from_blocks,
    nearest_upsample,
    pair_from_config,
    pseudo_exemplar,
    to_blocks,
)
from .encoders import (
    CONDITION_PROJECTION,
    IMAGE_PROJECTION,
    AdamState,
    ModelParams,
    adam_step,
    encode,
    init_params,
)
from .errors import DivergenceError
from .feature_core import FeatureGrid, Tape, Tensor, Var, add, scale, take_rows
from .metrics import l1, psnr, ssim, top1_accuracy
from .records import MetricsRow, MetricsWriter
from .scm import SelfCorrelationMap, compute_scm, structure_aware

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

TRAIN_SEED_STRIDE = 1_000_003
EVAL_SEED_OFFSET = 10**9

METRICS_FILE = "metrics.csv"
FINAL_CHECKPOINT = "final.ckpt"
DIVERGED_CHECKPOINT = "diverged.ckpt"
CONFIG_FILE = "config.txt"


def train_seeds(config: ExperimentConfig, step: int) -> List[int]:
    """Pair seeds of one optimizer step: s * 1_000_003 + k * batch + b."""
    base = config.seed * TRAIN_SEED_STRIDE + step * config.batch_size
    return [base + b for b in range(config.batch_size)]


def eval_seeds(config: ExperimentConfig) -> List[int]:
    base = EVAL_SEED_OFFSET + config.seed * TRAIN_SEED_STRIDE
    return [base + j for j in range(config.eval_pairs)]


@dataclass
class PairForward:
    """Everything one forward pass over a pair produces."""

    condition: FeatureGrid
    exemplar: FeatureGrid
    ground_truth: FeatureGrid
    correspondence: CorrespondenceMatrix
    parts: Dict[str, Var]
    total: Var


@dataclass
class PairScore:
    l1: float
    psnr: float
    ssim: float
    top1_accuracy: float
    warped: Tensor


@dataclass
class TrainingResult:
    rows: List[MetricsRow]
    params: ModelParams
    out_dir: Optional[Path] = None
    checkpoint_path: Optional[Path] = None

    @property
    def final(self) -> MetricsRow:
        return self.rows[-1]


def warp_image(t: Tensor, exemplar: Tensor, cell: int) -> Tensor:
    """Warp whole exemplar cells with T and reassemble the image."""
    grid = exemplar.shape[0] // cell
    warped_blocks = t @ to_blocks(exemplar, cell)
    return from_blocks(warped_blocks, grid, cell, exemplar.shape[2])


def warp_cell_means(t: Tensor, exemplar: Tensor, cell: int) -> Tensor:
    """T applied to per-cell mean colours, upsampled to image size for viewing."""
    grid = exemplar.shape[0] // cell
    means = t @ block_means(exemplar, cell)
    return nearest_upsample(means.reshape(grid, grid, -1), cell)


class CorrespondenceTrainer:
    """Joint training of the condition and image encoders.

    Each step encodes a batch of synthetic pairs, builds the correspondence
    matrix, sums the weighted cycle, feature consistency, contrastive and
    pseudo pair losses, backpropagates and takes one Adam step.

    Example:
        >>> config = ExperimentConfig(steps=100)
        >>> trainer = CorrespondenceTrainer(config)
        >>> result = trainer.train("runs/demo")
        >>> result.final.top1_accuracy
    """

    def __init__(self, config: ExperimentConfig, params: Optional[ModelParams] = None):
        """Initialize the trainer.

        Args:
            config: Validated experiment configuration
            params: Start from these parameters instead of a fresh init
        """
        self.config = config
        self.config.validate()
        self.params = params if params is not None else init_params(config, config.seed)
        self.optimizer = AdamState.from_config(config)
        self.cell = config.total_stride

    # Forward

    def _features(self, image: Tensor, tape: Tape, condition: bool) -> FeatureGrid:
        encoder = self.params.condition if condition else self.params.image
        grid = encode(encoder, image, tape, self.config.normalize_eps)
        if not self.params.uses_scm:
            return grid
        if condition:
            return structure_aware(grid, self.params.scm_condition, CONDITION_PROJECTION)
        return structure_aware(grid, self.params.scm_image, IMAGE_PROJECTION)

    def forward_pair(self, pair: SyntheticPair, pseudo: PseudoExemplar, tape: Tape) -> PairForward:
        """Build T and every loss term for one pair on ``tape``.

        Y' rows are put back in ground-truth order with ``pseudo.order``
        before they serve as contrastive positives or as the pseudo pair
        target, so both terms train matching against rearranged content.
        """
        cfg = self.config
        fx = self._features(pair.condition, tape, condition=True)
        fz = self._features(pair.exemplar, tape, condition=False)
        fy = self._features(pair.ground_truth, tape, condition=False)
        fp = self._features(pseudo.image, tape, condition=False)

        t = build_correspondence(fx, fz, cfg.sharpness)
        z = tape.constant(block_means(pair.exemplar, self.cell))
        parts: Dict[str, Var] = {
            "cyc": cycle_loss(t, z),
            "fcst": feature_consistency_loss(fx, fy),
        }
        if cfg.loss != "none":
            positives = fy
            if cfg.pseudo_permute:
                positives = FeatureGrid(fp.height, fp.width, fp.channels, take_rows(fp.tensor, pseudo.order))
            parts["contrastive"] = contrastive_loss(fx, positives, cfg.loss, cfg.contrastive, cfg.bidirectional).value

        t_pseudo = build_correspondence(fx, fp, cfg.sharpness)
        y_means = block_means(pseudo.image, self.cell)
        parts["pse"] = pseudo_pair_loss(t_pseudo, tape.constant(y_means), tape.constant(y_means[pseudo.order]))

        total = correspondence_objective(parts, cfg.loss_weights)
        return PairForward(fx, fz, fy, t, parts, total)

    def correspondence_for(self, pair: SyntheticPair) -> CorrespondenceMatrix:
        tape = Tape(record=False)
        fx = self._features(pair.condition, tape, condition=True)
        fz = self._features(pair.exemplar, tape, condition=False)
        return build_correspondence(fx, fz, self.config.sharpness)

    def condition_scm(self, pair: SyntheticPair) -> SelfCorrelationMap:
        """Self-correlation map of the condition encoder's base features."""
        tape = Tape(record=False)
        grid = encode(self.params.condition, pair.condition, tape, self.config.normalize_eps)
        return compute_scm(grid)

    # Training

    def training_step(self, step: int) -> float:
        """One optimizer step on the batch of ``step``; returns the batch-mean loss.

        Raises:
            DivergenceError: On a non-finite loss or gradient; parameters are
                left at their last good values
        """
        cfg = self.config
        tape = Tape()
        total: Optional[Var] = None
        for seed in train_seeds(cfg, step):
            pair = pair_from_config(cfg, seed)
            forward = self.forward_pair(pair, pseudo_exemplar(pair, seed, cfg), tape)
            total = forward.total if total is None else add(total, forward.total)
        loss = scale(total, 1.0 / cfg.batch_size)

        value = loss.item()
        if not math.isfinite(value):
            raise DivergenceError(f"non-finite loss {value} at step {step + 1}")
        grads = tape.backward(loss)
        adam_step(self.optimizer, self.params.named_tensors(), grads)
        return value

    def train(self, out_dir: Optional[PathLike] = None) -> TrainingResult:
        """Run ``config.steps`` steps, logging an evaluation row every ``log_every``.

        With ``out_dir`` set, writes ``metrics.csv``, ``config.txt`` and
        ``final.ckpt`` there; on divergence ``diverged.ckpt`` holds the last
        good parameters.

        Raises:
            DivergenceError: If training produces a non-finite value
        """
        cfg = self.config
        out = Path(out_dir) if out_dir is not None else None
        rows: List[MetricsRow] = []
        seeds = eval_seeds(cfg)

        handle = None
        writer = None
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
            (out / CONFIG_FILE).write_text("\n".join(cfg.to_lines()) + "\n", encoding="utf-8")
            handle = open(out / METRICS_FILE, "w", encoding="utf-8", newline="")
            writer = MetricsWriter(handle)

        def record(step: int) -> None:
            row = self.evaluate(seeds, step=step, epoch=len(rows))
            rows.append(row)
            if writer is not None:
                writer.write(row)
            logger.info(
                "step %d loss=%.6f top1=%.4f psnr=%.2f",
                step,
                row.loss_total,
                row.top1_accuracy,
                row.psnr,
            )

        logger.info("training %s for %d steps", cfg.run_id, cfg.steps)
        try:
            record(0)
            for step in range(cfg.steps):
                try:
                    loss = self.training_step(step)
                except DivergenceError as e:
                    logger.error("%s", e)
                    if out is not None:
                        save_checkpoint(out / DIVERGED_CHECKPOINT, self.params.named_tensors())
                    raise
                done = step + 1
                logger.debug("step %d batch loss=%.6f", done, loss)
                if done % cfg.log_every == 0 or done == cfg.steps:
                    record(done)
        finally:
            if handle is not None:
                handle.close()

        checkpoint_path = None
        if out is not None:
            checkpoint_path = save_checkpoint(out / FINAL_CHECKPOINT, self.params.named_tensors())
        return TrainingResult(rows, self.params, out, checkpoint_path)

    # Evaluation

    def score_pair(self, pair: SyntheticPair, t: Optional[Tensor] = None) -> PairScore:
        """Warp the exemplar with T and compare to the ground truth.

        ``t`` defaults to the correspondence the current encoders build.
        """
        if t is None:
            t = self.correspondence_for(pair).values
        warped = warp_image(t, pair.exemplar, self.cell)
        return PairScore(
            l1=l1(warped, pair.ground_truth),
            psnr=psnr(warped, pair.ground_truth, max_value=1.0),
            ssim=ssim(warped, pair.ground_truth),
            top1_accuracy=top1_accuracy(t, pair.true_permutation),
            warped=warped,
        )

    def evaluate(self, seeds: Sequence[int], step: int = 0, epoch: int = 0) -> MetricsRow:
        """Average metrics, loss terms and angle statistics over pairs from ``seeds``."""
        cfg = self.config
        totals: Dict[str, List[float]] = {
            name: []
            for name in (
                "l1",
                "psnr",
                "ssim",
                "top1_accuracy",
                "loss_total",
                "loss_contrastive",
                "loss_cyc",
                "loss_fcst",
                "loss_pse",
                "mean_pos_angle",
                "mean_neg_angle",
            )
        }
        for seed in seeds:
            pair = pair_from_config(cfg, seed)
            forward = self.forward_pair(pair, pseudo_exemplar(pair, seed, cfg), Tape(record=False))
            score = self.score_pair(pair, forward.correspondence.values)
            pos, neg = feature_separability_stats(forward.condition, forward.ground_truth)

            totals["l1"].append(score.l1)
            totals["psnr"].append(score.psnr)
            totals["ssim"].append(score.ssim)
            totals["top1_accuracy"].append(score.top1_accuracy)
            totals["loss_total"].append(forward.total.item())
            for name in ("contrastive", "cyc", "fcst", "pse"):
                part = forward.parts.get(name)
                totals[f"loss_{name}"].append(part.item() if part is not None else 0.0)
            totals["mean_pos_angle"].append(pos)
            totals["mean_neg_angle"].append(neg)

        means = {name: float(np.mean(values)) for name, values in totals.items()}
        return MetricsRow(
            run_id=cfg.run_id,
            seed=cfg.seed,
            margin=cfg.margin,
            scm=self.params.uses_scm,
            loss=cfg.loss,
            epoch=epoch,
            step=step,
            **means,
        )


def train(config: ExperimentConfig, out_dir: Optional[PathLike] = None) -> TrainingResult:
    """Train from a fresh init; see :meth:`CorrespondenceTrainer.train`."""
    return CorrespondenceTrainer(config).train(out_dir)


def load_trainer(config: ExperimentConfig, checkpoint: PathLike) -> CorrespondenceTrainer:
    """Trainer holding the parameters of ``checkpoint``.

    A checkpoint holding SCM projections switches SCM on (and sets its
    projection dimension) regardless of ``config``.

    Raises:
        CheckpointFormatError: If the file is corrupt
        DimensionError: If tensors are missing or misshaped for ``config``
    """
    tensors = load_checkpoint(checkpoint)
    params = ModelParams.from_named(tensors, config.encoder_strides, config.leaky_slope)
    overrides = {"scm": params.uses_scm}
    if params.uses_scm:
        overrides["scm_dim"] = params.scm_condition.d_proj
    return CorrespondenceTrainer(config.with_overrides(**overrides), params)


def evaluate(
    checkpoint: PathLike,
    config: ExperimentConfig,
    seeds: Optional[Sequence[int]] = None,
) -> MetricsRow:
    """Score a checkpoint on held-out pairs (default: the config's evaluation seeds)."""
    trainer = load_trainer(config, checkpoint)
    return trainer.evaluate(seeds if seeds is not None else eval_seeds(trainer.config))
