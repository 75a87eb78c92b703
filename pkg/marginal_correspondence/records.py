"""Metrics rows, their CSV form, and seed aggregates."""

import csv
import io
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, TextIO, Union

import numpy as np
from pydantic import BaseModel, field_validator

from .metrics import PSNR_CAP_DB

CSV_COLUMNS = (
    "run_id",
    "seed",
    "margin",
    "scm",
    "loss",
    "epoch",
    "step",
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


class MetricsRow(BaseModel):
    """One evaluation of a run at a given step."""

    run_id: str
    seed: int
    margin: float
    scm: bool
    loss: str
    epoch: int
    step: int
    l1: float
    psnr: float
    ssim: float
    top1_accuracy: float
    loss_total: float = 0.0
    loss_contrastive: float = 0.0
    loss_cyc: float = 0.0
    loss_fcst: float = 0.0
    loss_pse: float = 0.0
    mean_pos_angle: float = 0.0
    mean_neg_angle: float = 0.0

    @field_validator("psnr")
    @classmethod
    def _psnr_range(cls, v: float) -> float:
        if not 0.0 <= v <= PSNR_CAP_DB:
            raise ValueError(f"psnr must lie in [0, {PSNR_CAP_DB}], got {v}")
        return v

    @field_validator("ssim")
    @classmethod
    def _ssim_range(cls, v: float) -> float:
        if not -1.0 <= v <= 1.0:
            raise ValueError(f"ssim must lie in [-1, 1], got {v}")
        return v

    @field_validator("top1_accuracy")
    @classmethod
    def _accuracy_range(cls, v: float) -> float:
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"top1_accuracy must lie in [0, 1], got {v}")
        return v

    def to_csv_fields(self) -> List[str]:
        values = self.model_dump()
        return [_format_field(values[name]) for name in CSV_COLUMNS]

    @classmethod
    def from_csv_fields(cls, fields: Sequence[str]) -> "MetricsRow":
        if len(fields) != len(CSV_COLUMNS):
            raise ValueError(f"expected {len(CSV_COLUMNS)} fields, got {len(fields)}")
        return cls.model_validate(dict(zip(CSV_COLUMNS, fields)))


def _format_field(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_rows(rows: Iterable[MetricsRow]) -> str:
    buffer = io.StringIO()
    writer = MetricsWriter(buffer)
    for row in rows:
        writer.write(row)
    return buffer.getvalue()


def parse_rows(text: str) -> List[MetricsRow]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None:
        return []
    if tuple(header) != CSV_COLUMNS:
        raise ValueError(f"unexpected metrics header: {','.join(header)}")
    return [MetricsRow.from_csv_fields(fields) for fields in reader if fields]


def read_metrics(path: Union[str, Path]) -> List[MetricsRow]:
    return parse_rows(Path(path).read_text(encoding="utf-8"))


class MetricsWriter:
    """Streams rows to a text handle; the header goes out with the first row."""

    def __init__(self, handle: TextIO):
        self._writer = csv.writer(handle, lineterminator="\n")
        self._handle = handle
        self._header_written = False

    def write(self, row: MetricsRow) -> None:
        if not self._header_written:
            self._writer.writerow(CSV_COLUMNS)
            self._header_written = True
        self._writer.writerow(row.to_csv_fields())
        self._handle.flush()


class AggregateRow(BaseModel):
    """Mean and population std of the final metrics over seeds."""

    label: str
    margin: float
    scm: bool
    loss: str
    seeds: int
    l1_mean: float
    l1_std: float
    psnr_mean: float
    psnr_std: float
    ssim_mean: float
    ssim_std: float
    top1_mean: float
    top1_std: float

    @classmethod
    def from_rows(cls, label: str, rows: Sequence[MetricsRow]) -> "AggregateRow":
        if not rows:
            raise ValueError(f"no rows to aggregate for {label!r}")

        def stats(name: str):
            values = np.array([getattr(r, name) for r in rows], dtype=np.float64)
            return float(values.mean()), float(values.std())

        l1_mean, l1_std = stats("l1")
        psnr_mean, psnr_std = stats("psnr")
        ssim_mean, ssim_std = stats("ssim")
        top1_mean, top1_std = stats("top1_accuracy")
        first = rows[0]
        return cls(
            label=label,
            margin=first.margin,
            scm=first.scm,
            loss=first.loss,
            seeds=len(rows),
            l1_mean=l1_mean,
            l1_std=l1_std,
            psnr_mean=psnr_mean,
            psnr_std=psnr_std,
            ssim_mean=ssim_mean,
            ssim_std=ssim_std,
            top1_mean=top1_mean,
            top1_std=top1_std,
        )


def format_table(rows: Sequence[AggregateRow], title: Optional[str] = None) -> str:
    """Plain-text table with mean ± std per metric."""
    header = ["row", "seeds", "L1", "PSNR", "SSIM", "top-1"]
    body = [
        [
            r.label,
            str(r.seeds),
            f"{r.l1_mean:.4f} ± {r.l1_std:.4f}",
            f"{r.psnr_mean:.2f} ± {r.psnr_std:.2f}",
            f"{r.ssim_mean:.4f} ± {r.ssim_std:.4f}",
            f"{r.top1_mean:.4f} ± {r.top1_std:.4f}",
        ]
        for r in rows
    ]
    widths = [max(len(line[i]) for line in [header] + body) for i in range(len(header))]
    lines = []
    if title:
        lines.append(title)
    lines.append("  ".join(h.ljust(w) for h, w in zip(header, widths)))
    lines.append("  ".join("-" * w for w in widths))
    lines.extend("  ".join(c.ljust(w) for c, w in zip(line, widths)) for line in body)
    return "\n".join(lines)

