"""Segmentation losses and evaluation metrics.

The training objective is the unweighted sum of three terms: a smoothed
Dice loss, pixel-wise binary cross-entropy, and a structural term built
on SSIM that compares both the raw prediction and its ground-truth-masked
copy against the reference mask.

Every loss has a companion ``*_grad`` function returning the analytic
gradient with respect to the prediction; these are exercised against
central finite differences in the test suite.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "SSIMParams",
    "LossParts",
    "MetricsRecord",
    "ssim",
    "ssim_grad",
    "structural_loss",
    "structural_loss_grad",
    "dice_loss",
    "dice_loss_grad",
    "bce_loss",
    "bce_loss_grad",
    "total_loss",
    "total_loss_grad",
    "confusion_counts",
    "metrics_from_counts",
    "patient_aggregate",
    "summarize_records",
    "records_to_csv",
    "summary_to_json",
]

DICE_EPS = 1e-6
BCE_CLAMP = 1e-7


@dataclass(frozen=True)
class SSIMParams:
    """Gaussian-window SSIM constants (canonical defaults, unit range)."""

    window_size: int = 11
    window_sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0

    def __post_init__(self):
        if self.window_size < 1 or self.window_size % 2 == 0:
            raise ValueError("window_size must be odd and positive")
        if self.window_sigma <= 0 or self.dynamic_range <= 0:
            raise ValueError("window_sigma and dynamic_range must be positive")
        if self.c1 <= 0 or self.c2 <= 0:
            raise ValueError("stabilizers must be strictly positive")

    @property
    def c1(self) -> float:
        return (self.k1 * self.dynamic_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.dynamic_range) ** 2

    def window_1d(self) -> np.ndarray:
        half = self.window_size // 2
        x = np.arange(-half, half + 1, dtype=np.float64)
        g = np.exp(-(x**2) / (2.0 * self.window_sigma**2))
        return g / g.sum()


def _check_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("masks must be 2D")
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable Gaussian-weighted windowing over all fully contained
    window positions (valid mode)."""
    k = g.size
    win = np.lib.stride_tricks.sliding_window_view(x, k, axis=0)
    out = win @ g
    win = np.lib.stride_tricks.sliding_window_view(out, k, axis=1)
    return win @ g


def _filter_valid_adjoint(y: np.ndarray, g: np.ndarray, out_hw) -> np.ndarray:
    """Adjoint of `_filter_valid`: scatter window-space gradients back to
    pixel space. For a symmetric kernel this is zero-padded correlation."""
    k = g.size
    h, w = out_hw
    pad = k - 1
    yp = np.zeros((y.shape[0] + 2 * pad, y.shape[1] + 2 * pad), dtype=y.dtype)
    yp[pad : pad + y.shape[0], pad : pad + y.shape[1]] = y
    out = _filter_valid(yp, g)
    assert out.shape == (h, w)
    return out


def _ssim_fields(a, b, params: SSIMParams):
    g = params.window_1d()
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    s_aa = _filter_valid(a * a, g)
    s_bb = _filter_valid(b * b, g)
    s_ab = _filter_valid(a * b, g)
    var_a = s_aa - mu_a * mu_a
    var_b = s_bb - mu_b * mu_b
    cov = s_ab - mu_a * mu_b
    a1 = 2.0 * mu_a * mu_b + params.c1
    a2 = 2.0 * cov + params.c2
    b1 = mu_a * mu_a + mu_b * mu_b + params.c1
    b2 = var_a + var_b + params.c2
    return g, mu_a, mu_b, a1, a2, b1, b2


def ssim(a: np.ndarray, b: np.ndarray, params: SSIMParams | None = None) -> float:
    """Mean structural similarity over all valid Gaussian-window positions.

    The local index is ``(2 mu_a mu_b + C1)(2 cov + C2) /
    ((mu_a^2 + mu_b^2 + C1)(var_a + var_b + C2))``; result lies in [-1, 1].
    """
    params = params or SSIMParams()
    a, b = _check_pair(a, b)
    if min(a.shape) < params.window_size:
        raise ValueError(
            f"image {a.shape} smaller than SSIM window {params.window_size}"
        )
    _, _, _, a1, a2, b1, b2 = _ssim_fields(a, b, params)
    return float(np.mean(a1 * a2 / (b1 * b2)))


def ssim_grad(
    a: np.ndarray, b: np.ndarray, params: SSIMParams | None = None
) -> tuple[float, np.ndarray]:
    """SSIM value plus its analytic gradient with respect to `a`."""
    params = params or SSIMParams()
    a, b = _check_pair(a, b)
    if min(a.shape) < params.window_size:
        raise ValueError(
            f"image {a.shape} smaller than SSIM window {params.window_size}"
        )
    g, mu_a, mu_b, a1, a2, b1, b2 = _ssim_fields(a, b, params)
    inv = 1.0 / (b1 * b2)
    s = a1 * a2 * inv
    n_win = s.size

    # Local index as a function of the five filtered fields; chain back
    # through mu_a = W a, s_aa = W a^2, s_ab = W ab.
    ds_da1 = a2 * inv
    ds_da2 = a1 * inv
    ds_db1 = -s / b1
    ds_db2 = -s / b2
    d_mu = 2.0 * mu_b * (ds_da1 - ds_da2) + 2.0 * mu_a * (ds_db1 - ds_db2)
    d_saa = ds_db2
    d_sab = 2.0 * ds_da2

    hw = a.shape
    grad = (
        _filter_valid_adjoint(d_mu, g, hw)
        + 2.0 * a * _filter_valid_adjoint(d_saa, g, hw)
        + b * _filter_valid_adjoint(d_sab, g, hw)
    ) / n_win
    return float(np.mean(s)), grad


def structural_loss(
    pred: np.ndarray, gt: np.ndarray, params: SSIMParams | None = None
) -> float:
    """Structure term: ``1 - (SSIM(pred, gt) + SSIM(pred * gt, gt)) / 2``.

    The masked copy ``pred * gt`` keeps the correctly predicted area and
    zeroes everything predicted outside the reference mask.
    """
    pred, gt = _check_pair(pred, gt)
    s1 = ssim(pred, gt, params)
    s2 = ssim(pred * gt, gt, params)
    return 1.0 - 0.5 * (s1 + s2)


def structural_loss_grad(
    pred: np.ndarray, gt: np.ndarray, params: SSIMParams | None = None
) -> tuple[float, np.ndarray]:
    pred, gt = _check_pair(pred, gt)
    s1, g1 = ssim_grad(pred, gt, params)
    s2, g2 = ssim_grad(pred * gt, gt, params)
    loss = 1.0 - 0.5 * (s1 + s2)
    return loss, -0.5 * (g1 + g2 * gt)


def dice_loss(pred: np.ndarray, gt: np.ndarray, eps: float = DICE_EPS) -> float:
    """Smoothed soft-Dice loss ``1 - (2 sum(p g) + eps) / (sum p + sum g + eps)``."""
    pred, gt = _check_pair(pred, gt)
    inter = float(np.sum(pred * gt))
    denom = float(np.sum(pred) + np.sum(gt))
    return 1.0 - (2.0 * inter + eps) / (denom + eps)


def dice_loss_grad(
    pred: np.ndarray, gt: np.ndarray, eps: float = DICE_EPS
) -> tuple[float, np.ndarray]:
    pred, gt = _check_pair(pred, gt)
    inter = float(np.sum(pred * gt))
    denom = float(np.sum(pred) + np.sum(gt)) + eps
    num = 2.0 * inter + eps
    loss = 1.0 - num / denom
    grad = -(2.0 * gt * denom - num) / (denom * denom)
    return loss, grad


def bce_loss(pred: np.ndarray, gt: np.ndarray, clamp: float = BCE_CLAMP) -> float:
    """Mean binary cross-entropy with the prediction clamped to
    [clamp, 1 - clamp] for numerical safety."""
    pred, gt = _check_pair(pred, gt)
    p = np.clip(pred, clamp, 1.0 - clamp)
    return float(np.mean(-(gt * np.log(p) + (1.0 - gt) * np.log1p(-p))))


def bce_loss_grad(
    pred: np.ndarray, gt: np.ndarray, clamp: float = BCE_CLAMP
) -> tuple[float, np.ndarray]:
    pred, gt = _check_pair(pred, gt)
    p = np.clip(pred, clamp, 1.0 - clamp)
    loss = float(np.mean(-(gt * np.log(p) + (1.0 - gt) * np.log1p(-p))))
    grad = (-gt / p + (1.0 - gt) / (1.0 - p)) / p.size
    # Zero subgradient where the clamp is active.
    grad = np.where((pred > clamp) & (pred < 1.0 - clamp), grad, 0.0)
    return loss, grad


@dataclass
class LossParts:
    """Per-term breakdown; `total` is always the plain sum that is optimized."""

    dice: float
    bce: float
    structural: float

    @property
    def total(self) -> float:
        return self.dice + self.bce + self.structural


def total_loss(
    pred: np.ndarray,
    gt: np.ndarray,
    params: SSIMParams | None = None,
    sc_enabled: bool = True,
) -> float:
    """Unweighted sum Dice + BCE + structural. With `sc_enabled` false the
    structural term is omitted (ablation switch)."""
    return total_loss_grad(pred, gt, params, sc_enabled)[0].total


def total_loss_grad(
    pred: np.ndarray,
    gt: np.ndarray,
    params: SSIMParams | None = None,
    sc_enabled: bool = True,
) -> tuple[LossParts, np.ndarray]:
    d, gd = dice_loss_grad(pred, gt)
    b, gb = bce_loss_grad(pred, gt)
    if sc_enabled:
        s, gs = structural_loss_grad(pred, gt, params)
    else:
        s, gs = 0.0, 0.0
    return LossParts(dice=d, bce=b, structural=s), gd + gb + gs


# ---------------------------------------------------------------------------
# Evaluation metrics


@dataclass
class MetricsRecord:
    """IoU / Dice / Recall / Precision for one patient (or one slice)."""

    patient_id: str
    iou: float
    dice: float
    recall: float
    precision: float

    def as_dict(self) -> dict:
        return {
            "patient_id": self.patient_id,
            "iou": self.iou,
            "dice": self.dice,
            "recall": self.recall,
            "precision": self.precision,
        }


def confusion_counts(pred_bin: np.ndarray, gt: np.ndarray) -> tuple[int, int, int, int]:
    """Exact (tp, fp, fn, tn) pixel counts for two binary masks."""
    pred_bin, gt = _check_pair(pred_bin, gt)
    for name, m in (("pred", pred_bin), ("gt", gt)):
        if not np.isin(m, (0.0, 1.0)).all():
            raise ValueError(f"{name} mask is not binary")
    p = pred_bin.astype(bool)
    g = gt.astype(bool)
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    tn = int(np.count_nonzero(~p & ~g))
    return tp, fp, fn, tn


def metrics_from_counts(
    tp: int, fp: int, fn: int, patient_id: str = ""
) -> MetricsRecord:
    """Overlap metrics from confusion counts.

    Empty-denominator convention: 1.0 when prediction and ground truth are
    both empty, 0.0 for the per-metric denominators that vanish when exactly
    one side is empty.
    """
    if min(tp, fp, fn) < 0:
        raise ValueError("counts must be non-negative")
    if tp + fp + fn == 0:
        return MetricsRecord(patient_id, 1.0, 1.0, 1.0, 1.0)
    iou = tp / (tp + fp + fn)
    dice = 2.0 * tp / (2.0 * tp + fp + fn)
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    return MetricsRecord(patient_id, iou, dice, recall, precision)


def patient_aggregate(
    records_by_slice: list[tuple[str, tuple[int, int, int, int]]],
    mode: str = "pooled",
) -> list[MetricsRecord]:
    """Aggregate per-slice confusion counts into one record per patient.

    `pooled` (default) sums counts over a patient's slices before computing
    metrics once; `slice_mean` computes per-slice metrics and averages them.
    Results are ordered by patient id.
    """
    if not records_by_slice:
        raise ValueError("no slice records to aggregate")
    if mode not in ("pooled", "slice_mean"):
        raise ValueError(f"unknown aggregation mode: {mode!r}")
    by_patient: dict[str, list[tuple[int, int, int, int]]] = {}
    for pid, counts in records_by_slice:
        by_patient.setdefault(pid, []).append(tuple(int(c) for c in counts))

    out = []
    for pid in sorted(by_patient):
        slices = by_patient[pid]
        if mode == "pooled":
            tp, fp, fn, _ = (sum(c) for c in zip(*slices))
            out.append(metrics_from_counts(tp, fp, fn, patient_id=pid))
        else:
            per = [metrics_from_counts(tp, fp, fn, patient_id=pid) for tp, fp, fn, _ in slices]
            out.append(
                MetricsRecord(
                    pid,
                    float(np.mean([r.iou for r in per])),
                    float(np.mean([r.dice for r in per])),
                    float(np.mean([r.recall for r in per])),
                    float(np.mean([r.precision for r in per])),
                )
            )
    return out


def summarize_records(records: list[MetricsRecord]) -> dict:
    """Mean and population std of each metric across patients."""
    if not records:
        raise ValueError("no records to summarize")
    summary = {}
    for key in ("iou", "dice", "recall", "precision"):
        vals = np.array([getattr(r, key) for r in records], dtype=np.float64)
        summary[key] = {"mean": float(vals.mean()), "std": float(vals.std())}
    summary["n_patients"] = len(records)
    return summary


def records_to_csv(records: list[MetricsRecord], path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["patient_id", "iou", "dice", "recall", "precision"])
        for r in records:
            writer.writerow(
                [r.patient_id, f"{r.iou:.6f}", f"{r.dice:.6f}", f"{r.recall:.6f}", f"{r.precision:.6f}"]
            )


def summary_to_json(summary: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
