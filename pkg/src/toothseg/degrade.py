"""Stochastic image degradation operators.

Training images are corrupted on the fly by one of four operators, drawn
uniformly per sample: single pyramid blur, double pyramid blur, identity,
and a contrast-squaring artifact. All operators preserve shape and the
[0, 1] intensity range.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

__all__ = [
    "DegradationKind",
    "pyramid_down",
    "bilinear_up",
    "blur_degrade",
    "artifact_degrade",
    "sample_kind",
    "apply",
]

# Normalized 5x5 binomial kernel, the canonical Gaussian-pyramid filter.
_BINOMIAL_1D = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


class DegradationKind(Enum):
    """The four degradation operators, sampled with probability 1/4 each."""

    BLUR1 = "blur1"
    BLUR2 = "blur2"
    IDENTITY = "identity"
    ARTIFACT = "artifact"


KINDS = (
    DegradationKind.BLUR1,
    DegradationKind.BLUR2,
    DegradationKind.IDENTITY,
    DegradationKind.ARTIFACT,
)


def check_image(img: np.ndarray) -> np.ndarray:
    """Validate a single-channel intensity image in [0, 1]."""
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError(f"expected a 2D image, got shape {img.shape}")
    if img.size == 0:
        raise ValueError("empty image")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValueError(
            f"pixel values outside [0, 1]: min={img.min():.4g} max={img.max():.4g}"
        )
    return img


def _smooth_binomial(img: np.ndarray) -> np.ndarray:
    """Separable 5x5 binomial smoothing with reflect padding."""
    padded = np.pad(img, 2, mode="reflect")
    windows = np.lib.stride_tricks.sliding_window_view(padded, 5, axis=0)
    out = windows @ _BINOMIAL_1D
    windows = np.lib.stride_tricks.sliding_window_view(out, 5, axis=1)
    return windows @ _BINOMIAL_1D


def pyramid_down(img: np.ndarray) -> np.ndarray:
    """Gaussian-pyramid downsampling: binomial smoothing, then take
    every even-coordinate pixel. Requires even height and width."""
    img = check_image(img)
    h, w = img.shape
    if h % 2 or w % 2:
        raise ValueError(f"pyramid_down needs even dims, got {h}x{w}")
    out = _smooth_binomial(img)[::2, ::2]
    return np.clip(out, 0.0, 1.0)


def _interp_matrix(src: int, dst: int, dtype=np.float64) -> np.ndarray:
    """Corner-aligned 1D linear interpolation matrix of shape (dst, src).

    Reproduces constants and linear ramps exactly.
    """
    m = np.zeros((dst, src), dtype=dtype)
    if src == 1:
        m[:, 0] = 1.0
        return m
    if dst == 1:
        m[0, 0] = 1.0
        return m
    pos = np.arange(dst, dtype=np.float64) * (src - 1) / (dst - 1)
    i0 = np.minimum(pos.astype(np.int64), src - 2)
    frac = pos - i0
    rows = np.arange(dst)
    m[rows, i0] = 1.0 - frac
    m[rows, i0 + 1] += frac
    return m


def bilinear_up(img: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    """Upsample to (target_h, target_w) by corner-aligned bilinear
    interpolation. Target dims must be >= source dims."""
    img = check_image(img)
    h, w = img.shape
    if target_h < h or target_w < w:
        raise ValueError(
            f"target {target_h}x{target_w} smaller than source {h}x{w}"
        )
    uh = _interp_matrix(h, target_h)
    uw = _interp_matrix(w, target_w)
    out = uh @ img @ uw.T
    return np.clip(out, 0.0, 1.0)


def blur_degrade(img: np.ndarray, levels: int) -> np.ndarray:
    """Blur by `levels` pyramid downsamplings followed by bilinear
    upsampling back to the original size. `levels` must be 1 or 2."""
    if levels not in (1, 2):
        raise ValueError(f"levels must be 1 or 2, got {levels}")
    img = check_image(img)
    h, w = img.shape
    if h % (1 << levels) or w % (1 << levels):
        raise ValueError(
            f"dims {h}x{w} not divisible by {1 << levels} for levels={levels}"
        )
    low = img
    for _ in range(levels):
        low = pyramid_down(low)
    return bilinear_up(low, h, w)


def artifact_degrade(img: np.ndarray) -> np.ndarray:
    """Contrast-enhancing artifact approximation: square every pixel."""
    img = check_image(img)
    return img * img


def sample_kind(rng: np.random.Generator) -> DegradationKind:
    """Draw one of the four degradation kinds, each with probability 1/4."""
    return KINDS[int(rng.integers(0, 4))]


def apply(img: np.ndarray, kind: DegradationKind) -> np.ndarray:
    """Apply the selected degradation operator. Output dims equal input dims."""
    if kind is DegradationKind.BLUR1:
        return blur_degrade(img, 1)
    if kind is DegradationKind.BLUR2:
        return blur_degrade(img, 2)
    if kind is DegradationKind.IDENTITY:
        return check_image(img).copy()
    if kind is DegradationKind.ARTIFACT:
        return artifact_degrade(img)
    raise ValueError(f"unknown degradation kind: {kind!r}")
