"""Fusing attention with the visual input.

Two strategies: stack the quantized attention map as a fourth (alpha-like)
channel for detection training, or draw visible markers at the focus points
directly on the RGB image for imitation-learning inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .attention import AttentionMap, FocusPointSet, quantize


@dataclass
class MarkStyle:
    """Disc marker; the recordings don't dictate one, so defaults favor
    visibility on track imagery."""

    radius: int = 4
    color: tuple[int, int, int] = (255, 0, 0)
    alpha: float = 1.0


@dataclass
class FusedSample:
    """channels is HxWx4 in 'channel' mode, HxWx3 in 'marked' mode."""

    channels: np.ndarray
    mode: str

    def __post_init__(self):
        want = 4 if self.mode == "channel" else 3
        if self.mode not in ("channel", "marked"):
            raise ValueError(f"unknown fusion mode {self.mode!r}")
        if self.channels.ndim != 3 or self.channels.shape[2] != want:
            raise ValueError(
                f"{self.mode} mode expects HxWx{want}, got {self.channels.shape}"
            )


def fuse_channel(image: np.ndarray, att: AttentionMap | np.ndarray) -> FusedSample:
    """Stack image and quantized attention into an RGBA sample."""
    a = quantize(att) if isinstance(att, AttentionMap) else att
    if a.dtype != np.uint8:
        raise ValueError(f"attention channel must be uint8, got {a.dtype}")
    if image.shape[:2] != a.shape:
        raise ValueError(
            f"geometry mismatch: image {image.shape[:2]}, attention {a.shape}"
        )
    return FusedSample(np.dstack([image, a]), mode="channel")


def split_channels(fused: FusedSample) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of fuse_channel: (RGB image, attention channel), bit-exact."""
    if fused.mode != "channel":
        raise ValueError(f"cannot split {fused.mode!r} mode")
    return (
        np.ascontiguousarray(fused.channels[..., :3]),
        np.ascontiguousarray(fused.channels[..., 3]),
    )


def mark_points(
    image: np.ndarray, points: FocusPointSet, style: MarkStyle | None = None
) -> FusedSample:
    """Alpha-blend a filled disc onto the image at each (rounded) point.

    Pixels outside every disc are untouched; discs clip at the borders.
    """
    style = style or MarkStyle()
    h, w = image.shape[:2]
    out = image.astype(np.float64)
    color = np.asarray(style.color, dtype=np.float64)
    r = style.radius
    for x, y in points.points:
        if not (0.0 <= x < w and 0.0 <= y < h):
            raise ValueError(f"point ({x}, {y}) outside geometry {w}x{h}")
        cx = int(np.floor(x + 0.5))
        cy = int(np.floor(y + 0.5))
        x0, x1 = max(0, cx - r), min(w - 1, cx + r)
        y0, y1 = max(0, cy - r), min(h - 1, cy + r)
        ys = np.arange(y0, y1 + 1)
        xs = np.arange(x0, x1 + 1)
        disc = (ys[:, None] - cy) ** 2 + (xs[None, :] - cx) ** 2 <= r * r
        patch = out[y0 : y1 + 1, x0 : x1 + 1]
        patch[disc] = (1.0 - style.alpha) * patch[disc] + style.alpha * color
    marked = np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)
    return FusedSample(marked, mode="marked")


def save_fused_png(path: Path | str, fused: FusedSample) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "RGBA" if fused.mode == "channel" else "RGB"
    Image.fromarray(fused.channels, mode=mode).save(path)


def load_fused_png(path: Path | str) -> FusedSample:
    with Image.open(path) as im:
        arr = np.asarray(im)
    if arr.ndim == 3 and arr.shape[2] == 4:
        return FusedSample(arr.astype(np.uint8), mode="channel")
    if arr.ndim == 3 and arr.shape[2] == 3:
        return FusedSample(arr.astype(np.uint8), mode="marked")
    raise ValueError(f"{path}: expected RGB or RGBA image, got shape {arr.shape}")
