"""Gaussian focus-point heatmaps and their temporal aggregation.

An instantaneous heatmap places an isotropic Gaussian (peak 1.0) over every
focus point of a frame.  Consecutive heatmaps are merged with a pixel-wise
max under exponential decay, so a fixation fades out geometrically unless it
is refreshed.  Float maps live in [0, 1]; on disk they are 8-bit PNGs.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

MAP_MAGIC = b"ATTN"


@dataclass
class DecayConfig:
    """Temporal decay and Gaussian rendering parameters."""

    rate: float = 0.17
    sigma: float = 1.0
    truncation_radius: float | None = 4.0  # in multiples of sigma, None = dense

    def __post_init__(self):
        if not 0.0 < self.rate < 1.0:
            raise ValueError(f"decay rate must be in (0, 1), got {self.rate}")
        if self.sigma <= 0.0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.truncation_radius is not None and self.truncation_radius < 3.0:
            raise ValueError(
                f"truncation_radius must be >= 3 sigma (or None), got {self.truncation_radius}"
            )


@dataclass
class FocusPointSet:
    """Per-frame set of camera-frame focus points, (x, y) in pixels."""

    frame_index: int
    points: list[tuple[float, float]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class AttentionMap:
    """H×W likelihood grid; ``kind`` is 'instantaneous' or 'aggregated'."""

    values: np.ndarray
    kind: str = "instantaneous"

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def geometry(self) -> tuple[int, int]:
        return self.values.shape[0], self.values.shape[1]


def render_heatmap(
    points: FocusPointSet, geometry: tuple[int, int], cfg: DecayConfig
) -> AttentionMap:
    """Render the instantaneous heatmap for one frame.

    Each pixel q gets max over points p of exp(-|q-p|^2 / (2 sigma^2)), so the
    value at a focus point itself is exactly 1.0.  Contributions beyond
    ``truncation_radius * sigma`` are rendered as 0.  An empty point set is a
    legal all-zero map; a point outside the geometry is an ingestion bug and
    raises.
    """
    h, w = geometry
    out = np.zeros((h, w), dtype=np.float64)
    for x, y in points.points:
        if not (0.0 <= x < w and 0.0 <= y < h):
            raise ValueError(
                f"focus point ({x}, {y}) outside geometry {w}x{h} "
                f"(frame {points.frame_index})"
            )
        if cfg.truncation_radius is None:
            x0, x1, y0, y1 = 0, w - 1, 0, h - 1
        else:
            reach = cfg.truncation_radius * cfg.sigma
            x0 = max(0, int(np.ceil(x - reach)))
            x1 = min(w - 1, int(np.floor(x + reach)))
            y0 = max(0, int(np.ceil(y - reach)))
            y1 = min(h - 1, int(np.floor(y + reach)))
            if x0 > x1 or y0 > y1:
                continue
        xs = np.arange(x0, x1 + 1, dtype=np.float64) - x
        ys = np.arange(y0, y1 + 1, dtype=np.float64) - y
        d2 = ys[:, None] ** 2 + xs[None, :] ** 2
        g = np.exp(-d2 / (2.0 * cfg.sigma**2))
        np.maximum(out[y0 : y1 + 1, x0 : x1 + 1], g, out=out[y0 : y1 + 1, x0 : x1 + 1])
    return AttentionMap(out, kind="instantaneous")


def aggregate_step(
    h_t: AttentionMap, y_prev: AttentionMap | None, cfg: DecayConfig
) -> AttentionMap:
    """One step of the decay recurrence: max(h_t, (1 - rate) * y_prev).

    With no previous map this is the base case and returns h_t unchanged.
    """
    if y_prev is None:
        return AttentionMap(h_t.values.copy(), kind="aggregated")
    if h_t.values.shape != y_prev.values.shape:
        raise ValueError(
            f"geometry mismatch: h_t is {h_t.values.shape}, y_prev is {y_prev.values.shape}"
        )
    merged = np.maximum(h_t.values, (1.0 - cfg.rate) * y_prev.values)
    return AttentionMap(merged, kind="aggregated")


def aggregate_sequence(
    point_sets: Sequence[FocusPointSet], geometry: tuple[int, int], cfg: DecayConfig
) -> list[AttentionMap]:
    """Run the recurrence over an ordered sequence of focus-point sets.

    Frame indices must be strictly increasing.  Index gaps count as frames
    with empty point sets: the accumulated map decays once per missing tick,
    but only the supplied frames produce output entries.
    """
    out: list[AttentionMap] = []
    y: AttentionMap | None = None
    prev_index: int | None = None
    for ps in point_sets:
        if prev_index is not None and ps.frame_index <= prev_index:
            raise ValueError(
                f"frame indices must be strictly increasing, got {ps.frame_index} "
                f"after {prev_index}"
            )
        h = render_heatmap(ps, geometry, cfg)
        if y is not None and prev_index is not None:
            gap = ps.frame_index - prev_index - 1
            if gap > 0:
                y = AttentionMap(y.values * (1.0 - cfg.rate) ** gap, kind="aggregated")
        y = aggregate_step(h, y, cfg)
        out.append(y)
        prev_index = ps.frame_index
    return out


def quantize(amap: AttentionMap) -> np.ndarray:
    """Map float likelihoods in [0, 1] to uint8 via a fixed scale of 255.

    Rounds half away from zero so golden files are portable.  Values outside
    [0, 1] mean an aggregation bug upstream and raise.
    """
    v = amap.values
    if v.size and (v.min() < 0.0 or v.max() > 1.0):
        raise ValueError(
            f"attention values outside [0, 1]: min={v.min()}, max={v.max()}"
        )
    return np.floor(v * 255.0 + 0.5).astype(np.uint8)


def map_path(root: Path | str, seq: str, frame_index: int) -> Path:
    """On-disk location of one frame's map: <root>/<seq>/<frame_index:06d>.png"""
    return Path(root) / seq / f"{frame_index:06d}.png"


def save_map_png(path: Path | str, values: np.ndarray) -> None:
    """Write a quantized map as a single-channel 8-bit PNG."""
    if values.dtype != np.uint8:
        raise ValueError(f"expected uint8 map, got {values.dtype}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(values, mode="L").save(path)


def load_map_png(path: Path | str) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.uint8)


def save_map_raw(path: Path | str, values: np.ndarray) -> None:
    """Write a float map in the raw golden format.

    Layout: 16-byte header (magic 'ATTN', u32 height, u32 width, u32
    reserved, little-endian) followed by row-major float32 values.
    """
    arr = np.ascontiguousarray(values, dtype="<f4")
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D map, got shape {arr.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(struct.pack("<4sIII", MAP_MAGIC, arr.shape[0], arr.shape[1], 0))
        f.write(arr.tobytes())


def load_map_raw(path: Path | str) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.read(16)
        if len(header) != 16:
            raise ValueError(f"{path}: truncated header")
        magic, h, w, _ = struct.unpack("<4sIII", header)
        if magic != MAP_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, expected {MAP_MAGIC!r}")
        data = np.frombuffer(f.read(4 * h * w), dtype="<f4")
        if data.size != h * w:
            raise ValueError(f"{path}: expected {h * w} values, got {data.size}")
    return data.reshape(h, w).astype(np.float32)
