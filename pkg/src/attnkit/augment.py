"""Attention-aware training augmentations.

Geometric ops (flip, translate/scale, mosaic) move the image, the attention
channel, the focus points and the boxes in lockstep; photometric ops
(brightness, HSV jitter) touch only the color image.  Everything is a
deterministic function of (input, parameters, seed).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import cv2
import numpy as np

from .attention import FocusPointSet

FILL_GRAY = 114  # exposed-canvas fill for color images
MIN_BOX_AREA = 4.0  # px^2, smaller survivors are dropped


@dataclass
class BoxAnnotation:
    class_id: int
    x: float
    y: float
    w: float
    h: float


@dataclass
class Sample:
    """One training sample: image plus whatever annotations ride along."""

    image: np.ndarray  # H x W x 3 uint8
    attention: np.ndarray | None = None  # H x W uint8, quantized likelihoods
    points: FocusPointSet | None = None
    boxes: list[BoxAnnotation] = field(default_factory=list)

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise ValueError(f"image must be HxWx3, got {self.image.shape}")
        if self.attention is not None and self.attention.shape != self.image.shape[:2]:
            raise ValueError(
                f"attention {self.attention.shape} does not match image "
                f"{self.image.shape[:2]}"
            )

    @property
    def geometry(self) -> tuple[int, int]:
        return self.image.shape[0], self.image.shape[1]


def flip_h(s: Sample) -> Sample:
    """Mirror around the vertical axis; an involution on every field."""
    h, w = s.geometry
    points = None
    if s.points is not None:
        points = FocusPointSet(
            s.points.frame_index, [(w - 1 - x, y) for x, y in s.points.points]
        )
    boxes = [replace(b, x=w - b.x - b.w) for b in s.boxes]
    return Sample(
        image=np.ascontiguousarray(s.image[:, ::-1]),
        attention=None if s.attention is None else np.ascontiguousarray(s.attention[:, ::-1]),
        points=points,
        boxes=boxes,
    )


def brightness(s: Sample, factor: float) -> Sample:
    """Scale color values by ``factor`` (round half away from zero, clamp).

    The attention channel, points and boxes are untouched.
    """
    if not 0.1 <= factor <= 3.0:
        raise ValueError(f"brightness factor must be in [0.1, 3.0], got {factor}")
    img = np.floor(s.image.astype(np.float64) * factor + 0.5)
    img = np.clip(img, 0, 255).astype(np.uint8)
    return replace(s, image=img)


def hsv_jitter(s: Sample, dh: float, ds: float, dv: float, seed: int) -> Sample:
    """Jitter hue/saturation/value; magnitudes are maxima of the random draw.

    dh is in degrees (hue shifts additively, wrapping), ds and dv are
    fractional gains around 1.  Conversion runs in float32 so a zero jitter
    is a pure round trip.
    """
    rng = np.random.default_rng(seed)
    jh = rng.uniform(-dh, dh)
    js = 1.0 + rng.uniform(-ds, ds)
    jv = 1.0 + rng.uniform(-dv, dv)
    hsv = cv2.cvtColor(s.image.astype(np.float32) / 255.0, cv2.COLOR_RGB2HSV)
    hsv[..., 0] = (hsv[..., 0] + jh) % 360.0
    hsv[..., 1] = np.clip(hsv[..., 1] * js, 0.0, 1.0)
    hsv[..., 2] = np.clip(hsv[..., 2] * jv, 0.0, 1.0)
    rgb = cv2.cvtColor(hsv, cv2.COLOR_HSV2RGB)
    img = np.clip(np.floor(rgb * 255.0 + 0.5), 0, 255).astype(np.uint8)
    return replace(s, image=img)


def _affine_matrix(w: int, h: int, fx: float, fy: float, scale: float) -> np.ndarray:
    # scale about the canvas center, then translate by a fraction of the size
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    tx = (1.0 - scale) * cx + fx * w
    ty = (1.0 - scale) * cy + fy * h
    return np.array([[scale, 0.0, tx], [0.0, scale, ty]], dtype=np.float64)


def translate_scale(s: Sample, fx: float, fy: float, scale: float) -> Sample:
    """Affine warp: scale about the center, shift by (fx*W, fy*H).

    Color resamples bilinearly onto 114-gray fill; attention uses nearest
    neighbor onto zero fill so no intermediate likelihoods are invented.
    Out-of-canvas points are dropped, boxes are clipped and dropped below
    MIN_BOX_AREA.
    """
    if not (abs(fx) <= 0.5 and abs(fy) <= 0.5):
        raise ValueError(f"|fx|, |fy| must be <= 0.5, got ({fx}, {fy})")
    if scale <= 0.0:
        raise ValueError(f"scale must be positive, got {scale}")
    h, w = s.geometry
    m = _affine_matrix(w, h, fx, fy, scale)
    img = cv2.warpAffine(
        s.image, m, (w, h), flags=cv2.INTER_LINEAR,
        borderMode=cv2.BORDER_CONSTANT, borderValue=(FILL_GRAY,) * 3,
    )
    att = None
    if s.attention is not None:
        att = cv2.warpAffine(
            s.attention, m, (w, h), flags=cv2.INTER_NEAREST,
            borderMode=cv2.BORDER_CONSTANT, borderValue=0,
        )
    points = None
    if s.points is not None:
        moved = []
        for x, y in s.points.points:
            nx = m[0, 0] * x + m[0, 2]
            ny = m[1, 1] * y + m[1, 2]
            if 0.0 <= nx < w and 0.0 <= ny < h:
                moved.append((nx, ny))
        points = FocusPointSet(s.points.frame_index, moved)
    boxes = []
    for b in s.boxes:
        x1 = max(0.0, min(float(w), m[0, 0] * b.x + m[0, 2]))
        y1 = max(0.0, min(float(h), m[1, 1] * b.y + m[1, 2]))
        x2 = max(0.0, min(float(w), m[0, 0] * (b.x + b.w) + m[0, 2]))
        y2 = max(0.0, min(float(h), m[1, 1] * (b.y + b.h) + m[1, 2]))
        if (x2 - x1) * (y2 - y1) >= MIN_BOX_AREA:
            boxes.append(BoxAnnotation(b.class_id, x1, y1, x2 - x1, y2 - y1))
    return Sample(image=img, attention=att, points=points, boxes=boxes)


def mosaic(
    ss: Sequence[Sample],
    seed: int,
    rescale: bool = True,
    center: tuple[int, int] | None = None,
) -> Sample:
    """Composite 4 same-geometry samples around a random center.

    The 2W x 2H canvas splits at a center drawn from [0.5W, 1.5W] x
    [0.5H, 1.5H]; each input anchors to the center corner of its quadrant and
    is cropped to fit, leftover canvas keeps the gray fill.  Annotations and
    the attention channel follow the identical placement.  By default the
    canvas is rescaled back to W x H so downstream shapes stay uniform.
    """
    if len(ss) != 4:
        raise ValueError(f"mosaic needs exactly 4 samples, got {len(ss)}")
    h, w = ss[0].geometry
    for i, s in enumerate(ss[1:], start=1):
        if s.geometry != (h, w):
            raise ValueError(
                f"mosaic geometry mismatch: sample 0 is {(h, w)}, sample {i} is {s.geometry}"
            )
    has_att = [s.attention is not None for s in ss]
    if any(has_att) and not all(has_att):
        raise ValueError("mosaic inputs must all carry attention, or none")
    has_points = [s.points is not None for s in ss]

    rng = np.random.default_rng(seed)
    if center is None:
        xc = int(round(rng.uniform(0.5 * w, 1.5 * w)))
        yc = int(round(rng.uniform(0.5 * h, 1.5 * h)))
    else:
        xc, yc = center

    canvas = np.full((2 * h, 2 * w, 3), FILL_GRAY, dtype=np.uint8)
    att_canvas = np.zeros((2 * h, 2 * w), dtype=np.uint8) if all(has_att) else None
    out_points: list[tuple[float, float]] = []
    out_boxes: list[BoxAnnotation] = []

    for i, s in enumerate(ss):
        if i == 0:  # top left
            x1a, y1a, x2a, y2a = max(xc - w, 0), max(yc - h, 0), xc, yc
            x1b, y1b = w - (x2a - x1a), h - (y2a - y1a)
        elif i == 1:  # top right
            x1a, y1a, x2a, y2a = xc, max(yc - h, 0), min(xc + w, 2 * w), yc
            x1b, y1b = 0, h - (y2a - y1a)
        elif i == 2:  # bottom left
            x1a, y1a, x2a, y2a = max(xc - w, 0), yc, xc, min(2 * h, yc + h)
            x1b, y1b = w - (x2a - x1a), 0
        else:  # bottom right
            x1a, y1a, x2a, y2a = xc, yc, min(xc + w, 2 * w), min(2 * h, yc + h)
            x1b, y1b = 0, 0
        x2b, y2b = x1b + (x2a - x1a), y1b + (y2a - y1a)
        canvas[y1a:y2a, x1a:x2a] = s.image[y1b:y2b, x1b:x2b]
        if att_canvas is not None:
            att_canvas[y1a:y2a, x1a:x2a] = s.attention[y1b:y2b, x1b:x2b]
        padw, padh = x1a - x1b, y1a - y1b
        if s.points is not None:
            for x, y in s.points.points:
                nx, ny = x + padw, y + padh
                if x1a <= nx < x2a and y1a <= ny < y2a:
                    out_points.append((nx, ny))
        for b in s.boxes:
            bx1 = max(float(x1a), b.x + padw)
            by1 = max(float(y1a), b.y + padh)
            bx2 = min(float(x2a), b.x + b.w + padw)
            by2 = min(float(y2a), b.y + b.h + padh)
            if bx2 > bx1 and by2 > by1:
                out_boxes.append(
                    BoxAnnotation(b.class_id, bx1, by1, bx2 - bx1, by2 - by1)
                )

    if rescale:
        canvas = cv2.resize(canvas, (w, h), interpolation=cv2.INTER_LINEAR)
        if att_canvas is not None:
            att_canvas = cv2.resize(att_canvas, (w, h), interpolation=cv2.INTER_NEAREST)
        out_points = [(x / 2.0, y / 2.0) for x, y in out_points]
        out_boxes = [
            BoxAnnotation(b.class_id, b.x / 2.0, b.y / 2.0, b.w / 2.0, b.h / 2.0)
            for b in out_boxes
        ]
    out_boxes = [b for b in out_boxes if b.w * b.h >= MIN_BOX_AREA]

    frame_index = ss[0].points.frame_index if ss[0].points is not None else 0
    return Sample(
        image=canvas,
        attention=att_canvas,
        points=FocusPointSet(frame_index, out_points) if any(has_points) else None,
        boxes=out_boxes,
    )


@dataclass
class AugmentSpec:
    """Ordered op list plus the seed all per-sample randomness derives from.

    Each op is a dict with an 'op' key: flip_h (optional p, default 0.5),
    brightness (factor), hsv (dh, ds, dv), translate (fx, fy maxima),
    scale (s maximum deviation from 1), mosaic.
    """

    ops: list[dict] = field(default_factory=list)
    seed: int = 0

    def __post_init__(self):
        for op in self.ops:
            kind = op.get("op")
            if kind not in {"flip_h", "brightness", "hsv", "translate", "scale", "mosaic"}:
                raise ValueError(f"unknown augment op {op!r}")
            if kind == "brightness" and not op.get("factor", 1.0) > 0:
                raise ValueError(f"brightness factor must be positive: {op!r}")
            if kind == "translate":
                if abs(op.get("fx", 0.0)) > 0.5 or abs(op.get("fy", 0.0)) > 0.5:
                    raise ValueError(f"translate fractions must be within 0.5: {op!r}")
            if kind == "scale" and not op.get("s", 0.0) > 0:
                raise ValueError(f"scale magnitude must be positive: {op!r}")


def sample_seed(spec_seed: int, sample_index: int) -> int:
    """Per-sample seed; XOR keeps determinism independent of scheduling."""
    return (int(spec_seed) ^ int(sample_index)) & 0xFFFFFFFFFFFFFFFF


def apply_ops(
    s: Sample,
    spec: AugmentSpec,
    sample_index: int = 0,
    pool: Callable[[np.random.Generator], list[Sample]] | None = None,
) -> Sample:
    """Apply the spec's ops in order with the sample's derived seed.

    ``pool`` supplies the three partner samples for mosaic; requesting mosaic
    without a pool is an error.
    """
    rng = np.random.default_rng(sample_seed(spec.seed, sample_index))
    for op in spec.ops:
        kind = op["op"]
        if kind == "flip_h":
            if rng.uniform() < op.get("p", 0.5):
                s = flip_h(s)
        elif kind == "brightness":
            s = brightness(s, float(op["factor"]))
        elif kind == "hsv":
            s = hsv_jitter(
                s, float(op.get("dh", 5.4)), float(op.get("ds", 0.7)),
                float(op.get("dv", 0.4)), int(rng.integers(0, 2**63)),
            )
        elif kind == "translate":
            fx = rng.uniform(-float(op.get("fx", 0.2)), float(op.get("fx", 0.2)))
            fy = rng.uniform(-float(op.get("fy", 0.2)), float(op.get("fy", 0.2)))
            s = translate_scale(s, fx, fy, 1.0)
        elif kind == "scale":
            mag = float(op.get("s", 0.5))
            s = translate_scale(s, 0.0, 0.0, 1.0 + rng.uniform(-mag, mag))
        elif kind == "mosaic":
            if pool is None:
                raise ValueError("mosaic op requires a partner-sample pool")
            partners = pool(rng)
            s = mosaic([s, *partners], seed=int(rng.integers(0, 2**63)))
    return s


def load_boxes(path: Path | str) -> dict[str, list[BoxAnnotation]]:
    """Read box annotations JSONL ({image_id, class_id, x, y, w, h})."""
    by_image: dict[str, list[BoxAnnotation]] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            text = line.strip()
            if not text:
                continue
            try:
                obj = json.loads(text)
                box = BoxAnnotation(
                    class_id=int(obj["class_id"]), x=float(obj["x"]), y=float(obj["y"]),
                    w=float(obj["w"]), h=float(obj["h"]),
                )
                image_id = str(obj["image_id"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise ValueError(f"boxes line {lineno}: malformed record {text!r} ({e})") from e
            by_image.setdefault(image_id, []).append(box)
    return by_image


def save_boxes(path: Path | str, by_image: dict[str, list[BoxAnnotation]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for image_id in sorted(by_image):
            for b in by_image[image_id]:
                f.write(json.dumps({
                    "image_id": image_id, "class_id": b.class_id,
                    "x": b.x, "y": b.y, "w": b.w, "h": b.h,
                }) + "\n")
