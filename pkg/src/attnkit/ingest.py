"""Gaze recordings to per-frame focus points.

Parses gaze JSONL and frame manifests, projects tracker coordinates into the
camera frame through a homography, associates gaze to frames by timestamp and
applies the upper-third crop used to bias training toward track events.
Points that are invalid, degenerate under projection or outside the camera
frame are dropped and counted, never fatal.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .attention import FocusPointSet


@dataclass
class GazeSample:
    t_ns: int
    x: float
    y: float
    valid: bool = True


@dataclass
class FrameManifestEntry:
    frame_index: int
    t_ns: int
    path: str
    width: int
    height: int
    seq: str = "000"


@dataclass
class CameraTransform:
    """3x3 homography taking tracker coordinates to camera pixels."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (3, 3):
            raise ValueError(f"camera transform must be 3x3, got {m.shape}")
        if abs(np.linalg.det(m)) <= 1e-12:
            raise ValueError("camera transform is not invertible")
        self.matrix = m

    @classmethod
    def identity(cls) -> "CameraTransform":
        return cls(np.eye(3))


@dataclass
class IngestReport:
    """Counts of gaze samples dropped on the way to focus points."""

    discarded_out_of_frame: int = 0
    discarded_invalid: int = 0
    discarded_degenerate: int = 0

    def to_dict(self) -> dict:
        return {
            "discarded_out_of_frame": self.discarded_out_of_frame,
            "discarded_invalid": self.discarded_invalid,
            "discarded_degenerate": self.discarded_degenerate,
        }


def _iter_lines(stream) -> Iterable[str]:
    for raw in stream:
        yield raw.decode("utf-8") if isinstance(raw, bytes) else raw


def parse_gaze(stream) -> list[GazeSample]:
    """Parse gaze JSONL ({t_ns, x, y, valid} per line) into ordered samples.

    Raises ValueError naming the line for malformed records or timestamps
    that are not strictly increasing.
    """
    samples: list[GazeSample] = []
    for lineno, line in enumerate(_iter_lines(stream), start=1):
        text = line.strip()
        if not text:
            continue
        try:
            obj = json.loads(text)
            sample = GazeSample(
                t_ns=int(obj["t_ns"]),
                x=float(obj["x"]),
                y=float(obj["y"]),
                valid=bool(obj["valid"]),
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise ValueError(f"gaze line {lineno}: malformed record {text!r} ({e})") from e
        if samples and sample.t_ns <= samples[-1].t_ns:
            raise ValueError(
                f"gaze line {lineno}: timestamp {sample.t_ns} not after {samples[-1].t_ns}"
            )
        samples.append(sample)
    return samples


def load_gaze(path: Path | str) -> list[GazeSample]:
    with open(path, "r", encoding="utf-8") as f:
        return parse_gaze(f)


def parse_manifest(stream) -> list[FrameManifestEntry]:
    """Parse a frame manifest JSONL ({frame_index, t_ns, path, width, height}).

    Frame indices must be contiguous from 0 within each sequence (optional
    'seq' key, default '000') and timestamps non-decreasing.
    """
    entries: list[FrameManifestEntry] = []
    next_index: dict[str, int] = {}
    last_t: int | None = None
    for lineno, line in enumerate(_iter_lines(stream), start=1):
        text = line.strip()
        if not text:
            continue
        try:
            obj = json.loads(text)
            entry = FrameManifestEntry(
                frame_index=int(obj["frame_index"]),
                t_ns=int(obj["t_ns"]),
                path=str(obj["path"]),
                width=int(obj["width"]),
                height=int(obj["height"]),
                seq=str(obj.get("seq", "000")),
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise ValueError(f"manifest line {lineno}: malformed record {text!r} ({e})") from e
        expected = next_index.get(entry.seq, 0)
        if entry.frame_index != expected:
            raise ValueError(
                f"manifest line {lineno}: frame_index {entry.frame_index} in seq "
                f"{entry.seq!r}, expected {expected}"
            )
        if last_t is not None and entry.t_ns < last_t:
            raise ValueError(
                f"manifest line {lineno}: timestamp {entry.t_ns} decreases (prev {last_t})"
            )
        next_index[entry.seq] = expected + 1
        last_t = entry.t_ns
        entries.append(entry)
    return entries


def load_manifest(path: Path | str) -> list[FrameManifestEntry]:
    with open(path, "r", encoding="utf-8") as f:
        return parse_manifest(f)


def _project(
    sample: GazeSample, tf: CameraTransform, geometry: tuple[int, int]
) -> tuple[tuple[float, float] | None, str]:
    if not sample.valid:
        return None, "invalid"
    h, w = geometry
    u, v, z = tf.matrix @ (sample.x, sample.y, 1.0)
    if abs(z) < 1e-9:
        return None, "degenerate"
    px, py = u / z, v / z
    if not (0.0 <= px < w and 0.0 <= py < h):
        return None, "out_of_frame"
    return (px, py), "ok"


def to_camera_frame(
    sample: GazeSample, tf: CameraTransform, geometry: tuple[int, int]
) -> tuple[float, float] | None:
    """Map one gaze sample into camera pixels; None when it must be dropped.

    Drops invalid samples, degenerate projections (|w| < 1e-9) and points
    landing outside [0, W) x [0, H).
    """
    point, _ = _project(sample, tf, geometry)
    return point


def project_samples(
    samples: Iterable[GazeSample], tf: CameraTransform, geometry: tuple[int, int]
) -> tuple[list[GazeSample], IngestReport]:
    """Project a recording into camera pixels, counting every discard."""
    report = IngestReport()
    kept: list[GazeSample] = []
    for s in samples:
        point, reason = _project(s, tf, geometry)
        if point is None:
            if reason == "invalid":
                report.discarded_invalid += 1
            elif reason == "degenerate":
                report.discarded_degenerate += 1
            else:
                report.discarded_out_of_frame += 1
            continue
        kept.append(GazeSample(t_ns=s.t_ns, x=point[0], y=point[1], valid=True))
    return kept, report


def synchronize(
    gaze: Sequence[GazeSample],
    manifest: Sequence[FrameManifestEntry],
    window_ns: int,
    k_max: int = 4,
) -> list[FocusPointSet]:
    """Assign camera-frame gaze samples to frames by timestamp.

    A frame collects the samples with |t_gaze - t_frame| <= window/2, capped
    at the k_max most recent; frames with no nearby gaze get empty sets.
    Expects gaze already projected into camera pixels and both lists ordered
    by time.
    """
    half = window_ns / 2.0
    out: list[FocusPointSet] = []
    lo = 0
    for frame in manifest:
        while lo < len(gaze) and gaze[lo].t_ns < frame.t_ns - half:
            lo += 1
        hits: list[GazeSample] = []
        i = lo
        while i < len(gaze) and gaze[i].t_ns <= frame.t_ns + half:
            hits.append(gaze[i])
            i += 1
        if len(hits) > k_max:
            hits = hits[-k_max:]  # ordered by time, keep the most recent
        out.append(
            FocusPointSet(frame.frame_index, [(s.x, s.y) for s in hits])
        )
    return out


def crop_upper_third(
    frame: np.ndarray, points: FocusPointSet
) -> tuple[np.ndarray, FocusPointSet]:
    """Drop the top floor(H/3) rows and shift points into the cropped frame.

    Points above the crop line are discarded; retained coordinates keep their
    sub-pixel precision.
    """
    h = frame.shape[0]
    cut = h // 3
    cropped = frame[cut:]
    kept = [(x, y - cut) for x, y in points.points if y >= cut]
    return cropped, FocusPointSet(points.frame_index, kept)
