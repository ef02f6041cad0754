"""Auto-labeled detector training examples.

Positives are anchors overlapping a known-category track or a cluster-member
track by at least 50% IoU. Negatives are anchors that lie almost entirely in
geometrically object-free space (ground pixels, or more than 2.5 m above the
ground) and overlap no track.
"""
from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .core import BBox, CameraIntrinsics, GroundPlane, iou_matrix

Label = Union[str, int]

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class Anchor:
    bbox: BBox
    row: int
    col: int
    scale_index: int
    ratio_index: int


@dataclass(frozen=True)
class TrainingExample:
    sequence_id: str
    frame: int
    anchor_index: int
    bbox: BBox
    label: Optional[Label]  # category name or cluster id; None for negatives
    track_id: Optional[int] = None

    @property
    def positive(self) -> bool:
        return self.label is not None


@dataclass(frozen=True)
class FreeSpaceParams:
    ground_eps: float = 0.2
    max_height: float = 2.5
    z_min: float = 1.0
    z_max: float = 60.0


def generate_anchors(image_w: int, image_h: int, stride: int = 16,
                     scales: Sequence[float] = (32, 64, 128, 256),
                     ratios: Sequence[float] = (0.5, 1.0, 2.0)) -> list[Anchor]:
    """Dense anchors centred on a ``stride`` grid, ordered row-major, then scale, then ratio.

    ``ratio`` is width / height and every anchor has area ``scale**2`` before it
    is clipped to the image. Anchors thinner than one pixel after clipping are dropped.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if not scales or not ratios:
        raise ValueError("scales and ratios must be non-empty")
    anchors = []
    rows, cols = math.ceil(image_h / stride), math.ceil(image_w / stride)
    for r in range(rows):
        cy = r * stride + stride / 2.0
        for c in range(cols):
            cx = c * stride + stride / 2.0
            for si, s in enumerate(scales):
                for ri, ratio in enumerate(ratios):
                    w, h = s * math.sqrt(ratio), s / math.sqrt(ratio)
                    x1, y1 = max(0.0, cx - w / 2.0), max(0.0, cy - h / 2.0)
                    x2, y2 = min(float(image_w), cx + w / 2.0), min(float(image_h), cy + h / 2.0)
                    if x2 - x1 < 1.0 or y2 - y1 < 1.0:
                        continue
                    anchors.append(Anchor(BBox(x1, y1, x2 - x1, y2 - y1), r, c, si, ri))
    return anchors


def anchor_array(anchors: Sequence[Anchor]) -> np.ndarray:
    return np.array([a.bbox.as_tuple() for a in anchors], dtype=np.float64).reshape(-1, 4)


def select_positive_anchors(
    anchors: Sequence[Anchor],
    track_boxes: Sequence[tuple[int, BBox]],
    labels: Mapping[int, Label],
    iou_min: float = 0.5,
    sequence_id: str = "",
    frame: int = 0,
) -> list[TrainingExample]:
    """Positive examples for one frame.

    ``track_boxes`` holds ``(track_id, box)`` for tracks present in the frame;
    tracks missing from ``labels`` are ignored. Each anchor takes its
    highest-IoU box (ties to the lower track id) and is kept when that IoU is at
    least ``iou_min``.
    """
    boxes = [(tid, b) for tid, b in track_boxes if tid in labels]
    if not anchors or not boxes:
        return []
    boxes.sort(key=lambda tb: tb[0])
    A = anchor_array(anchors)
    overlap = iou_matrix(A, np.array([b.as_tuple() for _, b in boxes]))
    best = np.argmax(overlap, axis=1)  # first maximum = lowest track id
    best_iou = overlap[np.arange(len(A)), best]
    out = []
    for ai in np.flatnonzero(best_iou >= iou_min):
        tid = boxes[best[ai]][0]
        out.append(TrainingExample(sequence_id, frame, int(ai), anchors[ai].bbox, labels[tid], tid))
    return out


def _pixel_rays(K: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray]:
    # pixel (u, v) is sampled at its centre (u + 0.5, v + 0.5)
    u = (np.arange(K.image_w) + 0.5 - K.cx) / K.fx
    v = (np.arange(K.image_h) + 0.5 - K.cy) / K.fy
    return np.meshgrid(u, v)


def free_space_mask(K: CameraIntrinsics, plane: GroundPlane, depth: Optional[np.ndarray] = None,
                    params: FreeSpaceParams = FreeSpaceParams()) -> np.ndarray:
    """Boolean ``(image_h, image_w)`` mask, True where the scene is assumed object-free.

    With a depth map, a pixel is free when its back-projected point is within
    ``ground_eps`` of the ground (or below it) or at least ``max_height`` above
    it; invalid depths are never free. Without depth, a pixel is free when its
    ray meets the ground between ``z_min`` and ``z_max``, or when the ray stays
    above ``max_height`` over that whole depth range.
    """
    ru, rv = _pixel_rays(K)
    nx, ny, nz = plane.normal
    slope = nx * ru + ny * rv + nz  # height(z) = z * slope + offset along the ray
    if depth is not None:
        depth = np.asarray(depth, dtype=np.float64)
        if depth.shape != (K.image_h, K.image_w):
            raise ValueError(f"depth map shape {depth.shape} != image ({K.image_h}, {K.image_w})")
        valid = np.isfinite(depth) & (depth > 0)
        height = np.where(valid, depth, 0.0) * slope + plane.offset
        return valid & ((height <= params.ground_eps) | (height >= params.max_height))
    with np.errstate(divide="ignore", invalid="ignore"):
        z_hit = -plane.offset / slope
    ground = (slope != 0) & (z_hit >= params.z_min) & (z_hit <= params.z_max)
    h_min = np.minimum(params.z_min * slope, params.z_max * slope) + plane.offset
    high = h_min > params.max_height
    return ground | high


def _pixel_span(lo: np.ndarray, hi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # pixels whose centre lies in [lo, hi)
    return np.ceil(lo - 0.5).astype(np.int64), np.ceil(hi - 0.5).astype(np.int64)


def free_fractions(anchors: Sequence[Anchor], mask: np.ndarray) -> np.ndarray:
    """Fraction of each anchor's pixels that are free (pixel centres inside the box)."""
    H, W = mask.shape
    integral = np.zeros((H + 1, W + 1), dtype=np.int64)
    integral[1:, 1:] = np.cumsum(np.cumsum(mask.astype(np.int64), axis=0), axis=1)
    A = anchor_array(anchors)
    u0, u1 = _pixel_span(A[:, 0], A[:, 0] + A[:, 2])
    v0, v1 = _pixel_span(A[:, 1], A[:, 1] + A[:, 3])
    u0, u1 = np.clip(u0, 0, W), np.clip(u1, 0, W)
    v0, v1 = np.clip(v0, 0, H), np.clip(v1, 0, H)
    free = integral[v1, u1] - integral[v0, u1] - integral[v1, u0] + integral[v0, u0]
    total = np.maximum(u1 - u0, 0) * np.maximum(v1 - v0, 0)
    return np.where(total > 0, free / np.maximum(total, 1), 0.0)


def select_negative_anchors(
    anchors: Sequence[Anchor],
    mask: np.ndarray,
    track_boxes: Sequence[tuple[int, BBox]] = (),
    free_fraction_min: float = 0.9,
    iou_max: float = 0.1,
    sequence_id: str = "",
    frame: int = 0,
    fractions: Optional[np.ndarray] = None,
) -> list[TrainingExample]:
    """Negatives: free-pixel fraction >= ``free_fraction_min`` and IoU < ``iou_max`` with every track box.

    ``fractions`` may carry precomputed :func:`free_fractions` when the mask is
    shared across frames.
    """
    if not anchors:
        return []
    frac = free_fractions(anchors, mask) if fractions is None else fractions
    keep = frac >= free_fraction_min
    if track_boxes:
        overlap = iou_matrix(anchor_array(anchors), np.array([b.as_tuple() for _, b in track_boxes]))
        keep &= overlap.max(axis=1) < iou_max
    return [TrainingExample(sequence_id, frame, int(i), anchors[i].bbox, None, None) for i in np.flatnonzero(keep)]


def _example_record(ex: TrainingExample, mode: str) -> dict:
    rec = {
        "sequence_id": ex.sequence_id,
        "frame": ex.frame,
        "anchor_index": ex.anchor_index,
        "bbox": list(ex.bbox.as_tuple()),
        "label": "positive" if ex.positive else "negative",
    }
    if ex.positive:
        rec["category" if mode == "finetune" else "cluster_id"] = ex.label
    rec["track_id"] = ex.track_id
    return rec


def export_training_set(positives: Iterable[TrainingExample], negatives: Iterable[TrainingExample],
                        mode: str, path) -> dict:
    """Write examples as NDJSON in (sequence, frame, anchor) order plus a trailing metadata line.

    Returns the metadata record.
    """
    if mode not in ("finetune", "discover"):
        raise ValueError("mode must be 'finetune' or 'discover'")
    positives, negatives = list(positives), list(negatives)
    for ex in positives:
        if ex.label is None:
            raise ValueError("positive example without a label")
        if mode == "finetune" and not isinstance(ex.label, str):
            raise ValueError(f"finetune mode needs category names, got {ex.label!r}")
        if mode == "discover" and (isinstance(ex.label, (str, bool)) or not isinstance(ex.label, (int, np.integer))):
            raise ValueError(f"discover mode needs cluster ids, got {ex.label!r}")
    pos_keys = {(e.sequence_id, e.frame, e.anchor_index) for e in positives}
    clash = [e for e in negatives if (e.sequence_id, e.frame, e.anchor_index) in pos_keys]
    if clash:
        raise ValueError(f"{len(clash)} anchors are both positive and negative")

    examples = sorted(positives + negatives, key=lambda e: (e.sequence_id, e.frame, e.anchor_index))
    per_label = Counter(str(e.label) for e in positives)
    meta = {
        "kind": "metadata",
        "schema_version": SCHEMA_VERSION,
        "mode": mode,
        "counts": {"pos": len(positives), "neg": len(negatives)},
        "per_label": dict(sorted(per_label.items())),
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ex in examples:
            fh.write(json.dumps(_example_record(ex, mode), separators=(",", ":")) + "\n")
        fh.write(json.dumps(meta, separators=(",", ":")) + "\n")
    return meta


def read_training_set(path) -> tuple[list[dict], dict]:
    with open(path, encoding="utf-8") as fh:
        rows = [json.loads(line) for line in fh if line.strip()]
    if not rows or rows[-1].get("kind") != "metadata":
        raise ValueError(f"{path}: missing trailing metadata line")
    return rows[:-1], rows[-1]


def write_pgm(mask: np.ndarray, path) -> None:
    """Dump a mask as binary PGM (P5), free pixels white."""
    img = np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(img.tobytes())
