"""Geometry and embedding primitives shared by the pipeline stages.

Conventions: boxes are ``(x, y, w, h)`` with a top-left origin and area ``w * h``;
the camera frame is x right, y down, z forward.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class DegenerateInputError(ValueError):
    """Raised when an input is valid by type but unusable, e.g. a zero vector under cosine."""


@dataclass(frozen=True)
class BBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.w, self.h)):
            raise ValueError(f"non-finite box coordinates: {self}")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box must have positive width and height: {self}")

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)

    def union(self, other: "BBox") -> "BBox":
        """Smallest box containing both."""
        x1 = min(self.x, other.x)
        y1 = min(self.y, other.y)
        return BBox(x1, y1, max(self.x2, other.x2) - x1, max(self.y2, other.y2) - y1)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    image_w: int
    image_h: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.image_w and 0 <= self.cy < self.image_h):
            raise ValueError("principal point must lie inside the image")


@dataclass(frozen=True)
class GroundPlane:
    """Plane with ``height(P) = normal . P + offset``; the normal points up."""

    normal: tuple[float, float, float]
    offset: float

    def __post_init__(self):
        norm = math.sqrt(sum(c * c for c in self.normal))
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"plane normal must be unit length, got norm {norm}")
        object.__setattr__(self, "normal", tuple(float(c) for c in self.normal))


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes."""
    ax2, ay2, bx2, by2 = a.x + a.w, a.y + a.h, b.x + b.w, b.y + b.h
    iw = min(ax2, bx2) - max(a.x, b.x)
    ih = min(ay2, by2) - max(a.y, b.y)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    # areas from the same rounded corners as the intersection, so iou(a, a) == 1
    inter = iw * ih
    union = (ax2 - a.x) * (ay2 - a.y) + (bx2 - b.x) * (by2 - b.y) - inter
    return min(1.0, inter / union)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between ``(N, 4)`` and ``(M, 4)`` arrays of xywh boxes.

    Uses the same operation order as :func:`iou`, so entries are bit-identical
    to the scalar version.
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    ax, ay, aw, ah = (a[:, i][:, None] for i in range(4))
    bx, by, bw, bh = (b[:, i][None, :] for i in range(4))
    ax2, ay2, bx2, by2 = ax + aw, ay + ah, bx + bw, by + bh
    iw = np.minimum(ax2, bx2) - np.maximum(ax, bx)
    ih = np.minimum(ay2, by2) - np.maximum(ay, by)
    valid = (iw > 0.0) & (ih > 0.0)
    inter = np.where(valid, iw * ih, 0.0)
    union = (ax2 - ax) * (ay2 - ay) + (bx2 - bx) * (by2 - by) - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(valid, np.minimum(1.0, inter / union), 0.0)


def embedding_distance(u: Sequence[float], v: Sequence[float], metric: str = "euclidean") -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"embedding dimensions differ: {u.shape} vs {v.shape}")
    if metric == "euclidean":
        return float(np.linalg.norm(u - v))
    if metric == "cosine":
        nu, nv = np.linalg.norm(u), np.linalg.norm(v)
        if nu == 0.0 or nv == 0.0:
            raise DegenerateInputError("cosine distance undefined for a zero-norm embedding")
        return float(max(0.0, 1.0 - np.dot(u, v) / (nu * nv)))
    raise ValueError(f"unknown metric {metric!r}")


def backproject(pixel: tuple[float, float], depth: float, K: CameraIntrinsics) -> np.ndarray:
    """Camera-frame point at ``depth`` meters along the ray through ``pixel``."""
    if not depth > 0:
        raise ValueError(f"depth must be positive, got {depth}")
    u, v = pixel
    return depth * np.array([(u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0])


def project(P: Sequence[float], K: CameraIntrinsics) -> tuple[float, float]:
    x, y, z = P
    return (K.fx * x / z + K.cx, K.fy * y / z + K.cy)


def height_above_plane(P: Sequence[float], plane: GroundPlane) -> float:
    return float(np.dot(plane.normal, P) + plane.offset)
