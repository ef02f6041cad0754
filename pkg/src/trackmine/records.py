"""Record types passed between pipeline stages."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .core import BBox

Centroid = Optional[tuple[float, float, float]]

TRACKING_ERROR = "tracking_error"
UNKNOWN_VALID = "unknown_valid"


@dataclass(frozen=True)
class ProposalRecord:
    sequence_id: str
    frame: int
    bbox: BBox
    objectness: float
    class_scores: dict[str, float]
    embedding_index: int
    centroid_3d: Centroid = None
    index: int = -1  # position in the source file; the proposal reference used by tracks


@dataclass(frozen=True)
class TrackElement:
    frame: int
    proposal: int
    bbox: BBox
    embedding_index: int
    centroid: Centroid = None


@dataclass(frozen=True)
class Track:
    """Time-ordered chain of proposals; ``category is None`` means unknown."""

    track_id: int
    sequence_id: str
    elements: tuple[TrackElement, ...]
    category: Optional[str] = None
    source: str = "greedy-iou"

    @property
    def is_known(self) -> bool:
        return self.category is not None

    @property
    def frames(self) -> list[int]:
        return [e.frame for e in self.elements]

    def __len__(self) -> int:
        return len(self.elements)


TrackCollection = list[Track]


@dataclass
class ClusterAssignment:
    """Cluster id per track (-1 is NOISE) plus distance-to-center outlier scores."""

    track_ids: list[int]
    labels: list[int]
    outlier_scores: list[float]
    method: str
    params: dict = field(default_factory=dict)

    NOISE = -1

    def __post_init__(self):
        if not len(self.track_ids) == len(self.labels) == len(self.outlier_scores):
            raise ValueError("assignment columns differ in length")

    @property
    def n_clusters(self) -> int:
        return len({c for c in self.labels if c != self.NOISE})

    def as_dict(self) -> dict[int, int]:
        return dict(zip(self.track_ids, self.labels))
