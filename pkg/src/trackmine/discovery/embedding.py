"""Per-track representative embeddings and distance-to-center outlier scores."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..records import Track, TrackElement


@dataclass(frozen=True)
class TrackEmbedding:
    track_id: int
    vector: np.ndarray
    source_element: TrackElement


def representative_embedding(track: Track, crop_embeddings: np.ndarray) -> TrackEmbedding:
    """Embedding of the crop closest (euclidean) to the mean of the track's crop embeddings.

    Ties go to the earliest element. Elements whose ``embedding_index`` is
    negative or outside ``crop_embeddings`` are ignored.
    """
    count = len(crop_embeddings)
    members = [e for e in track.elements if 0 <= e.embedding_index < count]
    if not members:
        raise ValueError(f"track {track.track_id} has no embedded elements")
    vecs = np.asarray(crop_embeddings[[e.embedding_index for e in members]], dtype=np.float64)
    # compare |n*v - sum|^2 rather than |v - mean|: same order, no division, so
    # exact ties stay exact for integer-valued data
    d2 = np.square(len(vecs) * vecs - vecs.sum(axis=0)).sum(axis=1)
    best = int(np.argmin(d2))  # first occurrence on ties
    return TrackEmbedding(track.track_id, np.asarray(crop_embeddings[members[best].embedding_index]), members[best])


def distance_to_center_outlier_scores(points, labels, noise: int = -1) -> np.ndarray:
    """Euclidean distance of each point to the centroid of its cluster; noise points score +inf."""
    X = np.asarray(points, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    labels = np.asarray(labels)
    if len(labels) != len(X):
        raise ValueError("assignment does not cover all points")
    scores = np.full(len(X), np.inf)
    for c in np.unique(labels):
        if c == noise:
            continue
        mask = labels == c
        scores[mask] = np.linalg.norm(X[mask] - X[mask].mean(axis=0), axis=1)
    return scores
