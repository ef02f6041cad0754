"""Greedy IoU track building, known/unknown labeling and rider merging.

The association is a deterministic stand-in for a stereo multi-object tracker:
per frame, every (active track, proposal) pair is ranked by IoU and matched
greedily. Tracks record this with ``source = "greedy-iou"``.
"""
from __future__ import annotations

import logging
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .core import iou_matrix
from .records import ProposalRecord, Track, TrackCollection, TrackElement

log = logging.getLogger(__name__)

SOURCE_TAG = "greedy-iou"
MERGED_SOURCE_TAG = "greedy-iou+rider-merge"


@dataclass(frozen=True)
class TrackerParams:
    iou_gate: float = 0.3
    embedding_gate: Optional[float] = None  # minimum cosine similarity; None disables the gate
    max_gap: int = 2
    min_length: int = 5
    confidence_threshold: float = 0.3

    def __post_init__(self):
        if not 0.0 <= self.iou_gate <= 1.0:
            raise ValueError("iou_gate must lie in [0, 1]")
        if self.embedding_gate is not None and not -1.0 <= self.embedding_gate <= 1.0:
            raise ValueError("embedding_gate is a cosine similarity in [-1, 1]")
        if self.max_gap < 0:
            raise ValueError("max_gap must be non-negative")
        if self.min_length < 1:
            raise ValueError("min_length must be at least 1")


class MissingEmbeddingsError(ValueError):
    pass


class _Open:
    __slots__ = ("local_id", "records", "last_frame")

    def __init__(self, local_id: int, rec: ProposalRecord):
        self.local_id = local_id
        self.records = [rec]
        self.last_frame = rec.frame


def _unit_rows(embeddings: np.ndarray, indices: Sequence[int]) -> np.ndarray:
    rows = np.asarray(embeddings[list(indices)], dtype=np.float64)
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    return rows / np.where(norms > 0, norms, 1.0)


def associate_sequence(
    frames: Sequence[tuple[int, Sequence[ProposalRecord]]],
    params: TrackerParams,
    embeddings: Optional[np.ndarray] = None,
) -> list[list[ProposalRecord]]:
    """Greedy frame-by-frame association for one sequence.

    Returns the proposal chains of every track that reaches ``min_length``, in
    creation order.
    """
    if params.embedding_gate is not None and embeddings is None:
        raise MissingEmbeddingsError("embedding_gate is enabled but no embeddings were provided")
    active: list[_Open] = []
    finished: list[_Open] = []
    next_id = 0
    for frame, recs in frames:
        # close tracks that have missed more than max_gap frames
        still = []
        for t in active:
            (finished if frame - t.last_frame - 1 > params.max_gap else still).append(t)
        active = still

        matched_props: set[int] = set()
        if active and recs:
            scores = iou_matrix(
                np.array([t.records[-1].bbox.as_tuple() for t in active]),
                np.array([r.bbox.as_tuple() for r in recs]),
            )
            ok = scores >= params.iou_gate
            if params.embedding_gate is not None:
                a = _unit_rows(embeddings, [t.records[-1].embedding_index for t in active])
                b = _unit_rows(embeddings, [r.embedding_index for r in recs])
                ok &= (a @ b.T) >= params.embedding_gate
            ti, pi = np.nonzero(ok)
            # descending IoU, then lower track id, then lower proposal index
            track_ids = np.array([active[i].local_id for i in ti], dtype=np.int64)
            order = np.lexsort((pi, track_ids, -scores[ti, pi]))
            used_tracks: set[int] = set()
            for o in order:
                i, j = int(ti[o]), int(pi[o])
                if i in used_tracks or j in matched_props:
                    continue
                used_tracks.add(i)
                matched_props.add(j)
                active[i].records.append(recs[j])
                active[i].last_frame = frame
        for j, rec in enumerate(recs):
            if j not in matched_props:
                active.append(_Open(next_id, rec))
                next_id += 1
    finished.extend(active)
    finished.sort(key=lambda t: t.local_id)
    return [t.records for t in finished if len(t.records) >= params.min_length]


def label_track(class_scores: Sequence[Mapping[str, float]], threshold: float = 0.3) -> Optional[str]:
    """Known category of a track from its per-element class scores, or None for unknown.

    An element is confident when its top class score reaches ``threshold``. At
    least half the elements must be confident; the label is then the most
    frequent top category among confident elements, ties broken alphabetically.
    """
    if not class_scores:
        return None
    tops = []
    for scores in class_scores:
        if not scores:
            continue
        best = max(scores.values())
        if best >= threshold:
            # lowest name among equal maxima keeps the choice deterministic
            tops.append(min(k for k, v in scores.items() if v == best))
    if 2 * len(tops) < len(class_scores):
        return None
    counts = Counter(tops)
    top_count = max(counts.values())
    return min(c for c, n in counts.items() if n == top_count)


def _build_one(args) -> list[list[ProposalRecord]]:
    frames, params, embeddings = args
    return associate_sequence(frames, params, embeddings)


def build_tracks(
    grouped: Mapping[str, Sequence[tuple[int, Sequence[ProposalRecord]]]],
    params: TrackerParams = TrackerParams(),
    embeddings: Optional[np.ndarray] = None,
    jobs: int = 1,
) -> TrackCollection:
    """Build and label tracks for every sequence.

    ``grouped`` maps sequence id to frame-ordered ``(frame, proposals)`` pairs
    (see :func:`trackmine.io.group_frames`). Track ids are assigned after
    filtering, in sequence order then creation order, so the result does not
    depend on ``jobs``.
    """
    if params.embedding_gate is not None and embeddings is None:
        raise MissingEmbeddingsError("embedding_gate is enabled but no embeddings were provided")
    seqs = list(grouped)
    tasks = [(grouped[s], params, embeddings) for s in seqs]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chains = list(pool.map(_build_one, tasks))
    else:
        chains = [_build_one(t) for t in tasks]

    tracks: TrackCollection = []
    for seq, seq_chains in zip(seqs, chains):
        for chain in seq_chains:
            category = label_track([r.class_scores for r in chain], params.confidence_threshold)
            elements = tuple(
                TrackElement(r.frame, r.index, r.bbox, r.embedding_index, r.centroid_3d) for r in chain
            )
            tracks.append(Track(len(tracks), seq, elements, category, SOURCE_TAG))
    return tracks


def _overlap_distance(a: Track, b: Track) -> tuple[int, Optional[float]]:
    """(number of shared frames, median centroid distance or None if a centroid is missing)."""
    ea = {e.frame: e for e in a.elements}
    shared = [(ea[e.frame], e) for e in b.elements if e.frame in ea]
    if not shared:
        return 0, None
    if any(x.centroid is None or y.centroid is None for x, y in shared):
        return len(shared), None
    d = [float(np.linalg.norm(np.subtract(x.centroid, y.centroid))) for x, y in shared]
    return len(shared), float(np.median(d))


def _merge_pair(person: Track, bicycle: Track, track_id: int, category: str) -> Track:
    by_frame: dict[int, list[TrackElement]] = {}
    for e in person.elements + bicycle.elements:
        by_frame.setdefault(e.frame, []).append(e)
    elements = []
    for frame in sorted(by_frame):
        es = by_frame[frame]
        if len(es) == 1:
            elements.append(es[0])
            continue
        p, b = es
        centroid = None
        if p.centroid is not None and b.centroid is not None:
            centroid = tuple(float(v) for v in (np.add(p.centroid, b.centroid) / 2.0))
        elements.append(TrackElement(frame, p.proposal, p.bbox.union(b.bbox), p.embedding_index, centroid))
    return Track(track_id, person.sequence_id, tuple(elements), category, MERGED_SOURCE_TAG)


def merge_rider_tracks(
    collection: TrackCollection,
    max_distance: float = 1.0,
    rider: str = "person",
    vehicle: str = "bicycle",
    merged_category: str = "cyclist",
) -> tuple[TrackCollection, int]:
    """Merge co-located person and bicycle tracks into cyclist tracks.

    A pair merges when the tracks share at least one frame and the median 3D
    centroid distance over shared frames is below ``max_distance``. Candidate
    pairs are taken closest first; each track merges at most once. Merged
    tracks get fresh ids after the current maximum and replace their originals.

    Returns the new collection and the number of pairs skipped because
    centroids were missing on shared frames.
    """
    by_seq: dict[str, tuple[list[Track], list[Track]]] = {}
    for t in collection:
        if t.category == rider:
            by_seq.setdefault(t.sequence_id, ([], []))[0].append(t)
        elif t.category == vehicle:
            by_seq.setdefault(t.sequence_id, ([], []))[1].append(t)

    candidates = []
    skipped = 0
    for persons, bicycles in by_seq.values():
        for p in persons:
            for b in bicycles:
                shared, dist = _overlap_distance(p, b)
                if shared == 0:
                    continue
                if dist is None:
                    skipped += 1
                    continue
                if dist < max_distance:
                    candidates.append((dist, p.track_id, b.track_id, p, b))
    if skipped:
        log.warning("rider merge skipped %d pairs with missing centroids", skipped)

    candidates.sort(key=lambda c: c[:3])
    used: set[int] = set()
    next_id = max((t.track_id for t in collection), default=-1) + 1
    merged = []
    for _, pid, bid, p, b in candidates:
        if pid in used or bid in used:
            continue
        used.update((pid, bid))
        merged.append(_merge_pair(p, b, next_id, merged_category))
        next_id += 1
    return [t for t in collection if t.track_id not in used] + merged, skipped
