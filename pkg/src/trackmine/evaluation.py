"""Clustering evaluation (AMI, outlier-fraction sweeps) and track-mining statistics."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Hashable, Iterable, Mapping, Optional, Sequence

import numpy as np
from scipy.special import gammaln

from .discovery.embedding import distance_to_center_outlier_scores
from .records import TRACKING_ERROR, Track

NOISE = -1


def _codes(labels) -> np.ndarray:
    arr = np.asarray(labels)
    if arr.dtype.kind not in "iub":
        arr = arr.astype(str)
    return np.unique(arr, return_inverse=True)[1].ravel()


@dataclass
class ContingencyTable:
    counts: np.ndarray  # n_ij: rows are clusters of u, columns classes of v

    @classmethod
    def from_labels(cls, u: Sequence[Hashable], v: Sequence[Hashable]) -> "ContingencyTable":
        if len(u) != len(v):
            raise ValueError(f"labelings differ in length ({len(u)} vs {len(v)})")
        if len(u) == 0:
            raise ValueError("labelings are empty")
        ui, vi = _codes(u), _codes(v)
        table = np.zeros((ui.max() + 1, vi.max() + 1), dtype=np.int64)
        np.add.at(table, (ui, vi), 1)
        return cls(table)

    @property
    def a(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def b(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def entropy(marginal: np.ndarray) -> float:
    p = marginal[marginal > 0] / marginal.sum()
    return float(-(p * np.log(p)).sum())


def mutual_information(table: ContingencyTable) -> float:
    n = table.counts.astype(np.float64)
    N = n.sum()
    a, b = table.a.astype(np.float64), table.b.astype(np.float64)
    i, j = np.nonzero(n)
    nij = n[i, j]
    return float(np.sum(nij / N * np.log(N * nij / (a[i] * b[j]))))


def expected_mutual_information(table: ContingencyTable) -> float:
    """Exact E[MI] under the hypergeometric model with both marginals fixed."""
    a, b, N = table.a, table.b, table.total
    lg_N = gammaln(N + 1)
    total = 0.0
    for ai in a:
        for bj in b:
            lo, hi = max(1, ai + bj - N), min(ai, bj)
            if lo > hi:
                continue
            nij = np.arange(lo, hi + 1, dtype=np.float64)
            log_p = (
                gammaln(ai + 1) + gammaln(bj + 1) + gammaln(N - ai + 1) + gammaln(N - bj + 1)
                - lg_N - gammaln(nij + 1) - gammaln(ai - nij + 1) - gammaln(bj - nij + 1)
                - gammaln(N - ai - bj + nij + 1)
            )
            term = nij / N * np.log(N * nij / (float(ai) * float(bj)))
            total += float(np.sum(term * np.exp(log_p)))
    return total


def ami(u: Sequence[Hashable], v: Sequence[Hashable], average: str = "arithmetic") -> float:
    """Adjusted mutual information (natural log), normalised by the mean (or max) entropy."""
    table = ContingencyTable.from_labels(u, v)
    R, C = table.counts.shape
    if R == 1 and C == 1:
        return 1.0
    hu, hv = entropy(table.a), entropy(table.b)
    mi = mutual_information(table)
    emi = expected_mutual_information(table)
    if average == "arithmetic":
        norm = (hu + hv) / 2.0
    elif average == "max":
        norm = max(hu, hv)
    else:
        raise ValueError("average must be 'arithmetic' or 'max'")
    denom = norm - emi
    # MI and E[MI] are computed by different routes; treat rounding-level gaps as zero
    if abs(denom) <= 1e-12 * max(1.0, norm):
        return 0.0
    return (mi - emi) / denom


@dataclass
class SweepCurve:
    points: list[tuple[float, float]]
    automatic: Optional[tuple[float, float]] = None

    def rows(self) -> list[tuple[float, float, bool]]:
        out = [(f, a, False) for f, a in self.points]
        if self.automatic is not None:
            out.append((*self.automatic, True))
        return out


def sweep_from_scores(
    track_ids: Sequence[int],
    labels: Sequence[int],
    scores: Sequence[float],
    gt: Sequence[Hashable],
    fractions: Iterable[float],
    density_based: bool = False,
    average: str = "arithmetic",
) -> SweepCurve:
    """AMI after dropping the ceil(f * N) highest-scoring points, for each fraction f.

    Ranking is global; equal scores drop the lower track id first. NOISE labels
    count as one extra cluster. For density-based assignments the automatic
    point is (noise fraction, AMI over non-noise points).
    """
    track_ids = np.asarray(track_ids)
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    gt = np.asarray(gt, dtype=object)
    N = len(labels)
    if not (len(track_ids) == len(scores) == len(gt) == N):
        raise ValueError("sweep inputs differ in length")
    fractions = [float(f) for f in fractions]
    if any(not 0.0 <= f < 1.0 for f in fractions) or any(b <= a for a, b in zip(fractions, fractions[1:])):
        raise ValueError("fractions must be strictly increasing within [0, 1)")
    # most outlying first; ties broken by lower track id
    order = np.lexsort((track_ids, -scores))
    points = []
    for f in fractions:
        drop = math.ceil(f * N - 1e-9)
        if drop >= N:
            raise ValueError(f"fraction {f} removes all {N} points")
        keep = np.sort(order[drop:])
        points.append((f, ami(labels[keep], gt[keep], average)))
    automatic = None
    if density_based:
        clustered = labels != NOISE
        if clustered.any():
            automatic = (float(1.0 - clustered.mean()), ami(labels[clustered], gt[clustered], average))
    return SweepCurve(points, automatic)


def ami_outlier_sweep(points, assignment, gt, fractions, track_ids=None, density_based=None) -> SweepCurve:
    """Fraction-vs-AMI curve with distance-to-cluster-center outlier scores.

    ``assignment`` is a label array or a :class:`~trackmine.records.ClusterAssignment`.
    """
    labels = getattr(assignment, "labels", assignment)
    labels = np.asarray(labels)
    if track_ids is None:
        track_ids = getattr(assignment, "track_ids", None)
    if track_ids is None:
        track_ids = np.arange(len(labels))
    if density_based is None:
        method = getattr(assignment, "method", "")
        density_based = method == "hdbscan" or bool(np.any(labels == NOISE))
    scores = distance_to_center_outlier_scores(points, labels)
    return sweep_from_scores(track_ids, labels, scores, gt, fractions, density_based)


def restrict_non_known(gt_labels: Sequence[str], known_categories: Iterable[str]) -> list[int]:
    """Indices of labels outside the known set, tracking errors excluded."""
    known = set(known_categories)
    return [i for i, g in enumerate(gt_labels) if g not in known and g != TRACKING_ERROR]


@dataclass
class MiningStats:
    frames: int
    duration_hours: float
    proposals_total: int
    tracks_total: int
    tracks_labeled: int
    tracks_unknown: int
    tracking_errors: int
    proposals_per_frame: float
    compression_per_frame: Optional[float]
    compression_per_sequence: Optional[float]
    error_rate: float
    error_rate_defined: bool = True
    track_elements: Optional[int] = None
    notes: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return asdict(self)

    def report(self) -> dict:
        """Table-style view with rates rounded to one decimal percent."""
        return {
            "Frames": self.frames,
            "Duration (h)": round(self.duration_hours, 2),
            "Proposals (all)": self.proposals_total,
            "Tracks (total)": self.tracks_total,
            "Tracks (labeled)": self.tracks_labeled,
            "Tracks (unk.)": self.tracks_unknown,
            "Tracking Errors": self.tracking_errors,
            "Proposals per frame": round(self.proposals_per_frame, 1),
            "Compression per frame": None if self.compression_per_frame is None else round(self.compression_per_frame, 1),
            "Compression per sequence": None if self.compression_per_sequence is None else round(self.compression_per_sequence, 1),
            "Tracking error rate (%)": round(100.0 * self.error_rate, 1),
        }


def stats_from_counts(
    frames: int,
    duration_hours: float,
    proposals_total: int,
    tracks_total: int,
    tracks_labeled: int,
    tracks_unknown: int,
    tracking_errors: int,
    track_elements: Optional[int] = None,
) -> MiningStats:
    if frames <= 0:
        raise ValueError("frames must be positive")
    notes = []
    defined = tracks_labeled > 0
    if not defined:
        notes.append("error_rate undefined (no labeled tracks); reported as 0")
    return MiningStats(
        frames=frames,
        duration_hours=float(duration_hours),
        proposals_total=proposals_total,
        tracks_total=tracks_total,
        tracks_labeled=tracks_labeled,
        tracks_unknown=tracks_unknown,
        tracking_errors=tracking_errors,
        proposals_per_frame=proposals_total / frames,
        compression_per_frame=(proposals_total / track_elements) if track_elements else None,
        compression_per_sequence=(proposals_total / tracks_total) if tracks_total else None,
        error_rate=tracking_errors / tracks_labeled if defined else 0.0,
        error_rate_defined=defined,
        track_elements=track_elements,
        notes=notes,
    )


def empty_stats(duration_hours: float = 0.0) -> MiningStats:
    """All-zero statistics for an empty input; rates are flagged undefined."""
    return MiningStats(0, duration_hours, 0, 0, 0, 0, 0, 0.0, None, None, 0.0, False, 0,
                       ["no frames; all rates undefined and reported as 0"])


def mining_stats(
    tracks: Sequence[Track],
    annotations: Mapping[int, str],
    frames: int,
    duration_hours: float,
    proposals_total: int,
) -> MiningStats:
    """Statistics of a mined collection against its (possibly partial) annotations.

    ``tracks_unknown`` counts annotated tracks that the tracker labeled unknown.
    Per-frame compression is proposals over track elements (tracks present per
    frame, summed); per-sequence compression is proposals over tracks.
    """
    if frames <= 0:
        raise ValueError("frames must be positive")
    ids = {t.track_id for t in tracks}
    missing = [tid for tid in annotations if tid not in ids]
    if missing:
        raise KeyError(f"annotations reference unknown track ids, e.g. {missing[:5]}")
    unknown = sum(1 for t in tracks if t.track_id in annotations and not t.is_known)
    errors = sum(1 for g in annotations.values() if g == TRACKING_ERROR)
    elements = sum(len(t) for t in tracks)
    return stats_from_counts(
        frames, duration_hours, proposals_total, len(tracks), len(annotations), unknown, errors,
        track_elements=elements,
    )
