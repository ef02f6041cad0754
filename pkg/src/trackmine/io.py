"""Readers and writers for every pipeline artifact.

Record files (proposals, tracks, annotations, training sets) are UTF-8
newline-delimited JSON whose first line is a header carrying ``schema_version``.
Embeddings are a little-endian binary matrix::

    b"TMEMB\\x00\\x00\\x01"  u32 count  u32 dim  float32[count * dim] (row-major)

Assignments and sweep curves are CSV with a header row.
"""
from __future__ import annotations

import csv
import json
import math
import os
import struct
from collections import OrderedDict
from itertools import groupby
from typing import Iterable, Iterator, Optional

import numpy as np

from .core import BBox
from .records import ClusterAssignment, ProposalRecord, Track, TrackCollection, TrackElement

SCHEMA_VERSION = 1
EMBEDDING_MAGIC = b"TMEMB\x00\x00\x01"
_EMB_HEADER = struct.Struct("<8sII")


class FormatError(ValueError):
    """Malformed artifact file."""


class UnsupportedVersionError(FormatError):
    pass


def _dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def _header(kind: str, **extra) -> str:
    return _dumps({"schema_version": SCHEMA_VERSION, "kind": kind, **extra})


def _iter_records(path, kind: str) -> Iterator[tuple[int, dict]]:
    """Yield ``(line_number, record)`` after validating the header line."""
    with open(path, encoding="utf-8") as fh:
        first = True
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise FormatError(f"{path}:{lineno}: expected a JSON object")
            if first:
                first = False
                if "schema_version" in obj:
                    version = obj["schema_version"]
                    if version != SCHEMA_VERSION:
                        raise UnsupportedVersionError(
                            f"{path}: unsupported schema_version {version!r} (expected {SCHEMA_VERSION})"
                        )
                    if obj.get("kind", kind) != kind:
                        raise FormatError(f"{path}: file holds {obj.get('kind')!r}, expected {kind!r}")
                    continue
                raise FormatError(f"{path}:{lineno}: missing schema_version header")
            yield lineno, obj


# -- proposals ---------------------------------------------------------------

def _bbox(value, where: str) -> BBox:
    try:
        x, y, w, h = (float(v) for v in value)
        return BBox(x, y, w, h)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{where}: invalid bbox {value!r} ({exc})") from None


def _centroid(value, where: str):
    if value is None:
        return None
    try:
        c = tuple(float(v) for v in value)
    except (TypeError, ValueError):
        raise FormatError(f"{where}: invalid centroid {value!r}") from None
    if len(c) != 3:
        raise FormatError(f"{where}: centroid must have 3 components")
    return c


def iter_proposals(path, embedding_count: Optional[int] = None) -> Iterator[ProposalRecord]:
    """Stream proposal records, validating frame order and embedding indices."""
    last_frame: dict[str, int] = {}
    seen_index: set[int] = set()
    position = 0
    for lineno, obj in _iter_records(path, "proposals"):
        where = f"{path}:{lineno}"
        try:
            seq = str(obj["sequence_id"])
            frame = int(obj["frame"])
            emb = int(obj["embedding_index"])
            objectness = float(obj.get("objectness", 1.0))
            scores = {str(k): float(v) for k, v in (obj.get("class_scores") or {}).items()}
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{where}: malformed proposal record ({exc!r})") from None
        if frame < 0:
            raise FormatError(f"{where}: negative frame {frame}")
        if frame < last_frame.get(seq, 0):
            raise FormatError(f"{where}: frame {frame} out of order in sequence {seq!r}")
        last_frame[seq] = frame
        if emb < 0 or (embedding_count is not None and emb >= embedding_count):
            raise IndexError(f"{where}: embedding_index {emb} out of range for {embedding_count} embeddings")
        if emb in seen_index:
            raise FormatError(f"{where}: duplicate embedding_index {emb}")
        seen_index.add(emb)
        yield ProposalRecord(
            sequence_id=seq,
            frame=frame,
            bbox=_bbox(obj.get("bbox"), where),
            objectness=objectness,
            class_scores=scores,
            embedding_index=emb,
            centroid_3d=_centroid(obj.get("centroid_3d"), where),
            index=position,
        )
        position += 1


def read_proposals(path, embedding_count: Optional[int] = None) -> list[ProposalRecord]:
    if os.path.getsize(path) == 0:
        return []
    return list(iter_proposals(path, embedding_count))


def group_frames(records: Iterable[ProposalRecord]) -> "OrderedDict[str, list[tuple[int, list[ProposalRecord]]]]":
    """Group records by sequence, then frame, keeping file order within each group."""
    by_seq: "OrderedDict[str, list[ProposalRecord]]" = OrderedDict()
    for rec in records:
        by_seq.setdefault(rec.sequence_id, []).append(rec)
    out: "OrderedDict[str, list[tuple[int, list[ProposalRecord]]]]" = OrderedDict()
    for seq, recs in by_seq.items():
        out[seq] = [(frame, list(group)) for frame, group in groupby(recs, key=lambda r: r.frame)]
    return out


def write_proposals(records: Iterable[ProposalRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_header("proposals") + "\n")
        for r in records:
            fh.write(_dumps({
                "sequence_id": r.sequence_id,
                "frame": r.frame,
                "bbox": list(r.bbox.as_tuple()),
                "objectness": r.objectness,
                "class_scores": dict(sorted(r.class_scores.items())),
                "embedding_index": r.embedding_index,
                "centroid_3d": list(r.centroid_3d) if r.centroid_3d is not None else None,
            }) + "\n")


# -- embeddings --------------------------------------------------------------

def write_embeddings(matrix, path) -> None:
    data = np.ascontiguousarray(matrix, dtype="<f4")
    if data.ndim != 2:
        raise ValueError("embedding matrix must be 2-D")
    if not np.all(np.isfinite(data)):
        raise ValueError("embedding matrix contains non-finite values")
    with open(path, "wb") as fh:
        fh.write(_EMB_HEADER.pack(EMBEDDING_MAGIC, data.shape[0], data.shape[1]))
        fh.write(data.tobytes(order="C"))


def read_embedding_header(path) -> tuple[int, int]:
    with open(path, "rb") as fh:
        raw = fh.read(_EMB_HEADER.size)
    if len(raw) < _EMB_HEADER.size:
        raise FormatError(f"{path}: truncated embedding header")
    magic, count, dim = _EMB_HEADER.unpack(raw)
    if magic != EMBEDDING_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    return count, dim


def read_embeddings(path, mmap: bool = False) -> np.ndarray:
    """Load a ``(count, dim)`` float32 embedding matrix.

    The payload size is checked against the header before anything is
    allocated; ``mmap=True`` maps the file instead of reading it.
    """
    count, dim = read_embedding_header(path)
    expected = _EMB_HEADER.size + 4 * count * dim
    actual = os.path.getsize(path)
    if actual < expected:
        raise FormatError(f"{path}: truncated payload ({actual} bytes, header declares {expected})")
    if actual > expected:
        raise FormatError(f"{path}: {actual - expected} trailing bytes after payload")
    if mmap and count * dim > 0:
        data = np.memmap(path, dtype="<f4", mode="r", offset=_EMB_HEADER.size, shape=(count, dim))
    else:
        with open(path, "rb") as fh:
            fh.seek(_EMB_HEADER.size)
            data = np.fromfile(fh, dtype="<f4", count=count * dim).reshape(count, dim)
    if not np.all(np.isfinite(data)):
        bad = int(np.argwhere(~np.isfinite(data))[0, 0])
        raise FormatError(f"{path}: non-finite value in embedding row {bad}")
    return np.asarray(data, dtype=np.float32)


# -- tracks ------------------------------------------------------------------

def _track_to_obj(t: Track) -> dict:
    return {
        "track_id": t.track_id,
        "sequence_id": t.sequence_id,
        "category": t.category,
        "source": t.source,
        "elements": [
            [e.frame, e.proposal, list(e.bbox.as_tuple()), e.embedding_index,
             list(e.centroid) if e.centroid is not None else None]
            for e in t.elements
        ],
    }


def write_tracks(collection: Iterable[Track], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_header("tracks") + "\n")
        for t in collection:
            fh.write(_dumps(_track_to_obj(t)) + "\n")


def read_tracks(path) -> TrackCollection:
    tracks = []
    for lineno, obj in _iter_records(path, "tracks"):
        where = f"{path}:{lineno}"
        try:
            elements = tuple(
                TrackElement(int(f), int(p), _bbox(b, where), int(e), _centroid(c, where))
                for f, p, b, e, c in obj["elements"]
            )
            tracks.append(Track(
                track_id=int(obj["track_id"]),
                sequence_id=str(obj["sequence_id"]),
                elements=elements,
                category=obj.get("category"),
                source=str(obj.get("source", "")),
            ))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, FormatError):
                raise
            raise FormatError(f"{where}: malformed track record ({exc!r})") from None
    return tracks


# -- annotations -------------------------------------------------------------

def write_annotations(annotations: dict[int, str], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_header("annotations") + "\n")
        for tid in sorted(annotations):
            fh.write(_dumps({"track_id": tid, "gt_label": annotations[tid]}) + "\n")


def read_annotations(path) -> dict[int, str]:
    out: dict[int, str] = {}
    for lineno, obj in _iter_records(path, "annotations"):
        try:
            tid, label = int(obj["track_id"]), str(obj["gt_label"])
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}:{lineno}: malformed annotation ({exc!r})") from None
        if tid in out:
            raise FormatError(f"{path}:{lineno}: duplicate annotation for track {tid}")
        out[tid] = label
    return out


# -- CSV artifacts -----------------------------------------------------------

def _fmt_float(x: float) -> str:
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(float(x))


def write_assignment_csv(assignment: ClusterAssignment, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["track_id", "cluster_id", "outlier_score"])
        for tid, c, s in zip(assignment.track_ids, assignment.labels, assignment.outlier_scores):
            w.writerow([tid, c, _fmt_float(s)])


def read_assignment_csv(path, method: str = "unknown") -> ClusterAssignment:
    tids, labels, scores = [], [], []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["track_id", "cluster_id", "outlier_score"]:
            raise FormatError(f"{path}: unexpected CSV header {reader.fieldnames}")
        for lineno, row in enumerate(reader, start=2):
            try:
                tids.append(int(row["track_id"]))
                labels.append(int(row["cluster_id"]))
                scores.append(float(row["outlier_score"]))
            except (TypeError, ValueError):
                raise FormatError(f"{path}:{lineno}: malformed assignment row") from None
    return ClusterAssignment(tids, labels, scores, method)


def write_sweep_csv(points: Iterable[tuple[float, float, bool]], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fraction", "ami", "is_automatic"])
        for f, a, auto in points:
            w.writerow([_fmt_float(f), _fmt_float(a), int(bool(auto))])


def write_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")
