"""Seeded synthetic inputs for tests: proposal streams, embeddings, calibration, annotations."""
from __future__ import annotations

import json
import os
from collections import Counter
from dataclasses import dataclass

import numpy as np

from trackmine import io
from trackmine.core import BBox
from trackmine.records import TRACKING_ERROR, ProposalRecord

KNOWN = ("car", "person", "bicycle")
UNKNOWN = ("stroller", "trash_bin", "traffic_cone")


@dataclass
class VideoFixture:
    proposals: list[ProposalRecord]
    embeddings: np.ndarray
    truth: dict[int, str]  # proposal index -> object category, or "clutter"
    image: tuple[int, int]


def blobs(rng, centers, per_center, sigma):
    centers = np.asarray(centers, dtype=np.float64)
    X = np.concatenate([c + sigma * rng.standard_normal((per_center, centers.shape[1])) for c in centers])
    y = np.repeat(np.arange(len(centers)), per_center)
    return X, y


def make_video(seed=0, n_sequences=2, n_frames=20, n_objects=10, proposals_per_frame=100, dim=16,
               image=(640, 480), categories=KNOWN + UNKNOWN, riders=0) -> VideoFixture:
    """Objects drift slowly across the image; the rest of each frame is random clutter.

    Known objects get confident class scores, unknown ones do not. Every
    category has its own embedding centre. ``riders`` adds that many co-located
    person/bicycle pairs per sequence (counted inside ``n_objects``).
    """
    rng = np.random.default_rng(seed)
    W, H = image
    centres = {c: 6.0 * rng.standard_normal(dim) for c in categories}
    clutter_centre = np.zeros(dim)
    records, vectors, truth = [], [], {}

    for s in range(n_sequences):
        seq = f"seq{s:02d}"
        objs = []
        for o in range(n_objects):
            if o < 2 * riders:
                cat = "person" if o % 2 == 0 else "bicycle"
            else:
                cat = categories[(o + s) % len(categories)]
            w, h = rng.uniform(40, 90, size=2)
            objs.append({
                "cat": cat,
                "pos": np.array([rng.uniform(0, W - w), rng.uniform(0, H - h)]),
                "vel": rng.uniform(-2, 2, size=2),
                "size": np.array([w, h]),
                "xyz": np.array([rng.uniform(-8, 8), 0.9, rng.uniform(8, 40)]),
            })
        for o in range(0, 2 * riders, 2):
            # the bicycle rides along with its person
            objs[o + 1]["pos"], objs[o + 1]["vel"] = objs[o]["pos"] + [0, 20], objs[o]["vel"]
            objs[o + 1]["xyz"] = objs[o]["xyz"] + [0.2, 0.3, 0.0]

        for f in range(n_frames):
            frame_recs = []
            for ob in objs:
                xy = np.clip(ob["pos"] + f * ob["vel"] + rng.normal(0, 0.5, 2), 0, [W - ob["size"][0], H - ob["size"][1]])
                scores = {ob["cat"]: round(float(rng.uniform(0.6, 0.95)), 4)} if ob["cat"] in KNOWN else \
                    {"car": round(float(rng.uniform(0.0, 0.2)), 4)}
                c = ob["xyz"] + f * np.array([ob["vel"][0] * 0.02, 0.0, 0.05])
                frame_recs.append((BBox(*xy, *ob["size"]), scores, centres[ob["cat"]], ob["cat"], tuple(c.round(4))))
            for _ in range(proposals_per_frame - n_objects):
                w, h = rng.uniform(8, 40, size=2)
                box = BBox(rng.uniform(0, W - w), rng.uniform(0, H - h), w, h)
                frame_recs.append((box, {}, clutter_centre, "clutter", None))
            for box, scores, centre, cat, xyz in frame_recs:
                idx = len(records)
                vec = centre + (0.3 if cat != "clutter" else 4.0) * rng.standard_normal(dim)
                vectors.append(vec)
                truth[idx] = cat
                records.append(ProposalRecord(seq, f, box, round(float(rng.uniform(0.1, 1.0)), 4), scores, idx,
                                              xyz, idx))
    emb = np.asarray(vectors, dtype=np.float32).reshape(-1, dim)
    return VideoFixture(records, emb, truth, image)


def annotate(tracks, truth, purity=0.8) -> dict[int, str]:
    """Ground-truth label per track: majority object category, or tracking_error when impure or clutter."""
    out = {}
    for t in tracks:
        counts = Counter(truth[e.proposal] for e in t.elements)
        cat, n = counts.most_common(1)[0]
        out[t.track_id] = TRACKING_ERROR if cat == "clutter" or n < purity * len(t) else cat
    return out


CALIBRATION = {"fx": 500.0, "fy": 500.0, "cx": 320.0, "cy": 240.0, "image_w": 640, "image_h": 480,
               "plane_normal": "0,-1,0", "plane_offset": 1.7}


def write_video_inputs(fx: VideoFixture, directory) -> dict[str, str]:
    os.makedirs(directory, exist_ok=True)
    paths = {k: os.path.join(directory, n) for k, n in
             (("proposals", "proposals.ndjson"), ("embeddings", "embeddings.bin"),
              ("calibration", "calibration.txt"), ("truth", "truth.json"))}
    io.write_proposals(fx.proposals, paths["proposals"])
    io.write_embeddings(fx.embeddings, paths["embeddings"])
    with open(paths["calibration"], "w") as fh:
        for k, v in CALIBRATION.items():
            fh.write(f"{k} = {v}\n")
    with open(paths["truth"], "w") as fh:
        json.dump({str(k): v for k, v in fx.truth.items()}, fh)
    return paths
