"""Command-line pipeline: build-tracks -> discover -> eval -> trainset, plus stats.

Exit codes: 0 success, 1 usage error, 2 data error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from typing import Optional

import numpy as np

from . import __version__, io
from .config import ConfigError, PipelineConfig, read_calibration, read_key_values
from .discovery import (
    BACKEND,
    HdbscanParams,
    distance_to_center_outlier_scores,
    hdbscan,
    kmeans,
    representative_embedding,
)
from .evaluation import (
    empty_stats,
    mining_stats,
    restrict_non_known,
    stats_from_counts,
    sweep_from_scores,
)
from .records import TRACKING_ERROR, ClusterAssignment
from .tracker import MissingEmbeddingsError, TrackerParams, build_tracks, merge_rider_tracks
from .trainset import (
    FreeSpaceParams,
    export_training_set,
    free_fractions,
    free_space_mask,
    generate_anchors,
    select_negative_anchors,
    select_positive_anchors,
    write_pgm,
)

log = logging.getLogger("trackmine")

USAGE_ERROR = 1
DATA_ERROR = 2


class DataError(Exception):
    pass


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Run:
    """Bookkeeping for one command: resolved paths, inputs read, outputs written."""

    def __init__(self, command: str, cfg: PipelineConfig):
        self.command = command
        self.cfg = cfg
        self.out_dir = cfg.output_dir
        os.makedirs(self.out_dir, exist_ok=True)
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []

    def input(self, key: str, default_name: Optional[str] = None, required: bool = True) -> Optional[str]:
        path = self.cfg.values.get(key)
        if path is None and default_name is not None:
            path = os.path.join(self.out_dir, default_name)
            if not os.path.exists(path):
                path = None
        if path is None:
            if required:
                raise ConfigError(f"missing input: pass --{key.replace('_', '-')} or set '{key}' in the config")
            return None
        if not os.path.exists(path):
            raise DataError(f"{key} file not found: {path}")
        self.inputs[key] = path
        return path

    def output(self, name: str) -> str:
        self.outputs.append(name)
        return os.path.join(self.out_dir, name)

    def write_manifest(self) -> None:
        manifest = {
            "command": self.command,
            "version": __version__,
            "kernel_backend": BACKEND,
            "seed": self.cfg.seed,
            "sub_seeds": {s: self.cfg.sub_seed(s) for s in ("build-tracks", "discover", "eval", "trainset")},
            "config": self.cfg.snapshot(),
            "inputs": {k: {"path": p, "sha256": _sha256(p)} for k, p in sorted(self.inputs.items())},
            "outputs": {n: _sha256(os.path.join(self.out_dir, n)) for n in self.outputs},
        }
        io.write_json(manifest, os.path.join(self.out_dir, f"manifest-{self.command}.json"))


def _map(fn, tasks, jobs: int):
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, tasks))
    return [fn(t) for t in tasks]


def _tracker_params(cfg: PipelineConfig) -> TrackerParams:
    try:
        return TrackerParams(cfg.iou_gate, cfg.embedding_gate, cfg.max_gap, cfg.min_length, cfg.confidence_threshold)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _stats_payload(stats) -> dict:
    return {"stats": stats.as_dict(), "report": stats.report()}


# -- commands ----------------------------------------------------------------

def cmd_build_tracks(run: Run) -> None:
    cfg = run.cfg
    params = _tracker_params(cfg)
    proposals_path = run.input("proposals")
    emb_path = run.input("embeddings", required=False)
    if params.embedding_gate is not None and emb_path is None:
        raise ConfigError("embedding_gate is set but no embeddings file was given (--embeddings)")
    count = io.read_embedding_header(emb_path)[0] if emb_path else None
    embeddings = io.read_embeddings(emb_path) if params.embedding_gate is not None else None
    proposals = io.read_proposals(proposals_path, count)
    grouped = io.group_frames(proposals)
    tracks = build_tracks(grouped, params, embeddings, jobs=cfg.jobs)
    io.write_tracks(tracks, run.output("tracks.ndjson"))

    ann_path = run.input("annotations", required=False)
    annotations = io.read_annotations(ann_path) if ann_path else {}
    frames = sum(len(v) for v in grouped.values())
    if frames == 0:
        stats = empty_stats()
    else:
        stats = mining_stats(tracks, annotations, frames, frames / cfg.fps / 3600.0, len(proposals))
    io.write_json(_stats_payload(stats), run.output("stats.json"))
    log.info("built %d tracks from %d proposals over %d frames", len(tracks), len(proposals), frames)


def cmd_discover(run: Run) -> None:
    cfg = run.cfg
    method = cfg.method
    if method not in ("kmeans", "hdbscan"):
        raise ConfigError(f"--method must be kmeans or hdbscan, got {method!r}")
    if method == "kmeans" and cfg.k is None:
        raise ConfigError("--method kmeans requires --k")
    if method == "hdbscan":
        try:
            hparams = HdbscanParams(cfg.min_cluster_size, cfg.min_samples, cfg.metric)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    tracks = io.read_tracks(run.input("tracks", "tracks.ndjson"))
    embeddings = io.read_embeddings(run.input("embeddings"))
    selected = [t for t in tracks if cfg.include_known or not t.is_known]
    reps = [representative_embedding(t, embeddings) for t in selected]
    X = np.stack([r.vector for r in reps]) if reps else np.zeros((0, embeddings.shape[1]), np.float32)

    params: dict = {}
    if method == "kmeans":
        if cfg.k > len(X):
            raise DataError(f"k={cfg.k} exceeds the number of tracks to cluster ({len(X)})")
        seed = cfg.sub_seed("discover")
        res = kmeans(X, cfg.k, seed=seed)
        labels = res.labels
        params = {"k": cfg.k, "seed": seed}
    else:
        res = hdbscan(X, hparams)
        labels = res.labels
        params = {"min_cluster_size": hparams.min_cluster_size, "min_samples": hparams.k, "metric": hparams.metric}
    scores = distance_to_center_outlier_scores(X, labels) if len(X) else np.zeros(0)
    assignment = ClusterAssignment([r.track_id for r in reps], labels.tolist(), scores.tolist(), method, params)
    io.write_assignment_csv(assignment, run.output("assignment.csv"))
    io.write_json(
        {
            "method": method,
            "params": params,
            "n_tracks": len(reps),
            "n_clusters": assignment.n_clusters,
            "noise_fraction": float(np.mean(labels == -1)) if len(labels) else 0.0,
        },
        run.output("assignment.json"),
    )
    with open(run.output("representatives.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["track_id", "frame", "proposal", "embedding_index"])
        for r in reps:
            w.writerow([r.track_id, r.source_element.frame, r.source_element.proposal, r.source_element.embedding_index])
    if method == "hdbscan":
        tree = res.tree
        with open(run.output("condensed_tree.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["parent", "child", "lambda_val", "child_size"])
            for p, c, lam, s in tree.rows():
                w.writerow([p, c, io._fmt_float(lam), s])
        with open(run.output("cluster_stability.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["cluster", "stability", "selected"])
            chosen = set(res.selected)
            for c in sorted(tree.stability):
                w.writerow([c, io._fmt_float(tree.stability[c]), int(c in chosen)])
    log.info("%s: %d tracks -> %d clusters", method, len(reps), assignment.n_clusters)


def _sweep_section(tids, labels, scores, gt, fractions, density_based, average) -> tuple[dict, list]:
    n = len(labels)
    if n == 0:
        return {"n": 0, "ami": None, "automatic": None, "skipped_fractions": list(fractions)}, []
    usable = [f for f in fractions if int(np.ceil(f * n - 1e-9)) < n]
    curve = sweep_from_scores(tids, labels, scores, gt, usable, density_based, average)
    base = curve.points[0][1] if usable and usable[0] == 0.0 else None
    section = {
        "n": n,
        "ami": base,
        "curve": [{"fraction": f, "ami": a} for f, a in curve.points],
        "automatic": None if curve.automatic is None else
        {"noise_fraction": curve.automatic[0], "ami": curve.automatic[1]},
        "skipped_fractions": [f for f in fractions if f not in usable],
    }
    return section, curve.rows()


def cmd_eval(run: Run) -> None:
    cfg = run.cfg
    assignment = io.read_assignment_csv(run.input("assignment", "assignment.csv"))
    annotations = io.read_annotations(run.input("annotations"))
    sidecar = os.path.join(os.path.dirname(run.inputs["assignment"]), "assignment.json")
    method = None
    if os.path.exists(sidecar):
        with open(sidecar) as fh:
            method = json.load(fh).get("method")
    density = method == "hdbscan" if method else any(c == -1 for c in assignment.labels)

    rows = [
        (tid, c, s, annotations[tid])
        for tid, c, s in zip(assignment.track_ids, assignment.labels, assignment.outlier_scores)
        if tid in annotations and annotations[tid] != TRACKING_ERROR
    ]
    if not rows:
        raise DataError("no assignment track ids match the annotation file")
    tids, labels, scores, gt = (list(col) for col in zip(*rows))
    fractions = cfg.sweep_fractions
    report = {"method": method, "n_assigned": len(assignment.track_ids), "n_evaluated": len(rows)}
    all_section, all_rows = _sweep_section(tids, labels, scores, gt, fractions, density, cfg.ami_average)
    keep = restrict_non_known(gt, cfg.known_categories)
    pick = lambda xs: [xs[i] for i in keep]  # noqa: E731
    nk_section, nk_rows = _sweep_section(pick(tids), pick(labels), pick(scores), pick(gt), fractions, density,
                                         cfg.ami_average)
    report["all_categories"] = all_section
    report["non_known"] = nk_section
    io.write_sweep_csv(all_rows, run.output("sweep_all.csv"))
    io.write_sweep_csv(nk_rows, run.output("sweep_non_known.csv"))
    io.write_json(report, run.output("ami_report.json"))
    log.info("AMI (all) = %s, AMI (non-known) = %s", all_section["ami"], nk_section["ami"])


def _frame_examples(task):
    seq, frame, boxes, anchors, labels, mask, fractions, p = task
    pos = select_positive_anchors(anchors, boxes, labels, p["positive_iou"], seq, frame)
    neg = select_negative_anchors(anchors, mask, boxes, p["negative_free_fraction"], p["negative_iou_max"],
                                  seq, frame, fractions)
    return pos, neg


def _sequence_examples(task):
    frames, anchors, labels, mask, fractions, p = task
    pos, neg = [], []
    for seq, frame, boxes in frames:
        fp, fn = _frame_examples((seq, frame, boxes, anchors, labels, mask, fractions, p))
        pos.extend(fp)
        neg.extend(fn)
    return pos, neg


def cmd_trainset(run: Run) -> None:
    cfg = run.cfg
    mode = cfg.mode
    if mode not in ("finetune", "discover"):
        raise ConfigError(f"--mode must be finetune or discover, got {mode!r}")
    tracks = io.read_tracks(run.input("tracks", "tracks.ndjson"))
    K, plane = read_calibration(run.input("calibration"))
    if cfg.merge_riders:
        tracks, skipped = merge_rider_tracks(tracks, cfg.rider_distance)
        if skipped:
            log.warning("rider merge skipped %d pairs without centroids", skipped)
    if mode == "discover":
        apath = run.input("assignment", "assignment.csv", required=False)
        if apath is None:
            raise ConfigError("discover mode needs a cluster assignment (--assignment or run 'discover' first)")
        assignment = io.read_assignment_csv(apath)
        labels = {t: c for t, c in zip(assignment.track_ids, assignment.labels) if c != ClusterAssignment.NOISE}
    else:
        labels = {t.track_id: t.category for t in tracks if t.is_known}

    anchors = generate_anchors(K.image_w, K.image_h, cfg.anchor_stride, cfg.anchor_scales, cfg.anchor_ratios)
    fs = FreeSpaceParams(cfg.ground_eps, cfg.max_height, cfg.z_min, cfg.z_max)
    mask = free_space_mask(K, plane, None, fs)
    fractions = free_fractions(anchors, mask) if anchors else np.zeros(0)
    if cfg.dump_mask:
        write_pgm(mask, run.output("free_space.pgm"))

    by_frame: dict[tuple[str, int], list] = defaultdict(list)
    for t in tracks:
        for e in t.elements:
            by_frame[(t.sequence_id, e.frame)].append((t.track_id, e.bbox))
    by_seq: dict[str, list] = defaultdict(list)
    for (seq, frame) in sorted(by_frame):
        by_seq[seq].append((seq, frame, sorted(by_frame[(seq, frame)], key=lambda b: b[0])))
    p = {k: cfg.values[k] for k in ("positive_iou", "negative_free_fraction", "negative_iou_max")}
    tasks = [(by_seq[s], anchors, labels, mask, fractions, p) for s in sorted(by_seq)]
    positives, negatives = [], []
    for pos, neg in _map(_sequence_examples, tasks, cfg.jobs):
        positives.extend(pos)
        negatives.extend(neg)
    meta = export_training_set(positives, negatives, mode, run.output(f"trainset_{mode}.ndjson"))
    log.info("training set: %s", meta["counts"])


def _int(v: str) -> int:
    return int(v.replace(",", "").replace("_", ""))


def cmd_stats(run: Run) -> None:
    cfg = run.cfg
    counts_path = run.input("counts", required=False)
    if counts_path:
        kv = read_key_values(counts_path)
        try:
            stats = stats_from_counts(
                frames=_int(kv["frames"]),
                duration_hours=float(kv.get("duration_hours", "0")),
                proposals_total=_int(kv["proposals_total"]),
                tracks_total=_int(kv["tracks_total"]),
                tracks_labeled=_int(kv["tracks_labeled"]),
                tracks_unknown=_int(kv.get("tracks_unknown", "0")),
                tracking_errors=_int(kv["tracking_errors"]),
                track_elements=_int(kv["track_elements"]) if "track_elements" in kv else None,
            )
        except KeyError as exc:
            raise DataError(f"{counts_path}: missing count {exc}") from None
    else:
        tracks = io.read_tracks(run.input("tracks", "tracks.ndjson"))
        ann = run.input("annotations", required=False)
        annotations = io.read_annotations(ann) if ann else {}
        proposals = io.read_proposals(run.input("proposals"))
        frames = len({(r.sequence_id, r.frame) for r in proposals})
        if frames == 0:
            stats = empty_stats()
        else:
            stats = mining_stats(tracks, annotations, frames, frames / cfg.fps / 3600.0, len(proposals))
    io.write_json(_stats_payload(stats), run.output("stats.json"))
    for key, value in stats.report().items():
        print(f"{key:28s} {value}")


COMMANDS = {
    "build-tracks": cmd_build_tracks,
    "discover": cmd_discover,
    "eval": cmd_eval,
    "trainset": cmd_trainset,
    "stats": cmd_stats,
}


HELP = {
    "build-tracks": "link per-frame proposals into tracks and write mining statistics",
    "discover": "cluster representative track embeddings (hdbscan or kmeans)",
    "eval": "AMI and outlier-fraction sweeps against track annotations",
    "trainset": "export positive and geometric-negative anchors for detector training",
    "stats": "mining statistics from a tracks file or a counts file",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(USAGE_ERROR, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("pipeline options")
    g.add_argument("--config", help="flat key = value config file; flags override it")
    g.add_argument("--output-dir", help="where outputs and the run manifest go (default: out)")
    g.add_argument("--seed", help="master seed; each stage derives its own")
    g.add_argument("--jobs", help="worker processes; outputs do not depend on it")
    for key in ("proposals", "embeddings", "annotations", "calibration", "tracks", "assignment", "counts"):
        g.add_argument(f"--{key}", help=f"path to the {key} file")
    g.add_argument("--method", choices=["kmeans", "hdbscan"])
    g.add_argument("--k", help="number of clusters (kmeans)")
    g.add_argument("--min-cluster-size")
    g.add_argument("--min-samples")
    g.add_argument("--metric", choices=["euclidean", "cosine"])
    g.add_argument("--mode", choices=["finetune", "discover"])
    g.add_argument("--embedding-gate", help="minimum cosine similarity for association")
    g.add_argument("--merge-riders", action="store_true", default=None,
                   help="merge co-located person and bicycle tracks into cyclist tracks")
    g.add_argument("--include-known", action="store_true", default=None, help="cluster known tracks as well")
    g.add_argument("--dump-mask", action="store_true", default=None, help="write the free-space mask as PGM")
    g.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")
    g.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="trackmine", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=HELP[name], description=HELP[name])
    return parser


def _overrides(args: argparse.Namespace) -> dict[str, str]:
    out: dict[str, str] = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip().replace("-", "_")] = value.strip()
    skip = {"command", "config", "set", "verbose"}
    for key, value in vars(args).items():
        if key in skip or value is None:
            continue
        out[key] = "true" if value is True else str(value)
    return out


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = PipelineConfig.load(args.config, _overrides(args))
        run = Run(args.command, cfg)
        COMMANDS[args.command](run)
        run.write_manifest()
    except (ConfigError, MissingEmbeddingsError) as exc:
        print(f"trackmine {args.command}: usage error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except FileNotFoundError as exc:
        print(f"trackmine {args.command}: data error: {exc}", file=sys.stderr)
        return DATA_ERROR
    except (DataError, ValueError, KeyError, IndexError, OSError) as exc:
        print(f"trackmine {args.command}: data error: {exc}", file=sys.stderr)
        return DATA_ERROR
    return 0


if __name__ == "__main__":
    sys.exit(main())
