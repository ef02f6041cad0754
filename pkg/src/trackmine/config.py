"""Flat ``key = value`` configuration files and the pipeline configuration.

Lines starting with ``#`` are comments. Lists are comma separated. Relative
paths are resolved against the directory holding the config file.
"""
from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

# The 80 COCO detection categories: the default "known" set for evaluation.
COCO_CATEGORIES = (
    "person", "bicycle", "car", "motorcycle", "airplane", "bus", "train", "truck", "boat",
    "traffic light", "fire hydrant", "stop sign", "parking meter", "bench", "bird", "cat", "dog",
    "horse", "sheep", "cow", "elephant", "bear", "zebra", "giraffe", "backpack", "umbrella",
    "handbag", "tie", "suitcase", "frisbee", "skis", "snowboard", "sports ball", "kite",
    "baseball bat", "baseball glove", "skateboard", "surfboard", "tennis racket", "bottle",
    "wine glass", "cup", "fork", "knife", "spoon", "bowl", "banana", "apple", "sandwich", "orange",
    "broccoli", "carrot", "hot dog", "pizza", "donut", "cake", "chair", "couch", "potted plant",
    "bed", "dining table", "toilet", "tv", "laptop", "mouse", "remote", "keyboard", "cell phone",
    "microwave", "oven", "toaster", "sink", "refrigerator", "book", "clock", "vase", "scissors",
    "teddy bear", "hair drier", "toothbrush",
)


class ConfigError(ValueError):
    """Bad configuration or flag combination (CLI exit code 1)."""


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt(conv: Callable[[str], Any]) -> Callable[[str], Any]:
    def parse(s: str):
        return None if s.strip().lower() in ("", "none", "null") else conv(s)
    return parse


def _list(conv: Callable[[str], Any]) -> Callable[[str], Any]:
    def parse(s: str):
        return [conv(p.strip()) for p in s.split(",") if p.strip()]
    return parse


def _seed(s: str) -> int:
    v = int(s, 0)
    if not 0 <= v < 2 ** 64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    return v


PATH_KEYS = ("proposals", "embeddings", "annotations", "calibration", "tracks", "assignment", "counts", "output_dir")

# key -> (parser, default)
SCHEMA: dict[str, tuple[Callable[[str], Any], Any]] = {
    **{k: (_opt(str), None) for k in PATH_KEYS},
    "seed": (_seed, 0),
    "jobs": (int, 1),
    # tracker
    "iou_gate": (float, 0.3),
    "embedding_gate": (_opt(float), None),
    "max_gap": (int, 2),
    "min_length": (int, 5),
    "confidence_threshold": (float, 0.3),
    "fps": (float, 10.0),
    # discovery
    "method": (str, "hdbscan"),
    "k": (_opt(int), None),
    "min_cluster_size": (int, 10),
    "min_samples": (_opt(int), None),
    "metric": (str, "euclidean"),
    "include_known": (_bool, False),
    # evaluation
    "known_categories": (_list(str), list(COCO_CATEGORIES)),
    "sweep_fractions": (_list(float), [round(0.05 * i, 2) for i in range(11)]),
    "ami_average": (str, "arithmetic"),
    # training set
    "mode": (str, "finetune"),
    "merge_riders": (_bool, False),
    "rider_distance": (float, 1.0),
    "anchor_stride": (int, 16),
    "anchor_scales": (_list(float), [32.0, 64.0, 128.0, 256.0]),
    "anchor_ratios": (_list(float), [0.5, 1.0, 2.0]),
    "positive_iou": (float, 0.5),
    "negative_free_fraction": (float, 0.9),
    "negative_iou_max": (float, 0.1),
    "ground_eps": (float, 0.2),
    "max_height": (float, 2.5),
    "z_min": (float, 1.0),
    "z_max": (float, 60.0),
    "dump_mask": (_bool, False),
}


def read_key_values(path) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (p.strip() for p in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def parse_value(key: str, raw: str) -> Any:
    if key not in SCHEMA:
        raise ConfigError(f"unknown config key {key!r}")
    try:
        return SCHEMA[key][0](raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {exc}") from None


@dataclass
class PipelineConfig:
    values: dict[str, Any] = field(default_factory=lambda: {k: d for k, (_, d) in SCHEMA.items()})

    @classmethod
    def load(cls, path: Optional[str] = None, overrides: Optional[dict[str, str]] = None) -> "PipelineConfig":
        cfg = cls()
        if path is not None:
            base = os.path.dirname(os.path.abspath(path))
            for key, raw in read_key_values(path).items():
                value = parse_value(key, raw)
                if key in PATH_KEYS and value is not None and not os.path.isabs(value):
                    value = os.path.normpath(os.path.join(base, value))
                cfg.values[key] = value
        for key, raw in (overrides or {}).items():
            cfg.values[key] = parse_value(key, raw)
        if cfg.values["output_dir"] is None:
            cfg.values["output_dir"] = "out"
        return cfg

    def __getattr__(self, key: str) -> Any:
        values = self.__dict__.get("values", {})
        if key in values:
            return values[key]
        raise AttributeError(key)

    def snapshot(self) -> dict[str, Any]:
        return dict(sorted(self.values.items()))

    def sub_seed(self, stage: str) -> int:
        """Stage seed: config seed XOR a stable 64-bit hash of the stage name."""
        digest = int.from_bytes(hashlib.sha256(stage.encode("utf-8")).digest()[:8], "little")
        return self.values["seed"] ^ digest


def read_calibration(path):
    """Camera intrinsics and ground plane from a flat key-value file.

    Keys: fx, fy, cx, cy, image_w, image_h, plane_normal (3 comma-separated
    values) and plane_offset.
    """
    from .core import CameraIntrinsics, GroundPlane

    kv = read_key_values(path)
    try:
        K = CameraIntrinsics(float(kv["fx"]), float(kv["fy"]), float(kv["cx"]), float(kv["cy"]),
                             int(kv["image_w"]), int(kv["image_h"]))
        normal = tuple(float(v) for v in kv["plane_normal"].split(","))
        plane = GroundPlane(normal, float(kv["plane_offset"]))
    except KeyError as exc:
        raise ValueError(f"{path}: missing calibration key {exc}") from None
    return K, plane
