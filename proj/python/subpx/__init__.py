"""Keypoint refinement trained with an epipolar loss.

Config arguments are plain dicts using the same keys as the CLI's JSON
config sections; omitted keys keep their defaults.
"""

import json

from ._subpx import (
    ConfigError,
    CorruptCheckpoint,
    DegenerateGeometry,
    Error,
    InvalidInput,
    IoError,
    NumericError,
    epipolar_error,
    essential_from_pose,
    normalized_threshold,
    softargmax2d,
)
from . import _subpx

__all__ = [
    "ConfigError", "CorruptCheckpoint", "DegenerateGeometry", "Error", "InvalidInput",
    "IoError", "NumericError", "epipolar_error", "essential_from_pose", "estimate_pose",
    "evaluate", "generate_dataset", "normalized_threshold", "refine", "softargmax2d", "train",
]


def _cfg(d):
    return json.dumps(d) if d else ""


def generate_dataset(path, n, config=None):
    """Write n synthetic matches to a JSONL file; returns records, outliers and checksum."""
    return _subpx._generate_dataset(str(path), int(n), _cfg(config))


def train(data, out, config=None):
    """Train from scratch and write the checkpoint to `out`; returns the logged rows."""
    return _subpx._train(str(data), str(out), _cfg(config))


def refine(checkpoint, data, out):
    """Refine every match of a dataset and write the refined JSONL; returns the record count."""
    return _subpx._refine(str(checkpoint), str(data), str(out))


def evaluate(data, refined=None, config=None):
    """Pose metrics summaries, plus the per-pair CSV text under 'csv'."""
    return _subpx._evaluate(str(data), None if refined is None else str(refined), _cfg(config))


def estimate_pose(p1, p2, k1, k2, config=None):
    """Robust relative pose from (N, 2) pixel arrays; k = (fx, fy, cx, cy)."""
    return _subpx._estimate_pose(p1, p2, tuple(k1), tuple(k2), _cfg(config))
