"""Per-feature normalization fitted on training frames.

Statistics are computed once over every frame vector of the training split
(population standard deviation, divisor N) and then applied unchanged to any
split; test values falling outside the fitted min/max range are NOT clipped,
so Min-Max outputs can leave [0, 1] off the training data.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .frames import FrameSequence

__all__ = [
    "EmptyInputError",
    "DimensionMismatchError",
    "NormMethod",
    "NormStats",
    "fit",
    "apply",
    "save_json",
    "load_json",
]

_EPS = 1e-12


class EmptyInputError(ValueError):
    pass


class DimensionMismatchError(ValueError):
    pass


class NormMethod(Enum):
    NONE = "none"
    MINMAX = "minmax"
    ZSCORE = "zscore"

    @classmethod
    def parse(cls, name: str) -> "NormMethod":
        try:
            return cls(name.strip().lower().replace("-", "").replace("_", ""))
        except ValueError:
            raise ValueError(f"unknown normalization {name!r}; expected none/minmax/zscore") from None


@dataclass
class NormStats:
    method: NormMethod
    mean: np.ndarray
    std: np.ndarray
    minimum: np.ndarray
    maximum: np.ndarray

    @property
    def n_features(self) -> int:
        return self.mean.shape[0]


def _stack(frames) -> np.ndarray:
    if isinstance(frames, np.ndarray):
        mat = frames
    elif frames and isinstance(frames[0], FrameSequence):
        mat = np.concatenate([s.frames for s in frames], axis=0)
    else:
        mat = np.asarray(frames, dtype=np.float64)
    if mat.ndim != 2:
        raise EmptyInputError("expected a (n_frames, n_features) matrix or FrameSequence list")
    return np.asarray(mat, dtype=np.float64)


def fit(frames, method: NormMethod) -> NormStats:
    """Per-feature statistics over all training frame vectors.

    Accepts a (n, d) matrix or a list of FrameSequence; needs at least two
    frame vectors.
    """
    mat = _stack(frames)
    if mat.shape[0] < 2:
        raise EmptyInputError(f"need at least 2 frame vectors, got {mat.shape[0]}")
    return NormStats(
        method=method,
        mean=mat.mean(axis=0),
        std=mat.std(axis=0),  # population (divisor N)
        minimum=mat.min(axis=0),
        maximum=mat.max(axis=0),
    )


def _transform(stats: NormStats, mat: np.ndarray) -> np.ndarray:
    if mat.shape[1] != stats.n_features:
        raise DimensionMismatchError(
            f"frames have {mat.shape[1]} features, stats were fitted on {stats.n_features}"
        )
    if stats.method is NormMethod.NONE:
        return mat.copy()
    if stats.method is NormMethod.ZSCORE:
        scale = stats.std
        shifted = mat - stats.mean
    else:
        scale = stats.maximum - stats.minimum
        shifted = mat - stats.minimum
    # constant features map to 0 exactly rather than to noise / scaled residue
    out = np.zeros_like(shifted)
    live = scale > _EPS
    out[:, live] = shifted[:, live] / scale[live]
    return out


def apply(stats: NormStats, frames):
    """Apply fitted statistics; affine and monotone per feature.

    Accepts and returns the same container kind: a matrix, one FrameSequence,
    or a list of FrameSequence.
    """
    if isinstance(frames, FrameSequence):
        return replace_frames(frames, _transform(stats, frames.frames))
    if isinstance(frames, np.ndarray):
        return _transform(stats, frames)
    return [replace_frames(s, _transform(stats, s.frames)) for s in frames]


def replace_frames(seq: FrameSequence, frames: np.ndarray) -> FrameSequence:
    return FrameSequence(frames=frames, label=seq.label, source=seq.source)


def save_json(stats: NormStats) -> dict:
    return {
        "method": stats.method.value,
        "mean": stats.mean.tolist(),
        "std": stats.std.tolist(),
        "minimum": stats.minimum.tolist(),
        "maximum": stats.maximum.tolist(),
    }


def load_json(payload: dict) -> NormStats:
    return NormStats(
        method=NormMethod(payload["method"]),
        mean=np.asarray(payload["mean"], dtype=np.float64),
        std=np.asarray(payload["std"], dtype=np.float64),
        minimum=np.asarray(payload["minimum"], dtype=np.float64),
        maximum=np.asarray(payload["maximum"], dtype=np.float64),
    )
