"""Windowing a cycle into recurrent-network input frames.

A frame is the concatenation of the cepstral vectors of `group` consecutive
analysis windows; frames are taken over consecutive disjoint groups of
windows, so frame count scales with cycle length and no window contributes
to two frames (except through window overlap itself when step < window).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dsp
from .dataset import RespiratoryCycle, Recording, concat_cycle_audio, _round_half_up

__all__ = [
    "CycleTooShortError",
    "EmptyAfterGroupingError",
    "FrameSetting",
    "FrameSequence",
    "builtin_settings",
    "get_setting",
    "count_windows",
    "window_offsets",
    "compose_frames",
    "compose_recording_frames",
    "ms_to_samples",
]


class CycleTooShortError(ValueError):
    """Cycle shorter than one analysis window."""


class EmptyAfterGroupingError(ValueError):
    """Too few windows to fill even one group."""


@dataclass(frozen=True)
class FrameSetting:
    """One frame-composition configuration.

    frame_ms is informative: the time span covered by one frame,
    window_ms + (group - 1) * step_ms.
    """

    id: str
    window_ms: int
    step_ms: int
    group: int
    frame_ms: int
    n_features: int

    def __post_init__(self) -> None:
        if self.n_features != 13 * self.group:
            raise ValueError(f"{self.id}: n_features must be 13 * group")
        if self.frame_ms != self.window_ms + (self.group - 1) * self.step_ms:
            raise ValueError(f"{self.id}: frame_ms inconsistent with window/step/group")
        if self.step_ms not in (self.window_ms, self.window_ms // 2):
            raise ValueError(f"{self.id}: step must equal the window or half of it")


_BUILTIN = (
    FrameSetting("S1", 500, 500, 1, 500, 13),
    FrameSetting("S2", 500, 250, 1, 500, 13),
    FrameSetting("S3", 250, 250, 1, 250, 13),
    FrameSetting("S4", 50, 50, 5, 250, 65),
    FrameSetting("S5", 50, 25, 5, 150, 65),
    FrameSetting("S6", 50, 50, 10, 500, 130),
    FrameSetting("S7", 50, 25, 10, 275, 130),
)


def builtin_settings() -> list[FrameSetting]:
    """The seven built-in frame-composition settings S1..S7."""
    return list(_BUILTIN)


def get_setting(setting_id: str) -> FrameSetting:
    for s in _BUILTIN:
        if s.id == setting_id.upper():
            return s
    raise KeyError(f"unknown setting {setting_id!r}; expected S1..S7")


@dataclass
class FrameSequence:
    """Ordered frame vectors for one classification unit (cycle or recording)."""

    frames: np.ndarray  # (n_frames, n_features)
    label: int
    source: str = ""

    def __post_init__(self) -> None:
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[0] == 0:
            raise ValueError("frames must be a non-empty (n_frames, n_features) array")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("frames contain non-finite values")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_features(self) -> int:
        return self.frames.shape[1]


def ms_to_samples(ms: float, rate: int) -> int:
    return _round_half_up(ms * rate / 1000.0)


def count_windows(duration_ms: float, setting: FrameSetting) -> int:
    """Number of sliding-window positions: floor((dur - window) / step) + 1."""
    if duration_ms < setting.window_ms:
        raise CycleTooShortError(
            f"duration {duration_ms} ms < window {setting.window_ms} ms"
        )
    return int((duration_ms - setting.window_ms) // setting.step_ms) + 1


def window_offsets(n_samples: int, setting: FrameSetting, rate: int) -> np.ndarray:
    """Start sample of every window position within an n_samples-long cycle."""
    win = ms_to_samples(setting.window_ms, rate)
    step = ms_to_samples(setting.step_ms, rate)
    if n_samples < win:
        raise CycleTooShortError(f"{n_samples} samples < window {win} samples")
    n_win = (n_samples - win) // step + 1
    return np.arange(n_win) * step


def _compose_clip(clip, setting, cfg, label, source) -> FrameSequence:
    rate = clip.sample_rate
    win = ms_to_samples(setting.window_ms, rate)
    starts = window_offsets(clip.samples.size, setting, rate)
    coeffs = np.stack([dsp.mfcc(clip.samples[s : s + win], rate, cfg) for s in starts])
    n_frames = coeffs.shape[0] // setting.group
    if n_frames == 0:
        raise EmptyAfterGroupingError(
            f"{coeffs.shape[0]} windows cannot fill a group of {setting.group}"
        )
    frames = coeffs[: n_frames * setting.group].reshape(n_frames, -1)
    return FrameSequence(frames=frames, label=label, source=source)


def compose_frames(
    cycle: RespiratoryCycle,
    setting: FrameSetting,
    cfg: dsp.MfccConfig = dsp.MfccConfig(),
    label: int | None = None,
) -> FrameSequence:
    """Window a cycle, compute per-window cepstra, and concatenate consecutive
    disjoint groups of `group` windows into frames (time order, trailing
    remainder windows dropped).

    The label defaults to the cycle's four-way anomaly index; task pipelines
    pass their own.
    """
    return _compose_clip(
        cycle.clip,
        setting,
        cfg,
        int(cycle.anomaly) if label is None else label,
        cycle.uid,
    )


def compose_recording_frames(
    recording: Recording,
    setting: FrameSetting,
    cfg: dsp.MfccConfig = dsp.MfccConfig(),
    label: int = 0,
) -> FrameSequence:
    """Frames over a whole recording's cycles joined in time order."""
    return _compose_clip(concat_cycle_audio(recording), setting, cfg, label, recording.uid)
