"""Audio and annotation ingestion, labeled cycle extraction, synthetic data.

File conventions follow the public lung-sound challenge distribution: one WAV
per recording, a sibling .txt with one respiratory cycle per line
(begin end crackles wheezes), a per-patient diagnosis table, and 5-token
filenames <patient>_<recording>_<chest location>_<mode>_<equipment>.wav.

All operations are pure given their inputs and safe to call concurrently.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from pathlib import Path

import numpy as np

from .dsp import hamming_window

log = logging.getLogger(__name__)

__all__ = [
    "DatasetError",
    "MalformedHeaderError",
    "UnsupportedEncodingError",
    "TruncatedDataError",
    "AnnotationError",
    "BadFieldCountError",
    "NonNumericTimeError",
    "FlagOutOfRangeError",
    "InvertedIntervalError",
    "BadTokenCountError",
    "UnknownDiagnosisError",
    "DuplicatePatientError",
    "OutOfBoundsIntervalError",
    "AudioClip",
    "CycleAnnotation",
    "RecordingMetadata",
    "Diagnosis",
    "Anomaly",
    "PathologyTask",
    "RespiratoryCycle",
    "Recording",
    "parse_wav",
    "write_wav",
    "parse_annotation",
    "parse_filename_metadata",
    "parse_diagnosis_table",
    "extract_cycles",
    "concat_cycle_audio",
    "map_pathology_label",
    "resample",
    "synth_dataset",
    "load_recordings",
    "CANONICAL_RATE",
]

# All clips are brought to this rate before feature extraction; a 2 kHz
# Nyquist covers the crackle/wheeze band and unifies heterogeneous equipment.
CANONICAL_RATE = 4000


class DatasetError(Exception):
    """Base for ingestion failures."""


class MalformedHeaderError(DatasetError):
    pass


class UnsupportedEncodingError(DatasetError):
    pass


class TruncatedDataError(DatasetError):
    pass


class AnnotationError(DatasetError):
    pass


class BadFieldCountError(AnnotationError):
    pass


class NonNumericTimeError(AnnotationError):
    pass


class FlagOutOfRangeError(AnnotationError):
    pass


class InvertedIntervalError(AnnotationError):
    pass


class BadTokenCountError(DatasetError):
    pass


class UnknownDiagnosisError(DatasetError):
    pass


class DuplicatePatientError(DatasetError):
    pass


class OutOfBoundsIntervalError(DatasetError):
    pass


def _round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


@dataclass
class AudioClip:
    """Mono sample buffer in [-1, 1] plus its sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValueError("clip must hold a non-empty 1-D sample buffer")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("clip contains non-finite samples")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class CycleAnnotation:
    """One respiratory cycle: [begin_s, end_s) plus crackle/wheeze flags."""

    begin_s: float
    end_s: float
    crackles: bool
    wheezes: bool

    def __post_init__(self) -> None:
        if self.end_s <= self.begin_s:
            raise InvertedIntervalError(
                f"cycle end {self.end_s} must exceed begin {self.begin_s}"
            )
        if self.begin_s < 0.0:
            raise AnnotationError(f"cycle begin {self.begin_s} is negative")
        if self.end_s - self.begin_s > 90.0:
            raise AnnotationError(
                f"cycle duration {self.end_s - self.begin_s:.3f}s exceeds 90s"
            )


@dataclass(frozen=True)
class RecordingMetadata:
    patient_id: str
    recording_index: str
    chest_location: str
    acquisition_mode: str
    equipment: str


class Diagnosis(Enum):
    HEALTHY = "Healthy"
    COPD = "COPD"
    BRONCHIECTASIS = "Bronchiectasis"
    ASTHMA = "Asthma"
    URTI = "URTI"
    LRTI = "LRTI"
    PNEUMONIA = "Pneumonia"
    BRONCHIOLITIS = "Bronchiolitis"


_CHRONIC = frozenset({Diagnosis.COPD, Diagnosis.BRONCHIECTASIS, Diagnosis.ASTHMA})


class Anomaly(IntEnum):
    """Cycle-level label; a bijection of the (crackles, wheezes) flag pair."""

    NORMAL = 0
    CRACKLES = 1
    WHEEZES = 2
    BOTH = 3

    @classmethod
    def from_flags(cls, crackles: bool, wheezes: bool) -> "Anomaly":
        if crackles and wheezes:
            return cls.BOTH
        if crackles:
            return cls.CRACKLES
        if wheezes:
            return cls.WHEEZES
        return cls.NORMAL


class PathologyTask(Enum):
    BINARY = "binary"  # healthy vs unhealthy
    TERNARY = "ternary"  # healthy / chronic / non-chronic


@dataclass
class RespiratoryCycle:
    clip: AudioClip
    anomaly: Anomaly
    diagnosis: Diagnosis | None
    source: RecordingMetadata
    index: int = 0

    @property
    def uid(self) -> str:
        s = self.source
        return f"{s.patient_id}_{s.recording_index}_{s.chest_location}_c{self.index}"


@dataclass
class Recording:
    clip: AudioClip
    cycles: list[CycleAnnotation]
    diagnosis: Diagnosis | None
    source: RecordingMetadata

    def __post_init__(self) -> None:
        self.cycles = sorted(self.cycles, key=lambda c: c.begin_s)

    @property
    def uid(self) -> str:
        s = self.source
        return f"{s.patient_id}_{s.recording_index}_{s.chest_location}"


# --- WAV ---------------------------------------------------------------

_WAVE_FORMAT_PCM = 1
_WAVE_FORMAT_IEEE_FLOAT = 3


def parse_wav(data: bytes) -> AudioClip:
    """Decode a RIFF/WAVE byte buffer into a mono AudioClip.

    Accepts PCM 8/16/32-bit integer and 32-bit float, any channel count
    (channels are mean-downmixed). Integer samples are scaled to [-1, 1] by
    the type's maximum magnitude.
    """
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise MalformedHeaderError("not a RIFF/WAVE container")

    fmt = None
    raw = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos : pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8 : pos + 8 + size]
        if chunk_id == b"fmt ":
            if len(body) < 16:
                raise MalformedHeaderError("fmt chunk shorter than 16 bytes")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif chunk_id == b"data":
            if len(body) < size:
                raise TruncatedDataError(
                    f"data chunk declares {size} bytes but only {len(body)} present"
                )
            raw = body
        pos += 8 + size + (size & 1)  # chunks are word-aligned

    if fmt is None:
        raise MalformedHeaderError("missing fmt chunk")
    if raw is None:
        raise MalformedHeaderError("missing data chunk")

    audio_format, channels, rate, _byte_rate, _block_align, bits = fmt
    if channels < 1:
        raise MalformedHeaderError("channel count must be >= 1")
    if rate <= 0:
        raise MalformedHeaderError("sample rate must be positive")

    if audio_format == _WAVE_FORMAT_PCM:
        if bits == 8:
            samples = (np.frombuffer(raw, dtype=np.uint8).astype(np.float64) - 128.0) / 128.0
        elif bits == 16:
            samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
        elif bits == 32:
            samples = np.frombuffer(raw, dtype="<i4").astype(np.float64) / 2147483648.0
        else:
            raise UnsupportedEncodingError(f"PCM {bits}-bit is not supported")
    elif audio_format == _WAVE_FORMAT_IEEE_FLOAT:
        if bits != 32:
            raise UnsupportedEncodingError(f"float {bits}-bit is not supported")
        samples = np.frombuffer(raw, dtype="<f4").astype(np.float64)
    else:
        raise UnsupportedEncodingError(f"compressed/unknown format tag {audio_format}")

    if samples.size == 0:
        raise TruncatedDataError("data chunk holds no samples")
    if samples.size % channels:
        samples = samples[: samples.size - samples.size % channels]
    if channels > 1:
        samples = samples.reshape(-1, channels).mean(axis=1)
    return AudioClip(samples=samples, sample_rate=int(rate))


def write_wav(clip: AudioClip, bits: int = 16) -> bytes:
    """Encode a clip as little-endian PCM16 RIFF/WAVE bytes."""
    if bits != 16:
        raise ValueError("only PCM16 output is supported")
    scaled = np.clip(np.floor(clip.samples * 32768.0 + 0.5), -32768, 32767).astype("<i2")
    raw = scaled.tobytes()
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF",
        36 + len(raw),
        b"WAVE",
        b"fmt ",
        16,
        _WAVE_FORMAT_PCM,
        1,
        clip.sample_rate,
        clip.sample_rate * 2,
        2,
        16,
        b"data",
        len(raw),
    )
    return header + raw


# --- Text formats ------------------------------------------------------


def parse_annotation(text: str) -> list[CycleAnnotation]:
    """Parse cycle annotations: one 'begin end crackles wheezes' line per cycle."""
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) != 4:
            raise BadFieldCountError(f"line {lineno}: expected 4 fields, got {len(fields)}")
        try:
            begin, end = float(fields[0]), float(fields[1])
        except ValueError:
            raise NonNumericTimeError(f"line {lineno}: non-numeric time") from None
        flags = []
        for tok in fields[2:]:
            if tok not in ("0", "1"):
                raise FlagOutOfRangeError(f"line {lineno}: flag must be 0 or 1, got {tok!r}")
            flags.append(tok == "1")
        if end <= begin:
            raise InvertedIntervalError(f"line {lineno}: end {end} <= begin {begin}")
        out.append(CycleAnnotation(begin, end, crackles=flags[0], wheezes=flags[1]))
    return out


def parse_filename_metadata(name: str) -> RecordingMetadata:
    """Split a 5-token recording filename into its metadata fields."""
    stem = Path(name).stem
    tokens = stem.split("_")
    if len(tokens) != 5:
        raise BadTokenCountError(f"{name!r}: expected 5 underscore-separated tokens")
    return RecordingMetadata(*tokens)


_DIAGNOSIS_BY_NAME = {d.value.lower(): d for d in Diagnosis}


def parse_diagnosis_table(text: str) -> dict[str, Diagnosis]:
    """Parse 'patient_id,diagnosis' lines (comma or tab separated) into a map."""
    table: dict[str, Diagnosis] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = [p.strip() for p in line.replace("\t", ",").split(",")]
        if len(parts) != 2 or not parts[0]:
            raise BadFieldCountError(f"line {lineno}: expected 'patient_id,diagnosis'")
        pid, name = parts
        diag = _DIAGNOSIS_BY_NAME.get(name.lower())
        if diag is None:
            raise UnknownDiagnosisError(f"line {lineno}: unknown diagnosis {name!r}")
        if pid in table:
            raise DuplicatePatientError(f"line {lineno}: duplicate patient {pid!r}")
        table[pid] = diag
    return table


# --- Cycle extraction and labels ----------------------------------------


def extract_cycles(recording: Recording) -> list[RespiratoryCycle]:
    """Slice a recording into labeled cycles.

    Sample indices are [round-half-up(begin*rate), round-half-up(end*rate)),
    so each cycle length matches round(duration*rate) within one sample.
    """
    clip = recording.clip
    n = clip.samples.size
    cycles = []
    for i, ann in enumerate(recording.cycles):
        lo = _round_half_up(ann.begin_s * clip.sample_rate)
        hi = _round_half_up(ann.end_s * clip.sample_rate)
        if hi > n:
            raise OutOfBoundsIntervalError(
                f"cycle {i} ends at {ann.end_s}s but the clip lasts {clip.duration:.3f}s"
            )
        cycles.append(
            RespiratoryCycle(
                clip=AudioClip(clip.samples[lo:hi].copy(), clip.sample_rate),
                anomaly=Anomaly.from_flags(ann.crackles, ann.wheezes),
                diagnosis=recording.diagnosis,
                source=recording.source,
                index=i,
            )
        )
    return cycles


def concat_cycle_audio(recording: Recording) -> AudioClip:
    """All cycle slices of a recording joined in time order (gaps removed)."""
    parts = [c.clip.samples for c in extract_cycles(recording)]
    if not parts:
        raise OutOfBoundsIntervalError(f"recording {recording.uid} has no cycles")
    return AudioClip(np.concatenate(parts), recording.clip.sample_rate)


BINARY_CLASS_NAMES = ("healthy", "unhealthy")
TERNARY_CLASS_NAMES = ("healthy", "chronic", "non_chronic")


def map_pathology_label(diagnosis: Diagnosis, task: PathologyTask) -> int:
    """Collapse a diagnosis to its task class index (0 is always healthy)."""
    if diagnosis is Diagnosis.HEALTHY:
        return 0
    if task is PathologyTask.BINARY:
        return 1
    return 1 if diagnosis in _CHRONIC else 2


# --- Resampling ----------------------------------------------------------


def _lowpass_taps(cutoff_hz: float, rate: float, numtaps: int = 101) -> np.ndarray:
    # Hamming-windowed sinc, unity DC gain; numtaps odd keeps it zero-phase
    # under center-aligned convolution.
    m = (numtaps - 1) / 2.0
    k = np.arange(numtaps) - m
    fc = cutoff_hz / rate
    taps = 2.0 * fc * np.sinc(2.0 * fc * k) * hamming_window(numtaps)
    return taps / taps.sum()


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Resample by windowed-sinc low-pass (cutoff 0.45 * target rate, only when
    downsampling) followed by linear interpolation. Output duration equals the
    input duration within one output sample."""
    if target_rate <= 0:
        raise ValueError("target_rate must be positive")
    if target_rate == clip.sample_rate:
        return AudioClip(clip.samples.copy(), clip.sample_rate)
    x = clip.samples
    if target_rate < clip.sample_rate:
        x = np.convolve(x, _lowpass_taps(0.45 * target_rate, clip.sample_rate), mode="same")
    n_out = _round_half_up(x.size * target_rate / clip.sample_rate)
    t_out = np.arange(n_out) / target_rate
    t_in = np.arange(x.size) / clip.sample_rate
    return AudioClip(np.interp(t_out, t_in, x), target_rate)


# --- Synthetic data -------------------------------------------------------

_SYNTH_TONES = (320.0, 640.0, 1060.0, 1600.0)
_SYNTH_DIAGNOSES = (Diagnosis.HEALTHY, Diagnosis.COPD, Diagnosis.URTI, Diagnosis.PNEUMONIA)
_SYNTH_BURST_S = 0.25
_SYNTH_PATIENT_SIZE = 4  # cycles per synthetic patient (patients are class-pure)


def synth_dataset(
    n_sequences: int,
    classes: int = 2,
    seed: int = 0,
    sample_rate: int = CANONICAL_RATE,
) -> list[RespiratoryCycle]:
    """Deterministic labeled cycles for desk-scale testing.

    Class k is band-limited noise plus a class-specific tone-burst order
    (the tone palette rotated by k), so classes are separable by construction
    and adjacent classes share spectral content but differ in time order.
    """
    if n_sequences < 1:
        raise ValueError("n_sequences must be positive")
    if not 2 <= classes <= 4:
        raise ValueError("classes must be in [2, 4]")
    rng = np.random.default_rng(seed)
    burst_len = int(_SYNTH_BURST_S * sample_rate)
    out = []
    for i in range(n_sequences):
        cls = i % classes
        per_class_idx = i // classes
        duration = rng.uniform(1.5, 3.5)
        n = _round_half_up(duration * sample_rate)
        noise = rng.normal(0.0, 0.04, n)
        sig = np.convolve(noise, np.ones(5) / 5.0, mode="same")
        for b in range(int(np.ceil(n / burst_len))):
            tone = _SYNTH_TONES[(cls + b) % len(_SYNTH_TONES)]
            freq = tone * rng.uniform(0.99, 1.01)
            amp = rng.uniform(0.3, 0.4)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            lo, hi = b * burst_len, min((b + 1) * burst_len, n)
            t = np.arange(lo, hi) / sample_rate
            sig[lo:hi] += amp * np.sin(2.0 * np.pi * freq * t + phase)
        meta = RecordingMetadata(
            patient_id=f"s{cls}{per_class_idx // _SYNTH_PATIENT_SIZE:03d}",
            recording_index=f"r{per_class_idx}",
            chest_location="Al",
            acquisition_mode="sc",
            equipment="Synth",
        )
        out.append(
            RespiratoryCycle(
                clip=AudioClip(np.clip(sig, -1.0, 1.0), sample_rate),
                anomaly=Anomaly(cls),
                diagnosis=_SYNTH_DIAGNOSES[cls],
                source=meta,
                index=per_class_idx % _SYNTH_PATIENT_SIZE,
            )
        )
    return out


# --- Directory ingest ------------------------------------------------------


def load_recordings(
    audio_dir: str | Path, diagnosis_path: str | Path | None = None
) -> list[Recording]:
    """Load every WAV with a sibling .txt annotation from a directory.

    The diagnosis table is read from diagnosis_path, or auto-detected as a
    *diagnosis*.csv/.txt file in the directory or its parent; recordings get
    diagnosis None when no table entry exists.
    """
    audio_dir = Path(audio_dir)
    if not audio_dir.is_dir():
        raise DatasetError(f"{audio_dir} is not a directory")

    table: dict[str, Diagnosis] = {}
    if diagnosis_path is None:
        for cand_dir in (audio_dir, audio_dir.parent):
            hits = sorted(cand_dir.glob("*diagnosis*"))
            if hits:
                diagnosis_path = hits[0]
                break
    if diagnosis_path is not None:
        table = parse_diagnosis_table(Path(diagnosis_path).read_text())

    recordings = []
    for wav_path in sorted(audio_dir.glob("*.wav")):
        txt_path = wav_path.with_suffix(".txt")
        if not txt_path.exists():
            log.warning("no annotation file for %s; skipped", wav_path.name)
            continue
        meta = parse_filename_metadata(wav_path.name)
        recordings.append(
            Recording(
                clip=parse_wav(wav_path.read_bytes()),
                cycles=parse_annotation(txt_path.read_text()),
                diagnosis=table.get(meta.patient_id),
                source=meta,
            )
        )
    if not recordings:
        raise DatasetError(f"no annotated recordings found in {audio_dir}")
    return recordings
