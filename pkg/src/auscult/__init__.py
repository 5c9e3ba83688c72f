"""Respiratory auscultation sound analysis.

Ingests lung-sound recordings and their cycle annotations, extracts cepstral
feature frames, trains recurrent-network classifiers (LSTM/GRU, optionally
bidirectional) for anomaly- and pathology-level tasks, and scores them with
micro (sensitivity/specificity) and macro criteria.
"""

from .dataset import (
    Anomaly,
    AudioClip,
    CycleAnnotation,
    Diagnosis,
    PathologyTask,
    Recording,
    RecordingMetadata,
    RespiratoryCycle,
    CANONICAL_RATE,
    extract_cycles,
    map_pathology_label,
    parse_annotation,
    parse_diagnosis_table,
    parse_filename_metadata,
    parse_wav,
    resample,
    synth_dataset,
)
from .dsp import MfccConfig, build_filterbank, dct2, hamming_window, magnitude_spectrum, mfcc
from .frames import FrameSequence, FrameSetting, builtin_settings, compose_frames, get_setting
from .metrics import ConfusionMatrix, MetricsReport, Task, confusion, icbhi_micro, macro, report, split
from .normalize import NormMethod, NormStats, apply, fit
from .rnn import (
    ModelConfig,
    RnnModel,
    TrainConfig,
    forward,
    init_model,
    load_model,
    predict,
    save_model,
    train,
)

__version__ = "0.1.0"
