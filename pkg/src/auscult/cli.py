"""Experiment runner and command-line interface.

Pipelines: ingest (files or synthetic) -> resample to the canonical rate ->
cycle/recording extraction -> frame composition -> stratified split ->
normalization fitted on the training split -> recurrent-network training ->
evaluation -> artifacts (report JSON, text table row, confusion CSV, training
history CSV, serialized model + normalization statistics, predictions CSV).

Exit codes: 0 success, 1 validation error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dataset, dsp, frames, metrics, normalize, rnn

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

__all__ = [
    "ExperimentConfig",
    "PipelineError",
    "IdMismatchError",
    "UnknownLabelError",
    "run_experiment",
    "run_sweep",
    "score_predictions",
    "main",
]


class PipelineError(Exception):
    """Wraps a module failure with the pipeline stage that raised it."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


class IdMismatchError(ValueError):
    pass


class UnknownLabelError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    task: metrics.Task
    setting: str = "S3"
    normalization: normalize.NormMethod = normalize.NormMethod.ZSCORE
    model: str = "LSTM"  # LSTM | GRU | BiLSTM | BiGRU
    train: rnn.TrainConfig = field(default_factory=rnn.TrainConfig)
    hidden: int = 256
    layers: int = 2
    dropout: float = 0.4
    data_dir: str | None = None
    diagnosis_path: str | None = None
    synthetic: int | None = None
    split_ratio: float = 0.8
    split_seed: int | None = None  # defaults to train.seed
    patient_disjoint: bool = False
    patho_unit: str = "recording"  # or "cycle"; synthetic data is always per cycle
    out_dir: str = "runs"

    def __post_init__(self) -> None:
        if self.model not in rnn.MODEL_KINDS:
            raise ValueError(f"model must be one of {sorted(rnn.MODEL_KINDS)}")
        if self.patho_unit not in ("recording", "cycle"):
            raise ValueError("patho_unit must be 'recording' or 'cycle'")
        if (self.data_dir is None) == (self.synthetic is None):
            raise ValueError("exactly one of data_dir or synthetic must be given")
        frames.get_setting(self.setting)  # raises on unknown ids

    @property
    def effective_split_seed(self) -> int:
        return self.train.seed if self.split_seed is None else self.split_seed

    def run_name(self) -> str:
        return (
            f"{self.task.value}_{self.model}_{self.setting}"
            f"_{self.normalization.value}_{self.train.seed}"
        )

    def echo(self) -> dict:
        """Semantic configuration for the report; deliberately path-free so
        identical runs give byte-identical reports regardless of location."""
        return {
            "task": self.task.value,
            "setting": self.setting,
            "normalization": self.normalization.value,
            "model": self.model,
            "hidden": self.hidden,
            "layers": self.layers,
            "dropout": self.dropout,
            "batch_size": self.train.batch_size,
            "epochs": self.train.epochs,
            "learning_rate": self.train.learning_rate,
            "seed": self.train.seed,
            "split_ratio": self.split_ratio,
            "split_seed": self.effective_split_seed,
            "patient_disjoint": self.patient_disjoint,
            "patho_unit": self.patho_unit if self.task.is_pathology else None,
            "synthetic": self.synthetic,
        }


def _anomaly_label(anomaly: dataset.Anomaly, task: metrics.Task) -> int:
    if task is metrics.Task.ANOMALY4:
        return int(anomaly)
    return 0 if anomaly is dataset.Anomaly.NORMAL else 1


def _patho_task(task: metrics.Task) -> dataset.PathologyTask:
    return (
        dataset.PathologyTask.BINARY
        if task is metrics.Task.PATHO2
        else dataset.PathologyTask.TERNARY
    )


def build_sequences(cfg: ExperimentConfig) -> tuple[list[frames.FrameSequence], dict]:
    """Ingest, resample, extract, label, and compose frames for the task."""
    setting = frames.get_setting(cfg.setting)
    task = cfg.task

    units = []  # (clip-bearing unit, label, compose callable)
    if cfg.synthetic is not None:
        cycles = dataset.synth_dataset(
            cfg.synthetic, classes=task.n_classes, seed=cfg.train.seed
        )
        for c in cycles:
            if task.is_pathology:
                label = dataset.map_pathology_label(c.diagnosis, _patho_task(task))
            else:
                label = _anomaly_label(c.anomaly, task)
            units.append((c, label))
        per_cycle = True
    else:
        recordings = dataset.load_recordings(cfg.data_dir, cfg.diagnosis_path)
        recordings = [
            dataset.Recording(
                clip=dataset.resample(r.clip, dataset.CANONICAL_RATE),
                cycles=r.cycles,
                diagnosis=r.diagnosis,
                source=r.source,
            )
            for r in recordings
        ]
        if task.is_pathology:
            missing = [r.uid for r in recordings if r.diagnosis is None]
            if missing:
                raise dataset.DatasetError(
                    f"{len(missing)} recordings lack a diagnosis entry "
                    f"(first: {missing[0]}); a diagnosis table is required"
                )
        per_cycle = not (task.is_pathology and cfg.patho_unit == "recording")
        if per_cycle:
            for r in recordings:
                for c in dataset.extract_cycles(r):
                    if task.is_pathology:
                        label = dataset.map_pathology_label(c.diagnosis, _patho_task(task))
                    else:
                        label = _anomaly_label(c.anomaly, task)
                    units.append((c, label))
        else:
            for r in recordings:
                label = dataset.map_pathology_label(r.diagnosis, _patho_task(task))
                units.append((r, label))

    sequences = []
    dropped = 0
    for unit, label in units:
        try:
            if isinstance(unit, dataset.Recording):
                seq = frames.compose_recording_frames(unit, setting, label=label)
            else:
                seq = frames.compose_frames(unit, setting, label=label)
        except (frames.CycleTooShortError, frames.EmptyAfterGroupingError):
            dropped += 1
            continue
        sequences.append(seq)
    if dropped:
        log.warning(
            "dropped %d of %d units shorter than setting %s", dropped, len(units), setting.id
        )
    if not sequences:
        raise dataset.DatasetError("no sequences survive frame composition")

    counts = {name: 0 for name in task.class_names}
    for s in sequences:
        counts[task.class_names[s.label]] += 1
    notes = {
        "n_sequences": len(sequences),
        "n_dropped_short": dropped,
        "class_counts": counts,
        "unit": "cycle" if per_cycle else "recording",
    }
    return sequences, notes


def _stage(name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except PipelineError:
        raise
    except Exception as e:
        raise PipelineError(name, e) from e


def _patient_of(seq: frames.FrameSequence) -> str:
    return seq.source.split("_", 1)[0]


def run_experiment(cfg: ExperimentConfig) -> tuple[metrics.MetricsReport, Path]:
    """Full pipeline; returns the report and the run directory."""
    task = cfg.task
    setting = frames.get_setting(cfg.setting)
    sequences, notes = _stage("ingest", build_sequences, cfg)

    train_seqs, test_seqs = _stage(
        "split",
        metrics.split,
        sequences,
        ratio=cfg.split_ratio,
        seed=cfg.effective_split_seed,
        stratify=not cfg.patient_disjoint,
        n_classes=task.n_classes,
        patient_key=_patient_of if cfg.patient_disjoint else None,
    )
    if not train_seqs or not test_seqs:
        raise PipelineError("split", ValueError("empty train or test split"))

    stats = _stage("normalize", normalize.fit, train_seqs, cfg.normalization)
    train_seqs = normalize.apply(stats, train_seqs)
    test_seqs = normalize.apply(stats, test_seqs)

    cell, bidirectional = rnn.MODEL_KINDS[cfg.model]
    model_cfg = rnn.ModelConfig(
        n_features=train_seqs[0].n_features,
        n_classes=task.n_classes,
        cell=cell,
        bidirectional=bidirectional,
        layers=cfg.layers,
        hidden=cfg.hidden,
        dropout=cfg.dropout,
        recurrent_dropout=cfg.dropout,
    )
    model = rnn.init_model(model_cfg, seed=cfg.train.seed)
    result = _stage("train", rnn.train, model, train_seqs, cfg.train)

    preds, _ = _stage("evaluate", rnn.predict_batch, model, test_seqs, cfg.train.batch_size)
    truths = np.array([s.label for s in test_seqs])
    cm = metrics.confusion(preds, truths, task.class_names)
    rep = metrics.report(cm, task)

    run_dir = Path(cfg.out_dir) / cfg.run_name()
    _stage(
        "emit",
        _write_artifacts,
        run_dir,
        cfg,
        rep,
        cm,
        result.history,
        model,
        stats,
        test_seqs,
        preds,
        notes,
    )
    return rep, run_dir


def _write_artifacts(run_dir, cfg, rep, cm, history, model, stats, test_seqs, preds, notes):
    run_dir.mkdir(parents=True, exist_ok=True)

    payload = {"config": cfg.echo(), "data": notes, "metrics": rep.as_dict()}
    (run_dir / "report.json").write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n"
    )

    (run_dir / "report.txt").write_text(_report_row(cfg, rep, header=True))

    with open(run_dir / "confusion.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["true\\pred"] + list(cm.class_names))
        for i, name in enumerate(cm.class_names):
            w.writerow([name] + [int(v) for v in cm.counts[i]])

    with open(run_dir / "history.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "loss", "train_accuracy"])
        for h in history:
            w.writerow([h.epoch, repr(h.loss), repr(h.accuracy)])

    rnn.save_model(
        run_dir / "model.bin",
        model,
        norm_stats=stats,
        setting_id=cfg.setting,
        task=cfg.task.value,
    )
    (run_dir / "stats.bin").write_text(
        json.dumps(normalize.save_json(stats), sort_keys=True) + "\n"
    )

    with open(run_dir / "predictions.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["id", "pred", "truth"])
        for seq, p in zip(test_seqs, preds):
            w.writerow([seq.source, int(p), seq.label])


def _fmt(v) -> str:
    return "n/a" if v is None else f"{v:.4f}"


_ROW_FIELDS = (
    "task",
    "model",
    "setting",
    "norm",
    "accuracy",
    "precision",
    "recall",
    "f1",
    "specificity",
    "sensitivity",
    "icbhi_score",
)


def _report_row(cfg: ExperimentConfig, rep: metrics.MetricsReport, header: bool = False) -> str:
    values = (
        cfg.task.value,
        cfg.model,
        cfg.setting,
        cfg.normalization.value,
        _fmt(rep.macro_accuracy),
        _fmt(rep.macro_precision),
        _fmt(rep.macro_recall),
        _fmt(rep.macro_f1),
        _fmt(rep.specificity),
        _fmt(rep.sensitivity),
        _fmt(rep.icbhi_score),
    )
    widths = [max(len(f), 11) for f in _ROW_FIELDS]
    lines = []
    if header:
        lines.append("  ".join(f.ljust(w) for f, w in zip(_ROW_FIELDS, widths)))
    lines.append("  ".join(v.ljust(w) for v, w in zip(values, widths)))
    return "\n".join(lines) + "\n"


def run_sweep(
    base: ExperimentConfig,
    settings: list[str],
    models: list[str],
    norms: list[str],
) -> list[dict]:
    """Cartesian product of the axes; one consolidated CSV row per combination.
    Completed combinations (report.json already on disk) are reused, and
    per-cell failures are recorded without aborting the sweep."""
    if not settings or not models or not norms:
        raise ValueError("sweep axes must be non-empty")
    rows = []
    for setting in settings:
        for model in models:
            for norm in norms:
                cfg = ExperimentConfig(
                    task=base.task,
                    setting=setting,
                    normalization=normalize.NormMethod.parse(norm),
                    model=model,
                    train=base.train,
                    hidden=base.hidden,
                    layers=base.layers,
                    dropout=base.dropout,
                    data_dir=base.data_dir,
                    diagnosis_path=base.diagnosis_path,
                    synthetic=base.synthetic,
                    split_ratio=base.split_ratio,
                    split_seed=base.split_seed,
                    patient_disjoint=base.patient_disjoint,
                    patho_unit=base.patho_unit,
                    out_dir=base.out_dir,
                )
                row = {
                    "task": cfg.task.value,
                    "model": model,
                    "setting": setting,
                    "normalization": cfg.normalization.value,
                    "seed": cfg.train.seed,
                    "error": "",
                }
                existing = Path(cfg.out_dir) / cfg.run_name() / "report.json"
                try:
                    if existing.exists():
                        payload = json.loads(existing.read_text())
                        row.update(
                            {
                                k: payload["metrics"][k]
                                for k in (
                                    "sensitivity",
                                    "specificity",
                                    "icbhi_score",
                                    "macro_accuracy",
                                    "macro_precision",
                                    "macro_recall",
                                    "macro_f1",
                                )
                            }
                        )
                        row["reused"] = True
                    else:
                        rep, _ = run_experiment(cfg)
                        d = rep.as_dict()
                        row.update(
                            {
                                k: d[k]
                                for k in (
                                    "sensitivity",
                                    "specificity",
                                    "icbhi_score",
                                    "macro_accuracy",
                                    "macro_precision",
                                    "macro_recall",
                                    "macro_f1",
                                )
                            }
                        )
                        row["reused"] = False
                except Exception as e:  # record and continue
                    log.error("sweep cell %s failed: %s", cfg.run_name(), e)
                    row["error"] = str(e)
                rows.append(row)

    out = Path(base.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cols = [
        "task",
        "model",
        "setting",
        "normalization",
        "seed",
        "sensitivity",
        "specificity",
        "icbhi_score",
        "macro_accuracy",
        "macro_precision",
        "macro_recall",
        "macro_f1",
        "reused",
        "error",
    ]
    with open(out / "sweep.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=cols, extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow(row)
    return rows


# --- offline scoring -----------------------------------------------------------


def _read_label_file(path, task: metrics.Task) -> dict[str, int]:
    names = {n: i for i, n in enumerate(task.class_names)}
    out: dict[str, int] = {}
    with open(path, newline="") as f:
        for lineno, row in enumerate(csv.reader(f), start=1):
            if not row or (lineno == 1 and row[-1].strip().lower() in ("label", "pred", "truth")):
                continue
            if len(row) < 2:
                raise UnknownLabelError(f"{path}:{lineno}: expected 'id,label'")
            rid, lab = row[0].strip(), row[1].strip()
            if lab.lstrip("-").isdigit():
                val = int(lab)
                if not 0 <= val < task.n_classes:
                    raise UnknownLabelError(f"{path}:{lineno}: label {val} out of range")
            elif lab.lower() in names:
                val = names[lab.lower()]
            else:
                raise UnknownLabelError(f"{path}:{lineno}: unknown label {lab!r}")
            out[rid] = val
    return out


def score_predictions(pred_file, truth_file, task: metrics.Task) -> metrics.MetricsReport:
    """Join two id,label CSVs on id and score them under the task protocol."""
    preds = _read_label_file(pred_file, task)
    truths = _read_label_file(truth_file, task)
    if set(preds) != set(truths):
        only_p = sorted(set(preds) - set(truths))[:3]
        only_t = sorted(set(truths) - set(preds))[:3]
        raise IdMismatchError(
            f"id sets differ (only in predictions: {only_p}, only in truths: {only_t})"
        )
    ids = sorted(preds)
    cm = metrics.confusion(
        [preds[i] for i in ids], [truths[i] for i in ids], task.class_names
    )
    return metrics.report(cm, task)


# --- feature dumps ---------------------------------------------------------------


def dump_features(wav_path, setting_id: str, as_frames: bool, out) -> None:
    """Per-window cepstra (one row per window, 9 significant digits) or frame
    rows (sequence id, frame index, features) for one audio file."""
    setting = frames.get_setting(setting_id)
    clip = dataset.resample(
        dataset.parse_wav(Path(wav_path).read_bytes()), dataset.CANONICAL_RATE
    )
    if as_frames:
        seq = frames._compose_clip(clip, setting, dsp.MfccConfig(), 0, Path(wav_path).stem)
        for i, row in enumerate(seq.frames):
            out.write(
                ",".join([seq.source, str(i)] + [f"{v:.9g}" for v in row]) + "\n"
            )
    else:
        win = frames.ms_to_samples(setting.window_ms, clip.sample_rate)
        for s in frames.window_offsets(clip.samples.size, setting, clip.sample_rate):
            coeffs = dsp.mfcc(clip.samples[s : s + win], clip.sample_rate)
            out.write(",".join(f"{v:.9g}" for v in coeffs) + "\n")


# --- synthetic corpus on disk ------------------------------------------------------


def write_synth_corpus(out_dir, n: int, classes: int, seed: int) -> None:
    """Materialize a synthetic dataset in the ingestable file layout: one WAV
    plus annotation per cycle and a per-patient diagnosis table."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cycles = dataset.synth_dataset(n, classes=classes, seed=seed)
    diagnoses = {}
    for c in cycles:
        s = c.source
        stem = f"{s.patient_id}_{s.recording_index}_{s.chest_location}_{s.acquisition_mode}_{s.equipment}"
        (out / f"{stem}.wav").write_bytes(dataset.write_wav(c.clip))
        # end time truncated to ms so it never lands past the clip's last sample
        end_s = (c.clip.samples.size * 1000 // c.clip.sample_rate) / 1000.0
        (out / f"{stem}.txt").write_text(
            f"0.0 {end_s:.3f} "
            f"{int(c.anomaly in (dataset.Anomaly.CRACKLES, dataset.Anomaly.BOTH))} "
            f"{int(c.anomaly in (dataset.Anomaly.WHEEZES, dataset.Anomaly.BOTH))}\n"
        )
        diagnoses[s.patient_id] = c.diagnosis.value
    with open(out / "patient_diagnosis.csv", "w") as f:
        for pid in sorted(diagnoses):
            f.write(f"{pid},{diagnoses[pid]}\n")


# --- evaluate a finished run --------------------------------------------------------


def evaluate_run(run_dir, data_dir=None, synthetic=None, pred_out=None) -> metrics.MetricsReport:
    """Re-run inference from a completed run directory: the stored model,
    normalization statistics, setting id, and split seed reproduce the test
    predictions exactly."""
    run_dir = Path(run_dir)
    loaded = rnn.load_model(run_dir / "model.bin")
    payload = json.loads((run_dir / "report.json").read_text())
    conf = payload["config"]
    task = metrics.Task.parse(loaded.task or conf["task"])
    cfg = ExperimentConfig(
        task=task,
        setting=loaded.setting_id or conf["setting"],
        normalization=normalize.NormMethod(conf["normalization"]),
        model=conf["model"],
        train=rnn.TrainConfig(seed=conf["seed"], epochs=1),
        hidden=conf["hidden"],
        layers=conf["layers"],
        dropout=conf["dropout"],
        data_dir=data_dir,
        synthetic=synthetic if data_dir is None else None,
        split_ratio=conf["split_ratio"],
        split_seed=conf["split_seed"],
        patient_disjoint=conf["patient_disjoint"],
        patho_unit=conf.get("patho_unit") or "recording",
    )
    sequences, _ = _stage("ingest", build_sequences, cfg)
    _, test_seqs = _stage(
        "split",
        metrics.split,
        sequences,
        ratio=cfg.split_ratio,
        seed=cfg.effective_split_seed,
        stratify=not cfg.patient_disjoint,
        n_classes=task.n_classes,
        patient_key=_patient_of if cfg.patient_disjoint else None,
    )
    test_seqs = normalize.apply(loaded.norm_stats, test_seqs)
    preds, _ = rnn.predict_batch(loaded.model, test_seqs)
    if pred_out:
        with open(pred_out, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["id", "label"])
            for seq, p in zip(test_seqs, preds):
                w.writerow([seq.source, int(p)])
    truths = np.array([s.label for s in test_seqs])
    cm = metrics.confusion(preds, truths, task.class_names)
    return metrics.report(cm, task)


# --- command line ---------------------------------------------------------------------


def _load_config_file(path) -> dict[str, str]:
    """Flat 'key = value' lines; '#' starts a comment."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _pick(args, conf: dict, name: str, default, conv):
    v = getattr(args, name, None)
    if v is not None:
        return v
    if name in conf:
        raw = conf[name]
        if conv is bool:
            return raw.lower() in ("1", "true", "yes", "on")
        return conv(raw)
    return default


def _experiment_config(args) -> ExperimentConfig:
    conf = _load_config_file(args.config) if getattr(args, "config", None) else {}
    seed = _pick(args, conf, "seed", None, int)
    if seed is None:
        raise ValueError("--seed is required")
    train_cfg = rnn.TrainConfig(
        batch_size=_pick(args, conf, "batch_size", 32, int),
        epochs=_pick(args, conf, "epochs", 100, int),
        learning_rate=_pick(args, conf, "learning_rate", 0.002, float),
        seed=seed,
    )
    task = metrics.Task.parse(_pick(args, conf, "task", "anomaly4", str))
    return ExperimentConfig(
        task=task,
        setting=_pick(args, conf, "setting", "S3", str).upper(),
        normalization=normalize.NormMethod.parse(_pick(args, conf, "norm", "zscore", str)),
        model=_pick(args, conf, "model", "LSTM", str),
        train=train_cfg,
        hidden=_pick(args, conf, "hidden", 256, int),
        layers=_pick(args, conf, "layers", 2, int),
        dropout=_pick(args, conf, "dropout", 0.4, float),
        data_dir=_pick(args, conf, "data", None, str),
        diagnosis_path=_pick(args, conf, "diagnosis", None, str),
        synthetic=_pick(args, conf, "synthetic", None, int),
        split_ratio=_pick(args, conf, "split_ratio", 0.8, float),
        split_seed=_pick(args, conf, "split_seed", None, int),
        patient_disjoint=_pick(args, conf, "patient_disjoint", False, bool),
        patho_unit=_pick(args, conf, "patho_unit", "recording", str),
        out_dir=_pick(args, conf, "out", "runs", str),
    )


def _add_experiment_flags(p: argparse.ArgumentParser, seed_required: bool) -> None:
    p.add_argument("--config", help="flat key = value config file; flags override it")
    p.add_argument("--task", choices=[t.value for t in metrics.Task])
    p.add_argument("--setting", help="frame setting S1..S7")
    p.add_argument("--norm", help="none | minmax | zscore")
    p.add_argument("--model", choices=sorted(rnn.MODEL_KINDS))
    p.add_argument("--seed", type=int, required=seed_required)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--hidden", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--data", help="directory of WAV + annotation files")
    p.add_argument("--diagnosis", help="patient diagnosis table (auto-detected otherwise)")
    p.add_argument("--synthetic", type=int, help="use N synthetic sequences instead of files")
    p.add_argument("--split-ratio", dest="split_ratio", type=float)
    p.add_argument("--split-seed", dest="split_seed", type=int)
    p.add_argument(
        "--patient-disjoint", dest="patient_disjoint", action="store_const", const=True
    )
    p.add_argument("--patho-unit", dest="patho_unit", choices=["recording", "cycle"])
    p.add_argument("--out", help="output directory root (default: runs)")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="auscult",
        description="Respiratory sound classification: cepstral features + recurrent networks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one configuration and evaluate the held-out split")
    _add_experiment_flags(p, seed_required=True)

    p = sub.add_parser("sweep", help="run the cartesian product of settings/models/norms")
    _add_experiment_flags(p, seed_required=True)
    p.add_argument("--settings", help="comma-separated, e.g. S1,S2,S3")
    p.add_argument("--models", help="comma-separated, e.g. LSTM,GRU")
    p.add_argument("--norms", help="comma-separated, e.g. zscore,minmax")

    p = sub.add_parser("evaluate", help="re-run inference from a completed run directory")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--data")
    p.add_argument("--synthetic", type=int)
    p.add_argument("--pred-out", help="write test predictions as id,label CSV")

    p = sub.add_parser("score", help="score an id,label prediction CSV against a truth CSV")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--task", required=True, choices=[t.value for t in metrics.Task])

    p = sub.add_parser("features", help="dump per-window cepstra or frames as CSV")
    p.add_argument("--wav", required=True)
    p.add_argument("--setting", default="S3")
    p.add_argument("--frames", action="store_true", help="dump grouped frames instead")
    p.add_argument("--out", help="output CSV (default: stdout)")

    p = sub.add_parser("synth", help="write a synthetic dataset in the ingestable layout")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--seed", type=int, required=True)

    return parser


def _dispatch(args) -> int:
    if args.command == "train":
        cfg = _experiment_config(args)
        rep, run_dir = run_experiment(cfg)
        sys.stdout.write(_report_row(cfg, rep, header=True))
        sys.stdout.write(f"artifacts: {run_dir}\n")
    elif args.command == "sweep":
        cfg = _experiment_config(args)
        conf = _load_config_file(args.config) if args.config else {}
        settings = (args.settings or conf.get("settings", cfg.setting)).split(",")
        models = (args.models or conf.get("models", cfg.model)).split(",")
        norms = (args.norms or conf.get("norms", cfg.normalization.value)).split(",")
        rows = run_sweep(cfg, [s.strip().upper() for s in settings if s.strip()],
                         [m.strip() for m in models if m.strip()],
                         [n.strip() for n in norms if n.strip()])
        failed = sum(1 for r in rows if r["error"])
        sys.stdout.write(
            f"{len(rows)} combinations ({failed} failed); table: "
            f"{Path(cfg.out_dir) / 'sweep.csv'}\n"
        )
    elif args.command == "evaluate":
        if (args.data is None) == (args.synthetic is None):
            raise ValueError("evaluate needs exactly one of --data or --synthetic")
        rep = evaluate_run(args.run_dir, args.data, args.synthetic, args.pred_out)
        sys.stdout.write(json.dumps(rep.as_dict(), sort_keys=True, indent=2) + "\n")
    elif args.command == "score":
        rep = score_predictions(args.pred, args.truth, metrics.Task.parse(args.task))
        sys.stdout.write(json.dumps(rep.as_dict(), sort_keys=True, indent=2) + "\n")
    elif args.command == "features":
        if args.out:
            with open(args.out, "w") as f:
                dump_features(args.wav, args.setting, args.frames, f)
        else:
            dump_features(args.wav, args.setting, args.frames, sys.stdout)
    elif args.command == "synth":
        write_synth_corpus(args.out, args.n, args.classes, args.seed)
        sys.stdout.write(f"wrote {args.n} synthetic cycles to {args.out}\n")
    return EXIT_OK


def _exit_code_for(exc: Exception) -> int:
    cause = exc.cause if isinstance(exc, PipelineError) else exc
    if isinstance(cause, (rnn.TrainingDivergedError, FloatingPointError, ArithmeticError)):
        return EXIT_NUMERIC
    if isinstance(
        cause,
        (
            dataset.DatasetError,
            frames.CycleTooShortError,
            frames.EmptyAfterGroupingError,
            IdMismatchError,
            UnknownLabelError,
            OSError,
        ),
    ):
        return EXIT_DATA
    return EXIT_VALIDATION


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on usage errors; 0 for --help
        return EXIT_OK if e.code in (0, None) else EXIT_VALIDATION
    try:
        return _dispatch(args)
    except Exception as e:
        sys.stderr.write(f"error: {e}\n")
        return _exit_code_for(e)


if __name__ == "__main__":
    sys.exit(main())
