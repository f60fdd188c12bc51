"""Accuracy metrics, confusion matrices, latency and the LOSO / window-size studies."""
from __future__ import annotations

import csv
import io
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch

from . import kernels
from .dataset import (
    DomainSplit,
    NormalizationStats,
    SampleSet,
    WindowConfig,
    compute_norm_stats,
    make_loso_split,
    normalize,
)
from .gestures import LABELS, N_CLASSES
from .model import ModelConfig, PCTMCD, evaluation, predict
from .synthgen import Recording
from .trainer import TrainConfig, fit


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # rows = true class, columns = predicted class

    def normalized(self) -> np.ndarray:
        """Row-normalized matrix; rows without samples stay zero."""
        rows = self.counts.sum(axis=1, keepdims=True)
        return np.divide(self.counts, rows, out=np.zeros(self.counts.shape), where=rows > 0)

    def to_list(self) -> list[list[int]]:
        return self.counts.astype(int).tolist()


def confusion_matrix(predictions, labels, n_classes: int = N_CLASSES) -> ConfusionMatrix:
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.shape != labels.shape:
        raise ValueError(f"{len(predictions)} predictions for {len(labels)} labels")
    if predictions.size == 0:
        raise ValueError("confusion matrix of zero samples")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (labels, predictions), 1)
    return ConfusionMatrix(counts)


@dataclass
class MetricsReport:
    per_class_accuracy: list  # float, or None for classes absent from the test data
    mean_class_accuracy: float
    overall_accuracy: float
    support: list[int]
    absent_classes: list[str] = field(default_factory=list)
    confusion: list[list[int]] | None = None
    latency_ms: dict | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def metrics(confusion: ConfusionMatrix) -> MetricsReport:
    counts = confusion.counts
    total = counts.sum()
    if total == 0:
        raise ValueError("metrics of an all-zero confusion matrix")
    support = counts.sum(axis=1)
    per_class = [float(counts[i, i] / s) if s > 0 else None for i, s in enumerate(support)]
    present = [a for a in per_class if a is not None]
    return MetricsReport(
        per_class_accuracy=per_class,
        mean_class_accuracy=float(np.mean(present)),
        overall_accuracy=float(np.trace(counts) / total),
        support=[int(s) for s in support],
        absent_classes=[LABELS[i] for i, s in enumerate(support) if s == 0],
        confusion=confusion.to_list(),
    )


def evaluate(model: PCTMCD, samples: SampleSet, stats: NormalizationStats) -> tuple[MetricsReport, np.ndarray]:
    pred, _ = predict(normalize(samples.points, stats), model)
    return metrics(confusion_matrix(pred, samples.labels)), pred


def nearest_neighbor_predict(reference: SampleSet, query: SampleSet, stats: NormalizationStats) -> np.ndarray:
    """Brute-force 1-NN on flattened normalized windows."""
    train = normalize(reference.points, stats).reshape(len(reference), -1)
    test = normalize(query.points, stats).reshape(len(query), -1)
    return reference.labels[kernels.nearest_neighbor(train, test)]


def nearest_neighbor_baseline(split: DomainSplit, stats: NormalizationStats | None = None) -> MetricsReport:
    stats = stats if stats is not None else compute_norm_stats(split.source)
    pred = nearest_neighbor_predict(split.source, split.target_test, stats)
    return metrics(confusion_matrix(pred, split.target_test.labels))


# ---------------------------------------------------------------------------
# latency
# ---------------------------------------------------------------------------


@dataclass
class LatencyReport:
    window_duration_ms: float
    inference_median_ms: float
    inference_p95_ms: float
    total_ms: float
    n_trials: int

    def to_dict(self) -> dict:
        return asdict(self)


def latency_benchmark(
    model: PCTMCD,
    n_trials: int = 200,
    window: WindowConfig = WindowConfig(),
    stats: NormalizationStats | None = None,
    seed: int = 0,
) -> LatencyReport:
    """Wall-clock single-sample inference (normalization included when ``stats`` is given)."""
    rng = np.random.default_rng(seed)
    raw = rng.random((n_trials + 5, window.n_points, model.config.input_dim))
    times = []
    with evaluation(model):
        for i, cloud in enumerate(raw):
            t0 = time.perf_counter()
            x = normalize(cloud, stats) if stats is not None else cloud
            model.probabilities(torch.as_tensor(x[None], dtype=torch.float32))
            elapsed = (time.perf_counter() - t0) * 1000.0
            if i >= 5:  # warm-up
                times.append(elapsed)
    median = float(np.median(times))
    return LatencyReport(
        window_duration_ms=window.duration_ms,
        inference_median_ms=median,
        inference_p95_ms=float(np.percentile(times, 95)),
        total_ms=window.duration_ms + median,
        n_trials=n_trials,
    )


# ---------------------------------------------------------------------------
# leave-one-subject-out suite
# ---------------------------------------------------------------------------


@dataclass
class SubjectResult:
    subject: str
    metrics: MetricsReport
    nn_metrics: MetricsReport | None = None
    n_source: int = 0
    n_target_train: int = 0
    n_target_test: int = 0


@dataclass
class LosoReport:
    rows: list[SubjectResult]
    window: WindowConfig
    mode: str

    @property
    def average(self) -> dict:
        """Column means over subjects (classes absent for a subject are skipped)."""
        per_class = []
        for c in range(N_CLASSES):
            vals = [r.metrics.per_class_accuracy[c] for r in self.rows if r.metrics.per_class_accuracy[c] is not None]
            per_class.append(float(np.mean(vals)) if vals else None)
        out = {
            "per_class_accuracy": per_class,
            "mean_class_accuracy": float(np.mean([r.metrics.mean_class_accuracy for r in self.rows])),
            "overall_accuracy": float(np.mean([r.metrics.overall_accuracy for r in self.rows])),
        }
        if all(r.nn_metrics is not None for r in self.rows):
            out["nn_mean_class_accuracy"] = float(np.mean([r.nn_metrics.mean_class_accuracy for r in self.rows]))
            out["nn_overall_accuracy"] = float(np.mean([r.nn_metrics.overall_accuracy for r in self.rows]))
        return out

    def to_dict(self) -> dict:
        return {
            "kind": "loso",
            "mode": self.mode,
            "window": asdict(self.window),
            "labels": list(LABELS),
            "rows": [
                {
                    "subject": r.subject,
                    **r.metrics.to_dict(),
                    "nn": None if r.nn_metrics is None else r.nn_metrics.to_dict(),
                    "n_source": r.n_source,
                    "n_target_train": r.n_target_train,
                    "n_target_test": r.n_target_test,
                }
                for r in self.rows
            ],
            "average": self.average,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["subject", *LABELS, "mean", "overall"])

        def fmt(v):
            return "" if v is None else f"{100 * v:.1f}"

        for r in self.rows:
            m = r.metrics
            writer.writerow([r.subject, *map(fmt, m.per_class_accuracy), fmt(m.mean_class_accuracy), fmt(m.overall_accuracy)])
        avg = self.average
        writer.writerow(
            ["average", *map(fmt, avg["per_class_accuracy"]), fmt(avg["mean_class_accuracy"]), fmt(avg["overall_accuracy"])]
        )
        return buf.getvalue()


def _run_fold(args) -> SubjectResult:
    recordings, subject, window, model_config, train_config, with_baseline = args
    split = make_loso_split(recordings, subject, window, seed=train_config.seed)
    result = fit(split, model_config, train_config)
    report, _ = evaluate(result.model, split.target_test, result.stats)
    nn_report = nearest_neighbor_baseline(split, result.stats) if with_baseline else None
    return SubjectResult(subject, report, nn_report, len(split.source), len(split.target_train), len(split.target_test))


def loso_suite(
    recordings: Sequence[Recording],
    window: WindowConfig = WindowConfig(),
    model_config: ModelConfig = ModelConfig(),
    train_config: TrainConfig = TrainConfig(),
    subjects: Sequence[str] | None = None,
    with_baseline: bool = True,
    workers: int = 1,
    on_fold: Callable[[SubjectResult], None] | None = None,
) -> LosoReport:
    """Train one model per held-out subject and evaluate it on that subject's test block."""
    all_subjects = [r.subject_id for r in recordings]
    if len(set(all_subjects)) < 2:
        raise ValueError("leave-one-subject-out needs at least 2 subjects")
    subjects = list(subjects) if subjects is not None else all_subjects
    jobs = [(list(recordings), s, window, model_config, train_config, with_baseline) for s in subjects]
    rows = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for row in pool.map(_run_fold, jobs):
                rows.append(row)
                if on_fold:
                    on_fold(row)
    else:
        for job in jobs:
            row = _run_fold(job)
            rows.append(row)
            if on_fold:
                on_fold(row)
    return LosoReport(rows, window, train_config.mode)


# ---------------------------------------------------------------------------
# window-size study
# ---------------------------------------------------------------------------


@dataclass
class WindowStudyRow:
    size: int
    mean_class_accuracy: float
    overall_accuracy: float
    duration_ms: float


def window_size_study(
    recordings: Sequence[Recording],
    sizes: Sequence[int] = (3, 6, 10, 16),
    model_config: ModelConfig = ModelConfig(),
    train_config: TrainConfig = TrainConfig(),
    subjects: Sequence[str] | None = None,
    workers: int = 1,
    reports: dict | None = None,
) -> list[WindowStudyRow]:
    """LOSO accuracy per window size (step = half the window, at least one frame).

    ``reports`` may carry already computed :class:`LosoReport` objects keyed
    by size; missing sizes are trained and stored back into it.
    """
    rows = []
    reports = reports if reports is not None else {}
    for size in sizes:
        if size < 1:
            raise ValueError("window sizes must be >= 1")
        window = WindowConfig.for_size(size)
        if size not in reports:
            reports[size] = loso_suite(
                recordings, window, model_config, train_config, subjects, with_baseline=False, workers=workers
            )
        avg = reports[size].average
        rows.append(WindowStudyRow(size, avg["mean_class_accuracy"], avg["overall_accuracy"], window.duration_ms))
    return rows


def window_study_to_dict(rows: Sequence[WindowStudyRow]) -> dict:
    return {"kind": "window_study", "rows": [asdict(r) for r in rows]}


def window_study_to_csv(rows: Sequence[WindowStudyRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["size", "mean_class_accuracy", "overall_accuracy", "duration_ms"])
    for r in rows:
        writer.writerow([r.size, f"{r.mean_class_accuracy:.6f}", f"{r.overall_accuracy:.6f}", f"{r.duration_ms:.1f}"])
    return buf.getvalue()
