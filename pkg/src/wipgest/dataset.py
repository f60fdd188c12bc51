"""Frame streams -> labelled point-cloud samples.

A window of ``window_frames`` consecutive frames from the three devices is one
point cloud of ``window_frames * 3`` points (frame-major, devices in
``gestures.DEVICES`` order), each carrying the 12 raw channels.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .gestures import (
    ANGVEL,
    CHANNELS,
    LABELS,
    N_CHANNELS,
    N_CLASSES,
    N_DEVICES,
    NOMINAL_FRAME_MS,
    POS,
    SAMPLE_RATE,
    VEL,
    YAW_CHANNEL,
    label_index,
)
from .synthgen import Recording


@dataclass(frozen=True)
class WindowConfig:
    window_frames: int = 6
    step_frames: int = 3
    sample_rate: float = SAMPLE_RATE

    def __post_init__(self):
        if self.window_frames < 1:
            raise ValueError("window_frames must be >= 1")
        if not 1 <= self.step_frames <= self.window_frames:
            raise ValueError("step_frames must lie in [1, window_frames]")

    @property
    def n_points(self) -> int:
        return self.window_frames * N_DEVICES

    @property
    def duration_ms(self) -> float:
        """Sequence duration used in latency accounting (nominal 30 ms per frame)."""
        return self.window_frames * NOMINAL_FRAME_MS

    @classmethod
    def for_size(cls, window_frames: int) -> "WindowConfig":
        """Window of ``window_frames`` with a half-window step (at least one frame)."""
        return cls(window_frames=window_frames, step_frames=max(window_frames // 2, 1))


@dataclass
class PointCloudSample:
    points: np.ndarray  # (n_points, 12)
    label: int
    subject_id: str = ""
    start_frame: int = 0

    @property
    def label_name(self) -> str:
        return LABELS[self.label]


@dataclass
class SampleSet:
    """Column-oriented batch of point-cloud samples.

    ``labels`` is None for unlabelled target-domain data.
    """

    points: np.ndarray  # (n, n_points, 12)
    labels: np.ndarray | None
    subject_ids: np.ndarray
    start_frames: np.ndarray

    def __len__(self) -> int:
        return self.points.shape[0]

    def __getitem__(self, i) -> PointCloudSample:
        label = -1 if self.labels is None else int(self.labels[i])
        return PointCloudSample(self.points[i], label, str(self.subject_ids[i]), int(self.start_frames[i]))

    def subset(self, index) -> "SampleSet":
        index = np.asarray(index)
        return SampleSet(
            self.points[index],
            None if self.labels is None else self.labels[index],
            self.subject_ids[index],
            self.start_frames[index],
        )

    def without_labels(self) -> "SampleSet":
        return SampleSet(self.points, None, self.subject_ids, self.start_frames)

    def with_points(self, points) -> "SampleSet":
        return SampleSet(points, self.labels, self.subject_ids, self.start_frames)

    @staticmethod
    def concatenate(sets: Sequence["SampleSet"]) -> "SampleSet":
        sets = list(sets)
        if not sets:
            raise ValueError("nothing to concatenate")
        labels = None
        if all(s.labels is not None for s in sets):
            labels = np.concatenate([s.labels for s in sets])
        return SampleSet(
            np.concatenate([s.points for s in sets]),
            labels,
            np.concatenate([s.subject_ids for s in sets]),
            np.concatenate([s.start_frames for s in sets]),
        )


# ---------------------------------------------------------------------------
# segmentation and labels
# ---------------------------------------------------------------------------


def window_starts(n_frames: int, config: WindowConfig) -> np.ndarray:
    if n_frames < config.window_frames:
        raise ValueError(
            f"recording has {n_frames} frames, shorter than one window ({config.window_frames})"
        )
    count = (n_frames - config.window_frames) // config.step_frames + 1
    return np.arange(count, dtype=np.int64) * config.step_frames


def majority_label(window_labels):
    """Most frequent label; among tied labels the one seen last in the window wins."""
    window_labels = list(window_labels)
    if not window_labels:
        raise ValueError("majority_label of an empty window")
    counts: dict = {}
    for lab in window_labels:
        counts[lab] = counts.get(lab, 0) + 1
    top = max(counts.values())
    for lab in reversed(window_labels):
        if counts[lab] == top:
            return lab


def segment_windows(recording: Recording, config: WindowConfig = WindowConfig()) -> SampleSet:
    """Unnormalized point clouds for every sliding window of ``recording``."""
    frames = np.asarray(recording.frames)
    starts = window_starts(frames.shape[0], config)
    idx = starts[:, None] + np.arange(config.window_frames)[None, :]
    points = frames[idx].reshape(len(starts), config.n_points, N_CHANNELS)
    labels = kernels.majority_vote(np.asarray(recording.labels)[idx], N_CLASSES)
    subject = np.full(len(starts), recording.subject_id, dtype=object)
    return SampleSet(points.astype(np.float64), labels, subject, starts)


def window_from_frames(frames: np.ndarray) -> np.ndarray:
    """(window_frames, 3, 12) raw frames -> (window_frames * 3, 12) point cloud."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 3 or frames.shape[1:] != (N_DEVICES, N_CHANNELS):
        raise ValueError(f"expected (frames, {N_DEVICES}, {N_CHANNELS}), got {frames.shape}")
    return frames.reshape(-1, N_CHANNELS)


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NormalizationStats:
    minimum: np.ndarray
    maximum: np.ndarray
    channels: tuple[str, ...] = CHANNELS

    def __post_init__(self):
        lo = np.asarray(self.minimum, dtype=np.float64)
        hi = np.asarray(self.maximum, dtype=np.float64)
        if lo.shape != (N_CHANNELS,) or hi.shape != (N_CHANNELS,):
            raise ValueError("normalization stats need one min and one max per channel")
        if np.any(lo > hi):
            raise ValueError("min exceeds max for some channel")
        object.__setattr__(self, "minimum", lo)
        object.__setattr__(self, "maximum", hi)

    @property
    def span(self) -> np.ndarray:
        return self.maximum - self.minimum

    def to_dict(self) -> dict:
        return {
            "channels": list(self.channels),
            "min": [float(v) for v in self.minimum],
            "max": [float(v) for v in self.maximum],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationStats":
        return cls(np.asarray(d["min"], dtype=np.float64), np.asarray(d["max"], dtype=np.float64), tuple(d["channels"]))


def compute_norm_stats(samples) -> NormalizationStats:
    points = samples.points if isinstance(samples, SampleSet) else np.asarray(samples)
    if points.size == 0:
        raise ValueError("cannot compute normalization stats from no samples")
    flat = points.reshape(-1, N_CHANNELS)
    return NormalizationStats(flat.min(axis=0), flat.max(axis=0))


def normalize(points, stats: NormalizationStats) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    span = stats.span
    degenerate = span == 0
    out = (points - stats.minimum) / np.where(degenerate, 1.0, span)
    out = np.clip(out, 0.0, 1.0)
    out[..., degenerate] = 0.5
    return out


def denormalize(points, stats: NormalizationStats) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    return points * stats.span + stats.minimum


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AugmentConfig:
    jitter_sigma: float = 0.01
    jitter_clip: float = 0.05
    max_yaw_deg: float = 15.0
    max_shift: float = 0.1
    scale_low: float = 0.8
    scale_high: float = 1.25


def yaw_matrix(theta_deg: float) -> np.ndarray:
    """Right-handed rotation about the vertical (y) axis."""
    t = math.radians(theta_deg)
    c, s = math.cos(t), math.sin(t)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def apply_augmentation(points, theta_deg=0.0, shift=(0.0, 0.0, 0.0), scale=1.0, jitter=None) -> np.ndarray:
    """Deterministic augmentation of one (n_points, 12) cloud in raw units.

    Order: additive ``jitter`` on all channels, yaw rotation of position,
    velocity and angular-velocity vectors (the yaw channel is offset by the
    same angle), positional shift, then scaling of position and velocity.
    """
    out = np.array(points, dtype=np.float64, copy=True)
    if jitter is not None:
        out += jitter
    if theta_deg:
        rot = yaw_matrix(theta_deg)
        out[:, POS] = out[:, POS] @ rot.T
        out[:, VEL] = out[:, VEL] @ rot.T
        out[:, ANGVEL] = out[:, ANGVEL] @ rot.T
        out[:, YAW_CHANNEL] = (out[:, YAW_CHANNEL] + theta_deg + 180.0) % 360.0 - 180.0
    out[:, POS] += np.asarray(shift, dtype=np.float64)
    if scale != 1.0:
        out[:, POS] *= scale
        out[:, VEL] *= scale
    return out


def _yaw_matrices(theta_deg: np.ndarray) -> np.ndarray:
    t = np.radians(theta_deg)
    c, s = np.cos(t), np.sin(t)
    rot = np.zeros((len(t), 3, 3))
    rot[:, 0, 0] = c
    rot[:, 0, 2] = s
    rot[:, 1, 1] = 1.0
    rot[:, 2, 0] = -s
    rot[:, 2, 2] = c
    return rot


def augment(points, seed, config: AugmentConfig = AugmentConfig(), channel_range=None) -> np.ndarray:
    """Random jitter / yaw / shift / scale of one cloud or a batch of clouds.

    Each cloud draws its own yaw, shift and scale. ``channel_range``
    (per-channel max - min) converts the jitter magnitude from normalized
    units to raw units; without it jitter is in raw units.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    points = np.asarray(points, dtype=np.float64)
    single = points.ndim == 2
    out = np.array(points[None] if single else points, dtype=np.float64, copy=True)
    b = out.shape[0]
    unit = np.ones(N_CHANNELS) if channel_range is None else np.asarray(channel_range, dtype=np.float64)

    if config.jitter_sigma > 0:
        out += np.clip(rng.normal(0.0, config.jitter_sigma, out.shape), -config.jitter_clip, config.jitter_clip) * unit
    theta = rng.uniform(-config.max_yaw_deg, config.max_yaw_deg, b) if config.max_yaw_deg > 0 else np.zeros(b)
    shift = rng.uniform(-config.max_shift, config.max_shift, (b, 3)) if config.max_shift > 0 else np.zeros((b, 3))
    if config.scale_high > config.scale_low:
        scale = rng.uniform(config.scale_low, config.scale_high, b)
    else:
        scale = np.full(b, config.scale_low)

    if config.max_yaw_deg > 0:
        rot = _yaw_matrices(theta)
        for group in (POS, VEL, ANGVEL):
            out[..., group] = np.einsum("bij,bpj->bpi", rot, out[..., group])
        out[..., YAW_CHANNEL] = (out[..., YAW_CHANNEL] + theta[:, None] + 180.0) % 360.0 - 180.0
    out[..., POS] += shift[:, None, :]
    out[..., POS] *= scale[:, None, None]
    out[..., VEL] *= scale[:, None, None]
    return out[0] if single else out


# ---------------------------------------------------------------------------
# leave-one-subject-out splits
# ---------------------------------------------------------------------------


@dataclass
class DomainSplit:
    target_subject: str
    source: SampleSet
    target_train: SampleSet  # labels stripped
    target_test: SampleSet
    config: WindowConfig = field(default_factory=WindowConfig)


def _label_runs(labels: np.ndarray) -> list[tuple[int, int]]:
    edges = np.flatnonzero(np.diff(labels) != 0) + 1
    bounds = np.concatenate(([0], edges, [len(labels)]))
    return [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]


def _apportion(weights: np.ndarray, total: int) -> np.ndarray:
    """Largest-remainder rounding of ``total`` proportionally to ``weights``."""
    if weights.sum() == 0:
        return np.zeros_like(weights, dtype=np.int64)
    exact = weights / weights.sum() * total
    base = np.floor(exact).astype(np.int64)
    short = total - base.sum()
    order = np.argsort(-(exact - base), kind="stable")
    base[order[:short]] += 1
    return np.minimum(base, weights.astype(np.int64))


def contiguous_target_split(
    windows: SampleSet, config: WindowConfig, train_fraction: float = 0.8, seed: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Index arrays (train, test) splitting each label run into two contiguous blocks.

    Windows overlapping a block on the other side are dropped, and consecutive
    runs alternate block order so that neighbouring runs touch on equal tags.
    The train share of the kept windows is exact up to one window.
    """
    gap = math.ceil(config.window_frames / config.step_frames) - 1
    runs = _label_runs(windows.labels)
    # the seed only picks which block leads the first run
    tag = "test" if seed % 2 else "train"

    plans = []  # (lo, hi, first_tag, splittable)
    for lo, hi in runs:
        n = hi - lo
        splittable = n > gap
        plans.append((lo, hi, tag, splittable))
        if splittable:
            tag = "test" if tag == "train" else "train"

    kept = np.array([(hi - lo) - (gap if s else 0) for lo, hi, _, s in plans], dtype=np.int64)
    total_train = int(round(train_fraction * kept.sum()))
    fixed_train = sum(k for k, (_, _, t, s) in zip(kept, plans) if not s and t == "train")
    split_mask = np.array([s for *_, s in plans])
    quota = max(total_train - fixed_train, 0)
    alloc = np.zeros(len(plans), dtype=np.int64)
    alloc[split_mask] = _apportion(kept[split_mask].astype(np.float64), quota)

    train, test = [], []
    for (lo, hi, first, s), k, a in zip(plans, kept, alloc):
        idx = np.arange(lo, hi)
        if not s:
            (train if first == "train" else test).extend(idx)
            continue
        n_train, n_test = int(a), int(k - a)
        if first == "train":
            train.extend(idx[:n_train])
            test.extend(idx[n_train + gap :])
        else:
            test.extend(idx[:n_test])
            train.extend(idx[n_test + gap :])
    return np.asarray(train, dtype=np.int64), np.asarray(test, dtype=np.int64)


def make_loso_split(
    recordings: Sequence[Recording],
    target_subject: str,
    config: WindowConfig = WindowConfig(),
    seed: int = 0,
    train_fraction: float = 0.8,
) -> DomainSplit:
    windows = {}
    for r in recordings:
        windows.setdefault(r.subject_id, []).append(segment_windows(r, config))
    sets = {s: SampleSet.concatenate(parts) for s, parts in windows.items()}
    return split_from_sets(sets, target_subject, config, seed, train_fraction)


def split_from_sets(
    sets: dict[str, SampleSet],
    target_subject: str,
    config: WindowConfig = WindowConfig(),
    seed: int = 0,
    train_fraction: float = 0.8,
) -> DomainSplit:
    """Leave-one-subject-out split over per-subject window sets (in recording order)."""
    if len(sets) < 2:
        raise ValueError("leave-one-subject-out needs recordings from at least 2 subjects")
    if target_subject not in sets:
        raise ValueError(f"unknown target subject {target_subject!r}; have {sorted(sets)}")
    source = SampleSet.concatenate([sets[s] for s in sorted(sets) if s != target_subject])
    target = sets[target_subject]
    train_idx, test_idx = contiguous_target_split(target, config, train_fraction, seed)
    return DomainSplit(
        target_subject=target_subject,
        source=source,
        target_train=target.subset(train_idx).without_labels(),
        target_test=target.subset(test_idx),
        config=config,
    )


# ---------------------------------------------------------------------------
# dataset archive
# ---------------------------------------------------------------------------


def write_archive(directory, sample_sets: dict[str, SampleSet], stats: NormalizationStats, config: WindowConfig):
    """Write raw windows per subject plus ``stats.json`` and ``meta.json``.

    Each subject file is CSV: ``n_points * 12`` floats row-major, then the
    label index.
    """
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    (root / "stats.json").write_text(json.dumps(stats.to_dict(), indent=2), encoding="utf-8")
    meta = {"window": asdict(config), "labels": list(LABELS), "subjects": sorted(sample_sets)}
    (root / "meta.json").write_text(json.dumps(meta, indent=2), encoding="utf-8")
    written = [root / "stats.json", root / "meta.json"]
    for subject, samples in sorted(sample_sets.items()):
        path = root / f"{subject}.samples.csv"
        flat = samples.points.reshape(len(samples), -1)
        lines = [",".join(repr(float(v)) for v in row) + f",{int(lab)}" for row, lab in zip(flat, samples.labels)]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        written.append(path)
    return written


def read_archive(directory) -> tuple[dict[str, SampleSet], NormalizationStats, WindowConfig]:
    root = Path(directory)
    stats = NormalizationStats.from_dict(json.loads((root / "stats.json").read_text(encoding="utf-8")))
    meta = json.loads((root / "meta.json").read_text(encoding="utf-8"))
    if list(meta["labels"]) != list(LABELS):
        raise ValueError("archive label vocabulary differs from this build")
    config = WindowConfig(**meta["window"])
    sets = {}
    for subject in meta["subjects"]:
        data = np.loadtxt(root / f"{subject}.samples.csv", delimiter=",", ndmin=2)
        points = data[:, :-1].reshape(-1, config.n_points, N_CHANNELS)
        labels = data[:, -1].astype(np.int64)
        starts = np.arange(len(labels), dtype=np.int64) * config.step_frames
        sets[subject] = SampleSet(points, labels, np.full(len(labels), subject, dtype=object), starts)
    return sets, stats, config


def label_names(indices) -> list[str]:
    return [LABELS[int(i)] for i in indices]


def label_indices(names) -> np.ndarray:
    return np.asarray([label_index(n) for n in names], dtype=np.int64)
