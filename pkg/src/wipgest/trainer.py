"""Classifier-discrepancy adversarial training.

Per minibatch (default) the three updates run in order:

A. generator + both classifiers minimise source cross-entropy;
B. generator frozen, classifiers minimise source cross-entropy minus the
   target discrepancy;
C. classifiers frozen, generator minimises the target discrepancy
   (``generator_steps_per_batch`` times).

``mode="source-only"`` runs update A alone.
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterator

import numpy as np
import torch
import torch.nn.functional as F

from .dataset import AugmentConfig, DomainSplit, NormalizationStats, augment, compute_norm_stats, normalize
from .model import ModelConfig, PCTMCD, predict

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    weight_decay: float = 0.0001
    batch_size: int = 64
    epochs: int = 250
    optimizer: str = "adam"
    lr_schedule: str = "none"  # or "cosine"
    generator_steps_per_batch: int = 1
    seed: int = 0
    mode: str = "mcd"  # or "source-only"
    schedule: str = "per-batch"  # or "per-epoch"
    augment: bool = True

    def __post_init__(self):
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ValueError("learning_rate and weight_decay must be non-negative")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (batch normalisation)")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.generator_steps_per_batch < 1:
            raise ValueError("generator_steps_per_batch must be >= 1")
        if self.optimizer != "adam":
            raise ValueError(f"unsupported optimizer {self.optimizer!r}")
        if self.lr_schedule not in ("none", "cosine"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")
        if self.mode not in ("mcd", "source-only"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.schedule not in ("per-batch", "per-epoch"):
            raise ValueError(f"unknown schedule {self.schedule!r}")

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def _check_labels(labels: torch.Tensor, n_classes: int) -> None:
    if labels.numel() and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes})")


def classification_loss(probabilities: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean negative log-probability of the true class."""
    labels = torch.as_tensor(labels, dtype=torch.long)
    _check_labels(labels, probabilities.shape[-1])
    picked = probabilities.gather(1, labels.view(-1, 1)).squeeze(1)
    return -torch.log(picked.clamp_min(torch.finfo(probabilities.dtype).tiny)).mean()


def cross_entropy(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """``classification_loss(softmax(logits), labels)`` computed stably."""
    labels = torch.as_tensor(labels, dtype=torch.long)
    _check_labels(labels, logits.shape[-1])
    return F.cross_entropy(logits, labels)


def discrepancy_loss(p1: torch.Tensor, p2: torch.Tensor) -> torch.Tensor:
    """Mean absolute difference over batch and classes."""
    if p1.shape != p2.shape:
        raise ValueError(f"shape mismatch {tuple(p1.shape)} vs {tuple(p2.shape)}")
    return (p1 - p2).abs().mean()


def source_loss(logits1, logits2, labels):
    return cross_entropy(logits1, labels) + cross_entropy(logits2, labels)


def target_discrepancy(logits1, logits2):
    return discrepancy_loss(torch.softmax(logits1, dim=-1), torch.softmax(logits2, dim=-1))


# ---------------------------------------------------------------------------
# the three updates
# ---------------------------------------------------------------------------


class MCDTrainer:
    """Owns the model's two optimizers and applies updates A, B, C."""

    def __init__(self, model: PCTMCD, config: TrainConfig = TrainConfig()):
        self.model = model
        self.config = config
        self.opt_g = torch.optim.AdamW(
            model.generator.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay
        )
        self.opt_f = torch.optim.AdamW(
            model.classifier_parameters(), lr=config.learning_rate, weight_decay=config.weight_decay
        )
        self.generator_updates = 0
        self.classifier_updates = 0

    def _zero(self):
        self.opt_g.zero_grad(set_to_none=True)
        self.opt_f.zero_grad(set_to_none=True)

    def step_a(self, xs: torch.Tensor, ys: torch.Tensor) -> float:
        self.model.train()
        self._zero()
        l1, l2 = self.model(xs)
        loss = source_loss(l1, l2, ys)
        loss.backward()
        self.opt_g.step()
        self.opt_f.step()
        self.generator_updates += 1
        self.classifier_updates += 1
        self._zero()
        return float(loss.detach())

    def step_b(self, xs: torch.Tensor, ys: torch.Tensor, xt: torch.Tensor, with_classification: bool = True) -> float:
        self.model.train()
        self._zero()
        with torch.no_grad():
            fs = self.model.generator(xs) if with_classification else None
            ft = self.model.generator(xt)
        m = self.model
        lt1, lt2 = m.classifier1(ft), m.classifier2(ft)
        disc = target_discrepancy(lt1, lt2)
        loss = -disc
        if with_classification:
            loss = source_loss(m.classifier1(fs), m.classifier2(fs), ys) + loss
        loss.backward()
        self.opt_f.step()
        self.classifier_updates += 1
        self._zero()
        return float(disc.detach())

    def step_c(self, xt: torch.Tensor) -> float:
        self.model.train()
        disc = None
        for _ in range(self.config.generator_steps_per_batch):
            self._zero()
            lt1, lt2 = self.model(xt)
            disc = target_discrepancy(lt1, lt2)
            disc.backward()
            self.opt_g.step()
            self.generator_updates += 1
        self._zero()
        return float(disc.detach())

    def schedulers(self):
        if self.config.lr_schedule != "cosine":
            return []
        t_max = max(self.config.epochs, 1)
        return [
            torch.optim.lr_scheduler.CosineAnnealingLR(self.opt_g, T_max=t_max),
            torch.optim.lr_scheduler.CosineAnnealingLR(self.opt_f, T_max=t_max),
        ]


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------


@dataclass
class EpochReport:
    epoch: int
    classification_loss: float
    discrepancy_loss: float | None = None


@dataclass
class FitResult:
    model: PCTMCD
    stats: NormalizationStats
    history: list[dict] = field(default_factory=list)
    epochs: list[EpochReport] = field(default_factory=list)
    model_config: ModelConfig = field(default_factory=ModelConfig)
    train_config: TrainConfig = field(default_factory=TrainConfig)

    def history_csv(self) -> str:
        columns = ["epoch", "step", "class_loss"]
        if self.train_config.mode == "mcd":
            columns.append("disc_loss")
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(columns)
        for row in self.history:
            writer.writerow([row["epoch"], row["step"]] + [repr(row[c]) for c in columns[2:]])
        return buf.getvalue()


def _batches(n: int, size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    out = [order[lo : lo + size] for lo in range(0, n, size)]
    return [b for b in out if len(b) >= 2]


def _cycle(n: int, size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    """Endless reshuffled stream of index batches of exactly ``size`` (or n if smaller)."""
    size = min(size, n)
    pool = np.empty(0, dtype=np.int64)
    while True:
        while len(pool) < size:
            pool = np.concatenate([pool, rng.permutation(n)])
        yield pool[:size]
        pool = pool[size:]


def fit(
    split: DomainSplit,
    model_config: ModelConfig = ModelConfig(),
    train_config: TrainConfig = TrainConfig(),
    augment_config: AugmentConfig = AugmentConfig(),
    on_epoch: Callable[[EpochReport], None] | None = None,
) -> FitResult:
    """Train a model on ``split``; deterministic for a fixed ``train_config.seed``."""
    if len(split.source) == 0:
        raise ValueError("empty source domain")
    mcd = train_config.mode == "mcd"
    if mcd and len(split.target_train) < 2:
        raise ValueError("discrepancy training needs at least 2 unlabelled target samples")

    seed = train_config.seed
    torch.manual_seed(seed)
    rng = np.random.default_rng([seed, 0xA11])
    aug_rng = np.random.default_rng([seed, 0xA06])

    stats = compute_norm_stats(split.source)
    source_raw = split.source.points
    source_norm = torch.as_tensor(normalize(source_raw, stats), dtype=torch.float32)
    source_y = torch.as_tensor(split.source.labels, dtype=torch.long)
    target_norm = torch.as_tensor(normalize(split.target_train.points, stats), dtype=torch.float32)

    model = PCTMCD(model_config, seed=seed)
    trainer = MCDTrainer(model, train_config)
    schedulers = trainer.schedulers()
    target_stream = _cycle(len(target_norm), train_config.batch_size, rng) if mcd else None
    result = FitResult(model, stats, model_config=model_config, train_config=train_config)

    def source_batch(idx):
        if train_config.augment:
            pts = augment(source_raw[idx], aug_rng, augment_config, channel_range=stats.span)
            xs = torch.as_tensor(normalize(pts, stats), dtype=torch.float32)
        else:
            xs = source_norm[idx]
        return xs, source_y[idx]

    for epoch in range(train_config.epochs):
        batches = _batches(len(source_raw), train_config.batch_size, rng)
        rows = [{"epoch": epoch, "step": i} for i in range(len(batches))]
        if not mcd:
            for row, idx in zip(rows, batches):
                row["class_loss"] = trainer.step_a(*source_batch(idx))
        elif train_config.schedule == "per-batch":
            for row, idx in zip(rows, batches):
                xs, ys = source_batch(idx)
                xt = target_norm[next(target_stream)]
                row["class_loss"] = trainer.step_a(xs, ys)
                trainer.step_b(xs, ys, xt)
                row["disc_loss"] = trainer.step_c(xt)
        else:
            drawn = [(source_batch(idx), target_norm[next(target_stream)]) for idx in batches]
            for row, ((xs, ys), _) in zip(rows, drawn):
                row["class_loss"] = trainer.step_a(xs, ys)
            for (xs, ys), xt in drawn:
                trainer.step_b(xs, ys, xt)
            for row, (_, xt) in zip(rows, drawn):
                row["disc_loss"] = trainer.step_c(xt)
        for sched in schedulers:
            sched.step()

        result.history.extend(rows)
        report = EpochReport(
            epoch,
            float(np.mean([r["class_loss"] for r in rows])) if rows else float("nan"),
            float(np.mean([r["disc_loss"] for r in rows])) if mcd and rows else None,
        )
        result.epochs.append(report)
        log.debug("epoch %d class=%.4f disc=%s", epoch, report.classification_loss, report.discrepancy_loss)
        if on_epoch is not None:
            on_epoch(report)

    model.eval()
    return result


def accuracy(model: PCTMCD, points: np.ndarray, labels: np.ndarray, stats: NormalizationStats) -> float:
    pred, _ = predict(normalize(points, stats), model)
    return float(np.mean(pred == labels))

