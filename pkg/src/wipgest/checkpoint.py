"""Self-describing checkpoint archive (numpy ``.npz``, no pickle).

Layout: one ``meta`` entry holding UTF-8 JSON (format name, version, model
config, label vocabulary, normalization stats, window config, free-form
training info) and one ``state/<name>`` array per tensor of the model's
state dict.
"""
from __future__ import annotations

import hashlib
import io
import json
import os
import tempfile
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .dataset import NormalizationStats, WindowConfig
from .gestures import LABELS
from .model import ModelConfig, PCTMCD

FORMAT = "wipgest-checkpoint"
VERSION = 1


@dataclass
class Checkpoint:
    model: PCTMCD
    stats: NormalizationStats
    window: WindowConfig = field(default_factory=WindowConfig)
    info: dict = field(default_factory=dict)
    labels: tuple[str, ...] = LABELS


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    state = ckpt.model.state_dict()
    meta = {
        "format": FORMAT,
        "version": VERSION,
        "model_config": ckpt.model.config.to_dict(),
        "labels": list(ckpt.labels),
        "stats": ckpt.stats.to_dict(),
        "window": asdict(ckpt.window),
        "info": ckpt.info,
        "tensors": sorted(state),
    }
    arrays = {f"state/{k}": v.detach().cpu().numpy() for k, v in state.items()}
    arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    atomic_write_bytes(path, _npz_bytes(arrays))


def _npz_bytes(arrays: dict) -> bytes:
    """``np.savez`` layout with fixed member timestamps, so equal weights give equal bytes."""
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            member = io.BytesIO()
            np.lib.format.write_array(member, np.ascontiguousarray(arrays[name]), allow_pickle=False)
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, member.getvalue())
    return buf.getvalue()


def load_checkpoint(path) -> Checkpoint:
    with np.load(path, allow_pickle=False) as data:
        if "meta" not in data.files:
            raise ValueError(f"{path}: not a checkpoint (no meta entry)")
        meta = json.loads(bytes(data["meta"]).decode("utf-8"))
        if meta.get("format") != FORMAT:
            raise ValueError(f"{path}: unknown format {meta.get('format')!r}")
        if meta.get("version") != VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {meta.get('version')}")
        state = {k[len("state/") :]: torch.from_numpy(data[k].copy()) for k in data.files if k.startswith("state/")}
    if tuple(meta["labels"]) != LABELS:
        raise ValueError(f"{path}: label vocabulary differs from this build")
    model = PCTMCD(ModelConfig.from_dict(meta["model_config"]))
    model.load_state_dict(state)
    model.eval()
    return Checkpoint(
        model=model,
        stats=NormalizationStats.from_dict(meta["stats"]),
        window=WindowConfig(**meta["window"]),
        info=meta.get("info", {}),
        labels=tuple(meta["labels"]),
    )


def file_digest(path, length: int | None = None) -> str:
    h = hashlib.sha256(Path(path).read_bytes()).hexdigest()
    return h if length is None else h[:length]
