"""Point-cloud transformer feature generator and the two discrepancy classifiers."""
from __future__ import annotations

import contextlib
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .gestures import N_CHANNELS, N_CLASSES


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = N_CHANNELS
    embed_dims: tuple[int, ...] = (64, 64)
    knn_k: int = 4
    neighbor_dim: int = 128
    attention_dim: int = 128
    n_attention: int = 4
    fused_dim: int = 1024
    classifier_dims: tuple[int, ...] = (512, 256)
    n_classes: int = N_CLASSES
    dropout_rate: float = 0.5
    attention: str = "offset"  # "offset" (dual normalisation) or "scaled" (softmax(QK^T/sqrt(d)))

    def __post_init__(self):
        object.__setattr__(self, "embed_dims", tuple(int(d) for d in self.embed_dims))
        object.__setattr__(self, "classifier_dims", tuple(int(d) for d in self.classifier_dims))
        if self.n_attention != 4:
            raise ValueError("the encoder uses exactly 4 attention blocks")
        if self.n_classes != N_CLASSES:
            raise ValueError(f"n_classes must be {N_CLASSES}")
        if self.knn_k < 1:
            raise ValueError("knn_k must be >= 1")
        if self.attention_dim % 4:
            raise ValueError("attention_dim must be divisible by 4")
        if self.attention not in ("offset", "scaled"):
            raise ValueError(f"unknown attention normalisation {self.attention!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")

    def check_points(self, n_points: int) -> None:
        if self.knn_k >= n_points:
            raise ValueError(f"knn_k={self.knn_k} needs more than {n_points} points per cloud")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["embed_dims"] = list(self.embed_dims)
        d["classifier_dims"] = list(self.classifier_dims)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


class PointLBR(nn.Module):
    """Shared per-point Linear -> BatchNorm -> ReLU over any leading shape."""

    def __init__(self, in_dim: int, out_dim: int):
        super().__init__()
        self.linear = nn.Linear(in_dim, out_dim, bias=False)
        self.norm = nn.BatchNorm1d(out_dim)

    def forward(self, x):
        shape = x.shape
        y = self.linear(x.reshape(-1, shape[-1]))
        return torch.relu(self.norm(y)).reshape(*shape[:-1], -1)


def knn_indices(coords: torch.Tensor, k: int) -> torch.Tensor:
    """(B, N, c) -> (B, N, k) indices of the k nearest other points; ties go to the lower index."""
    n = coords.shape[1]
    if k >= n:
        raise ValueError(f"k={k} must be smaller than the number of points ({n})")
    diff = coords.unsqueeze(2) - coords.unsqueeze(1)
    dist = (diff * diff).sum(-1)
    eye = torch.eye(n, dtype=torch.bool, device=coords.device)
    dist = dist.masked_fill(eye, float("inf"))
    return torch.sort(dist, dim=-1, stable=True).indices[..., :k]


def knn_group(features: torch.Tensor, k: int, coords: torch.Tensor | None = None) -> torch.Tensor:
    """Group every point with its k nearest neighbours.

    Returns (B, N, k, 2C): per neighbour ``(neighbour - centre, centre)``.
    Neighbours are searched in ``coords`` when given, otherwise in ``features``.
    Accepts unbatched (N, C) input as well.
    """
    unbatched = features.dim() == 2
    if unbatched:
        features = features.unsqueeze(0)
        coords = None if coords is None else coords.unsqueeze(0)
    idx = knn_indices(features.detach() if coords is None else coords, k)
    b, n, c = features.shape
    batch = torch.arange(b, device=features.device).view(b, 1, 1)
    neighbours = features[batch, idx]  # (B, N, k, C)
    centre = features.unsqueeze(2).expand(-1, -1, k, -1)
    out = torch.cat([neighbours - centre, centre], dim=-1)
    return out[0] if unbatched else out


class OffsetAttention(nn.Module):
    def __init__(self, dim: int, mode: str = "offset"):
        super().__init__()
        self.q = nn.Linear(dim, dim // 4, bias=False)
        self.k = nn.Linear(dim, dim // 4, bias=False)
        self.v = nn.Linear(dim, dim)
        self.lbr = PointLBR(dim, dim)
        self.mode = mode

    def weights(self, x: torch.Tensor) -> torch.Tensor:
        """(B, N, N) aggregation weights; row r mixes the value rows for output r."""
        energy = self.q(x) @ self.k(x).transpose(1, 2)
        if self.mode == "scaled":
            return torch.softmax(energy / self.q.out_features**0.5, dim=-1)
        attn = torch.softmax(energy, dim=-1)
        attn = attn / (1e-9 + attn.sum(dim=1, keepdim=True))
        return attn.transpose(1, 2)

    def forward(self, x):
        unbatched = x.dim() == 2
        if unbatched:
            x = x.unsqueeze(0)
        attended = self.weights(x) @ self.v(x)
        out = self.lbr(x - attended) + x
        return out[0] if unbatched else out


class Generator(nn.Module):
    """Point embedding, neighbour embedding, 4 offset-attention blocks, fusion, max-pool."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        dims = (config.input_dim,) + config.embed_dims
        self.embed = nn.Sequential(*[PointLBR(a, b) for a, b in zip(dims[:-1], dims[1:])])
        self.neighbor = PointLBR(2 * dims[-1], config.neighbor_dim)
        self.project = (
            nn.Identity()
            if config.neighbor_dim == config.attention_dim
            else PointLBR(config.neighbor_dim, config.attention_dim)
        )
        self.attention = nn.ModuleList(
            [OffsetAttention(config.attention_dim, config.attention) for _ in range(config.n_attention)]
        )
        self.fuse = PointLBR(config.n_attention * config.attention_dim, config.fused_dim)

    def point_features(self, x):
        """(B, N, 12) -> (B, N, fused_dim) before pooling."""
        if x.dim() != 3 or x.shape[-1] != self.config.input_dim:
            raise ValueError(f"expected (batch, points, {self.config.input_dim}) input, got {tuple(x.shape)}")
        self.config.check_points(x.shape[1])
        h = self.embed(x)
        grouped = knn_group(h, self.config.knn_k, coords=x)
        h = self.neighbor(grouped).max(dim=2).values
        h = self.project(h)
        stages = []
        for block in self.attention:
            h = block(h)
            stages.append(h)
        return self.fuse(torch.cat(stages, dim=-1))

    def forward(self, x):
        return self.point_features(x).max(dim=1).values


class Classifier(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        layers = []
        dims = (config.fused_dim,) + config.classifier_dims
        for a, b in zip(dims[:-1], dims[1:]):
            layers += [nn.Linear(a, b), nn.BatchNorm1d(b), nn.ReLU(), nn.Dropout(config.dropout_rate)]
        layers.append(nn.Linear(dims[-1], config.n_classes))
        self.net = nn.Sequential(*layers)

    def forward(self, feature):
        return self.net(feature)


class PCTMCD(nn.Module):
    """Generator plus two independently initialised classifiers."""

    def __init__(self, config: ModelConfig = ModelConfig(), seed: int = 0):
        super().__init__()
        self.config = config
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.generator = Generator(config)
            torch.manual_seed(seed + 7919)
            self.classifier1 = Classifier(config)
            torch.manual_seed(seed + 104729)
            self.classifier2 = Classifier(config)

    def forward(self, x):
        feature = self.generator(x)
        return self.classifier1(feature), self.classifier2(feature)

    def classifier_parameters(self):
        return list(self.classifier1.parameters()) + list(self.classifier2.parameters())

    def probabilities(self, x):
        """Mean of the two classifiers' softmax outputs."""
        l1, l2 = self(x)
        return 0.5 * (torch.softmax(l1, dim=-1) + torch.softmax(l2, dim=-1))


@contextlib.contextmanager
def evaluation(model: nn.Module):
    """Eval mode + no_grad for the block, restoring the previous mode."""
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            yield model
    finally:
        model.train(was_training)


def _as_batch(points) -> tuple[torch.Tensor, bool]:
    t = torch.as_tensor(np.asarray(points), dtype=torch.float32)
    single = t.dim() == 2
    return (t.unsqueeze(0) if single else t), single


def encode(points, model: PCTMCD) -> np.ndarray:
    """Global feature(s) for normalized cloud(s) of shape (N, 12) or (B, N, 12)."""
    x, single = _as_batch(points)
    with evaluation(model):
        f = model.generator(x).numpy()
    return f[0] if single else f


def classify(feature, classifier: Classifier) -> np.ndarray:
    f = torch.as_tensor(np.asarray(feature), dtype=torch.float32)
    single = f.dim() == 1
    with evaluation(classifier):
        out = classifier(f.unsqueeze(0) if single else f).numpy()
    return out[0] if single else out


def predict_proba(points, model: PCTMCD, batch_size: int = 512) -> np.ndarray:
    x, single = _as_batch(points)
    chunks = []
    with evaluation(model):
        for lo in range(0, x.shape[0], batch_size):
            chunks.append(model.probabilities(x[lo : lo + batch_size]).double().numpy())
    probs = np.concatenate(chunks) if chunks else np.zeros((0, model.config.n_classes))
    return probs[0] if single else probs


def predict(points, model: PCTMCD):
    """(label index, averaged probabilities) for one cloud, or arrays for a batch."""
    probs = predict_proba(points, model)
    return np.argmax(probs, axis=-1), probs


def logits(points, model: PCTMCD) -> tuple[np.ndarray, np.ndarray]:
    x, single = _as_batch(points)
    with evaluation(model):
        l1, l2 = model(x)
    l1, l2 = l1.numpy(), l2.numpy()
    return (l1[0], l2[0]) if single else (l1, l2)
