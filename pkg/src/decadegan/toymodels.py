"""Desk-scale trained backends: identity embedder and decade classifier.

Both are small CNNs trained on the synthetic corpus in a couple of minutes on
CPU.  The embedder learns style-invariant identity with a cosine-margin
objective over paired renders; the classifier learns the decade style cue.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .perception import EmbeddingVector
from .toydata import (
    TOY_DECADES,
    jitter_identity,
    render_styled,
    sample_identity,
)


class _ConvTrunk(nn.Module):
    def __init__(self, widths=(16, 32, 64)):
        super().__init__()
        layers = []
        in_ch = 3
        for w in widths:
            layers.append(nn.Conv2d(in_ch, w, 3, stride=2, padding=1))
            in_ch = w
        self.convs = nn.ModuleList(layers)
        self.out_ch = in_ch

    def forward(self, x):
        for conv in self.convs:
            x = F.leaky_relu(conv(x), 0.2)
        return F.adaptive_avg_pool2d(x, 4).flatten(1)


class ToyEmbedder(nn.Module):
    """Identity embedding network; unit-norm 128-d outputs, any resolution."""

    def __init__(self, dim: int = 128):
        super().__init__()
        self.trunk = _ConvTrunk()
        self.head = nn.Linear(self.trunk.out_ch * 16, dim)
        self.dim = dim

    def forward(self, x):
        v = self.head(self.trunk(x))
        return F.normalize(v, dim=-1, eps=1e-8)

    # FaceEmbedder protocol
    def embed_batch(self, images: torch.Tensor) -> torch.Tensor:
        return self(images)

    def embed(self, image: np.ndarray) -> EmbeddingVector | None:
        t = torch.from_numpy(np.ascontiguousarray(image, dtype=np.float32)).unsqueeze(0)
        with torch.no_grad():
            v = self(t)[0].numpy()
        return EmbeddingVector((v / np.linalg.norm(v)).astype(np.float32))


def train_toy_embedder(resolution: int = 64, steps: int = 350, batch: int = 16,
                       seed: int = 11, decades=TOY_DECADES, margin: float = 0.5,
                       lr: float = 2e-3) -> ToyEmbedder:
    """Cosine-margin training on (anchor, positive) pairs of the same identity
    rendered under different decade styles and small pose jitter."""
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    model = ToyEmbedder()
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    decades = list(decades)
    for _ in range(steps):
        anchors, positives = [], []
        for _ in range(batch):
            ident = sample_identity(rng)
            da, dp = rng.choice(decades, size=2)
            a, _ = render_styled(jitter_identity(ident, rng), int(da), resolution)
            p, _ = render_styled(jitter_identity(ident, rng), int(dp), resolution)
            anchors.append(a)
            positives.append(p)
        a = model(torch.from_numpy(np.stack(anchors)))
        p = model(torch.from_numpy(np.stack(positives)))
        cos_ap = (a * p).sum(dim=-1)
        cos_an = (a * torch.roll(p, 1, dims=0)).sum(dim=-1)
        loss = F.relu(margin - cos_ap + cos_an).mean()
        opt.zero_grad()
        loss.backward()
        opt.step()
    model.eval()
    model.requires_grad_(False)
    return model


class ToyDecadeClassifier(nn.Module):
    """Small CNN mapping an image to one of the known decade labels."""

    def __init__(self, decades=TOY_DECADES):
        super().__init__()
        self.decades = tuple(int(d) for d in decades)
        self.trunk = _ConvTrunk()
        self.head = nn.Linear(self.trunk.out_ch * 16, len(self.decades))

    def forward(self, x):
        return self.head(self.trunk(x))

    def predict(self, images: np.ndarray) -> np.ndarray:
        t = torch.from_numpy(np.ascontiguousarray(images, dtype=np.float32))
        if t.ndim == 3:
            t = t.unsqueeze(0)
        with torch.no_grad():
            idx = self(t).argmax(dim=-1).numpy()
        return np.array([self.decades[i] for i in idx])


def train_toy_classifier(datasets: dict, steps: int = 300, batch: int = 32,
                         seed: int = 13, lr: float = 2e-3) -> ToyDecadeClassifier:
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    decades = sorted(datasets)
    model = ToyDecadeClassifier(decades=decades)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    for _ in range(steps):
        per = max(1, batch // len(decades))
        xs, ys = [], []
        for k, d in enumerate(decades):
            ds = datasets[d]
            idx = rng.integers(0, len(ds), size=per)
            xs.append(ds.images[idx])
            ys.extend([k] * per)
        x = torch.from_numpy(np.concatenate(xs))
        y = torch.tensor(ys)
        loss = F.cross_entropy(model(x), y)
        opt.zero_grad()
        loss.backward()
        opt.step()
    model.eval()
    model.requires_grad_(False)
    return model


def classifier_accuracy(model: ToyDecadeClassifier, datasets: dict) -> float:
    hits = total = 0
    for d, ds in datasets.items():
        pred = model.predict(ds.images)
        hits += int((pred == d).sum())
        total += len(ds)
    return hits / max(total, 1)


def save_model(model: nn.Module, path: Path, meta: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({"state": model.state_dict(), "meta": meta or {}}, path)


def load_toy_embedder(path: Path) -> ToyEmbedder:
    blob = torch.load(Path(path), weights_only=True)
    model = ToyEmbedder()
    model.load_state_dict(blob["state"])
    model.eval()
    model.requires_grad_(False)
    return model


def load_toy_classifier(path: Path) -> ToyDecadeClassifier:
    blob = torch.load(Path(path), weights_only=True)
    decades = blob["meta"].get("decades", TOY_DECADES)
    model = ToyDecadeClassifier(decades=decades)
    model.load_state_dict(blob["state"])
    model.eval()
    model.requires_grad_(False)
    return model
