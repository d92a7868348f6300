"""Face segmentation, identity embedding, and masked reconstruction losses.

Segmentation and embedding are backend-pluggable: desk-scale runs register
oracle masks and a small trained embedder, full-scale profiles can register
pretrained networks.  A missing backend is a configuration error, never a
silent all-ones mask.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Protocol

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

CLASS_BACKGROUND = 0
CLASS_FACE = 1
CLASS_HAIR = 2

DEFAULT_WEIGHT_TRIPLE = (1.0, 0.1, 0.0)  # (face, hair, background)


class BackendNotConfigured(RuntimeError):
    """Raised when a segmentation or embedding backend is not registered."""


class NoFaceSignal(Exception):
    """An embedder found no usable face in the image."""


@dataclass(frozen=True)
class WeightedMask:
    """Per-pixel loss weights derived from a {face, hair, background} map."""

    weights: np.ndarray   # (H, W) float32 in [0, 1]
    class_map: np.ndarray  # (H, W) uint8 of CLASS_* values

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float32)
        c = np.asarray(self.class_map, dtype=np.uint8)
        if w.shape != c.shape or w.ndim != 2:
            raise ValueError("weights and class_map must be equal-shaped 2-D grids")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "class_map", c)

    @classmethod
    def from_class_map(cls, class_map: np.ndarray,
                       triple: tuple[float, float, float] = DEFAULT_WEIGHT_TRIPLE
                       ) -> "WeightedMask":
        face, hair, bg = triple
        if not all(0.0 <= t <= 1.0 for t in triple):
            raise ValueError("mask weights must lie in [0, 1]")
        lut = np.array([bg, face, hair], dtype=np.float32)
        class_map = np.asarray(class_map, dtype=np.uint8)
        if class_map.max(initial=0) > CLASS_HAIR:
            raise ValueError("class_map contains values outside {background, face, hair}")
        return cls(weights=lut[class_map], class_map=class_map)


# -- backends ----------------------------------------------------------------

SegmenterFn = Callable[[np.ndarray], np.ndarray]  # image (3,H,W) -> class_map (H,W)

_mask_backends: dict[str, SegmenterFn] = {}
_embed_backends: dict[str, "FaceEmbedder"] = {}


def register_mask_backend(name: str, fn: SegmenterFn) -> None:
    _mask_backends[name] = fn


def register_embed_backend(name: str, embedder: "FaceEmbedder") -> None:
    _embed_backends[name] = embedder


def get_embed_backend(name: str) -> "FaceEmbedder":
    if name not in _embed_backends:
        raise BackendNotConfigured(
            f"no embedding backend registered under {name!r} "
            f"(have: {sorted(_embed_backends)})")
    return _embed_backends[name]


def segment_to_mask(image: np.ndarray,
                    weight_triple: tuple[float, float, float] = DEFAULT_WEIGHT_TRIPLE,
                    backend: str | SegmenterFn = "oracle") -> WeightedMask:
    """Segment an image and turn the class map into loss weights."""
    if callable(backend):
        fn = backend
    else:
        if backend not in _mask_backends:
            raise BackendNotConfigured(
                f"no mask backend registered under {backend!r} "
                f"(have: {sorted(_mask_backends)})")
        fn = _mask_backends[backend]
    class_map = fn(np.asarray(image, dtype=np.float32))
    return WeightedMask.from_class_map(class_map, weight_triple)


# -- embeddings ----------------------------------------------------------------


@dataclass(frozen=True)
class EmbeddingVector:
    """Unit-norm identity embedding."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        object.__setattr__(self, "values", v)
        norm = float(np.linalg.norm(v))
        if abs(norm - 1.0) > 1e-6:
            raise ValueError(f"embedding norm {norm} is not 1 within 1e-6")


def unit_normalize(v: np.ndarray) -> EmbeddingVector:
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if n == 0:
        raise ValueError("cannot normalize a zero vector")
    return EmbeddingVector((v / n).astype(np.float32))


def cosine_similarity(u: EmbeddingVector, v: EmbeddingVector) -> float:
    s = float(np.dot(u.values.astype(np.float64), v.values.astype(np.float64)))
    return max(-1.0, min(1.0, s))


class FaceEmbedder(Protocol):
    """Identity embedding backend.

    ``embed`` works on numpy images and may return None when no face signal
    is present; ``embed_batch`` is the differentiable torch path used inside
    training and tuning loops and must return unit-norm rows.
    """

    def embed(self, image: np.ndarray) -> EmbeddingVector | None: ...

    def embed_batch(self, images: torch.Tensor) -> torch.Tensor: ...


class StubEmbedder:
    """Deterministic test embedder: hashes image bytes to a unit vector."""

    def __init__(self, dim: int = 128):
        self.dim = dim

    def _vector(self, data: bytes) -> np.ndarray:
        seed = int.from_bytes(hashlib.sha256(data).digest()[:8], "little")
        rng = np.random.default_rng(seed)
        v = rng.standard_normal(self.dim)
        return v / np.linalg.norm(v)

    def embed(self, image: np.ndarray) -> EmbeddingVector | None:
        arr = np.ascontiguousarray(np.asarray(image, dtype=np.float32))
        return EmbeddingVector(self._vector(arr.tobytes()).astype(np.float32))

    def embed_batch(self, images: torch.Tensor) -> torch.Tensor:
        rows = [self._vector(np.ascontiguousarray(
            img.detach().to(torch.float32).cpu().numpy()).tobytes())
            for img in images]
        return torch.from_numpy(np.stack(rows).astype(np.float32))


class SequenceEmbedder:
    """Returns preset embeddings in call order (unit tests only)."""

    def __init__(self, vectors):
        self.vectors = [np.asarray(v, dtype=np.float32) for v in vectors]
        self.calls = 0

    def embed(self, image: np.ndarray) -> EmbeddingVector | None:
        v = self.vectors[self.calls % len(self.vectors)]
        self.calls += 1
        return EmbeddingVector(v)

    def embed_batch(self, images: torch.Tensor) -> torch.Tensor:
        rows = []
        for _ in range(images.shape[0]):
            rows.append(self.vectors[self.calls % len(self.vectors)])
            self.calls += 1
        return torch.from_numpy(np.stack(rows))


def identity_loss_from_embeddings(u: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """1 - cosine similarity per row; in [0, 2] for unit-norm inputs."""
    u = F.normalize(u, dim=-1, eps=1e-12)
    v = F.normalize(v, dim=-1, eps=1e-12)
    return 1.0 - (u * v).sum(dim=-1)


# -- perceptual distance -------------------------------------------------------


class RandomFeatureStack(nn.Module):
    """Seed-pinned random convolutional feature pyramid.

    Serves as the desk-scale perceptual backend: no pretrained download,
    deterministic across runs, smooth in its inputs.  Distances are mean
    squared differences of channel-normalized features, summed over scales.
    """

    def __init__(self, seed: int = 7, channels: tuple[int, ...] = (16, 32, 64)):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        in_ch = 3
        convs = []
        for out_ch in channels:
            w = torch.randn(out_ch, in_ch, 3, 3, generator=gen)
            w = w / math.sqrt(in_ch * 9)
            convs.append(w)
            in_ch = out_ch
        for i, w in enumerate(convs):
            self.register_buffer(f"w{i}", w)
        self.n_layers = len(convs)
        self.requires_grad_(False)

    def features(self, x: torch.Tensor) -> list[torch.Tensor]:
        feats = []
        for i in range(self.n_layers):
            w = getattr(self, f"w{i}").to(x.dtype)
            stride = 2 if min(x.shape[-2:]) > 4 else 1
            x = F.conv2d(x, w, stride=stride, padding=1)
            x = F.leaky_relu(x, 0.2)
            norm = torch.sqrt(x.pow(2).mean(dim=1, keepdim=True) + 1e-8)
            feats.append(x / norm)
        return feats

    def distance(self, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
        if a.shape != b.shape:
            raise ValueError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
        fa, fb = self.features(a), self.features(b)
        total = a.new_zeros(a.shape[0])
        for u, v in zip(fa, fb):
            total = total + (u - v).pow(2).mean(dim=[1, 2, 3])
        return total / self.n_layers


_default_perceptual: RandomFeatureStack | None = None


def default_perceptual() -> RandomFeatureStack:
    global _default_perceptual
    if _default_perceptual is None:
        _default_perceptual = RandomFeatureStack()
    return _default_perceptual


# -- masked losses ---------------------------------------------------------------


def _to_batch(t) -> torch.Tensor:
    if isinstance(t, np.ndarray):
        t = torch.from_numpy(np.ascontiguousarray(t, dtype=np.float32))
    if t.ndim == 2:
        t = t.unsqueeze(0)
    if t.ndim == 3:
        t = t.unsqueeze(0)
    return t


def masked_loss(a, b, mask: WeightedMask, kind: str = "pixel",
                perceptual: RandomFeatureStack | None = None) -> torch.Tensor:
    """Mask-weighted distance between two images.

    pixel:       mean over all pixels of mask * (a - b)^2
    perceptual:  perceptual distance between mask-multiplied inputs
    """
    a, b = _to_batch(a), _to_batch(b)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
    m = torch.from_numpy(np.array(mask.weights)).to(a.dtype)
    if m.shape != a.shape[-2:]:
        raise ValueError(f"mask shape {tuple(m.shape)} != image {tuple(a.shape[-2:])}")
    if kind == "pixel":
        return (m * (a - b).pow(2)).mean()
    if kind == "perceptual":
        stack = perceptual if perceptual is not None else default_perceptual()
        return stack.distance(a * m, b * m).mean()
    raise ValueError(f"unknown loss kind {kind!r}")


# -- on-disk caches ----------------------------------------------------------------


def content_hash(image: np.ndarray) -> str:
    arr = np.ascontiguousarray(np.asarray(image, dtype=np.float32))
    return hashlib.sha256(arr.tobytes() + str(arr.shape).encode()).hexdigest()[:32]


class ContentCache:
    """Disk cache of arrays keyed by image content hash."""

    def __init__(self, root: Path, name: str):
        self.dir = Path(root) / name
        self.dir.mkdir(parents=True, exist_ok=True)

    def get(self, key: str) -> np.ndarray | None:
        p = self.dir / f"{key}.npy"
        return np.load(p) if p.exists() else None

    def put(self, key: str, value: np.ndarray) -> None:
        tmp = self.dir / f".tmp-{key}.npy"
        np.save(tmp, value)
        tmp.replace(self.dir / f"{key}.npy")
