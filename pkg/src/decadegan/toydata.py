"""Synthetic desk-scale portrait corpus.

Renders simple geometric "portraits" whose identity is carried by face
geometry and skin tone, and whose decade is carried by a separable style cue
(palette plus border treatment).  Every render also yields its ground-truth
{face, hair, background} class map, which backs the oracle mask backend.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import torch

from .perception import (
    CLASS_BACKGROUND,
    CLASS_FACE,
    CLASS_HAIR,
    content_hash,
)

TOY_DECADES = (1920, 1930, 1940)


@dataclass(frozen=True)
class ToyIdentity:
    """Geometry and coloring parameters of one synthetic person."""

    cx: float
    cy: float
    rx: float
    ry: float
    skin: tuple[float, float, float]
    eye_dx: float
    eye_dy: float
    eye_r: float
    iris: float
    mouth_w: float
    mouth_y: float
    mouth_curve: float
    hair_color: tuple[float, float, float]
    hair_scale: float
    bg_shade: float


def sample_identity(rng: np.random.Generator) -> ToyIdentity:
    skin_base = rng.uniform(0.45, 0.85)
    warm = rng.uniform(0.75, 0.95)
    hair_palette = [
        (0.12, 0.08, 0.06), (0.35, 0.22, 0.10), (0.72, 0.60, 0.30),
        (0.50, 0.18, 0.10), (0.55, 0.55, 0.55),
    ]
    hair = hair_palette[rng.integers(len(hair_palette))]
    return ToyIdentity(
        cx=float(rng.uniform(0.46, 0.54)),
        cy=float(rng.uniform(0.50, 0.58)),
        rx=float(rng.uniform(0.18, 0.26)),
        ry=float(rng.uniform(0.24, 0.32)),
        skin=(skin_base, skin_base * warm, skin_base * warm * rng.uniform(0.75, 0.9)),
        eye_dx=float(rng.uniform(0.38, 0.5)),
        eye_dy=float(rng.uniform(-0.28, -0.16)),
        eye_r=float(rng.uniform(0.09, 0.14)),
        iris=float(rng.uniform(0.05, 0.35)),
        mouth_w=float(rng.uniform(0.35, 0.55)),
        mouth_y=float(rng.uniform(0.42, 0.55)),
        mouth_curve=float(rng.uniform(-0.08, 0.12)),
        hair_color=hair,
        hair_scale=float(rng.uniform(1.15, 1.45)),
        bg_shade=float(rng.uniform(0.25, 0.75)),
    )


def jitter_identity(ident: ToyIdentity, rng: np.random.Generator,
                    amount: float = 0.012) -> ToyIdentity:
    """Small pose-like shift used when rendering extra views of a person."""
    return replace(
        ident,
        cx=ident.cx + float(rng.uniform(-amount, amount)),
        cy=ident.cy + float(rng.uniform(-amount, amount)),
    )


def _ellipse_q(xx, yy, cx, cy, rx, ry):
    return np.sqrt(((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2)


def _aa(q, resolution, r_eff):
    # ~1.5px-wide smooth edge, centered on the boundary q == 1
    return np.clip((1.0 - q) * (resolution * r_eff * 0.7) + 0.5, 0.0, 1.0)


def render_identity(ident: ToyIdentity, resolution: int
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Render one neutral (unstyled) portrait.

    Returns ``(image, class_map)``: image is float32 (3, H, W) in [0, 1],
    class_map is uint8 (H, W).
    """
    r = resolution
    yy, xx = np.mgrid[0:r, 0:r].astype(np.float64) / (r - 1)
    img = np.empty((r, r, 3), dtype=np.float64)
    img[...] = ident.bg_shade + 0.15 * (yy[..., None] - 0.5)

    q_face = _ellipse_q(xx, yy, ident.cx, ident.cy, ident.rx, ident.ry)
    q_hair = _ellipse_q(xx, yy, ident.cx, ident.cy - 0.06,
                        ident.rx * ident.hair_scale, ident.ry * ident.hair_scale)
    hair_zone = yy < ident.cy + 0.45 * ident.ry

    a_hair = _aa(q_hair, r, ident.rx) * hair_zone
    img = img * (1 - a_hair[..., None]) + np.array(ident.hair_color) * a_hair[..., None]

    a_face = _aa(q_face, r, ident.rx)
    img = img * (1 - a_face[..., None]) + np.array(ident.skin) * a_face[..., None]

    # eyes: sclera + iris
    for side in (-1, 1):
        ex = ident.cx + side * ident.eye_dx * ident.rx
        ey = ident.cy + ident.eye_dy * ident.ry
        er = ident.eye_r * ident.rx
        q_sclera = _ellipse_q(xx, yy, ex, ey, er * 1.5, er)
        a = _aa(q_sclera, r, er)
        img = img * (1 - a[..., None]) + np.array([0.93, 0.93, 0.9]) * a[..., None]
        q_iris = _ellipse_q(xx, yy, ex, ey, er * 0.62, er * 0.62)
        a = _aa(q_iris, r, er * 0.62)
        iris_col = np.array([ident.iris, ident.iris, ident.iris + 0.12])
        img = img * (1 - a[..., None]) + iris_col * a[..., None]

    # mouth: curved dark-red band
    mx = ident.cx
    my = ident.cy + ident.mouth_y * ident.ry
    mw = ident.mouth_w * ident.rx
    curve = ident.mouth_curve * ((xx - mx) / max(mw, 1e-6)) ** 2
    q_mouth = _ellipse_q(xx, yy - curve, mx, my, mw, mw * 0.3)
    a = _aa(q_mouth, r, mw * 0.3)
    img = img * (1 - a[..., None]) + np.array([0.55, 0.15, 0.15]) * a[..., None]

    class_map = np.full((r, r), CLASS_BACKGROUND, dtype=np.uint8)
    class_map[(q_hair <= 1.0) & hair_zone] = CLASS_HAIR
    class_map[q_face <= 1.0] = CLASS_FACE

    return np.clip(img, 0.0, 1.0).astype(np.float32), class_map


# -- decade styles -------------------------------------------------------------


def _luma(img_hwc):
    return img_hwc @ np.array([0.299, 0.587, 0.114])


def _style_sepia_border(img):
    """Sepia palette plus a dark oval vignette frame."""
    r = img.shape[0]
    g = _luma(img)
    out = np.stack([np.clip(g * 1.1, 0, 1), g * 0.82, g * 0.55], axis=-1)
    yy, xx = np.mgrid[0:r, 0:r].astype(np.float64) / (r - 1)
    q = _ellipse_q(xx, yy, 0.5, 0.5, 0.62, 0.62)
    frame = np.clip((q - 0.92) * 6.0, 0.0, 1.0)[..., None]
    return out * (1 - frame) + np.array([0.16, 0.10, 0.05]) * frame


def _style_gray_frame(img):
    """Flat grayscale with a thin light frame."""
    r = img.shape[0]
    g = _luma(img)
    out = np.repeat((0.18 + 0.64 * g)[..., None], 3, axis=-1)
    b = max(1, round(r * 0.05))
    out[:b, :] = out[-b:, :] = 0.92
    out[:, :b] = out[:, -b:] = 0.92
    return out


def _style_saturated(img):
    """Boosted saturation with a cool shift, no border."""
    g = _luma(img)[..., None]
    out = np.clip(g + 1.8 * (img - g), 0, 1)
    out[..., 2] = np.clip(out[..., 2] * 1.15 + 0.03, 0, 1)
    return out


DECADE_STYLES = {
    1920: _style_sepia_border,
    1930: _style_gray_frame,
    1940: _style_saturated,
}


def apply_decade_style(image_hwc: np.ndarray, decade: int) -> np.ndarray:
    if decade not in DECADE_STYLES:
        raise KeyError(f"no toy style for decade {decade}")
    return np.clip(DECADE_STYLES[decade](image_hwc.astype(np.float64)), 0, 1)


def to_chw_pm1(img_hwc01: np.ndarray) -> np.ndarray:
    """[0,1] HWC -> [-1,1] CHW float32."""
    return (img_hwc01.transpose(2, 0, 1) * 2.0 - 1.0).astype(np.float32)


def from_chw_pm1(img_chw: np.ndarray) -> np.ndarray:
    return np.clip((np.asarray(img_chw).transpose(1, 2, 0) + 1.0) / 2.0, 0, 1)


def render_styled(ident: ToyIdentity, decade: int, resolution: int
                  ) -> tuple[np.ndarray, np.ndarray]:
    """Styled render: float32 (3, H, W) in [-1, 1] plus its class map."""
    neutral, class_map = render_identity(ident, resolution)
    styled = apply_decade_style(neutral, decade)
    return to_chw_pm1(styled), class_map


# -- datasets -------------------------------------------------------------------


@dataclass
class DecadeDataset:
    """In-memory image collection for one decade."""

    decade: int
    images: np.ndarray      # (N, 3, H, W) float32 in [-1, 1]
    class_maps: np.ndarray  # (N, H, W) uint8
    identities: list[ToyIdentity]

    def __len__(self):
        return self.images.shape[0]

    @property
    def resolution(self) -> int:
        return self.images.shape[-1]

    def sample(self, rng: np.random.Generator, batch: int) -> torch.Tensor:
        idx = rng.integers(0, len(self), size=batch)
        return torch.from_numpy(self.images[idx])


def make_decade_dataset(decade: int, n: int, resolution: int, seed: int
                        ) -> DecadeDataset:
    rng = np.random.default_rng(seed)
    images = np.empty((n, 3, resolution, resolution), dtype=np.float32)
    class_maps = np.empty((n, resolution, resolution), dtype=np.uint8)
    idents = []
    for i in range(n):
        ident = sample_identity(rng)
        images[i], class_maps[i] = render_styled(ident, decade, resolution)
        idents.append(ident)
    return DecadeDataset(decade, images, class_maps, idents)


def make_toy_corpus(decades=TOY_DECADES, n_per_decade: int = 400,
                    resolution: int = 64, seed: int = 0
                    ) -> dict[int, DecadeDataset]:
    return {d: make_decade_dataset(d, n_per_decade, resolution, seed + i)
            for i, d in enumerate(decades)}


def pooled_dataset(datasets: dict[int, DecadeDataset]) -> DecadeDataset:
    """All decades merged (used to train the parent from scratch)."""
    images = np.concatenate([ds.images for ds in datasets.values()])
    maps = np.concatenate([ds.class_maps for ds in datasets.values()])
    idents = [i for ds in datasets.values() for i in ds.identities]
    return DecadeDataset(0, images, maps, idents)


def oracle_mask_backend(datasets) -> callable:
    """Mask backend that looks rendered images up by content hash."""
    table: dict[str, np.ndarray] = {}
    items = datasets.values() if isinstance(datasets, dict) else datasets
    for ds in items:
        for i in range(len(ds)):
            table[content_hash(ds.images[i])] = ds.class_maps[i]

    def backend(image: np.ndarray) -> np.ndarray:
        key = content_hash(image)
        if key not in table:
            raise KeyError(
                "oracle mask backend has no ground-truth class map for this image")
        return table[key]

    return backend
