"""Generative evaluation metrics and the per-decade evaluation suite.

FID and KMMD are computed per decade between real and transformed images and
then averaged; decade classification accuracy is reported at tolerances of 0,
1, and 2 decades; identity accuracy is the fraction of input/transform pairs
whose embedding similarity clears a threshold.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import torch

from .family import GeneratorFamily
from .inversion import InversionResult, transform_across_decades
from .perception import FaceEmbedder, RandomFeatureStack, cosine_similarity
from .specs import TmtOffset

# Reference scores of the full-scale configuration (14 decades, 256px, long
# schedule).  Desk-scale runs are not comparable; shown for context only and
# never asserted against.
FULL_SCALE_REFERENCE_ROW = {
    "fid": 66.98, "kmmd": 0.40, "dca0": 0.47, "dca1": 0.78, "dca2": 0.90,
    "id_acc": 0.99,
}

CROP_RATIO = 0.625  # 256 -> 160 center crop before feature extraction


@dataclass(frozen=True)
class FeatureSet:
    """N x D feature matrix from a fixed extractor, tagged with its origin."""

    vectors: np.ndarray
    source_tag: tuple = ("", "")

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError("feature set must be a 2-D (N, D) matrix")
        object.__setattr__(self, "vectors", v)

    def __len__(self):
        return self.vectors.shape[0]


def _sqrt_trace_cross(cov_a: np.ndarray, cov_b: np.ndarray, jitter: float) -> float:
    """Tr((cov_a^1/2 cov_b cov_a^1/2)^1/2) via eigendecomposition with
    eigenvalue clamping at zero."""
    vals_a, vecs_a = np.linalg.eigh(cov_a)
    root_a = (vecs_a * np.sqrt(np.clip(vals_a, 0, None))) @ vecs_a.T
    m = root_a @ cov_b @ root_a
    m = (m + m.T) / 2.0
    vals = np.linalg.eigvalsh(m)
    if jitter:
        vals = vals + jitter
    return float(np.sqrt(np.clip(vals, 0, None)).sum())


def compute_fid(a: FeatureSet, b: FeatureSet) -> float:
    """||mu_a - mu_b||^2 + Tr(cov_a + cov_b - 2 (cov_a cov_b)^1/2).

    Exactly symmetric in its arguments; near-singular covariances get a small
    reported diagonal jitter.
    """
    if len(a) < 2 or len(b) < 2:
        raise ValueError("FID needs at least 2 samples per set")
    va, vb = a.vectors, b.vectors
    if va.shape[1] != vb.shape[1]:
        raise ValueError("feature dimensions differ")
    mu_a, mu_b = va.mean(axis=0), vb.mean(axis=0)
    cov_a = np.cov(va, rowvar=False)
    cov_b = np.cov(vb, rowvar=False)
    cov_a = np.atleast_2d(cov_a)
    cov_b = np.atleast_2d(cov_b)

    jitter = 0.0
    min_eig = min(np.linalg.eigvalsh(cov_a).min(), np.linalg.eigvalsh(cov_b).min())
    if min_eig < 1e-10:
        jitter = 1e-10
        warnings.warn("near-singular covariance; applying diagonal jitter 1e-10",
                      RuntimeWarning, stacklevel=2)
        cov_a = cov_a + jitter * np.eye(cov_a.shape[0])
        cov_b = cov_b + jitter * np.eye(cov_b.shape[0])

    diff = mu_a - mu_b
    mean_term = float(diff @ diff)
    trace_ab = _sqrt_trace_cross(cov_a, cov_b, 0.0)
    trace_ba = _sqrt_trace_cross(cov_b, cov_a, 0.0)
    cross = (trace_ab + trace_ba) / 2.0  # symmetrize: both equal the same quantity
    return mean_term + float(np.trace(cov_a) + np.trace(cov_b)) - 2.0 * cross


def _pairwise_sq_dists(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    d = x[:, None, :] - y[None, :, :]
    return np.einsum("ijk,ijk->ij", d, d)


def compute_kmmd(a: FeatureSet, b: FeatureSet) -> float:
    """Square root of the unbiased MMD^2 estimate with an RBF kernel.

    Bandwidth comes from the median pairwise distance over the pooled sample
    (falling back to 1.0 when the median is zero); negative MMD^2 estimates
    clamp to zero before the root.
    """
    m, n = len(a), len(b)
    if m < 2 or n < 2:
        raise ValueError("KMMD needs at least 2 samples per set")
    x, y = a.vectors, b.vectors
    if x.shape[1] != y.shape[1]:
        raise ValueError("feature dimensions differ")

    d_xx = _pairwise_sq_dists(x, x)
    d_yy = _pairwise_sq_dists(y, y)
    d_xy = _pairwise_sq_dists(x, y)

    pooled = np.concatenate([
        d_xx[np.triu_indices(m, k=1)],
        d_yy[np.triu_indices(n, k=1)],
        d_xy.ravel(),
    ])
    sigma_sq = float(np.median(pooled))
    if sigma_sq <= 0.0:
        sigma_sq = 1.0

    k_xx = np.exp(-d_xx / (2.0 * sigma_sq))
    k_yy = np.exp(-d_yy / (2.0 * sigma_sq))
    k_xy = np.exp(-d_xy / (2.0 * sigma_sq))

    sum_xx = (k_xx.sum() - np.trace(k_xx)) / (m * (m - 1))
    sum_yy = (k_yy.sum() - np.trace(k_yy)) / (n * (n - 1))
    mmd_sq = sum_xx + sum_yy - 2.0 * k_xy.mean()
    return float(np.sqrt(max(mmd_sq, 0.0)))


def compute_dca(predicted: Sequence[int], truth: Sequence[int], p: int) -> float:
    """Fraction of predictions within p decades of the truth."""
    pred = np.asarray(predicted, dtype=np.int64)
    true = np.asarray(truth, dtype=np.int64)
    if pred.shape != true.shape:
        raise ValueError("predicted and truth lengths differ")
    if pred.size == 0:
        raise ValueError("empty label vectors")
    if np.any(pred % 10) or np.any(true % 10):
        raise ValueError("decade labels must be multiples of 10")
    return float((np.abs(pred - true) <= 10 * p).mean())


@dataclass(frozen=True)
class IdAccResult:
    value: float
    absent: int  # pairs where an embedding was unavailable (counted as failures)


def compute_id_acc(pairs: Sequence[tuple[np.ndarray, np.ndarray]],
                   threshold: float, embedder: FaceEmbedder) -> IdAccResult:
    """Fraction of (original, transformed) pairs whose similarity exceeds the
    threshold.  The score scale is the configured embedder's own."""
    if not pairs:
        raise ValueError("no pairs given")
    hits = absent = 0
    for orig, xform in pairs:
        e1 = embedder.embed(np.asarray(orig, dtype=np.float32))
        e2 = embedder.embed(np.asarray(xform, dtype=np.float32))
        if e1 is None or e2 is None:
            absent += 1
            continue
        if cosine_similarity(e1, e2) > threshold:
            hits += 1
    return IdAccResult(value=hits / len(pairs), absent=absent)


# -- feature extraction -------------------------------------------------------------


class PooledFeatureExtractor:
    """Seed-pinned random convolutional stack with global average pooling.

    Desk-scale stand-in for a pretrained feature network: deterministic,
    sufficient for relative comparisons between desk-scale runs.
    """

    def __init__(self, seed: int = 23, channels: tuple[int, ...] = (24, 48, 96)):
        self.stack = RandomFeatureStack(seed=seed, channels=channels)

    def extract(self, images: np.ndarray) -> np.ndarray:
        t = torch.from_numpy(np.ascontiguousarray(images, dtype=np.float32))
        if t.ndim == 3:
            t = t.unsqueeze(0)
        with torch.no_grad():
            feats = self.stack.features(t)
            pooled = [f.mean(dim=[2, 3]) for f in feats]
            out = torch.cat(pooled, dim=1)
        return out.numpy().astype(np.float64)


def center_crop(images: np.ndarray, ratio: float = CROP_RATIO) -> np.ndarray:
    """Center crop by the given side ratio (full scale: 256 -> 160)."""
    h, w = images.shape[-2], images.shape[-1]
    ch, cw = max(1, round(h * ratio)), max(1, round(w * ratio))
    top, left = (h - ch) // 2, (w - cw) // 2
    return images[..., top:top + ch, left:left + cw]


# -- the suite ---------------------------------------------------------------------


@dataclass
class MetricReport:
    """Per-decade metric table plus decade-averaged summary."""

    per_decade: dict[int, dict[str, float | None]]
    averages: dict[str, float]
    id_absent: int = 0
    gaps: list = field(default_factory=list)
    seconds: float = 0.0

    def __post_init__(self):
        d0, d1, d2 = (self.averages.get(k) for k in ("dca0", "dca1", "dca2"))
        if d0 is not None and d1 is not None and d2 is not None:
            if not (d0 <= d1 <= d2 <= 1.0 + 1e-12):
                raise ValueError(f"DCA ordering violated: {d0}, {d1}, {d2}")
        acc = self.averages.get("id_acc")
        if acc is not None and not (0.0 <= acc <= 1.0):
            raise ValueError(f"id_acc outside [0,1]: {acc}")

    def to_dict(self) -> dict:
        return {
            "per_decade": {str(d): v for d, v in self.per_decade.items()},
            "averages": self.averages,
            "id_absent": self.id_absent,
            "gaps": self.gaps,
            "seconds": self.seconds,
            "full_scale_reference": FULL_SCALE_REFERENCE_ROW,
        }

    def table(self) -> str:
        cols = ["fid", "kmmd", "dca0", "dca1", "dca2", "id_acc"]
        head = f"{'decade':>8} " + " ".join(f"{c:>8}" for c in cols)
        lines = [head, "-" * len(head)]

        def fmt(row):
            return " ".join("    None" if row.get(c) is None else f"{row[c]:8.3f}"
                            for c in cols)

        for d in sorted(self.per_decade):
            lines.append(f"{d:>8} " + fmt(self.per_decade[d]))
        lines.append(f"{'average':>8} " + fmt(self.averages))
        lines.append(f"{'ref*':>8} " + fmt(FULL_SCALE_REFERENCE_ROW))
        lines.append("*full-scale reference row, shown for context; not comparable "
                     "to desk-scale runs.")
        return "\n".join(lines)


@dataclass(frozen=True)
class TunedInversion:
    """Per-image artifact pair produced by invert + tune."""

    inversion: InversionResult
    offset: TmtOffset
    source_decade: int


def evaluate_suite(family: GeneratorFamily,
                   tuned: Mapping[str, TunedInversion],
                   test_images: Mapping[str, tuple[np.ndarray, int]],
                   classifier,
                   embedder: FaceEmbedder,
                   real_by_decade: Mapping[int, np.ndarray],
                   extractor: PooledFeatureExtractor | None = None,
                   id_threshold: float = 0.5,
                   crop_ratio: float = CROP_RATIO) -> MetricReport:
    """Transform every test image into every family decade and fill the
    metric table.

    ``test_images`` maps image-id -> (image, source decade); ``tuned`` maps
    image-id -> its inversion/offset pair; ``real_by_decade`` holds real
    feature-reference images per decade.  Missing decade references produce a
    partial report with explicit gaps.
    """
    t0 = time.time()
    extractor = extractor or PooledFeatureExtractor()
    decades = list(family.decades)

    generated: dict[int, list[np.ndarray]] = {d: [] for d in decades}
    predictions: list[int] = []
    targets_flat: list[int] = []
    pairs: list[tuple[np.ndarray, np.ndarray]] = []

    for image_id, record in tuned.items():
        image, _src = test_images[image_id]
        transforms = transform_across_decades(record.inversion, record.offset,
                                              family, decades)
        for d in decades:
            generated[d].append(transforms[d])
            predictions.append(int(classifier.predict(transforms[d][None])[0]))
            targets_flat.append(int(d))
            pairs.append((image, transforms[d]))

    per_decade: dict[int, dict[str, float | None]] = {}
    gaps = []
    total_absent = 0
    for d in decades:
        row: dict[str, float | None] = {}
        gen = np.stack(generated[d])
        idx = [i for i, t in enumerate(targets_flat) if t == d]
        row["dca0"] = compute_dca([predictions[i] for i in idx], [d] * len(idx), 0)
        row["dca1"] = compute_dca([predictions[i] for i in idx], [d] * len(idx), 1)
        row["dca2"] = compute_dca([predictions[i] for i in idx], [d] * len(idx), 2)
        real = real_by_decade.get(d)
        if real is None or len(real) < 2:
            row["fid"] = row["kmmd"] = None
            gaps.append({"decade": d, "missing": "real reference images"})
        else:
            f_real = FeatureSet(extractor.extract(center_crop(real, crop_ratio)),
                                (d, "real"))
            f_gen = FeatureSet(extractor.extract(center_crop(gen, crop_ratio)),
                               (d, "generated"))
            row["fid"] = compute_fid(f_real, f_gen)
            row["kmmd"] = compute_kmmd(f_real, f_gen)
        d_pairs = [pairs[i] for i in idx]
        id_res = compute_id_acc(d_pairs, id_threshold, embedder)
        row["id_acc"] = id_res.value
        total_absent += id_res.absent
        per_decade[d] = row

    averages = {}
    for key in ("fid", "kmmd", "dca0", "dca1", "dca2", "id_acc"):
        vals = [per_decade[d][key] for d in decades if per_decade[d][key] is not None]
        averages[key] = float(np.mean(vals)) if vals else None

    return MetricReport(per_decade=per_decade, averages=averages,
                        id_absent=total_absent, gaps=gaps,
                        seconds=time.time() - t0)


def calibrate_id_threshold(embedder: FaceEmbedder,
                           same_pairs: Sequence[tuple[np.ndarray, np.ndarray]],
                           cross_pairs: Sequence[tuple[np.ndarray, np.ndarray]]
                           ) -> float:
    """Desk-profile threshold: midpoint between the median same-identity and
    median cross-identity similarity.  Documented as non-comparable to any
    external verifier's score scale."""
    def sims(pairs):
        out = []
        for a, b in pairs:
            ea = embedder.embed(np.asarray(a, dtype=np.float32))
            eb = embedder.embed(np.asarray(b, dtype=np.float32))
            if ea is not None and eb is not None:
                out.append(cosine_similarity(ea, eb))
        return np.array(out)

    same = np.median(sims(same_pairs))
    cross = np.median(sims(cross_pairs))
    return float((same + cross) / 2.0)
