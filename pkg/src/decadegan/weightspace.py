"""Diagnostics over generator parameter space.

Flattened convolutional weights of family members (and tuned variants) are
projected to 2-D by PCA; tuning offsets are compared against decade-to-decade
weight directions by cosine similarity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .family import GeneratorFamily
from .specs import TmtOffset, flatten_blocks, flatten_offset


@dataclass(frozen=True)
class WeightPoint:
    """One generator's flattened convolutional parameters."""

    label: str
    flat: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "flat", np.asarray(self.flat, dtype=np.float64))


def family_weight_points(family: GeneratorFamily,
                         tuned: dict[str, "TmtOffset"] | None = None
                         ) -> list[WeightPoint]:
    """Points for each decade child, plus optionally offset-shifted variants."""
    points = [WeightPoint(str(d), flatten_blocks(family.child(d), family.spec))
              for d in family.decades]
    if tuned:
        for name, offset in tuned.items():
            base = flatten_blocks(family.child(offset.base_decade), family.spec)
            delta = flatten_offset(offset, family.spec)
            points.append(WeightPoint(f"{offset.base_decade}/{name}", base + delta))
    return points


def pca_embed_weights(points: list[WeightPoint]) -> list[tuple[float, float]]:
    """Mean-centered projection onto the top-2 principal directions.

    Sign convention: the first nonzero loading of each direction is positive,
    so coordinates are deterministic.
    """
    if len(points) < 2:
        raise ValueError("PCA needs at least 2 points")
    x = np.stack([p.flat for p in points])
    if any(p.flat.shape != points[0].flat.shape for p in points):
        raise ValueError("all weight points must have equal length")
    centered = x - x.mean(axis=0, keepdims=True)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    comps = vt[:2] if vt.shape[0] >= 2 else np.vstack([vt, np.zeros_like(vt[:1])])
    for i in range(2):
        nz = np.nonzero(comps[i])[0]
        if nz.size and comps[i, nz[0]] < 0:
            comps[i] = -comps[i]
    coords = centered @ comps.T
    return [(float(cx), float(cy)) for cx, cy in coords]


def pca_residual_variance(points: list[WeightPoint]) -> float:
    """Total variance not captured by the top-2 directions."""
    x = np.stack([p.flat for p in points])
    centered = x - x.mean(axis=0, keepdims=True)
    total = float((centered ** 2).sum())
    coords = np.asarray(pca_embed_weights(points))
    return total - float((coords ** 2).sum())


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ZeroDivisionError("cosine undefined for zero-norm vectors")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


@dataclass(frozen=True)
class OffsetSimilarityReport:
    """Cosine geometry of a tuning offset against decade directions."""

    source_decade: int
    delta_vs_decade: dict[int, float]          # cos(offset, theta_t - theta_source)
    decade_pairwise: dict[tuple[int, int], float]
    excluded: list = field(default_factory=list)

    @property
    def mean_abs_delta_similarity(self) -> float:
        return float(np.mean([abs(v) for v in self.delta_vs_decade.values()]))

    @property
    def mean_pairwise_similarity(self) -> float:
        return float(np.mean(list(self.decade_pairwise.values())))

    def histogram(self, bins: int = 20) -> dict:
        vals = np.array(list(self.delta_vs_decade.values()))
        counts, edges = np.histogram(vals, bins=bins, range=(-1.0, 1.0))
        return {"counts": counts.tolist(), "edges": edges.tolist()}


def offset_direction_similarity(offset: TmtOffset, family: GeneratorFamily
                                ) -> OffsetSimilarityReport:
    """Compare the flattened tuning offset with every decade direction
    theta_t - theta_source, and the decade directions with each other."""
    offset.check_spec(family.spec)
    src = offset.base_decade
    if src not in family.children:
        raise ValueError(f"offset base decade {src} not in family {family.decades}")
    delta = flatten_offset(offset, family.spec)
    base = flatten_blocks(family.child(src), family.spec)

    directions: dict[int, np.ndarray] = {}
    excluded = []
    for d in family.decades:
        if d == src:
            continue
        v = flatten_blocks(family.child(d), family.spec) - base
        if np.linalg.norm(v) == 0.0:
            excluded.append({"decade": d, "reason": "zero-norm direction"})
            continue
        directions[d] = v

    if np.linalg.norm(delta) == 0.0:
        excluded.append({"decade": src, "reason": "zero-norm offset"})
        delta_vs = {}
    else:
        delta_vs = {d: cosine(delta, v) for d, v in directions.items()}

    pairwise = {}
    ds = sorted(directions)
    for i, d1 in enumerate(ds):
        for d2 in ds[i + 1:]:
            pairwise[(d1, d2)] = cosine(directions[d1], directions[d2])

    return OffsetSimilarityReport(source_decade=src, delta_vs_decade=delta_vs,
                                  decade_pairwise=pairwise, excluded=excluded)
