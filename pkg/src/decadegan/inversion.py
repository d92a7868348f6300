"""Latent projection, transferable model tuning, and cross-decade transforms.

Stage one projects a real image onto a single W-space code of its source
decade's generator.  Stage two fixes that code (the pivot) and tunes the
generator weights under masked perceptual, masked pixel, and identity losses,
keeping the output-color blocks frozen.  The resulting weight offset applies
to every generator in the family.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .checkpoints import atomic_write_bytes, atomic_write_json
from .family import GeneratorFamily
from .networks import build_generator, mean_latent, synthesize
from .perception import (
    FaceEmbedder,
    RandomFeatureStack,
    WeightedMask,
    default_perceptual,
    identity_loss_from_embeddings,
    masked_loss,
)
from .specs import (
    FrozenBlockViolation,
    GeneratorSpec,
    LatentCode,
    ParameterVector,
    SpecMismatchError,
    SynthesisNumericError,
    TmtOffset,
    offset_apply,
    params_equal,
)


@dataclass(frozen=True)
class ProjectConfig:
    lr: float = 0.1
    pixel_weight: float = 1.0
    perceptual_weight: float = 1.0
    mean_w_samples: int = 4096
    seed: int = 0


@dataclass(frozen=True)
class TmtConfig:
    max_steps: int = 200
    lpips_stop_threshold: float = 0.03
    pixel_loss_weight: float = 0.1
    perceptual_loss_weight: float = 1.0
    id_loss_weight: float = 0.1
    mask_weights: tuple[float, float, float] = (1.0, 0.1, 0.0)
    lr: float = 3e-4

    def __post_init__(self):
        if self.lpips_stop_threshold <= 0:
            raise ValueError("lpips_stop_threshold must be > 0")
        if not all(0.0 <= w <= 1.0 for w in self.mask_weights):
            raise ValueError("mask weights must lie in [0, 1]")


@dataclass(frozen=True)
class InversionResult:
    code: LatentCode
    source_decade: int
    trace: tuple[tuple[int, float, float], ...]  # (step, perceptual, pixel)
    converged: bool
    best_total: float
    diagnostics: dict = field(default_factory=dict)


@dataclass(frozen=True)
class TuneResult:
    params: ParameterVector
    trace: tuple[tuple[int, float, float, float], ...]  # (step, perc, pixel, id)
    early_stopped: bool
    steps_run: int
    id_available: bool


def _check_image(x: np.ndarray, spec: GeneratorSpec) -> torch.Tensor:
    x = np.asarray(x, dtype=np.float32)
    want = (spec.img_channels, spec.output_resolution, spec.output_resolution)
    if x.shape != want:
        raise SpecMismatchError(f"image shape {x.shape} != spec {want}")
    return torch.from_numpy(x).unsqueeze(0)


def project(x: np.ndarray, child: ParameterVector, spec: GeneratorSpec,
            steps: int, cfg: ProjectConfig = ProjectConfig(),
            perceptual: RandomFeatureStack | None = None,
            diagnose_wplus: bool = False) -> InversionResult:
    """Optimize a single W-space code to reconstruct ``x`` under the child.

    Returns the best code found.  Zero steps returns the mean-w
    initialization flagged unconverged.
    """
    target = _check_image(x, spec)
    child.check_spec(spec)
    child.check_finite()
    stack = perceptual if perceptual is not None else default_perceptual()
    g = build_generator(child, spec)
    w0 = mean_latent(child, spec, n=cfg.mean_w_samples, seed=cfg.seed)

    if steps == 0:
        return InversionResult(code=w0, source_decade=0, trace=(),
                               converged=False, best_total=float("inf"))

    torch.manual_seed(cfg.seed)
    w = torch.from_numpy(np.array(w0.values)).unsqueeze(0).requires_grad_(True)
    opt = torch.optim.Adam([w], lr=cfg.lr)
    trace: list[tuple[int, float, float]] = []
    best_total, best_w = float("inf"), w.detach().clone()

    def losses(w_t):
        img = g(w_t)
        perc = stack.distance(img, target).mean()
        pix = (img - target).pow(2).mean()
        return perc, pix

    for step in range(steps + 1):
        perc, pix = losses(w)
        total = cfg.perceptual_weight * perc + cfg.pixel_weight * pix
        t = float(total)
        if not np.isfinite(t):
            raise SynthesisNumericError(f"projection diverged at step {step}")
        trace.append((step, float(perc), float(pix)))
        if t < best_total:
            best_total, best_w = t, w.detach().clone()
        if step == steps:
            break
        opt.zero_grad()
        total.backward()
        opt.step()

    diagnostics = {}
    if diagnose_wplus:
        diagnostics["wplus"] = _wplus_diagnostic(g, target, stack, cfg, steps)

    code = LatentCode(values=best_w[0].numpy(), space_tag="W")
    return InversionResult(code=code, source_decade=0, trace=tuple(trace),
                           converged=True, best_total=best_total,
                           diagnostics=diagnostics)


def project_many(images: list[np.ndarray], child: ParameterVector,
                 spec: GeneratorSpec, steps: int,
                 cfg: ProjectConfig = ProjectConfig(),
                 perceptual: RandomFeatureStack | None = None
                 ) -> list[InversionResult]:
    """Jointly optimize one code per image (losses stay per-image, so this is
    the batched equivalent of independent :func:`project` runs)."""
    if not images:
        return []
    targets = torch.cat([_check_image(x, spec) for x in images])
    child.check_spec(spec)
    child.check_finite()
    stack = perceptual if perceptual is not None else default_perceptual()
    g = build_generator(child, spec)
    w0 = mean_latent(child, spec, n=cfg.mean_w_samples, seed=cfg.seed)
    n = len(images)
    if steps == 0:
        return [InversionResult(code=w0, source_decade=0, trace=(), converged=False,
                                best_total=float("inf")) for _ in range(n)]

    torch.manual_seed(cfg.seed)
    w = (torch.from_numpy(np.array(w0.values)).unsqueeze(0)
         .repeat(n, 1).requires_grad_(True))
    opt = torch.optim.Adam([w], lr=cfg.lr)
    traces: list[list[tuple[int, float, float]]] = [[] for _ in range(n)]
    best_total = np.full(n, np.inf)
    best_w = w.detach().clone()

    for step in range(steps + 1):
        img = g(w)
        perc = stack.distance(img, targets)
        pix = (img - targets).pow(2).mean(dim=[1, 2, 3])
        total = cfg.perceptual_weight * perc + cfg.pixel_weight * pix
        t_np = total.detach().numpy()
        if not np.all(np.isfinite(t_np)):
            raise SynthesisNumericError(f"projection diverged at step {step}")
        for i in range(n):
            traces[i].append((step, float(perc[i]), float(pix[i])))
        better = t_np < best_total
        if better.any():
            best_total = np.where(better, t_np, best_total)
            best_w[better] = w.detach()[better].clone()
        if step == steps:
            break
        opt.zero_grad()
        total.sum().backward()
        opt.step()

    return [InversionResult(code=LatentCode(values=best_w[i].numpy(), space_tag="W"),
                            source_decade=0, trace=tuple(traces[i]), converged=True,
                            best_total=float(best_total[i]))
            for i in range(n)]


def _wplus_diagnostic(g, target, stack, cfg: ProjectConfig, steps: int) -> dict:
    """Per-slot code optimization, reported for comparison only (the W+ path
    is diagnostic: it is never used for tuning or transfer)."""
    slots = g.num_style_slots
    base = mean_latent(g.export_param_vector(), g.spec, n=cfg.mean_w_samples,
                       seed=cfg.seed)
    ws = torch.from_numpy(np.array(base.values)).repeat(slots, 1).requires_grad_(True)
    opt = torch.optim.Adam([ws], lr=cfg.lr)
    final_perc = final_pix = float("nan")
    for _ in range(steps):
        img = g.forward_styles([ws[i].unsqueeze(0) for i in range(slots)])
        perc = stack.distance(img, target).mean()
        pix = (img - target).pow(2).mean()
        total = cfg.perceptual_weight * perc + cfg.pixel_weight * pix
        opt.zero_grad()
        total.backward()
        opt.step()
        final_perc, final_pix = float(perc), float(pix)
    return {"final_perceptual": final_perc, "final_pixel": final_pix, "slots": slots}


def tune_pivotal(x: np.ndarray, inv: InversionResult, child: ParameterVector,
                 mask: WeightedMask, embedder: FaceEmbedder | None,
                 cfg: TmtConfig = TmtConfig(),
                 spec: GeneratorSpec | None = None,
                 perceptual: RandomFeatureStack | None = None) -> TuneResult:
    """Tune generator weights around the fixed pivot code.

    Minimizes masked perceptual + masked pixel + identity losses over the
    tunable blocks; output-color blocks stay bit-identical.  Stops early once
    the masked perceptual loss drops below ``cfg.lpips_stop_threshold``.
    """
    if spec is None:
        raise ValueError("spec is required")
    target = _check_image(x, spec)
    if mask.weights.shape != (spec.output_resolution, spec.output_resolution):
        raise SpecMismatchError("mask resolution does not match the image")
    if inv.code.space_tag != "W":
        raise ValueError("pivot code must live in W space")
    inv.code.check_spec(spec)
    stack = perceptual if perceptual is not None else default_perceptual()

    g = build_generator(child, spec)
    g.requires_grad_(True)
    g.set_requires_grad(set(spec.rgb_block_names), False)
    trainable = [p for p in g.parameters() if p.requires_grad]
    opt = torch.optim.Adam(trainable, lr=cfg.lr)
    w = torch.from_numpy(np.array(inv.code.values)).unsqueeze(0)

    e_target = None
    if embedder is not None and cfg.id_loss_weight > 0:
        e = embedder.embed(np.asarray(x, dtype=np.float32))
        if e is not None:
            e_target = torch.from_numpy(e.values).unsqueeze(0)

    trace: list[tuple[int, float, float, float]] = []
    early = False
    steps_run = 0
    for step in range(cfg.max_steps):
        img = g(w)
        perc = masked_loss(img, target, mask, "perceptual", perceptual=stack)
        if float(perc) < cfg.lpips_stop_threshold:
            early = True
            trace.append((step, float(perc), float("nan"), float("nan")))
            break
        pix = masked_loss(img, target, mask, "pixel")
        id_term = img.new_zeros(())
        if e_target is not None:
            e_img = embedder.embed_batch(img)
            id_term = identity_loss_from_embeddings(e_img, e_target).mean()
        total = (cfg.perceptual_loss_weight * perc + cfg.pixel_loss_weight * pix
                 + cfg.id_loss_weight * id_term)
        if not np.isfinite(float(total)):
            raise SynthesisNumericError(f"tuning diverged at step {step}")
        trace.append((step, float(perc), float(pix), float(id_term)))
        opt.zero_grad()
        total.backward()
        opt.step()
        steps_run = step + 1

    tuned = g.export_param_vector()
    if not params_equal(tuned, child, names=spec.rgb_block_names):
        raise FrozenBlockViolation(
            "output-color blocks drifted during tuning (hard failure)")
    return TuneResult(params=tuned, trace=tuple(trace), early_stopped=early,
                      steps_run=steps_run, id_available=e_target is not None)


def transform_across_decades(inv: InversionResult, offset: TmtOffset,
                             family: GeneratorFamily,
                             targets: list[int]) -> dict[int, np.ndarray]:
    """Re-synthesize the pivot identity in each target decade by applying the
    learned weight offset to that decade's generator."""
    offset.check_spec(family.spec)
    unknown = [t for t in targets if t not in family.children]
    if unknown:
        raise ValueError(f"unknown target decades {unknown}; family has {family.decades}")
    out = {}
    for d in targets:
        shifted = offset_apply(family.child(d), offset, family.spec)
        out[int(d)] = synthesize(inv.code, shifted, family.spec)
    return out


# -- persistence ------------------------------------------------------------------


def save_inversion(directory: Path, inv: InversionResult, spec: GeneratorSpec) -> None:
    directory = Path(directory)
    atomic_write_bytes(directory / "code.bin",
                       np.asarray(inv.code.values, dtype="<f4").tobytes())
    atomic_write_json(directory / "inversion.json", {
        "spec_hash": spec.spec_hash(),
        "space_tag": inv.code.space_tag,
        "source_decade": inv.source_decade,
        "converged": inv.converged,
        "best_total": inv.best_total,
        "trace": [list(t) for t in inv.trace],
        "diagnostics": inv.diagnostics,
    })


def load_inversion(directory: Path, spec: GeneratorSpec) -> InversionResult:
    directory = Path(directory)
    meta = json.loads((directory / "inversion.json").read_text())
    if meta["spec_hash"] != spec.spec_hash():
        raise SpecMismatchError("inversion artifact spec_hash mismatch")
    values = np.frombuffer((directory / "code.bin").read_bytes(), dtype="<f4")
    code = LatentCode(values=values.copy(), space_tag=meta["space_tag"])
    return InversionResult(code=code, source_decade=meta["source_decade"],
                           trace=tuple(tuple(t) for t in meta["trace"]),
                           converged=meta["converged"],
                           best_total=meta["best_total"],
                           diagnostics=meta.get("diagnostics", {}))
