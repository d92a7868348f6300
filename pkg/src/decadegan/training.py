"""Adversarial fine-tuning of per-decade children from a common parent.

The generator phase combines the non-saturating GAN loss with an identity
loss computed on a *blended* image (child coarse layers, parent fine layers)
so that the embedder sees parent-like colors regardless of the decade.  The
discriminator phase uses the R1 gradient penalty on real images.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .family import GeneratorFamily
from .networks import (
    Discriminator,
    GeneratorModule,
    build_blended_generator,
    build_generator,
)
from .perception import FaceEmbedder, NoFaceSignal, identity_loss_from_embeddings
from .specs import (
    GeneratorSpec,
    LatentCode,
    ParameterVector,
    SynthesisNumericError,
    layer_swap,
)
from .toydata import DecadeDataset

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 2000
    batch_size: int = 8
    lr: float = 2e-3
    adam_betas: tuple[float, float] = (0.0, 0.99)
    r1_gamma: float = 0.5
    r1_interval: int = 8
    id_loss_weight: float = 1.0
    id_loss_interval: int = 1
    augment_flip: bool = False
    decades: tuple[int, ...] = ()
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        for name in ("lr", "r1_gamma", "id_loss_weight"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def digest(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True, default=list).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


@dataclass
class TrainResult:
    params: ParameterVector
    d_state: dict
    records: list[dict] = field(default_factory=list)
    id_skipped: int = 0


class FamilyTrainingError(RuntimeError):
    """A decade fine-tune failed; carries the partial results."""

    def __init__(self, message: str, completed: dict[int, ParameterVector]):
        super().__init__(message + f" (completed decades: {sorted(completed)})")
        self.completed = completed


def identity_loss(w: LatentCode, parent: ParameterVector, child: ParameterVector,
                  embedder: FaceEmbedder, spec: GeneratorSpec) -> float:
    """1 - cos_sim between embeddings of the parent image and the blended
    (child-coarse / parent-fine) image at the same latent.  In [0, 2].

    Raises :class:`NoFaceSignal` when the embedder finds no face in either
    image; callers skip such samples and count them.
    """
    from .networks import synthesize  # local import to keep module load light

    w.check_spec(spec)
    blended = layer_swap(child, parent, spec)
    img_parent = synthesize(w, parent, spec)
    img_blend = synthesize(w, blended, spec)
    e_p = embedder.embed(img_parent)
    e_b = embedder.embed(img_blend)
    if e_p is None or e_b is None:
        raise NoFaceSignal("embedder returned no face for an identity-loss sample")
    u = torch.from_numpy(e_p.values).unsqueeze(0)
    v = torch.from_numpy(e_b.values).unsqueeze(0)
    return float(identity_loss_from_embeddings(u, v)[0])


def _valid_rows(e: torch.Tensor) -> torch.Tensor:
    # embed_batch signals "no face" with an all-zero row
    return e.pow(2).sum(dim=-1) > 1e-12


def train_generator(spec: GeneratorSpec, dataset: DecadeDataset, cfg: TrainConfig,
                    init_g: ParameterVector | None = None,
                    init_d_state: dict | None = None,
                    blend_parent: ParameterVector | None = None,
                    embedder: FaceEmbedder | None = None) -> TrainResult:
    """Run the adversarial loop; returns final weights, D state and the log.

    When ``blend_parent`` and ``embedder`` are set, the identity loss is added
    to the generator phase with weight ``cfg.id_loss_weight``.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)

    if init_g is not None:
        g = build_generator(init_g, spec)
        g.requires_grad_(True)
    else:
        g = GeneratorModule(spec)
    d = Discriminator(spec)
    if init_d_state is not None:
        d.load_state_dict(init_d_state)

    if cfg.iterations == 0:
        return TrainResult(params=g.export_param_vector(), d_state=d.state_dict())

    use_id = (cfg.id_loss_weight > 0 and blend_parent is not None
              and embedder is not None)
    if use_id:
        parent_g = build_generator(blend_parent, spec)
        blended_g = build_blended_generator(g, blend_parent, spec)

    opt_g = torch.optim.Adam(g.parameters(), lr=cfg.lr, betas=cfg.adam_betas)
    opt_d = torch.optim.Adam(d.parameters(), lr=cfg.lr, betas=cfg.adam_betas)

    records: list[dict] = []
    id_skipped = 0
    latent = spec.latent_dim

    for it in range(cfg.iterations):
        # --- discriminator phase
        real = dataset.sample(rng, cfg.batch_size)
        z = torch.randn(cfg.batch_size, latent)
        with torch.no_grad():
            fake = g(g.map_z(z))
        if cfg.augment_flip:
            flip = torch.rand(cfg.batch_size) < 0.5
            real = torch.where(flip.view(-1, 1, 1, 1), real.flip(-1), real)
            fake = torch.where(flip.view(-1, 1, 1, 1), fake.flip(-1), fake)
        d_loss = F.softplus(d(fake)).mean() + F.softplus(-d(real)).mean()
        if cfg.r1_gamma > 0 and it % cfg.r1_interval == 0:
            real_req = real.detach().requires_grad_(True)
            score = d(real_req).sum()
            (grad,) = torch.autograd.grad(score, real_req, create_graph=True)
            r1 = grad.pow(2).sum(dim=[1, 2, 3]).mean()
            d_loss = d_loss + (cfg.r1_gamma / 2.0) * r1 * cfg.r1_interval
        opt_d.zero_grad()
        d_loss.backward()
        opt_d.step()

        # --- generator phase
        z = torch.randn(cfg.batch_size, latent)
        w = g.map_z(z)
        fake = g(w)
        g_loss = F.softplus(-d(fake)).mean()
        id_val = float("nan")
        if use_id and it % cfg.id_loss_interval == 0:
            with torch.no_grad():
                img_parent = parent_g(w.detach())
                e_p = embedder.embed_batch(img_parent)
            img_blend = blended_g(w)
            e_b = embedder.embed_batch(img_blend)
            valid = _valid_rows(e_p) & _valid_rows(e_b)
            id_skipped += int((~valid).sum())
            if valid.any():
                id_losses = identity_loss_from_embeddings(e_b[valid], e_p[valid].detach())
                id_term = id_losses.mean()
                g_loss = g_loss + cfg.id_loss_weight * id_term
                id_val = float(id_term.detach())
        opt_g.zero_grad()
        g_loss.backward()
        opt_g.step()

        dl, gl = float(d_loss.detach()), float(g_loss.detach())
        if not (np.isfinite(dl) and np.isfinite(gl)):
            raise SynthesisNumericError(
                f"training diverged at iteration {it}: d_loss={dl}, g_loss={gl}")
        records.append({"iteration": it, "d_loss": dl, "g_loss": gl,
                        "id_loss": id_val})

    g.requires_grad_(False)
    return TrainResult(params=g.export_param_vector(), d_state=d.state_dict(),
                       records=records, id_skipped=id_skipped)


def finetune_decade(parent: ParameterVector, images: DecadeDataset, cfg: TrainConfig,
                    spec: GeneratorSpec, embedder: FaceEmbedder | None = None,
                    d_state: dict | None = None) -> ParameterVector:
    """Fine-tune one child from the parent on one decade's images.

    Zero iterations returns the parent unchanged.
    """
    parent.check_spec(spec)
    if cfg.iterations == 0:
        return parent
    result = train_generator(spec, images, cfg, init_g=parent, init_d_state=d_state,
                             blend_parent=parent, embedder=embedder)
    if result.id_skipped:
        log.info("identity loss skipped %d samples (no face signal)", result.id_skipped)
    return result.params


def train_family(parent: ParameterVector, datasets: dict[int, DecadeDataset],
                 cfg: TrainConfig, spec: GeneratorSpec,
                 embedder: FaceEmbedder | None = None,
                 d_state: dict | None = None,
                 logdir=None) -> GeneratorFamily:
    """Independent fine-tune per decade from the same parent."""
    if len(datasets) < 2:
        raise ValueError("a family requires at least 2 decades")
    children: dict[int, ParameterVector] = {}
    for decade in sorted(datasets):
        decade_cfg = TrainConfig(**{**asdict(cfg),
                                    "seed": cfg.seed + int(decade),
                                    "decades": ()})
        try:
            result = train_generator(spec, datasets[decade], decade_cfg,
                                     init_g=parent, init_d_state=d_state,
                                     blend_parent=parent, embedder=embedder)
        except Exception as exc:
            raise FamilyTrainingError(
                f"fine-tune failed for decade {decade}: {exc}", children) from exc
        children[decade] = result.params
        if logdir is not None:
            _write_log(logdir, f"child_{decade}", result.records)
    return GeneratorFamily(spec=spec, parent=parent, children=children,
                           provenance=cfg.digest())


def _write_log(logdir, name: str, records: list[dict]) -> None:
    from pathlib import Path

    path = Path(logdir) / f"{name}_log.jsonl"
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        for rec in records:
            f.write(json.dumps(rec) + "\n")
