"""Experiment configuration: one JSON-serializable dataclass for the CLI."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .artifacts import digest_obj
from .inversion import ProjectConfig, TmtConfig
from .specs import GeneratorSpec
from .training import TrainConfig


def _desk_channels() -> tuple[tuple[int, int], ...]:
    # compact schedule sized for single-box CPU runs
    return ((4, 48), (8, 32), (16, 24), (32, 16), (64, 12))


@dataclass(frozen=True)
class ExperimentConfig:
    # architecture
    resolution: int = 64
    latent_dim: int = 64
    mapping_layers: int = 2
    channels: tuple[tuple[int, int], ...] = field(default_factory=_desk_channels)
    coarse_cut: int = 32

    # synthetic corpus
    decades: tuple[int, ...] = (1920, 1930, 1940)
    n_per_decade: int = 300
    per_decade_test: int = 25
    data_seed: int = 0

    # desk-scale backends
    embedder_steps: int = 350
    classifier_steps: int = 300

    # family training
    parent_iterations: int = 1200
    child_iterations: int = 2000
    batch_size: int = 4
    lr: float = 2e-3
    r1_gamma: float = 0.5
    r1_interval: int = 8
    id_loss_weight: float = 1.0
    id_loss_interval: int = 1

    # inversion and tuning
    project_steps: int = 150
    project_lr: float = 0.1
    tmt_max_steps: int = 120
    tmt_lr: float = 3e-4
    lpips_stop_threshold: float = 0.03
    pixel_loss_weight: float = 0.1
    perceptual_loss_weight: float = 1.0
    tmt_id_loss_weight: float = 0.1
    mask_weights: tuple[float, float, float] = (1.0, 0.1, 0.0)

    # evaluation
    id_threshold: float | None = None  # None: calibrate on the toy corpus

    seed: int = 0

    def spec(self) -> GeneratorSpec:
        return GeneratorSpec(
            output_resolution=self.resolution,
            latent_dim=self.latent_dim,
            mapping_layers=self.mapping_layers,
            channel_schedule=tuple((int(r), int(c)) for r, c in self.channels),
            coarse_cut=self.coarse_cut,
        )

    def train_config(self, iterations: int, seed_offset: int = 0) -> TrainConfig:
        return TrainConfig(
            iterations=iterations,
            batch_size=self.batch_size,
            lr=self.lr,
            r1_gamma=self.r1_gamma,
            r1_interval=self.r1_interval,
            id_loss_weight=self.id_loss_weight,
            id_loss_interval=self.id_loss_interval,
            decades=self.decades,
            seed=self.seed + seed_offset,
        )

    def project_config(self) -> ProjectConfig:
        return ProjectConfig(lr=self.project_lr, seed=self.seed)

    def tmt_config(self) -> TmtConfig:
        return TmtConfig(
            max_steps=self.tmt_max_steps,
            lpips_stop_threshold=self.lpips_stop_threshold,
            pixel_loss_weight=self.pixel_loss_weight,
            perceptual_loss_weight=self.perceptual_loss_weight,
            id_loss_weight=self.tmt_id_loss_weight,
            mask_weights=self.mask_weights,
            lr=self.tmt_lr,
        )

    def digest(self) -> str:
        return digest_obj(asdict(self))

    def to_file(self, path: Path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, default=list))

    @classmethod
    def from_file(cls, path: Path) -> "ExperimentConfig":
        d = json.loads(Path(path).read_text())
        return cls.from_dict(d)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        if "channels" in d:
            d["channels"] = tuple((int(r), int(c)) for r, c in d["channels"])
        for key in ("decades", "mask_weights"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)
