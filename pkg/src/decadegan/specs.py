"""Architecture descriptors and exact parameter-space arithmetic.

A generator's full weight set is represented as a :class:`ParameterVector`:
a mapping from block names to frozen numpy arrays whose names and shapes are
dictated entirely by a :class:`GeneratorSpec`.  All cross-model operations
(layer swapping, weight-offset extraction and application) are defined here as
pure functions over these vectors, independent of any deep-learning backend.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

HASH_LEN = 16

# Block kinds.  "noise" blocks are fixed per-checkpoint buffers; everything
# else is a trainable weight.
KIND_MAPPING = "mapping"
KIND_CONST = "const"
KIND_CONV = "conv"
KIND_TORGB = "torgb"
KIND_NOISE = "noise"


class SpecMismatchError(ValueError):
    """Two objects built from different GeneratorSpecs were combined."""


class FrozenBlockViolation(ValueError):
    """An output-color block changed where it was required to stay fixed."""


class SynthesisNumericError(ArithmeticError):
    """Non-finite values encountered in weights or synthesis."""


@dataclass(frozen=True)
class BlockInfo:
    """Name, shape and role of one named weight block."""

    name: str
    shape: tuple[int, ...]
    kind: str
    resolution: int | None  # None for mapping-network blocks
    tunable: bool


def _default_channel_schedule() -> tuple[tuple[int, int], ...]:
    # Halving from 256 at 4x4, floored at 32 channels.
    return ((4, 256), (8, 128), (16, 64), (32, 32), (64, 32))


@dataclass(frozen=True)
class GeneratorSpec:
    """Describes a style-based synthesis network family member.

    ``channel_schedule`` maps feature resolution -> channel count and must
    cover every power of two from 4 up to ``output_resolution``.
    ``coarse_cut`` is the resolution at or below which a synthesis block
    counts as "coarse" for layer swapping.  ``rgb_block_names`` lists the
    output-color blocks that stay frozen during per-image tuning.
    """

    output_resolution: int = 64
    latent_dim: int = 128
    mapping_layers: int = 4
    channel_schedule: tuple[tuple[int, int], ...] = field(
        default_factory=_default_channel_schedule
    )
    coarse_cut: int = 32
    img_channels: int = 3
    rgb_block_names: tuple[str, ...] = (
        "synth.torgb.affine_weight",
        "synth.torgb.affine_bias",
        "synth.torgb.weight",
        "synth.torgb.bias",
    )

    def __post_init__(self):
        r = self.output_resolution
        if r < 8 or (r & (r - 1)) != 0:
            raise ValueError(f"output_resolution must be a power of two >= 8, got {r}")
        if self.latent_dim < 1 or self.mapping_layers < 1:
            raise ValueError("latent_dim and mapping_layers must be positive")
        sched = dict(self.channel_schedule)
        if sorted(sched) != list(self.resolutions()):
            raise ValueError(
                f"channel_schedule must cover resolutions {list(self.resolutions())}, "
                f"got {sorted(sched)}"
            )
        if any(c < 1 for c in sched.values()):
            raise ValueError("channel counts must be positive")
        if self.coarse_cut not in sched:
            raise ValueError(
                f"coarse_cut {self.coarse_cut} is not one of the schedule's resolutions"
            )
        names = {b.name for b in self.block_table()}
        missing = set(self.rgb_block_names) - names
        if missing:
            raise ValueError(f"rgb_block_names not in block table: {sorted(missing)}")

    def resolutions(self) -> tuple[int, ...]:
        res, out = [], []
        r = 4
        while r <= self.output_resolution:
            out.append(r)
            r *= 2
        return tuple(out)

    def channels(self, resolution: int) -> int:
        return dict(self.channel_schedule)[resolution]

    def block_table(self) -> tuple[BlockInfo, ...]:
        """Canonical ordered table of every block in a checkpoint."""
        d = self.latent_dim
        blocks: list[BlockInfo] = []
        for i in range(self.mapping_layers):
            blocks.append(BlockInfo(f"mapping.fc{i}.weight", (d, d), KIND_MAPPING, None, True))
            blocks.append(BlockInfo(f"mapping.fc{i}.bias", (d,), KIND_MAPPING, None, True))
        c4 = self.channels(4)
        blocks.append(BlockInfo("synth.const", (c4, 4, 4), KIND_CONST, 4, True))
        prev = c4
        for r in self.resolutions():
            ch = self.channels(r)
            convs = ("conv1",) if r == 4 else ("conv0", "conv1")
            for conv in convs:
                cin = prev if conv == "conv0" or r == 4 else ch
                base = f"synth.b{r}.{conv}"
                blocks.append(BlockInfo(f"{base}.affine_weight", (cin, d), KIND_CONV, r, True))
                blocks.append(BlockInfo(f"{base}.affine_bias", (cin,), KIND_CONV, r, True))
                blocks.append(BlockInfo(f"{base}.weight", (ch, cin, 3, 3), KIND_CONV, r, True))
                blocks.append(BlockInfo(f"{base}.bias", (ch,), KIND_CONV, r, True))
                blocks.append(BlockInfo(f"{base}.noise_strength", (), KIND_CONV, r, True))
                blocks.append(BlockInfo(f"{base}.noise", (r, r), KIND_NOISE, r, False))
            prev = ch
        top = self.channels(self.output_resolution)
        blocks.append(BlockInfo("synth.torgb.affine_weight", (top, d), KIND_TORGB,
                                self.output_resolution, True))
        blocks.append(BlockInfo("synth.torgb.affine_bias", (top,), KIND_TORGB,
                                self.output_resolution, True))
        blocks.append(BlockInfo("synth.torgb.weight", (self.img_channels, top, 1, 1),
                                KIND_TORGB, self.output_resolution, True))
        blocks.append(BlockInfo("synth.torgb.bias", (self.img_channels,), KIND_TORGB,
                                self.output_resolution, True))
        return tuple(blocks)

    def block(self, name: str) -> BlockInfo:
        for b in self.block_table():
            if b.name == name:
                return b
        raise KeyError(name)

    def tunable_block_names(self) -> tuple[str, ...]:
        return tuple(b.name for b in self.block_table() if b.tunable)

    def to_dict(self) -> dict:
        return {
            "output_resolution": self.output_resolution,
            "latent_dim": self.latent_dim,
            "mapping_layers": self.mapping_layers,
            "channel_schedule": [list(p) for p in self.channel_schedule],
            "coarse_cut": self.coarse_cut,
            "img_channels": self.img_channels,
            "rgb_block_names": list(self.rgb_block_names),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "GeneratorSpec":
        return cls(
            output_resolution=int(d["output_resolution"]),
            latent_dim=int(d["latent_dim"]),
            mapping_layers=int(d["mapping_layers"]),
            channel_schedule=tuple((int(r), int(c)) for r, c in d["channel_schedule"]),
            coarse_cut=int(d["coarse_cut"]),
            img_channels=int(d.get("img_channels", 3)),
            rgb_block_names=tuple(d["rgb_block_names"]),
        )

    def spec_hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:HASH_LEN]


def paper_profile_spec() -> GeneratorSpec:
    """Full-scale 256x256 profile (recorded, not exercised in tests)."""
    sched = ((4, 512), (8, 512), (16, 512), (32, 512), (64, 256), (128, 128), (256, 64))
    return GeneratorSpec(output_resolution=256, latent_dim=512, mapping_layers=8,
                         channel_schedule=sched, coarse_cut=32)


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr)  # contiguous copy; preserves 0-d shapes
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class ParameterVector:
    """A generator's full weight set: block name -> frozen float32 array."""

    blocks: Mapping[str, np.ndarray]
    spec_hash: str

    @classmethod
    def from_blocks(cls, blocks: Mapping[str, np.ndarray], spec: GeneratorSpec
                    ) -> "ParameterVector":
        table = {b.name: b for b in spec.block_table()}
        if set(blocks) != set(table):
            extra = sorted(set(blocks) - set(table))
            missing = sorted(set(table) - set(blocks))
            raise SpecMismatchError(
                f"block names do not match spec (extra={extra}, missing={missing})")
        frozen = {}
        for name, arr in blocks.items():
            arr = np.asarray(arr, dtype=np.float32)
            if arr.shape != table[name].shape:
                raise SpecMismatchError(
                    f"block {name}: shape {arr.shape} != spec shape {table[name].shape}")
            frozen[name] = _freeze(arr)
        return cls(blocks=frozen, spec_hash=spec.spec_hash())

    @classmethod
    def init_random(cls, spec: GeneratorSpec, seed: int = 0) -> "ParameterVector":
        """Fresh weights: unit-normal equalized-lr weights, zero biases,
        unit style-affine biases, zero noise strengths, fixed noise buffers."""
        rng = np.random.default_rng(seed)
        blocks = {}
        for b in spec.block_table():
            if b.name.endswith(".affine_bias"):
                arr = np.ones(b.shape, dtype=np.float32)
            elif b.name.endswith(".bias") or b.name.endswith(".noise_strength"):
                arr = np.zeros(b.shape, dtype=np.float32)
            else:  # weights, const input, noise buffers
                arr = rng.standard_normal(b.shape).astype(np.float32)
            blocks[b.name] = arr
        return cls.from_blocks(blocks, spec)

    def check_spec(self, spec: GeneratorSpec) -> None:
        if self.spec_hash != spec.spec_hash():
            raise SpecMismatchError(
                f"parameter spec_hash {self.spec_hash} != spec {spec.spec_hash()}")

    def check_finite(self) -> None:
        for name, arr in self.blocks.items():
            if not np.all(np.isfinite(arr)):
                raise SynthesisNumericError(f"non-finite values in block {name}")

    def with_block(self, name: str, arr: np.ndarray) -> "ParameterVector":
        if name not in self.blocks:
            raise KeyError(name)
        arr = np.asarray(arr, dtype=np.float32)
        if arr.shape != self.blocks[name].shape:
            raise SpecMismatchError(f"block {name}: shape mismatch")
        new = dict(self.blocks)
        new[name] = _freeze(arr)
        return ParameterVector(blocks=new, spec_hash=self.spec_hash)


def params_equal(a: ParameterVector, b: ParameterVector,
                 names: Iterable[str] | None = None) -> bool:
    """Bit-exact equality over the given block names (default: all)."""
    if a.spec_hash != b.spec_hash:
        return False
    names = list(names) if names is not None else list(a.blocks)
    return all(np.array_equal(a.blocks[n], b.blocks[n]) for n in names)


@dataclass(frozen=True)
class LatentCode:
    """A single latent vector tagged with the space it lives in."""

    values: np.ndarray
    space_tag: str  # "Z" or "W"

    def __post_init__(self):
        vals = _freeze(np.asarray(self.values, dtype=np.float32))
        object.__setattr__(self, "values", vals)
        if self.space_tag not in ("Z", "W"):
            raise ValueError(f"space_tag must be 'Z' or 'W', got {self.space_tag!r}")
        if vals.ndim != 1:
            raise ValueError("latent code must be one-dimensional")
        if not np.all(np.isfinite(vals)):
            raise SynthesisNumericError("non-finite latent code")

    def check_spec(self, spec: GeneratorSpec) -> None:
        if self.values.shape != (spec.latent_dim,):
            raise SpecMismatchError(
                f"latent length {self.values.shape[0]} != spec latent_dim {spec.latent_dim}")


@dataclass(frozen=True)
class TmtOffset:
    """A per-block weight delta learned on one decade, applicable to any decade.

    Deltas cover every tunable block and are identically zero on the
    output-color blocks.  Stored in float64 so that applying a delta to the
    base it was diffed from reproduces the tuned weights bit-exactly.
    """

    deltas: Mapping[str, np.ndarray]
    base_decade: int
    spec_hash: str

    @classmethod
    def from_deltas(cls, deltas: Mapping[str, np.ndarray], base_decade: int,
                    spec: GeneratorSpec) -> "TmtOffset":
        table = {b.name: b for b in spec.block_table() if b.tunable}
        if set(deltas) != set(table):
            raise SpecMismatchError("offset block names do not match tunable blocks")
        frozen = {}
        for name, arr in deltas.items():
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != table[name].shape:
                raise SpecMismatchError(f"offset block {name}: shape mismatch")
            frozen[name] = _freeze(arr)
        for name in spec.rgb_block_names:
            if np.any(frozen[name] != 0.0):
                raise FrozenBlockViolation(
                    f"nonzero delta on frozen output-color block {name}")
        return cls(deltas=frozen, base_decade=int(base_decade), spec_hash=spec.spec_hash())

    @classmethod
    def zero(cls, spec: GeneratorSpec, base_decade: int = 0) -> "TmtOffset":
        deltas = {b.name: np.zeros(b.shape, dtype=np.float64)
                  for b in spec.block_table() if b.tunable}
        return cls.from_deltas(deltas, base_decade, spec)

    def check_spec(self, spec: GeneratorSpec) -> None:
        if self.spec_hash != spec.spec_hash():
            raise SpecMismatchError(
                f"offset spec_hash {self.spec_hash} != spec {spec.spec_hash()}")


def layer_swap(child: ParameterVector, parent: ParameterVector,
               spec: GeneratorSpec) -> ParameterVector:
    """Blend: synthesis blocks at resolution <= coarse_cut come from the
    child, all finer synthesis blocks from the parent.  Mapping blocks stay
    with the child.  Used to build the blended generator for the identity
    loss, never for final outputs."""
    child.check_spec(spec)
    parent.check_spec(spec)
    blocks = {}
    for info in spec.block_table():
        if info.resolution is None or info.resolution <= spec.coarse_cut:
            blocks[info.name] = child.blocks[info.name]
        else:
            blocks[info.name] = parent.blocks[info.name]
    return ParameterVector.from_blocks(blocks, spec)


def offset_diff(tuned: ParameterVector, base: ParameterVector,
                spec: GeneratorSpec, base_decade: int = 0) -> TmtOffset:
    """Element-wise tuned - base over tunable blocks.

    Requires tuned and base to agree exactly on the output-color blocks;
    their deltas come out as exact zeros."""
    tuned.check_spec(spec)
    base.check_spec(spec)
    for name in spec.rgb_block_names:
        if not np.array_equal(tuned.blocks[name], base.blocks[name]):
            raise FrozenBlockViolation(
                f"tuned and base differ on frozen output-color block {name}")
    deltas = {}
    for info in spec.block_table():
        if not info.tunable:
            continue
        a = tuned.blocks[info.name].astype(np.float64)
        b = base.blocks[info.name].astype(np.float64)
        deltas[info.name] = a - b
    return TmtOffset.from_deltas(deltas, base_decade, spec)


def offset_apply(base: ParameterVector, offset: TmtOffset,
                 spec: GeneratorSpec) -> ParameterVector:
    """Element-wise base + delta over tunable blocks; output-color and noise
    blocks pass through unchanged."""
    base.check_spec(spec)
    offset.check_spec(spec)
    blocks = {}
    for info in spec.block_table():
        src = base.blocks[info.name]
        if info.tunable and info.name not in spec.rgb_block_names:
            summed = src.astype(np.float64) + offset.deltas[info.name]
            if not np.all(np.isfinite(summed)):
                raise SynthesisNumericError(
                    f"non-finite result applying offset to block {info.name}")
            blocks[info.name] = summed.astype(np.float32)
        else:
            blocks[info.name] = src
    return ParameterVector.from_blocks(blocks, spec)


def flatten_blocks(pv: ParameterVector, spec: GeneratorSpec,
                   kinds: tuple[str, ...] = (KIND_CONV,),
                   weights_only: bool = True) -> np.ndarray:
    """Concatenate selected blocks into one flat float64 vector (canonical
    block-table order).  Default: convolution kernel weights only."""
    pv.check_spec(spec)
    parts = []
    for info in spec.block_table():
        if info.kind not in kinds:
            continue
        if weights_only and not info.name.endswith(".weight"):
            continue
        parts.append(pv.blocks[info.name].astype(np.float64).ravel())
    return np.concatenate(parts)


def flatten_offset(offset: TmtOffset, spec: GeneratorSpec,
                   kinds: tuple[str, ...] = (KIND_CONV,),
                   weights_only: bool = True) -> np.ndarray:
    offset.check_spec(spec)
    parts = []
    for info in spec.block_table():
        if not info.tunable or info.kind not in kinds:
            continue
        if weights_only and not info.name.endswith(".weight"):
            continue
        parts.append(offset.deltas[info.name].ravel())
    return np.concatenate(parts)
