"""Style-based synthesis network and discriminator (torch backend).

Parameter and buffer names inside :class:`GeneratorModule` match the block
names from :meth:`GeneratorSpec.block_table` exactly, so checkpoints move
between :class:`ParameterVector` and live modules without any renaming.
"""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .specs import (
    GeneratorSpec,
    LatentCode,
    ParameterVector,
    SynthesisNumericError,
)


class EqualizedLinear(nn.Module):
    """Linear layer with runtime weight scaling (unit-normal raw weights)."""

    def __init__(self, in_features: int, out_features: int):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(out_features, in_features))
        self.bias = nn.Parameter(torch.zeros(out_features))
        self.scale = 1.0 / math.sqrt(in_features)

    def forward(self, x):
        return F.linear(x, self.weight * self.scale, self.bias)


class MappingNetwork(nn.Module):
    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        for i in range(spec.mapping_layers):
            self.add_module(f"fc{i}", EqualizedLinear(spec.latent_dim, spec.latent_dim))
        self.n_layers = spec.mapping_layers

    def forward(self, z):
        x = z * torch.rsqrt(torch.mean(z * z, dim=1, keepdim=True) + 1e-8)
        for i in range(self.n_layers):
            x = getattr(self, f"fc{i}")(x)
            x = F.leaky_relu(x, 0.2) * math.sqrt(2.0)
        return x


class ModulatedConv(nn.Module):
    """Style-modulated convolution with optional demodulation and upsampling.

    Parameters are named so that ``synth.b{r}.{conv}.<param>`` lines up with
    the spec's block table: ``affine_weight``/``affine_bias`` produce the
    per-channel styles from w, ``weight``/``bias`` are the conv kernel, and
    ``noise_strength`` scales the fixed ``noise`` buffer.
    """

    def __init__(self, in_ch: int, out_ch: int, latent_dim: int, kernel: int,
                 resolution: int, demodulate: bool = True, up: bool = False,
                 noise: bool = True):
        super().__init__()
        self.affine_weight = nn.Parameter(torch.randn(in_ch, latent_dim))
        self.affine_bias = nn.Parameter(torch.ones(in_ch))
        self.weight = nn.Parameter(torch.randn(out_ch, in_ch, kernel, kernel))
        self.bias = nn.Parameter(torch.zeros(out_ch))
        self.has_noise = noise
        if noise:
            self.noise_strength = nn.Parameter(torch.zeros(()))
            self.register_buffer("noise", torch.randn(resolution, resolution))
        self.demodulate = demodulate
        self.up = up
        self.out_ch = out_ch
        self.padding = kernel // 2
        self.affine_scale = 1.0 / math.sqrt(latent_dim)
        self.weight_scale = 1.0 / math.sqrt(in_ch * kernel * kernel)

    def forward(self, x, w):
        batch, in_ch, h, width = x.shape
        styles = F.linear(w, self.affine_weight * self.affine_scale, self.affine_bias)
        weight = self.weight * self.weight_scale
        weight = weight.unsqueeze(0) * styles.view(batch, 1, in_ch, 1, 1)
        if self.demodulate:
            d = torch.rsqrt(weight.pow(2).sum(dim=[2, 3, 4]) + 1e-8)
            weight = weight * d.view(batch, self.out_ch, 1, 1, 1)
        if self.up:
            x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
            h, width = h * 2, width * 2
        x = x.reshape(1, batch * in_ch, h, width)
        weight = weight.reshape(batch * self.out_ch, in_ch, *weight.shape[3:])
        x = F.conv2d(x, weight, padding=self.padding, groups=batch)
        x = x.reshape(batch, self.out_ch, h, width)
        if self.has_noise:
            x = x + self.noise_strength * self.noise
        return x + self.bias.view(1, -1, 1, 1)


class SynthesisBlock(nn.Module):
    def __init__(self, spec: GeneratorSpec, resolution: int, in_ch: int):
        super().__init__()
        ch = spec.channels(resolution)
        self.convs = []
        if resolution > 4:
            self.conv0 = ModulatedConv(in_ch, ch, spec.latent_dim, 3, resolution, up=True)
            self.convs.append("conv0")
        self.conv1 = ModulatedConv(ch if resolution > 4 else in_ch, ch,
                                   spec.latent_dim, 3, resolution)
        self.convs.append("conv1")

    def forward(self, x, styles):
        for name in self.convs:
            x = getattr(self, name)(x, next(styles))
            x = F.leaky_relu(x, 0.2) * math.sqrt(2.0)
        return x


class SynthesisNetwork(nn.Module):
    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        self.const = nn.Parameter(torch.randn(spec.channels(4), 4, 4))
        self.resolutions = spec.resolutions()
        prev = spec.channels(4)
        for r in self.resolutions:
            self.add_module(f"b{r}", SynthesisBlock(spec, r, prev))
            prev = spec.channels(r)
        self.torgb = ModulatedConv(prev, spec.img_channels, spec.latent_dim, 1,
                                   spec.output_resolution, demodulate=False, noise=False)
        self.num_style_slots = sum(len(getattr(self, f"b{r}").convs)
                                   for r in self.resolutions) + 1

    def forward(self, styles):
        it = iter(styles)
        batch = styles[0].shape[0]
        x = self.const.unsqueeze(0).expand(batch, -1, -1, -1)
        for r in self.resolutions:
            x = getattr(self, f"b{r}")(x, it)
        return torch.tanh(self.torgb(x, next(it)))


class GeneratorModule(nn.Module):
    """Mapping + synthesis.  ``forward`` consumes a W-space batch directly;
    per-slot style lists (the W+ diagnostic path) go through ``forward_styles``."""

    def __init__(self, spec: GeneratorSpec, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.spec = spec
        self.mapping = MappingNetwork(spec)
        self.synth = SynthesisNetwork(spec)
        self.to(dtype)

    @property
    def num_style_slots(self) -> int:
        return self.synth.num_style_slots

    def map_z(self, z):
        return self.mapping(z)

    def forward(self, w):
        return self.synth([w] * self.num_style_slots)

    def forward_styles(self, styles: list[torch.Tensor]):
        if len(styles) != self.num_style_slots:
            raise ValueError(f"expected {self.num_style_slots} style slots")
        return self.synth(styles)

    # -- ParameterVector interop -------------------------------------------

    def block_tensors(self) -> dict[str, torch.Tensor]:
        out = dict(self.named_parameters())
        out.update(dict(self.named_buffers()))
        return out

    def load_param_vector(self, pv: ParameterVector) -> None:
        pv.check_spec(self.spec)
        tensors = self.block_tensors()
        with torch.no_grad():
            for name, arr in pv.blocks.items():
                t = tensors[name]
                t.copy_(torch.from_numpy(np.array(arr)))

    def export_param_vector(self) -> ParameterVector:
        blocks = {name: t.detach().to(torch.float32).cpu().numpy().copy()
                  for name, t in self.block_tensors().items()}
        return ParameterVector.from_blocks(blocks, self.spec)

    def set_requires_grad(self, names: set[str], flag: bool) -> None:
        for name, p in self.named_parameters():
            if name in names:
                p.requires_grad_(flag)


def build_generator(pv: ParameterVector, spec: GeneratorSpec,
                    dtype: torch.dtype = torch.float32) -> GeneratorModule:
    g = GeneratorModule(spec, dtype=torch.float32)
    g.load_param_vector(pv)
    g.to(dtype)
    g.requires_grad_(False)
    return g


def build_blended_generator(child_module: GeneratorModule, parent: ParameterVector,
                            spec: GeneratorSpec) -> GeneratorModule:
    """Blended generator sharing the child's coarse tensors *by reference*
    (its gradients flow back into the child) while fine blocks hold frozen
    copies of the parent's weights."""
    parent.check_spec(spec)
    blended = GeneratorModule(spec, dtype=next(child_module.parameters()).dtype)
    blended.load_param_vector(parent)
    blended.requires_grad_(False)
    child_tensors = child_module.block_tensors()
    for info in spec.block_table():
        if info.resolution is not None and info.resolution > spec.coarse_cut:
            continue
        _assign_tensor(blended, info.name, child_tensors[info.name])
    return blended


def _assign_tensor(module: nn.Module, dotted: str, tensor: torch.Tensor) -> None:
    parts = dotted.split(".")
    owner = module
    for p in parts[:-1]:
        owner = getattr(owner, p)
    setattr(owner, parts[-1], tensor)


def synthesize(code: LatentCode, params: ParameterVector, spec: GeneratorSpec,
               dtype: torch.dtype = torch.float32) -> np.ndarray:
    """Render one image from a latent code and a full weight set.

    Z-space codes pass through the mapping network first; W-space codes feed
    the synthesis blocks directly.  Deterministic: noise comes only from the
    checkpoint's fixed buffers.  Returns a float32 (channels, H, W) array in
    [-1, 1].
    """
    code.check_spec(spec)
    params.check_spec(spec)
    params.check_finite()
    g = build_generator(params, spec, dtype=dtype)
    with torch.no_grad():
        v = torch.from_numpy(np.array(code.values)).to(dtype).unsqueeze(0)
        w = g.map_z(v) if code.space_tag == "Z" else v
        img = g(w)[0]
    img = img.to(torch.float32).cpu().numpy()
    if not np.all(np.isfinite(img)):
        raise SynthesisNumericError("synthesis produced non-finite pixels")
    return img


def mean_latent(params: ParameterVector, spec: GeneratorSpec, n: int = 4096,
                seed: int = 0) -> LatentCode:
    """Mean W vector under standard-normal Z sampling (fixed seed)."""
    g = build_generator(params, spec)
    rng = np.random.default_rng(seed)
    z = torch.from_numpy(rng.standard_normal((n, spec.latent_dim)).astype(np.float32))
    with torch.no_grad():
        w = g.map_z(z).mean(dim=0)
    return LatentCode(values=w.numpy(), space_tag="W")


class EqualizedConv2d(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, padding: int = 0):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(out_ch, in_ch, kernel, kernel))
        self.bias = nn.Parameter(torch.zeros(out_ch))
        self.scale = 1.0 / math.sqrt(in_ch * kernel * kernel)
        self.padding = padding

    def forward(self, x):
        return F.conv2d(x, self.weight * self.scale, self.bias, padding=self.padding)


class DiscriminatorBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv0 = EqualizedConv2d(in_ch, in_ch, 3, padding=1)
        self.conv1 = EqualizedConv2d(in_ch, out_ch, 3, padding=1)
        self.skip = EqualizedConv2d(in_ch, out_ch, 1)

    def forward(self, x):
        y = self.skip(F.avg_pool2d(x, 2))
        x = F.leaky_relu(self.conv0(x), 0.2) * math.sqrt(2.0)
        x = F.leaky_relu(self.conv1(x), 0.2) * math.sqrt(2.0)
        x = F.avg_pool2d(x, 2)
        return (x + y) / math.sqrt(2.0)


class Discriminator(nn.Module):
    """Residual discriminator with minibatch-stddev at 4x4."""

    def __init__(self, spec: GeneratorSpec, mbstd_group: int = 4):
        super().__init__()
        res = list(spec.resolutions())
        self.from_rgb = EqualizedConv2d(spec.img_channels, spec.channels(res[-1]), 1)
        blocks = []
        for r in reversed(res[1:]):
            blocks.append(DiscriminatorBlock(spec.channels(r), spec.channels(r // 2)))
        self.blocks = nn.ModuleList(blocks)
        c4 = spec.channels(4)
        self.mbstd_group = mbstd_group
        self.final_conv = EqualizedConv2d(c4 + 1, c4, 3, padding=1)
        self.fc = EqualizedLinear(c4 * 16, c4)
        self.out = EqualizedLinear(c4, 1)

    def _mbstd(self, x):
        n, c, h, w = x.shape
        g = min(n, self.mbstd_group)
        while n % g:
            g -= 1
        y = x.reshape(g, n // g, c, h, w)
        y = y - y.mean(dim=0, keepdim=True)
        y = (y.square().mean(dim=0) + 1e-8).sqrt().mean(dim=[1, 2, 3])
        y = y.repeat(g).view(n, 1, 1, 1).expand(n, 1, h, w)
        return torch.cat([x, y], dim=1)

    def forward(self, x):
        x = F.leaky_relu(self.from_rgb(x), 0.2) * math.sqrt(2.0)
        for block in self.blocks:
            x = block(x)
        x = self._mbstd(x)
        x = F.leaky_relu(self.final_conv(x), 0.2) * math.sqrt(2.0)
        x = x.flatten(1)
        x = F.leaky_relu(self.fc(x), 0.2) * math.sqrt(2.0)
        return self.out(x)
