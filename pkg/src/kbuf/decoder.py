"""Refinement decoder: a U-Net of gated convolution blocks.

Each block is feature-conv(x) * sigmoid(gate-conv(x)) -> ReLU -> instance
norm, both convolutions 3x3. The encoder downsamples with stride-2 averages,
the decoder upsamples nearest-neighbor and concatenates the matching skip,
and a final 3x3 convolution plus sigmoid produces the RGB image. Inputs not
divisible by 2^levels are reflection-padded and the output cropped back.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

__all__ = ["UNetConfig", "GatedBlock", "UNetParams", "unet_forward",
           "gated_conv_block", "param_count"]


@dataclass(frozen=True)
class UNetConfig:
    widths: tuple[int, ...] = (16, 32, 64, 128, 256)
    in_channels: int = 8
    out_channels: int = 3
    width_mult: float = 1.0

    def __post_init__(self):
        if len(self.widths) < 2:
            raise ValueError("need at least two levels")
        if any(w < 1 for w in self.widths):
            raise ValueError("widths must be >= 1")

    @property
    def levels(self) -> int:
        """Number of downsampling steps."""
        return len(self.widths) - 1

    def scaled_widths(self) -> tuple[int, ...]:
        return tuple(max(1, int(round(w * self.width_mult))) for w in self.widths)


class GatedBlock:
    """Parameters of one gated convolution block (in_c -> out_c)."""

    def __init__(self, feat_w, feat_b, gate_w, gate_b, norm_g, norm_b):
        self.feat_w, self.feat_b = feat_w, feat_b
        self.gate_w, self.gate_b = gate_w, gate_b
        self.norm_g, self.norm_b = norm_g, norm_b

    @classmethod
    def create(cls, rng, in_c: int, out_c: int, dtype) -> "GatedBlock":
        s = (2.0 / (in_c * 9)) ** 0.5
        mk = lambda: ad.parameter(rng.normal(0.0, s, size=(out_c, in_c, 3, 3)).astype(dtype))
        return cls(mk(), ad.parameter(np.zeros(out_c, dtype=dtype)),
                   mk(), ad.parameter(np.zeros(out_c, dtype=dtype)),
                   ad.parameter(np.ones(out_c, dtype=dtype)),
                   ad.parameter(np.zeros(out_c, dtype=dtype)))

    def params(self):
        return [self.feat_w, self.feat_b, self.gate_w, self.gate_b,
                self.norm_g, self.norm_b]


def gated_conv_block(x: Tensor, block: GatedBlock) -> Tensor:
    """feature-conv(x) * sigmoid(gate-conv(x)), then ReLU, then instance norm."""
    feat = ad.conv2d(x, block.feat_w, block.feat_b)
    gate = ad.sigmoid(ad.conv2d(x, block.gate_w, block.gate_b))
    h = ad.relu(ad.mul(feat, gate))
    return ad.instance_norm(h, block.norm_g, block.norm_b)


class UNetParams:
    def __init__(self, config: UNetConfig, enc: list[GatedBlock],
                 dec: list[GatedBlock], out_w: Tensor, out_b: Tensor):
        self.config = config
        self.enc = enc
        self.dec = dec
        self.out_w, self.out_b = out_w, out_b

    @classmethod
    def create(cls, config: UNetConfig, seed: int = 0, dtype=np.float32) -> "UNetParams":
        rng = np.random.default_rng(seed)
        w = config.scaled_widths()
        enc = []
        prev = config.in_channels
        for width in w:
            enc.append(GatedBlock.create(rng, prev, width, dtype))
            prev = width
        dec = []
        for i in range(config.levels - 1, -1, -1):
            dec.append(GatedBlock.create(rng, w[i + 1] + w[i], w[i], dtype))
        s = (1.0 / (w[0] * 9)) ** 0.5
        out_w = ad.parameter(
            rng.normal(0.0, s, size=(config.out_channels, w[0], 3, 3)).astype(dtype))
        out_b = ad.parameter(np.zeros(config.out_channels, dtype=dtype))
        return cls(config, enc, dec, out_w, out_b)

    def params(self) -> list[Tensor]:
        out = []
        for b in self.enc + self.dec:
            out.extend(b.params())
        out += [self.out_w, self.out_b]
        return out

    @property
    def n_params(self) -> int:
        return sum(int(p.size) for p in self.params())


def param_count(config: UNetConfig) -> int:
    """Exact learnable-scalar count for a configuration (no allocation)."""
    w = config.scaled_widths()
    total = 0

    def block(in_c, out_c):
        return 2 * (out_c * in_c * 9 + out_c) + 2 * out_c

    prev = config.in_channels
    for width in w:
        total += block(prev, width)
        prev = width
    for i in range(config.levels - 1, -1, -1):
        total += block(w[i + 1] + w[i], w[i])
    total += config.out_channels * w[0] * 9 + config.out_channels
    return total


def unet_forward(fused: Tensor, params: UNetParams) -> Tensor:
    """Decode an (H, W, C) feature map to an (H, W, 3) image in (0, 1)."""
    h, w, c = fused.shape
    if c != params.config.in_channels:
        raise ValueError(f"expected {params.config.in_channels} channels, got {c}")
    x = ad.permute(fused, (2, 0, 1))
    step = 2 ** params.config.levels
    pad_h = (-h) % step
    pad_w = (-w) % step
    if pad_h or pad_w:
        x = ad.pad_reflect(x, (0, pad_h, 0, pad_w))

    skips = []
    for i, block in enumerate(params.enc):
        x = gated_conv_block(x, block)
        if i < len(params.enc) - 1:
            skips.append(x)
            x = ad.downsample2(x)
    for block, skip in zip(params.dec, reversed(skips)):
        x = ad.upsample2(x)
        x = ad.concat([x, skip], axis=0)
        x = gated_conv_block(x, block)
    x = ad.sigmoid(ad.conv2d(x, params.out_w, params.out_b))
    if pad_h or pad_w:
        x = ad.crop2d(x, (0, pad_h, 0, pad_w))
    return ad.permute(x, (1, 2, 0))
