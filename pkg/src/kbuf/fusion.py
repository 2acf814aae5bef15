"""Per-pixel fusion of the K feature layers.

A two-convolution network reads the stacked layer features and emits a
per-pixel weighting over the K layers, normalized with a softmax so the
fused map is always a convex combination of the layers. By default the
weight is a scalar per (layer, pixel) broadcast over channels; a per-channel
variant sits behind ``per_channel=True``.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .querygen import FeatureStack

__all__ = ["FusionParams", "fusion_mask", "fuse"]


class FusionParams:
    """conv1: (hidden, K*C, 3, 3), conv2: (K or K*C, hidden, 3, 3)."""

    def __init__(self, conv1_w, conv1_b, conv2_w, conv2_b, k, c, hidden,
                 per_channel):
        self.conv1_w, self.conv1_b = conv1_w, conv1_b
        self.conv2_w, self.conv2_b = conv2_w, conv2_b
        self.k, self.c, self.hidden = k, c, hidden
        self.per_channel = per_channel

    @classmethod
    def create(cls, k: int, c: int = 8, hidden: int = 64,
               per_channel: bool = False, seed: int = 0,
               dtype=np.float32) -> "FusionParams":
        rng = np.random.default_rng(seed)
        cin = k * c
        cout = k * c if per_channel else k
        s1 = (2.0 / (cin * 9)) ** 0.5
        s2 = (1.0 / (hidden * 9)) ** 0.5
        return cls(
            ad.parameter(rng.normal(0.0, s1, size=(hidden, cin, 3, 3)).astype(dtype)),
            ad.parameter(np.zeros(hidden, dtype=dtype)),
            ad.parameter(rng.normal(0.0, s2, size=(cout, hidden, 3, 3)).astype(dtype)),
            ad.parameter(np.zeros(cout, dtype=dtype)),
            k, c, hidden, per_channel,
        )

    def params(self) -> list[Tensor]:
        return [self.conv1_w, self.conv1_b, self.conv2_w, self.conv2_b]

    @property
    def n_params(self) -> int:
        return sum(int(p.size) for p in self.params())


def _stack_tensor(stack) -> Tensor:
    return stack.features if isinstance(stack, FeatureStack) else stack


def fusion_mask(stack, params: FusionParams) -> Tensor:
    """Per-pixel layer weights in [0, 1] summing to 1 over the K axis.

    Layout-in is (K, H, W, C); layers are flattened layer-major into the
    convolution's input channels. Returns (K, H, W), or (K, C, H, W) in the
    per-channel configuration.
    """
    feats = _stack_tensor(stack)
    k, h, w, c = feats.shape
    if k != params.k or c != params.c:
        raise ValueError(
            f"stack K={k}, C={c} does not match params K={params.k}, C={params.c}")
    x = ad.reshape(ad.permute(feats, (0, 3, 1, 2)), (k * c, h, w))
    hmid = ad.relu(ad.conv2d(x, params.conv1_w, params.conv1_b))
    logits = ad.relu(ad.conv2d(hmid, params.conv2_w, params.conv2_b))
    if params.per_channel:
        logits = ad.reshape(logits, (k, c, h, w))
    return ad.softmax(logits, axis=0)


def fuse(stack, mask: Tensor) -> Tensor:
    """Weighted sum of layers -> (H, W, C). Accepts a scalar mask (K, H, W)
    broadcast over channels or a per-channel mask (K, C, H, W)."""
    feats = _stack_tensor(stack)
    if mask.data.ndim == 4:
        mask = ad.permute(mask, (0, 2, 3, 1))
    return ad.fuse_layers(feats, mask)
