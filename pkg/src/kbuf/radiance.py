"""Learned radiance features and the compositing kernels built on them.

* ``RadianceMLP`` maps positionally encoded (point, direction) pairs to a
  C-dim latent feature per query.
* ``RectifierMLP`` adds a per-pixel correction computed from the hash-encoded
  camera origin and the SH-encoded per-pixel ray, restoring pixel sensitivity
  after query pruning collapses a point's pixels onto one direction.
* ``gaussian_blend`` composites an ordered list of opacity-weighted fragments
  whose features get a direction-dependent correction from ``BlendMLP``.
* ``naive_volume_baseline`` integrates per-slot colors with standard emission
  -absorption quadrature; it exists as the reference the fused pipeline is
  measured against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoders import HashGrid, hash_corners, positional_encode, sh_encode

__all__ = [
    "RadianceMLP",
    "RectifierMLP",
    "BlendMLP",
    "GaussianFragmentList",
    "radiance_features",
    "rectified_features",
    "gaussian_blend",
    "naive_volume_baseline",
]

POS_OCTAVES = 10
DIR_OCTAVES = 4
SH_BANDS = 4


def _init_layer(rng, fan_in: int, fan_out: int, dtype, final: bool = False):
    scale = (1.0 / fan_in) ** 0.5 if final else (2.0 / fan_in) ** 0.5
    w = ad.parameter(rng.normal(0.0, scale, size=(fan_in, fan_out)).astype(dtype))
    b = ad.parameter(np.zeros(fan_out, dtype=dtype))
    return w, b


class RadianceMLP:
    """Five dense layers (256, 256, 256, 128, C) with the direction encoding
    concatenated after the second layer; hidden ReLU, linear output."""

    HIDDEN = (256, 256, 256, 128)

    def __init__(self, layers: list[tuple[Tensor, Tensor]], out_channels: int):
        self.layers = layers
        self.out_channels = out_channels

    @classmethod
    def create(cls, out_channels: int = 8, seed: int = 0, dtype=np.float32,
               hidden: tuple[int, ...] | None = None) -> "RadianceMLP":
        rng = np.random.default_rng(seed)
        h = cls.HIDDEN if hidden is None else tuple(hidden)
        pos_dim = 2 * POS_OCTAVES * 3
        dir_dim = 2 * DIR_OCTAVES * 3
        dims_in = [pos_dim, h[0], h[1] + dir_dim, h[2], h[3]]
        dims_out = [h[0], h[1], h[2], h[3], out_channels]
        layers = [
            _init_layer(rng, i, o, dtype, final=(n == len(dims_in) - 1))
            for n, (i, o) in enumerate(zip(dims_in, dims_out))
        ]
        return cls(layers, out_channels)

    def params(self) -> list[Tensor]:
        return [t for pair in self.layers for t in pair]

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params())


def radiance_features(x_batch, d_batch, mlp: RadianceMLP) -> Tensor:
    """Latent features for (N, 3) query points with (N, 3) unit directions."""
    x_batch = np.atleast_2d(np.asarray(x_batch, dtype=np.float64))
    d_batch = np.atleast_2d(np.asarray(d_batch, dtype=np.float64))
    if x_batch.shape != d_batch.shape or x_batch.shape[1] != 3:
        raise ValueError("queries must be (N, 3) positions and directions")
    if np.any(np.abs(np.linalg.norm(d_batch, axis=1) - 1.0) > 1e-6):
        raise ValueError("directions must be unit length")
    dtype = mlp.layers[0][0].dtype
    pe_x = positional_encode(x_batch, POS_OCTAVES).astype(dtype)
    pe_d = positional_encode(d_batch, DIR_OCTAVES).astype(dtype)
    return radiance_forward(ad.constant(pe_x), ad.constant(pe_d), mlp)


def radiance_forward(pe_x: Tensor, pe_d: Tensor, mlp: RadianceMLP) -> Tensor:
    """Trunk on pre-encoded inputs (the trainer caches the encodings)."""
    (w1, b1), (w2, b2), (w3, b3), (w4, b4), (w5, b5) = mlp.layers
    h = ad.relu(ad.dense(pe_x, w1, b1))
    h = ad.relu(ad.dense(h, w2, b2))
    h = ad.concat([h, pe_d], axis=1)
    h = ad.relu(ad.dense(h, w3, b3))
    h = ad.relu(ad.dense(h, w4, b4))
    return ad.dense(h, w5, b5)


class RectifierMLP:
    """Two dense layers (64, C) over hash(origin) ++ SH(ray); owns the grid.

    ``n_params`` counts the MLP scalars only (3,656 in the default config);
    the hash tables are reported separately via ``grid_param_count``.
    """

    HIDDEN = 64

    def __init__(self, w1, b1, w2, b2, grid: HashGrid, tables: Tensor,
                 out_channels: int, sh_bands: int):
        self.w1, self.b1, self.w2, self.b2 = w1, b1, w2, b2
        self.grid = grid
        self.tables = tables  # (levels * table_size, F) view of grid storage
        self.out_channels = out_channels
        self.sh_bands = sh_bands

    @classmethod
    def create(cls, grid: HashGrid, out_channels: int = 8, seed: int = 0,
               dtype=np.float32, sh_bands: int = SH_BANDS,
               hidden: int | None = None) -> "RectifierMLP":
        rng = np.random.default_rng(seed)
        h = cls.HIDDEN if hidden is None else hidden
        in_dim = grid.output_dim + sh_bands ** 2
        w1, b1 = _init_layer(rng, in_dim, h, dtype)
        w2, b2 = _init_layer(rng, h, out_channels, dtype, final=True)
        grid.tables = grid.tables.astype(dtype, copy=False)
        tables = ad.parameter(grid.tables.reshape(-1, grid.features_per_level))
        grid.tables = tables.data.reshape(grid.tables.shape)
        return cls(w1, b1, w2, b2, grid, tables, out_channels, sh_bands)

    def params(self) -> list[Tensor]:
        return [self.w1, self.b1, self.w2, self.b2, self.tables]

    @property
    def n_params(self) -> int:
        return sum(int(p.size) for p in (self.w1, self.b1, self.w2, self.b2))

    @property
    def grid_param_count(self) -> int:
        return int(self.tables.size)

    def encode_origin(self, o) -> Tensor:
        """Differentiable hash encoding of the camera origin, shape (L*F,)."""
        idx, w = hash_corners(o, self.grid)
        flat_idx = idx + (np.arange(self.grid.levels) * self.grid.table_size)[:, None]
        per_level = ad.weighted_gather(self.tables, flat_idx, w)
        return ad.reshape(per_level, (self.grid.output_dim,))

    def forward(self, encoded: Tensor) -> Tensor:
        h = ad.relu(ad.dense(encoded, self.w1, self.b1))
        return ad.dense(h, self.w2, self.b2)


def rectified_features(point_feat: Tensor, o, d_j_batch, slot_to_point,
                       rect: RectifierMLP, *, cache=None) -> Tensor:
    """Per-slot features: shared point feature plus the per-pixel correction.

    ``point_feat`` is (N, C) from the radiance trunk; ``d_j_batch`` (M, 3)
    holds each slot's pixel ray and ``slot_to_point`` maps slots to trunk
    rows. The correction MLP runs once per distinct ray. ``cache`` may carry
    ``(sh_unique, inverse)`` precomputed by the trainer.
    """
    slot_to_point = np.asarray(slot_to_point, dtype=np.int64)
    if cache is not None:
        sh_unique, inverse = cache
    else:
        d_j_batch = np.asarray(d_j_batch, dtype=np.float64)
        uniq, inverse = np.unique(d_j_batch, axis=0, return_inverse=True)
        sh_unique = sh_encode(uniq, rect.sh_bands)
    dtype = rect.w1.dtype
    n_unique = sh_unique.shape[0]
    hash_feat = rect.encode_origin(o)
    hash_rows = ad.tile_rows(hash_feat, n_unique)
    enc = ad.concat([hash_rows, ad.constant(sh_unique.astype(dtype))], axis=1)
    correction_unique = rect.forward(enc)
    correction = ad.gather_rows(correction_unique, inverse.reshape(-1))
    shared = ad.gather_rows(point_feat, slot_to_point)
    return ad.add(shared, correction)


class BlendMLP:
    """Direction-conditioned feature correction for ordered fragment blending."""

    WIDTHS = (64, 64, 32)

    def __init__(self, layers, out_channels, sh_bands):
        self.layers = layers
        self.out_channels = out_channels
        self.sh_bands = sh_bands

    @classmethod
    def create(cls, out_channels: int = 32, seed: int = 0, dtype=np.float32,
               sh_bands: int = SH_BANDS) -> "BlendMLP":
        rng = np.random.default_rng(seed)
        dims = [sh_bands ** 2, cls.WIDTHS[0], cls.WIDTHS[1]]
        outs = [cls.WIDTHS[0], cls.WIDTHS[1], out_channels]
        layers = [
            _init_layer(rng, i, o, dtype, final=(n == 2))
            for n, (i, o) in enumerate(zip(dims, outs))
        ]
        return cls(layers, out_channels, sh_bands)

    def params(self):
        return [t for pair in self.layers for t in pair]

    @property
    def n_params(self):
        return sum(p.size for p in self.params())

    def forward(self, dirs: np.ndarray) -> Tensor:
        enc = sh_encode(np.atleast_2d(dirs), self.sh_bands)
        h = ad.constant(enc.astype(self.layers[0][0].dtype))
        (w1, b1), (w2, b2), (w3, b3) = self.layers
        h = ad.relu(ad.dense(h, w1, b1))
        h = ad.relu(ad.dense(h, w2, b2))
        return ad.dense(h, w3, b3)


@dataclass
class GaussianFragmentList:
    """Front-to-back ordered fragments: opacities, features, view directions."""

    alphas: Tensor  # (N,)
    feats: Tensor  # (N, C)
    dirs: np.ndarray  # (N, 3) unit

    def __post_init__(self):
        a = self.alphas.data
        if np.any(a < 0) or np.any(a > 1):
            raise ValueError("alphas must lie in [0, 1]")
        if self.feats.shape[0] != a.shape[0] or self.dirs.shape != (a.shape[0], 3):
            raise ValueError("fragment arrays disagree on length")


def gaussian_blend(frags: GaussianFragmentList, mlp: BlendMLP) -> Tensor:
    """Ordered compositing of direction-corrected fragment features -> (C,)."""
    n = frags.alphas.shape[0]
    if n == 0:
        return ad.constant(np.zeros(mlp.out_channels, dtype=mlp.layers[0][0].dtype))
    corrected = ad.add(mlp.forward(frags.dirs), frags.feats)
    return ad.ordered_blend(frags.alphas, corrected)


def naive_volume_baseline(depths: np.ndarray, mask: np.ndarray,
                          raw_rgb: Tensor, raw_sigma: Tensor,
                          far_delta: float) -> Tensor:
    """Emission-absorption quadrature over per-pixel depth samples.

    ``depths``/``mask`` are (K, H, W) with occupied slots packed first and
    ascending; ``raw_rgb`` (K, H, W, 3) and ``raw_sigma`` (K, H, W) are the
    network outputs, mapped through sigmoid / softplus here. The interval of
    the last occupied sample is ``far_delta`` (callers pass the scene's
    bounding-sphere diameter). Unoccupied slots get zero-length intervals and
    therefore contribute nothing.
    """
    k, h, w = depths.shape
    if mask.shape != (k, h, w) or raw_sigma.shape != (k, h, w):
        raise ValueError("depth/mask/sigma layouts disagree")
    if raw_rgb.shape != (k, h, w, 3):
        raise ValueError("rgb layout disagrees")
    delta = np.zeros((k, h, w), dtype=raw_sigma.dtype)
    if k > 1:
        nxt = depths[1:]
        cur = depths[:-1]
        both = mask[1:] & mask[:-1]
        delta[:-1] = np.where(both, nxt - cur, 0.0)
    is_last = mask & ~np.roll(mask, -1, axis=0) if k > 1 else mask.copy()
    if k > 1:
        is_last[-1] = mask[-1]
    delta = np.where(is_last, far_delta, delta)
    delta = np.where(mask, delta, 0.0)

    sigma = ad.softplus(raw_sigma)
    rgb = ad.sigmoid(raw_rgb)
    neg_tau = ad.scale(ad.mul(sigma, ad.constant(delta)), -1.0)
    alpha = ad.scale(ad.sub(ad.exp(neg_tau), ad.constant(np.ones_like(delta))), -1.0)
    return ad.alpha_composite_k(alpha, rgb)
