"""Input encodings for the learned feature fields.

Three encoders live here: sinusoidal positional encoding for reconstructed
points and ray directions, a real spherical-harmonics basis for per-pixel
directions, and a multiresolution hash grid sampled at the camera origin.
The hash-grid forward here is plain numpy; the differentiable path into its
tables goes through ``autodiff.weighted_gather`` using the corner indices and
weights computed by :func:`hash_corners`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "positional_encode",
    "sh_encode",
    "HashGrid",
    "make_hash_grid",
    "hash_corners",
    "hash_encode",
]


def positional_encode(p, octaves: int) -> np.ndarray:
    """Octave-major sinusoidal features ``(sin(2^k pi p), cos(2^k pi p))``.

    For input of dimension D, the output has 2 * octaves * D components: per
    octave first all sines, then all cosines.
    """
    if octaves < 1:
        raise ValueError("octaves must be >= 1")
    p = np.asarray(p, dtype=np.float64)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    if not np.all(np.isfinite(p)):
        raise ValueError("input contains non-finite values")
    n, d = p.shape
    out = np.empty((n, 2 * octaves * d), dtype=np.float64)
    for k in range(octaves):
        phase = (2.0 ** k) * np.pi * p
        out[:, 2 * k * d:(2 * k + 1) * d] = np.sin(phase)
        out[:, (2 * k + 1) * d:(2 * k + 2) * d] = np.cos(phase)
    return out[0] if single else out


# Real orthonormal spherical harmonics, bands l = 0..3, m = -l..l.
_SH_C0 = 0.28209479177387814
_SH_C1 = 0.4886025119029199
_SH_C2 = (1.0925484305920792, 1.0925484305920792, 0.31539156525252005,
          1.0925484305920792, 0.5462742152960396)
_SH_C3 = (0.5900435899266435, 2.890611442640554, 0.4570457994644658,
          0.3731763325901154, 0.4570457994644658, 1.445305721320277,
          0.5900435899266435)


def sh_encode(d, degree_bands: int) -> np.ndarray:
    """Real spherical-harmonic basis values for unit direction(s).

    Bands l = 0..degree_bands-1 ordered (l ascending, m from -l to l);
    output has degree_bands**2 components.
    """
    if degree_bands not in (1, 2, 3, 4):
        raise ValueError("degree_bands must be in 1..4")
    d = np.asarray(d, dtype=np.float64)
    single = d.ndim == 1
    d = np.atleast_2d(d)
    norms = np.linalg.norm(d, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        raise ValueError("directions must be unit length")
    x, y, z = d[:, 0], d[:, 1], d[:, 2]
    out = np.empty((d.shape[0], degree_bands ** 2), dtype=np.float64)
    out[:, 0] = _SH_C0
    if degree_bands > 1:
        out[:, 1] = -_SH_C1 * y
        out[:, 2] = _SH_C1 * z
        out[:, 3] = -_SH_C1 * x
    if degree_bands > 2:
        xx, yy, zz = x * x, y * y, z * z
        out[:, 4] = _SH_C2[0] * x * y
        out[:, 5] = -_SH_C2[1] * y * z
        out[:, 6] = _SH_C2[2] * (3.0 * zz - 1.0)
        out[:, 7] = -_SH_C2[3] * x * z
        out[:, 8] = _SH_C2[4] * (xx - yy)
    if degree_bands > 3:
        out[:, 9] = -_SH_C3[0] * y * (3.0 * xx - yy)
        out[:, 10] = _SH_C3[1] * x * y * z
        out[:, 11] = -_SH_C3[2] * y * (5.0 * zz - 1.0)
        out[:, 12] = _SH_C3[3] * z * (5.0 * zz - 3.0)
        out[:, 13] = -_SH_C3[4] * x * (5.0 * zz - 1.0)
        out[:, 14] = _SH_C3[5] * z * (xx - yy)
        out[:, 15] = -_SH_C3[6] * x * (xx - 3.0 * yy)
    return out[0] if single else out


# Per-axis primes for the spatial hash (InstantNGP-style; first axis unmixed).
_HASH_PRIMES = (1, 2654435761, 805459861)


@dataclass
class HashGrid:
    """Multiresolution feature grid with hashed storage per level.

    ``tables`` has shape (levels, table_size, features_per_level); level
    resolutions grow geometrically from ``base_resolution`` by
    ``growth_factor``. Positions are normalized into ``domain_min..domain_max``
    (clamped silently when outside).
    """

    levels: int
    features_per_level: int
    table_size: int
    base_resolution: int
    growth_factor: float
    domain_min: np.ndarray
    domain_max: np.ndarray
    tables: np.ndarray

    def __post_init__(self):
        if self.table_size & (self.table_size - 1):
            raise ValueError("table_size must be a power of two")
        if self.growth_factor <= 1.0:
            raise ValueError("growth_factor must exceed 1")
        self.domain_min = np.asarray(self.domain_min, dtype=np.float64)
        self.domain_max = np.asarray(self.domain_max, dtype=np.float64)
        if np.any(self.domain_max <= self.domain_min):
            raise ValueError("domain box must have positive extent")

    @property
    def output_dim(self) -> int:
        return self.levels * self.features_per_level

    def resolution(self, level: int) -> int:
        return int(np.floor(self.base_resolution * self.growth_factor ** level))


def make_hash_grid(domain_min, domain_max, *, levels: int = 16,
                   features_per_level: int = 2, table_size: int = 2 ** 14,
                   base_resolution: int = 16, growth_factor: float = 1.38,
                   seed: int = 0, dtype=np.float32) -> HashGrid:
    """Fresh grid with small uniform-random tables (deterministic in seed).

    The defaults give a 32-dim encoding; combined with 4 SH bands that is a
    48-dim rectifier input, which pins the rectifier MLP at 3,656 scalars.
    """
    rng = np.random.default_rng(seed)
    tables = rng.uniform(-1e-4, 1e-4,
                         size=(levels, table_size, features_per_level)).astype(dtype)
    return HashGrid(levels=levels, features_per_level=features_per_level,
                    table_size=table_size, base_resolution=base_resolution,
                    growth_factor=growth_factor,
                    domain_min=np.asarray(domain_min, dtype=np.float64),
                    domain_max=np.asarray(domain_max, dtype=np.float64),
                    tables=tables)


def _corner_index(grid: HashGrid, level: int, coords: np.ndarray) -> np.ndarray:
    """Table row for integer corner coordinates (..., 3) at one level."""
    res = grid.resolution(level)
    n_corners = (res + 1) ** 3
    c = coords.astype(np.uint64)
    if n_corners <= grid.table_size:
        side = np.uint64(res + 1)
        idx = c[..., 0] + side * (c[..., 1] + side * c[..., 2])
    else:
        idx = (c[..., 0] * np.uint64(_HASH_PRIMES[0])
               ^ c[..., 1] * np.uint64(_HASH_PRIMES[1])
               ^ c[..., 2] * np.uint64(_HASH_PRIMES[2]))
        idx &= np.uint64(grid.table_size - 1)
    return idx.astype(np.int64)


_CORNER_OFFSETS = np.array([[i, j, l] for i in (0, 1) for j in (0, 1) for l in (0, 1)],
                           dtype=np.int64)  # binary order: x fastest in bit 2


def hash_corners(o, grid: HashGrid) -> tuple[np.ndarray, np.ndarray]:
    """Corner table rows and trilinear weights for one position.

    Returns (idx, w), both (levels, 8). ``sum_j w[l, j] * tables[l, idx[l, j]]``
    is the level-l encoding. Positions outside the domain box clamp silently.
    """
    o = np.asarray(o, dtype=np.float64)
    t = (o - grid.domain_min) / (grid.domain_max - grid.domain_min)
    t = np.clip(t, 0.0, 1.0)
    idx = np.empty((grid.levels, 8), dtype=np.int64)
    w = np.empty((grid.levels, 8), dtype=np.float64)
    for level in range(grid.levels):
        res = grid.resolution(level)
        s = t * res
        cell = np.minimum(np.floor(s), res - 1).astype(np.int64)
        frac = s - cell
        corners = cell[None, :] + _CORNER_OFFSETS  # (8, 3)
        idx[level] = _corner_index(grid, level, corners)
        lam = np.where(_CORNER_OFFSETS == 1, frac[None, :], 1.0 - frac[None, :])
        w[level] = lam.prod(axis=1)
    return idx, w


def hash_encode(o, grid: HashGrid) -> np.ndarray:
    """Trilinear hash-grid encoding of a position; output (levels * F,)."""
    idx, w = hash_corners(o, grid)
    rows = grid.tables[np.arange(grid.levels)[:, None], idx]  # (L, 8, F)
    return (rows * w[:, :, None]).sum(axis=1).reshape(-1)
