"""Query construction from K-deep buffers, redundancy pruning, and the
scatter of per-slot features back into K pixel-wise feature maps.

A point splatted over several pixels yields one buffer slot per covered
pixel, all sharing the point's camera distance. In pruned mode a single
query survives per visible point: its position is reconstructed along one
representative ray (by default the ray of the smallest occupied pixel id)
and the per-slot rays are kept only for the downstream correction term.
Unpruned mode keeps one query per slot.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .raster import KZBuffer, OccupancyMap
from .scene import Camera, ray_direction

__all__ = [
    "QuerySet",
    "FeatureStack",
    "DM_POLICIES",
    "reconstruct_x",
    "build_queries",
    "reorganize",
]

DM_POLICIES = ("minimum", "random", "average")


@dataclass
class QuerySet:
    """Queries plus the slot table linking buffer slots to query rows.

    ``qx``/``qd``/``qz`` hold one row per query: per distinct visible point
    in pruned mode, per buffer slot otherwise. ``slot_*`` arrays enumerate
    every occupied buffer slot in (pixel id, layer) order.
    """

    qx: np.ndarray  # (N, 3) reconstructed positions
    qd: np.ndarray  # (N, 3) unit directions fed to the radiance trunk
    qz: np.ndarray  # (N,) camera distances
    point_ids: np.ndarray  # (N,) originating point ids
    slot_layer: np.ndarray  # (M,)
    slot_pix: np.ndarray  # (M,) pixel ids W*py + px
    slot_query: np.ndarray  # (M,) row into qx
    slot_dj: np.ndarray  # (M, 3) per-slot pixel rays
    pruned: bool
    width: int
    height: int
    k: int

    @property
    def n_queries(self) -> int:
        return self.qx.shape[0]

    @property
    def n_slots(self) -> int:
        return self.slot_pix.shape[0]


def reconstruct_x(o, z, d) -> np.ndarray:
    """Point(s) at distance z from origin o along unit direction d."""
    z = np.asarray(z, dtype=np.float64)
    if np.any(z <= 0):
        raise ValueError("distance must be positive")
    o = np.asarray(o, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    return o + z[..., None] * d if z.ndim else o + z * d


def build_queries(buf: KZBuffer, occ: OccupancyMap, camera: Camera,
                  prune: bool = True, dm_policy: str = "minimum",
                  seed: int = 0) -> QuerySet:
    """Turn a buffer into query points plus the slot table.

    Pruned mode keeps one query per visible point, choosing its direction by
    ``dm_policy``: the ray of the minimum occupied pixel id, a seeded uniform
    choice among occupied pixels, or the normalized mean of their rays (a
    degenerate zero mean falls back to the minimum rule). Unpruned mode keeps
    one query per slot along that slot's own ray.
    """
    if dm_policy not in DM_POLICIES:
        raise ValueError(f"unknown dm_policy '{dm_policy}'")
    occ.validate_against(buf)
    W, H = buf.width, buf.height
    o = camera.origin

    meta, slot_dist = buf.flat_slots()
    slot_layer, slot_pix, slot_pid = meta
    px = slot_pix % W
    py = slot_pix // W
    slot_dj = (ray_direction(camera, px, py)
               if slot_pix.size else np.empty((0, 3)))

    if not prune:
        z = slot_dist.astype(np.float64)
        qx = reconstruct_x(o, z, slot_dj)
        return QuerySet(qx=qx, qd=slot_dj.copy(), qz=z,
                        point_ids=slot_pid.copy(),
                        slot_layer=slot_layer, slot_pix=slot_pix,
                        slot_query=np.arange(slot_pix.size, dtype=np.int64),
                        slot_dj=slot_dj, pruned=False,
                        width=W, height=H, k=buf.k)

    # group slots by point: within a group pixels are unique and ascending
    order = np.lexsort((slot_pix, slot_pid))
    spid = slot_pid[order]
    spix = slot_pix[order]
    sdist = slot_dist[order]
    first = np.ones(spid.size, dtype=bool)
    if spid.size:
        first[1:] = spid[1:] != spid[:-1]
    starts = np.nonzero(first)[0]
    counts = np.diff(starts, append=spid.size)
    pids = spid[starts]
    n = pids.size
    # camera distance is shared by all of a point's slots; take the first
    qz = sdist[starts].astype(np.float64)

    if n == 0:
        qd = np.empty((0, 3))
    elif dm_policy == "minimum":
        mp = spix[starts]
        qd = ray_direction(camera, mp % W, mp // W)
    elif dm_policy == "random":
        rng = np.random.default_rng(seed)
        pick = starts + (rng.random(n) * counts).astype(np.int64)
        chosen = spix[pick]
        qd = ray_direction(camera, chosen % W, chosen // W)
    else:  # average
        dirs = ray_direction(camera, spix % W, spix // W)
        mean = np.add.reduceat(dirs, starts, axis=0) / counts[:, None]
        norm = np.linalg.norm(mean, axis=1)
        degenerate = norm < 1e-12
        qd = mean / np.where(degenerate, 1.0, norm)[:, None]
        if degenerate.any():
            mp = spix[starts[degenerate]]
            qd[degenerate] = ray_direction(camera, mp % W, mp // W)
    qx = reconstruct_x(o, qz, qd) if n else np.empty((0, 3))

    slot_query = np.searchsorted(pids, slot_pid)
    return QuerySet(qx=qx, qd=qd, qz=qz, point_ids=pids.astype(np.int64),
                    slot_layer=slot_layer, slot_pix=slot_pix,
                    slot_query=slot_query.astype(np.int64), slot_dj=slot_dj,
                    pruned=True, width=W, height=H, k=buf.k)


@dataclass
class FeatureStack:
    """K x H x W x C features with zeros wherever the mask is unoccupied."""

    features: Tensor
    mask: np.ndarray  # (K, H, W) bool

    def __post_init__(self):
        if self.features.shape[:3] != self.mask.shape:
            raise ValueError("feature/mask layout mismatch")

    @property
    def k(self):
        return self.mask.shape[0]

    @property
    def shape(self):
        return self.features.shape


def reorganize(queries: QuerySet, features: Tensor, channels: int) -> FeatureStack:
    """Scatter per-slot features into the dense (K, H, W, C) stack.

    Rows of ``features`` align with the slot table; untouched cells stay
    zero with a false mask. Backward routes gradients to the source rows.
    """
    K, H, W = queries.k, queries.height, queries.width
    if features.shape != (queries.n_slots, channels):
        raise ValueError(
            f"features {features.shape} do not match {queries.n_slots} slots "
            f"x {channels} channels")
    lin = queries.slot_layer * (H * W) + queries.slot_pix
    if np.unique(lin).size != lin.size:
        raise ValueError("duplicate slot targets")
    flat = ad.scatter_rows(features, lin, K * H * W)
    stack = ad.reshape(flat, (K, H, W, channels))
    mask = np.zeros(K * H * W, dtype=bool)
    mask[lin] = True
    return FeatureStack(features=stack, mask=mask.reshape(K, H, W))
