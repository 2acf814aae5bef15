"""Software point rasterizer that keeps the K nearest fragments per pixel.

Each point is splatted as a screen-space disk; every covered pixel records a
(point id, camera distance) fragment and only the K closest survive. Alongside
the buffer we build, for every surviving point, the sorted set of pixel ids it
occupies (this drives query pruning downstream).

Distances are computed in float64 and stored as float32; ordering and
truncation happen on the stored float32 values with point id as tie-break,
so the buffer invariants hold on exactly what is stored (and what the KZB
file format can round-trip).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .scene import Camera, PointCloud, project

__all__ = [
    "Fragment",
    "KZBuffer",
    "OccupancyMap",
    "occupancy_from_buffer",
    "pixel_id",
    "screen_radius",
    "rasterize_k",
    "depth_insert",
    "save_kzb",
    "load_kzb",
]


@dataclass(frozen=True)
class Fragment:
    point_id: int
    dist: float

    def __post_init__(self):
        if not (self.dist > 0 and np.isfinite(self.dist)):
            raise ValueError("fragment distance must be positive and finite")


class KZBuffer:
    """Per-pixel lists of up to K fragments, sorted by ascending distance.

    Stored densely: ``point_ids``/``dists`` are (H, W, K) with counts in
    ``counts``; unused slots hold point id -1 and dist +inf.
    """

    def __init__(self, width: int, height: int, k: int,
                 point_ids: np.ndarray | None = None,
                 dists: np.ndarray | None = None,
                 counts: np.ndarray | None = None):
        self.width = width
        self.height = height
        self.k = k
        shape = (height, width, k)
        self.point_ids = np.full(shape, -1, dtype=np.int32) if point_ids is None else point_ids
        self.dists = np.full(shape, np.inf, dtype=np.float32) if dists is None else dists
        self.counts = np.zeros((height, width), dtype=np.int32) if counts is None else counts

    def slot(self, px: int, py: int) -> list[Fragment]:
        n = int(self.counts[py, px])
        return [
            Fragment(int(self.point_ids[py, px, i]), float(self.dists[py, px, i]))
            for i in range(n)
        ]

    @property
    def total_fragments(self) -> int:
        return int(self.counts.sum())

    def occupied_mask(self) -> np.ndarray:
        """(K, H, W) boolean, True where a slot holds a fragment."""
        ar = np.arange(self.k)
        return (ar[:, None, None] < self.counts[None, :, :])

    def flat_slots(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """All occupied slots as (layer, pixel_id, point_id, dist) arrays.

        Ordered by pixel id then layer.
        """
        mask = self.occupied_mask()  # (K, H, W)
        kk, yy, xx = np.nonzero(mask)
        pix = yy * self.width + xx
        order = np.lexsort((kk, pix))
        kk, yy, xx = kk[order], yy[order], xx[order]
        pix = pix[order]
        pid = self.point_ids[yy, xx, kk]
        dist = self.dists[yy, xx, kk]
        return np.stack([kk, pix, pid], axis=0).astype(np.int64), dist

    def validate(self) -> None:
        """Check sortedness, capacity and uniqueness invariants; raises on failure."""
        cnt = self.counts
        if cnt.max(initial=0) > self.k:
            raise ValueError("pixel exceeds K fragments")
        mask = self.occupied_mask().transpose(1, 2, 0)  # (H, W, K)
        if np.any(self.point_ids[mask] < 0):
            raise ValueError("occupied slot holds invalid point id")
        d = self.dists.astype(np.float64).copy()
        d[~mask] = np.inf
        pid = self.point_ids.astype(np.float64).copy()
        pid[~mask] = np.inf
        both = mask[:, :, :-1] & mask[:, :, 1:]
        a, b = d[:, :, :-1], d[:, :, 1:]
        pa, pb = pid[:, :, :-1], pid[:, :, 1:]
        bad = both & ((a > b) | ((a == b) & (pa >= pb)))
        if np.any(bad):
            raise ValueError("per-pixel fragments are not strictly sorted")


class OccupancyMap:
    """point id -> strictly increasing array of pixel ids the point occupies."""

    def __init__(self, mapping: dict[int, np.ndarray]):
        self._map = mapping

    def pixels(self, point_id: int) -> np.ndarray:
        return self._map[point_id]

    def __contains__(self, point_id: int) -> bool:
        return point_id in self._map

    def __len__(self) -> int:
        return len(self._map)

    def point_ids(self) -> np.ndarray:
        return np.fromiter(self._map.keys(), dtype=np.int64, count=len(self._map))

    def items(self):
        return self._map.items()

    def validate_against(self, buf: KZBuffer) -> None:
        """Verify the exact (point, pixel) <-> fragment correspondence."""
        meta, _ = buf.flat_slots()
        buf_key = np.sort(meta[2] * np.int64(buf.width * buf.height) + meta[1])
        pids, pixes = [], []
        for pid, pix in self._map.items():
            if np.any(np.diff(pix) <= 0):
                raise ValueError(f"pixel ids for point {pid} not strictly increasing")
            pids.append(np.full(pix.size, pid, dtype=np.int64))
            pixes.append(pix)
        if pids:
            our_key = np.sort(np.concatenate(pids) * np.int64(buf.width * buf.height)
                              + np.concatenate(pixes))
        else:
            our_key = np.empty(0, dtype=np.int64)
        if not np.array_equal(buf_key, our_key):
            raise ValueError("occupancy map inconsistent with buffer fragments")


def occupancy_from_buffer(buf: KZBuffer) -> OccupancyMap:
    """Rebuild the point -> pixels mapping from retained fragments."""
    meta, _ = buf.flat_slots()
    _, pix, pid = meta
    order = np.lexsort((pix, pid))
    opid, opix = pid[order], pix[order]
    if opid.size == 0:
        return OccupancyMap({})
    boundaries = np.nonzero(np.diff(opid))[0] + 1
    groups = np.split(opix, boundaries)
    ids = opid[np.concatenate([[0], boundaries])]
    return OccupancyMap({int(i): g.astype(np.int64) for i, g in zip(ids, groups)})


def pixel_id(width: int, px: int, py: int):
    """Row-major pixel id ``W*py + px``, bijective over the image."""
    px = np.asarray(px)
    py = np.asarray(py)
    if np.any(px < 0) or np.any(px >= width) or np.any(py < 0):
        raise ValueError("pixel indices out of range")
    out = width * py + px
    return int(out) if out.ndim == 0 else out


def screen_radius(tau: float, focal: float, dist) -> np.ndarray | float:
    """Perspective splat radius in pixels, floored at half a pixel."""
    dist = np.asarray(dist, dtype=np.float64)
    if np.any(dist <= 0):
        raise ValueError("distance must be positive")
    out = np.maximum(tau * focal / dist, 0.5)
    return float(out) if out.ndim == 0 else out


def depth_insert(slot: list[Fragment], frag: Fragment, k: int) -> list[Fragment]:
    """Sorted insert of one fragment, evicting the farthest beyond capacity K."""
    key = (frag.dist, frag.point_id)
    i = 0
    while i < len(slot) and (slot[i].dist, slot[i].point_id) < key:
        i += 1
    out = slot[:i] + [frag] + slot[i:]
    if len(out) > k:
        out = out[:k]
    return out


_CHUNK_PAIRS = 4_000_000  # candidate (point, pixel) pairs per processing chunk


def rasterize_k(cloud: PointCloud, camera: Camera, tau: float, k: int,
                ) -> tuple[KZBuffer, OccupancyMap]:
    """Splat every visible point and keep the K nearest fragments per pixel.

    Coverage rule: a pixel receives a fragment iff its center lies within the
    projected disk (inclusive). Ties in stored distance break by ascending
    point id. Fully vectorized; deterministic.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    W, H = camera.width, camera.height
    uv, dist, visible = project(camera, cloud.positions)
    radius = np.maximum(tau * camera.focal / np.where(visible, dist, 1.0), 0.5)

    u, v = uv[:, 0], uv[:, 1]
    x0 = np.maximum(np.ceil(u - radius - 0.5), 0).astype(np.int64)
    x1 = np.minimum(np.floor(u + radius - 0.5), W - 1).astype(np.int64)
    y0 = np.maximum(np.ceil(v - radius - 0.5), 0).astype(np.int64)
    y1 = np.minimum(np.floor(v + radius - 0.5), H - 1).astype(np.int64)
    ok = visible & (x1 >= x0) & (y1 >= y0)
    cand = np.nonzero(ok)[0]

    buf = KZBuffer(W, H, k)
    if cand.size == 0:
        return buf, OccupancyMap({})

    pid_parts, pix_parts, dist_parts = [], [], []
    start = 0
    areas = (x1[cand] - x0[cand] + 1) * (y1[cand] - y0[cand] + 1)
    cuts = np.searchsorted(np.cumsum(areas), np.arange(_CHUNK_PAIRS, areas.sum() + _CHUNK_PAIRS, _CHUNK_PAIRS))
    for stop in np.unique(np.minimum(cuts + 1, cand.size)):
        idx = cand[start:stop]
        start = stop
        if idx.size == 0:
            continue
        nx = x1[idx] - x0[idx] + 1
        ny = y1[idx] - y0[idx] + 1
        counts = nx * ny
        owner = np.repeat(np.arange(idx.size), counts)
        local = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
        px = x0[idx][owner] + local % nx[owner]
        py = y0[idx][owner] + local // nx[owner]
        dx = px + 0.5 - u[idx][owner]
        dy = py + 0.5 - v[idx][owner]
        inside = dx * dx + dy * dy <= radius[idx][owner] ** 2
        pid_parts.append(idx[owner][inside])
        pix_parts.append((py * W + px)[inside])
        dist_parts.append(dist[idx][owner][inside].astype(np.float32))

    pid = np.concatenate(pid_parts)
    pix = np.concatenate(pix_parts)
    d32 = np.concatenate(dist_parts)
    if pid.size == 0:
        return buf, OccupancyMap({})

    # global top-K per pixel: sort by (pixel, stored dist, point id), keep rank < K
    order = np.lexsort((pid, d32, pix))
    pid, pix, d32 = pid[order], pix[order], d32[order]
    group_start = np.zeros(pix.size, dtype=bool)
    group_start[0] = True
    group_start[1:] = pix[1:] != pix[:-1]
    start_idx = np.maximum.accumulate(np.where(group_start, np.arange(pix.size), 0))
    rank = np.arange(pix.size) - start_idx
    keep = rank < k
    pid, pix, d32, rank = pid[keep], pix[keep], d32[keep], rank[keep]

    py, px = pix // W, pix % W
    buf.point_ids[py, px, rank] = pid.astype(np.int32)
    buf.dists[py, px, rank] = d32
    cnt = np.zeros(H * W, dtype=np.int32)
    np.add.at(cnt, pix, 1)
    buf.counts = cnt.reshape(H, W)

    occ_order = np.lexsort((pix, pid))
    opid, opix = pid[occ_order], pix[occ_order]
    boundaries = np.nonzero(np.diff(opid))[0] + 1
    groups = np.split(opix, boundaries)
    ids = opid[np.concatenate([[0], boundaries])] if opid.size else np.empty(0, dtype=np.int64)
    occ = OccupancyMap({int(i): g.astype(np.int64) for i, g in zip(ids, groups)})
    return buf, occ


# ---------------------------------------------------------------------------
# Binary dump (magic "KZB1")


def save_kzb(path, buf: KZBuffer) -> None:
    """Serialize a buffer: header (magic, u32 W/H/K) then per pixel a u8
    count followed by count x (u32 point id, f32 dist)."""
    out = bytearray()
    out += b"KZB1"
    out += struct.pack("<III", buf.width, buf.height, buf.k)
    counts = buf.counts.reshape(-1)
    ids = buf.point_ids.reshape(-1, buf.k)
    ds = buf.dists.reshape(-1, buf.k)
    rec = np.dtype([("pid", "<u4"), ("dist", "<f4")])
    for i in range(counts.size):
        n = int(counts[i])
        out += struct.pack("B", n)
        if n:
            block = np.empty(n, dtype=rec)
            block["pid"] = ids[i, :n]
            block["dist"] = ds[i, :n]
            out += block.tobytes()
    Path(path).write_bytes(bytes(out))


def load_kzb(path) -> KZBuffer:
    raw = Path(path).read_bytes()
    if raw[:4] != b"KZB1":
        raise ValueError("not a KZB file (bad magic)")
    W, H, K = struct.unpack_from("<III", raw, 4)
    buf = KZBuffer(W, H, K)
    off = 16
    rec = np.dtype([("pid", "<u4"), ("dist", "<f4")])
    flat_ids = buf.point_ids.reshape(-1, K)
    flat_d = buf.dists.reshape(-1, K)
    flat_c = buf.counts.reshape(-1)
    for i in range(H * W):
        n = raw[off]
        off += 1
        if n:
            block = np.frombuffer(raw, dtype=rec, count=n, offset=off)
            off += n * rec.itemsize
            flat_ids[i, :n] = block["pid"]
            flat_d[i, :n] = block["dist"]
        flat_c[i] = n
    if off != len(raw):
        raise ValueError("trailing bytes after pixel records")
    return buf
