"""Scene data model: point clouds, pinhole cameras, view sets, and file I/O.

Conventions fixed here and relied on everywhere else:

* Continuous image coordinates run over ``[0, W] x [0, H]`` and the center
  of pixel ``(px, py)`` sits at ``(px + 0.5, py + 0.5)``.
* Camera space is right-handed with +x right, +y down, +z forward;
  ``x_cam = R @ x_world + t`` and the camera origin is ``o = -R.T @ t``.
* Depth stored for a point is the Euclidean camera distance ``|p - o|``,
  not camera-space z, so that ``o + dist * ray`` lands back on the sphere
  of radius ``dist`` for unit rays.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

__all__ = [
    "PointCloud",
    "Camera",
    "View",
    "ViewSet",
    "PlyError",
    "load_ply",
    "save_ply",
    "ray_direction",
    "project",
    "look_at",
    "orbit_camera",
    "make_synthetic_scene",
    "add_point_noise",
    "paint_reference",
    "read_image",
    "write_image",
    "save_cameras",
    "load_cameras",
    "save_scene",
    "load_scene",
]

SCENE_KINDS = ("textured-sphere", "checker-cube", "two-plane")


@dataclass(frozen=True)
class PointCloud:
    """World-space points with optional per-point RGB colors in [0, 1]."""

    positions: np.ndarray
    colors: np.ndarray | None = None

    def __post_init__(self):
        pos = np.ascontiguousarray(np.asarray(self.positions, dtype=np.float64))
        if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape[0] == 0:
            raise ValueError("positions must be a non-empty (N, 3) array")
        if not np.all(np.isfinite(pos)):
            raise ValueError("positions contain non-finite values")
        object.__setattr__(self, "positions", pos)
        if self.colors is not None:
            col = np.ascontiguousarray(np.asarray(self.colors, dtype=np.float64))
            if col.shape != pos.shape:
                raise ValueError("colors must match positions in shape")
            if col.min() < 0.0 or col.max() > 1.0:
                raise ValueError("colors must lie in [0, 1]")
            object.__setattr__(self, "colors", col)

    def __len__(self):
        return self.positions.shape[0]

    def bounding_sphere(self) -> tuple[np.ndarray, float]:
        """Center and radius of a sphere enclosing every point (centroid based)."""
        center = self.positions.mean(axis=0)
        radius = float(np.linalg.norm(self.positions - center, axis=1).max())
        return center, radius


@dataclass(frozen=True)
class Camera:
    """Pinhole camera with a rigid world-to-camera transform."""

    width: int
    height: int
    focal: float
    cx: float
    cy: float
    rotation: np.ndarray  # (3, 3), world -> camera
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be >= 1")
        if not self.focal > 0:
            raise ValueError("focal length must be positive")
        rot = np.ascontiguousarray(np.asarray(self.rotation, dtype=np.float64))
        tr = np.ascontiguousarray(np.asarray(self.translation, dtype=np.float64))
        if rot.shape != (3, 3) or tr.shape != (3,):
            raise ValueError("rotation must be (3, 3) and translation (3,)")
        if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-9):
            raise ValueError("rotation is not orthonormal")
        if not np.isclose(np.linalg.det(rot), 1.0, atol=1e-9):
            raise ValueError("rotation must have determinant +1")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", tr)

    @property
    def origin(self) -> np.ndarray:
        """World-space camera position (the inverse image of camera-space zero)."""
        return -self.rotation.T @ self.translation


@dataclass(frozen=True)
class View:
    camera: Camera
    image: np.ndarray  # (H, W, 3) in [0, 1]
    split: str = "train"

    def __post_init__(self):
        img = np.asarray(self.image, dtype=np.float64)
        if img.shape != (self.camera.height, self.camera.width, 3):
            raise ValueError(
                f"image shape {img.shape} does not match camera "
                f"{self.camera.height}x{self.camera.width}"
            )
        object.__setattr__(self, "image", img)


@dataclass
class ViewSet:
    """Cameras paired with ground-truth images, tagged train/test."""

    views: list[View]
    tau: float | None = None  # splat radius the scene was authored for

    def split(self, tag: str) -> list[View]:
        return [v for v in self.views if v.split == tag]

    @property
    def train_views(self) -> list[View]:
        return self.split("train")

    @property
    def test_views(self) -> list[View]:
        return self.split("test")

    def __len__(self):
        return len(self.views)


# ---------------------------------------------------------------------------
# Projection math


def ray_direction(camera: Camera, px, py) -> np.ndarray:
    """Unit world-space direction through pixel center(s) ``(px+0.5, py+0.5)``.

    Accepts scalars or equally shaped arrays; returns (..., 3).
    """
    px = np.asarray(px, dtype=np.float64)
    py = np.asarray(py, dtype=np.float64)
    if np.any(px < 0) or np.any(px >= camera.width) or np.any(py < 0) or np.any(py >= camera.height):
        raise ValueError("pixel coordinates out of image bounds")
    x = (px + 0.5 - camera.cx) / camera.focal
    y = (py + 0.5 - camera.cy) / camera.focal
    d_cam = np.stack([x, y, np.ones_like(x)], axis=-1)
    d_world = d_cam @ camera.rotation  # == R.T @ d per row
    return d_world / np.linalg.norm(d_world, axis=-1, keepdims=True)


def project(camera: Camera, points) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pinhole projection of world points.

    Returns ``(uv, dist, visible)`` where ``uv`` is the continuous image
    coordinate (pixel centers at half-integers), ``dist`` the Euclidean
    camera distance, and ``visible`` is False for points at or behind the
    camera plane. Works on a single (3,) point or an (N, 3) batch.
    """
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if not np.all(np.isfinite(pts)):
        raise ValueError("points contain non-finite values")
    cam = pts @ camera.rotation.T + camera.translation
    z = cam[:, 2]
    visible = z > 1e-12
    safe_z = np.where(visible, z, 1.0)
    u = camera.focal * cam[:, 0] / safe_z + camera.cx
    v = camera.focal * cam[:, 1] / safe_z + camera.cy
    uv = np.stack([u, v], axis=-1)
    dist = np.linalg.norm(pts - camera.origin, axis=1)
    if single:
        return uv[0], dist[0], visible[0]
    return uv, dist, visible


def look_at(eye, center, up=(0.0, 1.0, 0.0)) -> tuple[np.ndarray, np.ndarray]:
    """World-to-camera (R, t) for a camera at ``eye`` looking at ``center``."""
    eye = np.asarray(eye, dtype=np.float64)
    center = np.asarray(center, dtype=np.float64)
    up = np.asarray(up, dtype=np.float64)
    forward = center - eye
    forward = forward / np.linalg.norm(forward)
    right = np.cross(forward, up)
    nr = np.linalg.norm(right)
    if nr < 1e-12:
        raise ValueError("view direction is parallel to the up vector")
    right = right / nr
    down = np.cross(forward, right)
    rot = np.stack([right, down, forward], axis=0)
    t = -rot @ eye
    return rot, t


def orbit_camera(azimuth: float, *, radius: float, elevation: float,
                 width: int, height: int, focal: float) -> Camera:
    """Camera on an orbit of fixed radius/elevation, aimed at the origin."""
    eye = radius * np.array([
        np.cos(azimuth) * np.cos(elevation),
        np.sin(elevation),
        np.sin(azimuth) * np.cos(elevation),
    ])
    rot, t = look_at(eye, (0.0, 0.0, 0.0))
    return Camera(width=width, height=height, focal=focal,
                  cx=width / 2.0, cy=height / 2.0, rotation=rot, translation=t)


# ---------------------------------------------------------------------------
# PLY I/O

_PLY_SCALARS = {
    "char": ("b", 1), "int8": ("b", 1),
    "uchar": ("B", 1), "uint8": ("B", 1),
    "short": ("h", 2), "int16": ("h", 2),
    "ushort": ("H", 2), "uint16": ("H", 2),
    "int": ("i", 4), "int32": ("i", 4),
    "uint": ("I", 4), "uint32": ("I", 4),
    "float": ("f", 4), "float32": ("f", 4),
    "double": ("d", 8), "float64": ("d", 8),
}


class PlyError(ValueError):
    """Malformed PLY input; carries the byte offset of the offending region."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def load_ply(path) -> PointCloud:
    """Read an ASCII or binary-little-endian PLY point cloud.

    Requires float x/y/z vertex properties; uchar red/green/blue become
    colors scaled by 1/255 when present. Other fixed-size scalar vertex
    properties are skipped.
    """
    raw = Path(path).read_bytes()
    end_tag = b"end_header\n"
    header_end = raw.find(end_tag)
    if not raw.startswith(b"ply") or header_end < 0:
        raise PlyError("not a PLY file (missing 'ply'/'end_header')", 0)
    body_start = header_end + len(end_tag)
    header_lines = raw[:header_end].decode("ascii", errors="replace").splitlines()

    fmt = None
    elements: list[tuple[str, int, list[tuple[str, str]]]] = []
    offset = 0
    for line in header_lines:
        tokens = line.strip().split()
        if not tokens or tokens[0] == "comment":
            offset += len(line) + 1
            continue
        if tokens[0] == "format":
            if len(tokens) < 2 or tokens[1] not in ("ascii", "binary_little_endian"):
                raise PlyError(f"unsupported PLY format {tokens[1:]!r}", offset)
            fmt = tokens[1]
        elif tokens[0] == "element":
            if len(tokens) != 3:
                raise PlyError("malformed element line", offset)
            elements.append((tokens[1], int(tokens[2]), []))
        elif tokens[0] == "property":
            if not elements:
                raise PlyError("property before any element", offset)
            if tokens[1] == "list":
                raise PlyError("list properties are not supported", offset)
            if tokens[1] not in _PLY_SCALARS:
                raise PlyError(f"unsupported property type '{tokens[1]}'", offset)
            elements[-1][2].append((tokens[1], tokens[2]))
        offset += len(line) + 1
    if fmt is None:
        raise PlyError("header missing format line", 0)

    vertex = next((e for e in elements if e[0] == "vertex"), None)
    if vertex is None:
        raise PlyError("no vertex element", body_start)
    if elements.index(vertex) != 0:
        raise PlyError("vertex element must come first", body_start)
    _, count, props = vertex
    names = [n for _, n in props]
    for need in ("x", "y", "z"):
        if need not in names:
            raise PlyError(f"vertex element lacks '{need}' property", body_start)
    has_color = all(c in names for c in ("red", "green", "blue"))

    if fmt == "ascii":
        text = raw[body_start:].decode("ascii", errors="replace")
        rows = text.splitlines()
        if len([r for r in rows if r.strip()]) < count:
            raise PlyError(
                f"vertex element promises {count} rows, body has fewer", len(raw)
            )
        data = {n: np.empty(count, dtype=np.float64) for n in names}
        seen = 0
        pos = body_start
        for row in rows:
            if seen == count:
                break
            stripped = row.split()
            if stripped:
                if len(stripped) < len(names):
                    raise PlyError("vertex row has too few values", pos)
                for (typ, name), tok in zip(props, stripped):
                    data[name][seen] = float(tok)
                seen += 1
            pos += len(row) + 1
        if seen != count:
            raise PlyError(f"expected {count} vertices, found {seen}", pos)
    else:
        dt = np.dtype([(n, np.dtype(_PLY_SCALARS[t][0]).newbyteorder("<")) for t, n in props])
        need = dt.itemsize * count
        if len(raw) - body_start < need:
            raise PlyError(
                f"vertex element promises {count} rows "
                f"({need} bytes), body has {len(raw) - body_start}",
                len(raw),
            )
        rec = np.frombuffer(raw, dtype=dt, count=count, offset=body_start)
        data = {n: rec[n].astype(np.float64) for n in names}

    positions = np.stack([data["x"], data["y"], data["z"]], axis=1)
    colors = None
    if has_color:
        colors = np.stack([data["red"], data["green"], data["blue"]], axis=1) / 255.0
    return PointCloud(positions=positions, colors=colors)


def save_ply(cloud: PointCloud, path, *, binary: bool = True) -> None:
    """Write a point cloud as PLY (binary little-endian by default)."""
    n = len(cloud)
    has_color = cloud.colors is not None
    lines = [
        "ply",
        "format binary_little_endian 1.0" if binary else "format ascii 1.0",
        f"element vertex {n}",
        "property float x",
        "property float y",
        "property float z",
    ]
    if has_color:
        lines += ["property uchar red", "property uchar green", "property uchar blue"]
    lines.append("end_header")
    header = ("\n".join(lines) + "\n").encode("ascii")

    path = Path(path)
    if binary:
        fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
        if has_color:
            fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
        rec = np.empty(n, dtype=np.dtype(fields))
        pos32 = cloud.positions.astype(np.float32)
        rec["x"], rec["y"], rec["z"] = pos32[:, 0], pos32[:, 1], pos32[:, 2]
        if has_color:
            rgb = np.rint(cloud.colors * 255.0).astype(np.uint8)
            rec["red"], rec["green"], rec["blue"] = rgb[:, 0], rgb[:, 1], rgb[:, 2]
        path.write_bytes(header + rec.tobytes())
    else:
        # ascii rows carry exact shortest-roundtrip decimals (the text
        # format has no fixed width, unlike the binary f32 columns)
        rows = []
        if has_color:
            rgb = np.rint(cloud.colors * 255.0).astype(np.uint8)
            for p, c in zip(cloud.positions, rgb):
                rows.append(f"{float(p[0])!r} {float(p[1])!r} {float(p[2])!r} "
                            f"{c[0]} {c[1]} {c[2]}")
        else:
            for p in cloud.positions:
                rows.append(f"{float(p[0])!r} {float(p[1])!r} {float(p[2])!r}")
        path.write_bytes(header + ("\n".join(rows) + "\n").encode("ascii"))


# ---------------------------------------------------------------------------
# Images


def read_image(path) -> np.ndarray:
    """Load an 8-bit PNG as (H, W, 3) reals in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def write_image(path, image: np.ndarray) -> None:
    """Write (H, W, 3) reals in [0, 1] as an 8-bit PNG (round(x*255))."""
    arr = np.asarray(image, dtype=np.float64)
    data = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(path, format="PNG")


# ---------------------------------------------------------------------------
# Camera JSON

def _camera_record(camera: Camera, image_path: str, split: str) -> dict:
    return {
        "width": camera.width,
        "height": camera.height,
        "focal": camera.focal,
        "cx": camera.cx,
        "cy": camera.cy,
        "rotation": [float(v) for v in camera.rotation.reshape(-1)],
        "translation": [float(v) for v in camera.translation],
        "image_path": image_path,
        "split": split,
    }


def save_cameras(path, views: ViewSet, image_paths: list[str]) -> None:
    doc = {
        "tau": views.tau,
        "cameras": [
            _camera_record(v.camera, p, v.split)
            for v, p in zip(views.views, image_paths)
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True))


def load_cameras(path) -> tuple[list[tuple[Camera, str, str]], float | None]:
    """Read the camera document; returns (camera, image_path, split) triples."""
    doc = json.loads(Path(path).read_text())
    out = []
    for rec in doc["cameras"]:
        cam = Camera(
            width=int(rec["width"]), height=int(rec["height"]),
            focal=float(rec["focal"]), cx=float(rec["cx"]), cy=float(rec["cy"]),
            rotation=np.asarray(rec["rotation"], dtype=np.float64).reshape(3, 3),
            translation=np.asarray(rec["translation"], dtype=np.float64),
        )
        out.append((cam, rec["image_path"], rec.get("split", "train")))
    return out, doc.get("tau")


def save_scene(directory, cloud: PointCloud, views: ViewSet) -> None:
    """Write cloud.ply, cameras.json and gt/*.png under ``directory``."""
    directory = Path(directory)
    (directory / "gt").mkdir(parents=True, exist_ok=True)
    save_ply(cloud, directory / "cloud.ply")
    paths = []
    for i, view in enumerate(views.views):
        rel = f"gt/view_{i:03d}.png"
        write_image(directory / rel, view.image)
        paths.append(rel)
    save_cameras(directory / "cameras.json", views, paths)


def load_scene(directory) -> tuple[PointCloud, ViewSet]:
    directory = Path(directory)
    cloud = load_ply(directory / "cloud.ply")
    records, tau = load_cameras(directory / "cameras.json")
    views = [
        View(camera=cam, image=read_image(directory / rel), split=split)
        for cam, rel, split in records
    ]
    return cloud, ViewSet(views=views, tau=tau)


# ---------------------------------------------------------------------------
# Synthetic scenes


def paint_reference(cloud: PointCloud, camera: Camera, tau: float) -> np.ndarray:
    """Nearest-point painter: each pixel takes the color of the closest
    projected point whose splat disk covers the pixel center; background black.
    """
    if cloud.colors is None:
        raise ValueError("painter needs per-point colors")
    W, H = camera.width, camera.height
    uv, dist, visible = project(camera, cloud.positions)
    radius = np.maximum(tau * camera.focal / np.maximum(dist, 1e-12), 0.5)
    pid, pix = _disk_coverage(uv, dist, visible, radius, W, H)
    img = np.zeros((H, W, 3), dtype=np.float64)
    if pid.size == 0:
        return img
    d = dist[pid]
    order = np.lexsort((pid, d, pix))
    pix_s, pid_s = pix[order], pid[order]
    first = np.ones(pix_s.size, dtype=bool)
    first[1:] = pix_s[1:] != pix_s[:-1]
    sel_pix = pix_s[first]
    sel_pid = pid_s[first]
    img.reshape(-1, 3)[sel_pix] = cloud.colors[sel_pid]
    return img


def _disk_coverage(uv, dist, visible, radius, W, H):
    """All (point index, pixel id) pairs whose pixel center lies inside the
    projected disk. Shared between the painter and tests; the production
    rasterizer re-derives the same rule independently."""
    u, v = uv[:, 0], uv[:, 1]
    x0 = np.maximum(np.ceil(u - radius - 0.5), 0).astype(np.int64)
    x1 = np.minimum(np.floor(u + radius - 0.5), W - 1).astype(np.int64)
    y0 = np.maximum(np.ceil(v - radius - 0.5), 0).astype(np.int64)
    y1 = np.minimum(np.floor(v + radius - 0.5), H - 1).astype(np.int64)
    ok = visible & (x1 >= x0) & (y1 >= y0)
    idx = np.nonzero(ok)[0]
    if idx.size == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
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
    return idx[owner][inside], (py * W + px)[inside]


def _sphere_colors(p: np.ndarray) -> np.ndarray:
    r = 0.5 + 0.5 * np.sin(6.0 * p[:, 0]) * np.cos(4.0 * p[:, 1])
    g = 0.5 + 0.5 * np.sin(5.0 * p[:, 1] + 1.3) * np.cos(6.0 * p[:, 2])
    b = 0.5 + 0.5 * np.sin(7.0 * p[:, 2] + 2.1) * np.cos(3.0 * p[:, 0])
    return np.stack([r, g, b], axis=1)


def _checker_colors(p: np.ndarray, freq: float = 2.0) -> np.ndarray:
    parity = np.floor((p + 1.0) * freq).sum(axis=1) % 2
    a = np.array([0.9, 0.25, 0.2])
    b = np.array([0.15, 0.4, 0.9])
    return np.where(parity[:, None] > 0.5, a, b) * (0.75 + 0.25 * np.cos(3.0 * p[:, :1]))


def make_synthetic_scene(kind: str, n_points: int, n_views: int, resolution: int,
                         seed: int, tau: float | None = None,
                         n_test_views: int | None = None) -> tuple[PointCloud, ViewSet]:
    """Procedural point cloud plus painter-rendered ground-truth views.

    Scene geometry fits in the unit ball; cameras orbit at radius 3 with
    ``n_views`` train views evenly spaced and test views at offset azimuths.
    Deterministic in ``seed``.
    """
    if kind not in SCENE_KINDS:
        raise ValueError(f"unknown scene kind '{kind}' (choose from {SCENE_KINDS})")
    if n_points < 100:
        raise ValueError("n_points must be >= 100")
    if n_views < 2:
        raise ValueError("n_views must be >= 2")
    rng = np.random.default_rng(seed)

    if kind == "textured-sphere":
        p = rng.normal(size=(n_points, 3))
        p /= np.linalg.norm(p, axis=1, keepdims=True)
        colors = _sphere_colors(p)
    elif kind == "checker-cube":
        face = rng.integers(0, 6, size=n_points)
        ab = rng.uniform(-1.0, 1.0, size=(n_points, 2))
        p = np.empty((n_points, 3))
        axis = face % 3
        sign = np.where(face < 3, 1.0, -1.0)
        for a in range(3):
            m = axis == a
            p[m, a] = sign[m]
            others = [i for i in range(3) if i != a]
            p[m, others[0]] = ab[m, 0]
            p[m, others[1]] = ab[m, 1]
        p *= 0.7
        colors = _checker_colors(p / 0.7)
    else:  # two-plane
        # jittered grids so the front plane tiles without holes and truly
        # occludes the back plane head-on at the default splat radius
        m = int(np.sqrt(n_points / 2))
        spacing = 1.6 / m
        gx, gy = np.meshgrid(np.arange(m), np.arange(m))
        base = np.stack([gx, gy], axis=-1).reshape(-1, 2) + 0.5
        grids = []
        for _ in range(2):
            jit = rng.uniform(-0.2, 0.2, size=base.shape)
            grids.append(-0.8 + (base + jit) * spacing)
        extra = n_points - 2 * m * m
        xy_front = np.vstack([grids[0], rng.uniform(-0.8, 0.8, size=(extra, 2))])
        xy_back = grids[1]
        xy = np.vstack([xy_front, xy_back])
        z = np.concatenate([np.full(len(xy_front), 0.5),
                            np.full(len(xy_back), -0.5)])
        p = np.column_stack([xy[:, 0], xy[:, 1], z])
        front = z > 0
        colors = np.empty((n_points, 3))
        colors[front] = np.column_stack([
            0.7 + 0.3 * np.sin(3 * xy[front, 0]),
            0.25 + 0.2 * np.sin(4 * xy[front, 1]),
            np.full(int(front.sum()), 0.15),
        ])
        colors[~front] = np.column_stack([
            np.full(int((~front).sum()), 0.1),
            0.3 + 0.2 * np.cos(5 * xy[~front, 0]),
            0.6 + 0.25 * np.sin(3 * xy[~front, 1]),
        ])
        colors = np.clip(colors, 0.0, 1.0)
        if tau is None:
            tau = 1.25 * spacing

    colors = np.clip(colors, 0.0, 1.0)
    cloud = PointCloud(positions=p, colors=colors)

    if tau is None:
        # splats sized so the cloud covers the surface without big holes
        tau = 2.2 / np.sqrt(n_points)

    focal = 1.25 * resolution
    orbit_r = 3.0
    elevation = 0.35
    if n_test_views is None:
        n_test_views = max(2, n_views // 4)
    views: list[View] = []
    train_az = [2 * np.pi * i / n_views for i in range(n_views)]
    test_az = [2 * np.pi * (i + 0.5) / n_test_views for i in range(n_test_views)]
    for split, azimuths in (("train", train_az), ("test", test_az)):
        for az in azimuths:
            cam = orbit_camera(az, radius=orbit_r, elevation=elevation,
                               width=resolution, height=resolution, focal=focal)
            img = paint_reference(cloud, cam, tau)
            views.append(View(camera=cam, image=img, split=split))
    return cloud, ViewSet(views=views, tau=float(tau))


def add_point_noise(cloud: PointCloud, sigma: float, dropout: float, seed: int) -> PointCloud:
    """Gaussian position jitter plus random point removal, deterministic in seed."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if not 0.0 <= dropout < 1.0:
        raise ValueError("dropout must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    pos = cloud.positions.copy()
    if sigma > 0:
        pos = pos + rng.normal(0.0, sigma, size=pos.shape)
    keep = np.ones(len(cloud), dtype=bool)
    if dropout > 0:
        keep = rng.random(len(cloud)) >= dropout
        if not keep.any():
            keep[0] = True  # never return an empty cloud
    colors = cloud.colors[keep] if cloud.colors is not None else None
    return PointCloud(positions=pos[keep], colors=colors)
