"""End-to-end optimization, image metrics, checkpointing and ablations.

One training step runs the full forward (queries -> radiance features ->
per-slot correction -> K-layer stack -> fusion -> decoder), takes the MSE
against the view's ground truth, backpropagates and advances four Adam
groups, each at its own geometrically decayed rate. Buffers and input
encodings are fixed per view and precomputed once.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import autodiff as ad
from .autodiff import AdamState, Tensor, adam_step
from .decoder import UNetConfig, UNetParams, unet_forward
from .encoders import make_hash_grid, positional_encode, sh_encode
from .fusion import FusionParams, fuse, fusion_mask
from .querygen import QuerySet, build_queries, reorganize
from .radiance import (DIR_OCTAVES, POS_OCTAVES, RadianceMLP, RectifierMLP,
                       naive_volume_baseline, radiance_forward,
                       rectified_features)
from .raster import (KZBuffer, OccupancyMap, load_kzb, occupancy_from_buffer,
                     rasterize_k, save_kzb)
from .scene import Camera, PointCloud, View, ViewSet, ray_direction

__all__ = [
    "TrainConfig",
    "TrainState",
    "worker_count",
    "precompute_fragments",
    "create_state",
    "train_step",
    "fit",
    "render_view",
    "evaluate",
    "psnr",
    "ssim",
    "save_checkpoint",
    "load_checkpoint",
    "restore_state",
    "config_diff",
    "write_metrics_csv",
    "ablate_k",
    "ablate_modules",
    "ablate_dm",
]


def worker_count() -> int:
    """Worker cap from KBUF_THREADS, defaulting to hardware parallelism."""
    env = os.environ.get("KBUF_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


@dataclass(frozen=True)
class TrainConfig:
    """Everything a run needs; serializes flat to JSON."""

    k: int = 8
    c: int = 8
    tau: float | None = None  # None -> the scene's authored splat radius
    steps: int = 1000
    seed: int = 0
    lr_radiance: float = 5e-4
    lr_rect: float = 1e-4
    lr_fusion: float = 1.5e-4
    lr_unet: float = 1.5e-4
    lr_decay: float = 0.9999
    prune: bool = True
    rect: bool = True
    use_kfn: bool = True
    naive_baseline: bool = False
    dm_policy: str = "minimum"
    fusion_hidden: int = 64
    fusion_per_channel: bool = False
    unet_widths: tuple[int, ...] = (16, 32, 64, 128, 256)
    unet_width_mult: float = 1.0
    hash_levels: int = 16
    hash_features: int = 2
    hash_table_size: int = 2 ** 14
    hash_base_res: int = 16
    hash_growth: float = 1.38
    sh_bands: int = 4

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        for name in ("lr_radiance", "lr_rect", "lr_fusion", "lr_unet"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not self.use_kfn and self.k != 1 and not self.naive_baseline:
            raise ValueError("without the fusion network only k=1 is supported")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["unet_widths"] = list(self.unet_widths)
        return d

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if "unet_widths" in d:
            d["unet_widths"] = tuple(d["unet_widths"])
        return cls(**d)


def config_diff(a: TrainConfig, b: TrainConfig) -> list[str]:
    """Names of fields on which two configs disagree."""
    da, db = a.to_dict(), b.to_dict()
    return sorted(k for k in da if da[k] != db[k])


# ---------------------------------------------------------------------------
# Image metrics


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for [0, 1] images, capped at 99."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("image shapes differ")
    mse = float(np.mean((a - b) ** 2))
    if mse < 1e-10:
        return 99.0
    return 10.0 * np.log10(1.0 / mse)


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    t = sliding_window_view(img, g.size, axis=0) @ g
    return sliding_window_view(t, g.size, axis=1) @ g


def ssim(a, b, window: int = 11, sigma: float = 1.5,
         c1: float = 0.01 ** 2, c2: float = 0.03 ** 2) -> float:
    """Mean structural similarity with a Gaussian window, per-channel averaged."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("image shapes differ")
    if a.ndim == 2:
        a = a[:, :, None]
        b = b[:, :, None]
    if min(a.shape[0], a.shape[1]) < window:
        raise ValueError("image smaller than the SSIM window")
    g = _gaussian_kernel(window, sigma)
    vals = []
    for ch in range(a.shape[2]):
        x, y = a[:, :, ch], b[:, :, ch]
        mu_x = _filter_valid(x, g)
        mu_y = _filter_valid(y, g)
        xx = _filter_valid(x * x, g) - mu_x ** 2
        yy = _filter_valid(y * y, g) - mu_y ** 2
        xy = _filter_valid(x * y, g) - mu_x * mu_y
        num = (2 * mu_x * mu_y + c1) * (2 * xy + c2)
        den = (mu_x ** 2 + mu_y ** 2 + c1) * (xx + yy + c2)
        vals.append((num / den).mean())
    return float(np.mean(vals))


# ---------------------------------------------------------------------------
# Fragment precomputation


def _fragment_key(cloud: PointCloud, camera: Camera, tau: float, k: int) -> str:
    h = hashlib.sha256()
    h.update(cloud.positions.tobytes())
    h.update(np.asarray([tau, float(k), camera.focal, camera.cx, camera.cy,
                         float(camera.width), float(camera.height)]).tobytes())
    h.update(camera.rotation.tobytes())
    h.update(camera.translation.tobytes())
    return h.hexdigest()[:16]


def precompute_fragments(cloud: PointCloud, views: list[View], tau: float,
                         k: int, cache_dir=None,
                         ) -> list[tuple[KZBuffer, OccupancyMap]]:
    """Rasterize each view once; optionally spill/reuse KZB files on disk.

    Cache files are keyed by cloud, camera, tau and K, so changing any of
    them rebuilds instead of reusing.
    """
    if cache_dir is not None:
        cache_dir = Path(cache_dir)
        cache_dir.mkdir(parents=True, exist_ok=True)

    def one(view: View) -> tuple[KZBuffer, OccupancyMap]:
        if cache_dir is not None:
            path = cache_dir / f"frag_{_fragment_key(cloud, view.camera, tau, k)}.kzb"
            if path.exists():
                buf = load_kzb(path)
                return buf, occupancy_from_buffer(buf)
            buf, occ = rasterize_k(cloud, view.camera, tau, k)
            save_kzb(path, buf)
            return buf, occ
        return rasterize_k(cloud, view.camera, tau, k)

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        return list(pool.map(one, views))


# ---------------------------------------------------------------------------
# Training state


@dataclass
class ViewData:
    """Fixed per-view inputs: encodings, slot table, ground truth."""

    camera: Camera
    gt: np.ndarray  # (H, W, 3) dtype
    split: str
    queries: QuerySet
    pe_x: np.ndarray  # (N, 60)
    pe_d: np.ndarray  # (N, 24)
    sh_unique: np.ndarray | None  # (U, bands^2)
    slot_inverse: np.ndarray | None  # (M,)
    depths: np.ndarray | None = None  # naive mode: (K, H, W)
    occ_mask: np.ndarray | None = None  # naive mode: (K, H, W) bool


class TrainState:
    def __init__(self, config: TrainConfig, cloud: PointCloud, views: ViewSet,
                 dtype=np.float32):
        self.config = config
        self.cloud = cloud
        self.views = views
        self.dtype = dtype
        self.step = 0
        self.history: list[dict] = []
        self.last_image: np.ndarray | None = None
        self.radiance: RadianceMLP | None = None
        self.rect: RectifierMLP | None = None
        self.fusionp: FusionParams | None = None
        self.unet: UNetParams | None = None
        self.groups: list[tuple[str, list[Tensor], AdamState, float]] = []
        self.view_data: list[ViewData] = []
        self.far_delta = 2.0 * cloud.bounding_sphere()[1]

    def named_params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        if self.radiance is not None:
            for i, (w, b) in enumerate(self.radiance.layers):
                out[f"radiance/w{i}"] = w
                out[f"radiance/b{i}"] = b
        if self.rect is not None:
            out["rect/w1"] = self.rect.w1
            out["rect/b1"] = self.rect.b1
            out["rect/w2"] = self.rect.w2
            out["rect/b2"] = self.rect.b2
            out["rect/tables"] = self.rect.tables
        if self.fusionp is not None:
            out["fusion/conv1_w"] = self.fusionp.conv1_w
            out["fusion/conv1_b"] = self.fusionp.conv1_b
            out["fusion/conv2_w"] = self.fusionp.conv2_w
            out["fusion/conv2_b"] = self.fusionp.conv2_b
        if self.unet is not None:
            for tag, blocks in (("enc", self.unet.enc), ("dec", self.unet.dec)):
                for i, blk in enumerate(blocks):
                    for name, t in zip(
                            ("feat_w", "feat_b", "gate_w", "gate_b", "norm_g", "norm_b"),
                            blk.params()):
                        out[f"unet/{tag}{i}/{name}"] = t
            out["unet/out_w"] = self.unet.out_w
            out["unet/out_b"] = self.unet.out_b
        return out

    @property
    def total_params(self) -> int:
        return sum(int(t.size) for t in self.named_params().values())

    def queries_per_view(self, split: str = "train") -> float:
        counts = [vd.queries.n_queries for vd in self.view_data if vd.split == split]
        return float(np.mean(counts)) if counts else 0.0


def _prepare_view(view: View, buf: KZBuffer, occ: OccupancyMap,
                  config: TrainConfig, dtype) -> ViewData:
    prune = config.prune and not config.naive_baseline
    qs = build_queries(buf, occ, view.camera, prune=prune,
                       dm_policy=config.dm_policy, seed=config.seed)
    pe_x = positional_encode(qs.qx, POS_OCTAVES).astype(dtype) if qs.n_queries \
        else np.zeros((0, 6 * POS_OCTAVES), dtype=dtype)
    pe_d = positional_encode(qs.qd, DIR_OCTAVES).astype(dtype) if qs.n_queries \
        else np.zeros((0, 6 * DIR_OCTAVES), dtype=dtype)
    sh_unique = slot_inverse = None
    if config.rect and not config.naive_baseline:
        u_pix, slot_inverse = np.unique(qs.slot_pix, return_inverse=True)
        slot_inverse = slot_inverse.reshape(-1)
        dirs = ray_direction(view.camera, u_pix % qs.width, u_pix // qs.width)
        sh_unique = sh_encode(dirs, config.sh_bands)
    depths = occ_mask = None
    if config.naive_baseline:
        depths = buf.dists.transpose(2, 0, 1).astype(dtype)
        occ_mask = buf.occupied_mask()
        depths = np.where(occ_mask, depths, 0.0)
    return ViewData(camera=view.camera, gt=view.image.astype(dtype),
                    split=view.split, queries=qs, pe_x=pe_x, pe_d=pe_d,
                    sh_unique=sh_unique, slot_inverse=slot_inverse,
                    depths=depths, occ_mask=occ_mask)


def create_state(config: TrainConfig, cloud: PointCloud, views: ViewSet,
                 dtype=np.float32, cache_dir=None) -> TrainState:
    """Build models, optimizer groups and per-view caches for a scene."""
    state = TrainState(config, cloud, views, dtype)
    tau = config.tau if config.tau is not None else views.tau
    if tau is None:
        raise ValueError("no splat radius: set config.tau or scene tau")

    out_c = 4 if config.naive_baseline else config.c
    state.radiance = RadianceMLP.create(out_channels=out_c, seed=config.seed,
                                        dtype=dtype)
    groups: list[tuple[str, list[Tensor], AdamState, float]] = []
    rparams = state.radiance.params()
    groups.append(("radiance", rparams, AdamState(rparams), config.lr_radiance))

    if config.rect and not config.naive_baseline:
        origins = np.stack([v.camera.origin for v in views.views])
        lo, hi = origins.min(axis=0), origins.max(axis=0)
        pad = np.maximum(0.05 * (hi - lo), 1e-3)
        grid = make_hash_grid(lo - pad, hi + pad, levels=config.hash_levels,
                              features_per_level=config.hash_features,
                              table_size=config.hash_table_size,
                              base_resolution=config.hash_base_res,
                              growth_factor=config.hash_growth,
                              seed=config.seed + 1, dtype=dtype)
        state.rect = RectifierMLP.create(grid, out_channels=config.c,
                                         seed=config.seed + 2, dtype=dtype,
                                         sh_bands=config.sh_bands)
        pr = state.rect.params()
        groups.append(("rect", pr, AdamState(pr), config.lr_rect))

    if config.use_kfn and not config.naive_baseline:
        state.fusionp = FusionParams.create(config.k, config.c,
                                            hidden=config.fusion_hidden,
                                            per_channel=config.fusion_per_channel,
                                            seed=config.seed + 3, dtype=dtype)
        pf = state.fusionp.params()
        groups.append(("fusion", pf, AdamState(pf), config.lr_fusion))

    if not config.naive_baseline:
        ucfg = UNetConfig(widths=config.unet_widths, in_channels=config.c,
                          width_mult=config.unet_width_mult)
        state.unet = UNetParams.create(ucfg, seed=config.seed + 4, dtype=dtype)
        pu = state.unet.params()
        groups.append(("unet", pu, AdamState(pu), config.lr_unet))
    state.groups = groups

    frags = precompute_fragments(cloud, views.views, tau, config.k, cache_dir)
    state.view_data = [
        _prepare_view(v, buf, occ, config, dtype)
        for v, (buf, occ) in zip(views.views, frags)
    ]
    return state


# ---------------------------------------------------------------------------
# Forward / step


def forward_view(state: TrainState, vd: ViewData) -> Tensor:
    """Full differentiable forward for one view -> (H, W, 3) image tensor."""
    cfg = state.config
    qs = vd.queries
    H, W = vd.camera.height, vd.camera.width

    feat = radiance_forward(ad.constant(vd.pe_x), ad.constant(vd.pe_d),
                            state.radiance)
    if cfg.naive_baseline:
        rgb_rows = ad.cols(feat, 0, 3)
        sig_rows = ad.cols(feat, 3, 4)
        lin = qs.slot_layer * (H * W) + qs.slot_pix
        raw_rgb = ad.reshape(ad.scatter_rows(rgb_rows, lin, cfg.k * H * W),
                             (cfg.k, H, W, 3))
        raw_sig = ad.reshape(ad.scatter_rows(sig_rows, lin, cfg.k * H * W),
                             (cfg.k, H, W))
        return naive_volume_baseline(vd.depths, vd.occ_mask, raw_rgb, raw_sig,
                                     state.far_delta)

    if cfg.rect:
        slot_feat = rectified_features(
            feat, vd.camera.origin, qs.slot_dj, qs.slot_query, state.rect,
            cache=(vd.sh_unique, vd.slot_inverse))
    else:
        slot_feat = ad.gather_rows(feat, qs.slot_query)
    stack = reorganize(qs, slot_feat, cfg.c)

    if cfg.use_kfn:
        mask = fusion_mask(stack, state.fusionp)
        fused = fuse(stack, mask)
    else:  # k == 1 passthrough
        fused = ad.reshape(stack.features, (H, W, cfg.c))
    return unet_forward(fused, state.unet)


def _zero_grads(state: TrainState):
    for _, params, _, _ in state.groups:
        for p in params:
            p.zero_grad()


def train_step(state: TrainState, view_idx: int) -> float:
    """One optimization step against the given training view; returns the loss.

    The rendered image is kept on ``state.last_image`` for metric logging.
    """
    vd = state.view_data[view_idx]
    _zero_grads(state)
    img = forward_view(state, vd)
    loss = ad.mse_loss(img, vd.gt)
    loss_val = float(loss.data)
    state.last_image = np.asarray(img.data)
    if not np.isfinite(loss_val):
        gmax = max((float(np.abs(p.grad).max()) for _, ps, _, _ in state.groups
                    for p in ps if p.grad is not None), default=float("nan"))
        raise RuntimeError(
            f"non-finite loss at step {state.step}, view {view_idx} "
            f"(max |grad| {gmax})")
    loss.backward()
    decay = state.config.lr_decay ** state.step
    for _, params, adam, lr0 in state.groups:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data)
                 for p in params]
        adam_step(params, grads, adam, lr0 * decay)
    state.step += 1
    return loss_val


def _epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch, 0xC0FFEE]).permutation(n)


def fit(state: TrainState, log_every: int = 0) -> list[dict]:
    """Run the configured number of steps over seeded view permutations.

    Appends one metrics row per step to ``state.history`` and returns the
    rows added by this call.
    """
    train_idx = [i for i, vd in enumerate(state.view_data) if vd.split == "train"]
    if not train_idx:
        raise ValueError("no training views")
    added: list[dict] = []
    while state.step < state.config.steps:
        epoch, pos = divmod(state.step, len(train_idx))
        order = _epoch_order(state.config.seed, epoch, len(train_idx))
        view_idx = train_idx[order[pos]]
        step_no = state.step
        loss = train_step(state, view_idx)
        vd = state.view_data[view_idx]
        row = {
            "step": step_no,
            "split": "train",
            "view": view_idx,
            "psnr": 99.0 if loss < 1e-10 else float(10.0 * np.log10(1.0 / loss)),
            "ssim": ssim(state.last_image, vd.gt),
        }
        added.append(row)
        state.history.append(row)
        if log_every and step_no % log_every == 0:
            print(f"step {step_no:6d}  view {view_idx}  loss {loss:.6f}  "
                  f"psnr {row['psnr']:.2f}")
    return added


def render_view(state: TrainState, view_idx: int) -> np.ndarray:
    """Forward-only render of any prepared view (train or test)."""
    img = forward_view(state, state.view_data[view_idx])
    return np.asarray(img.data, dtype=state.dtype)


def evaluate(state: TrainState, split: str = "test") -> list[dict]:
    """PSNR/SSIM rows for every view of a split at the current parameters."""
    rows = []
    for i, vd in enumerate(state.view_data):
        if vd.split != split:
            continue
        img = render_view(state, i)
        rows.append({
            "step": state.step,
            "split": split,
            "view": i,
            "psnr": psnr(img, vd.gt),
            "ssim": ssim(img, vd.gt),
        })
    return rows


def write_metrics_csv(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["step", "split", "view", "psnr", "ssim"])
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


# ---------------------------------------------------------------------------
# Checkpoints (magic "KBCK")


def save_checkpoint(path, state: TrainState) -> None:
    meta = {
        "config": state.config.to_dict(),
        "step": state.step,
        "history": state.history,
    }
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    out = bytearray()
    out += b"KBCK"
    out += struct.pack("<I", 1)
    out += struct.pack("<I", len(blob))
    out += blob
    tensors = state.named_params()
    out += struct.pack("<I", len(tensors))
    for name in sorted(tensors):
        t = tensors[name]
        enc = name.encode()
        out += struct.pack("<H", len(enc))
        out += enc
        out += struct.pack("<B", t.data.ndim)
        for dim in t.data.shape:
            out += struct.pack("<I", dim)
        out += np.ascontiguousarray(t.data, dtype=np.float32).tobytes()
    Path(path).write_bytes(bytes(out))


def load_checkpoint(path) -> tuple[TrainConfig, int, list[dict], dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if raw[:4] != b"KBCK":
        raise ValueError("not a checkpoint file (bad magic)")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != 1:
        raise ValueError(f"unsupported checkpoint version {version}")
    (nmeta,) = struct.unpack_from("<I", raw, 8)
    meta = json.loads(raw[12:12 + nmeta].decode())
    off = 12 + nmeta
    (ntensors,) = struct.unpack_from("<I", raw, off)
    off += 4
    tensors: dict[str, np.ndarray] = {}
    for _ in range(ntensors):
        (nlen,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off:off + nlen].decode()
        off += nlen
        ndim = raw[off]
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, off)
        off += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=off).reshape(shape)
        off += 4 * count
        tensors[name] = arr.copy()
    config = TrainConfig.from_dict(meta["config"])
    return config, int(meta["step"]), list(meta["history"]), tensors


def restore_state(path, cloud: PointCloud, views: ViewSet,
                  dtype=np.float32, expect: TrainConfig | None = None) -> TrainState:
    """Rebuild a TrainState from a checkpoint over the given scene."""
    config, step, history, tensors = load_checkpoint(path)
    if expect is not None:
        diff = config_diff(expect, config)
        if diff:
            raise ValueError(f"checkpoint/config mismatch on fields: {diff}")
    state = create_state(config, cloud, views, dtype=dtype)
    named = state.named_params()
    missing = sorted(set(named) - set(tensors))
    extra = sorted(set(tensors) - set(named))
    if missing or extra:
        raise ValueError(f"checkpoint tensor mismatch: missing {missing}, extra {extra}")
    for name, t in named.items():
        arr = tensors[name]
        if tuple(arr.shape) != tuple(t.data.shape):
            raise ValueError(f"shape mismatch for {name}: "
                             f"{arr.shape} vs {t.data.shape}")
        t.data[...] = arr.astype(t.data.dtype)
    state.step = step
    state.history = history
    return state


# ---------------------------------------------------------------------------
# Ablation harness


def _run_once(config: TrainConfig, cloud: PointCloud, views: ViewSet,
              dtype=np.float32) -> tuple[TrainState, float]:
    state = create_state(config, cloud, views, dtype=dtype)
    fit(state)
    rows = evaluate(state, "test")
    mean_psnr = float(np.mean([r["psnr"] for r in rows])) if rows else float("nan")
    return state, mean_psnr


def ablate_k(cloud: PointCloud, views: ViewSet, ks: list[int],
             base: TrainConfig, out_csv=None) -> list[dict]:
    """Train once per K with identical seed/schedule; report test metrics."""
    rows = []
    for k in ks:
        cfg = replace(base, k=k)
        state, mean_psnr = _run_once(cfg, cloud, views)
        rows.append({
            "k": k,
            "psnr": mean_psnr,
            "params": state.total_params,
            "queries_per_view": state.queries_per_view(),
        })
    if out_csv:
        _write_rows(out_csv, rows, ["k", "psnr", "params", "queries_per_view"])
    return rows


ABLATION_ROWS = ("baseline", "fusion", "fusion+prune", "fusion+prune+rect")


def ablation_config(base: TrainConfig, row: str) -> TrainConfig:
    if row == "baseline":
        return replace(base, k=1, use_kfn=False, prune=False, rect=False)
    if row == "fusion":
        return replace(base, use_kfn=True, prune=False, rect=False)
    if row == "fusion+prune":
        return replace(base, use_kfn=True, prune=True, rect=False)
    if row == "fusion+prune+rect":
        return replace(base, use_kfn=True, prune=True, rect=True)
    raise ValueError(f"unknown ablation row '{row}'")


def ablate_modules(cloud: PointCloud, views: ViewSet, base: TrainConfig,
                   out_csv=None, rows=ABLATION_ROWS) -> list[dict]:
    """Four-row module ablation: passthrough baseline, fusion, +prune, +rect."""
    out = []
    for row in rows:
        cfg = ablation_config(base, row)
        state, mean_psnr = _run_once(cfg, cloud, views)
        out.append({
            "row": row,
            "psnr": mean_psnr,
            "params": state.total_params,
            "queries_per_view": state.queries_per_view(),
        })
    if out_csv:
        _write_rows(out_csv, out, ["row", "psnr", "params", "queries_per_view"])
    return out


def ablate_dm(cloud: PointCloud, views: ViewSet, base: TrainConfig,
              out_csv=None) -> list[dict]:
    """Compare the three representative-direction policies."""
    out = []
    for policy in ("minimum", "random", "average"):
        cfg = replace(base, dm_policy=policy, prune=True)
        state, mean_psnr = _run_once(cfg, cloud, views)
        out.append({"dm_policy": policy, "psnr": mean_psnr,
                    "queries_per_view": state.queries_per_view()})
    if out_csv:
        _write_rows(out_csv, out, ["dm_policy", "psnr", "queries_per_view"])
    return out


def _write_rows(path, rows: list[dict], fields: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
