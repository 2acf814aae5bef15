"""kbuf: point-cloud neural rendering on K-deep per-pixel depth buffers.

The pipeline rasterizes a point cloud into K-deep z-buffers, reconstructs
and prunes query points, encodes them into K pixel-wise feature maps with a
learned per-pixel correction, fuses the maps with a small convolutional
network, and decodes the fused map to an image with a gated U-Net. Training
is plain gradient descent against ground-truth views on a built-in
reverse-mode autodiff engine.
"""

__version__ = "0.1.0"

from .scene import (Camera, PointCloud, View, ViewSet, add_point_noise,
                    load_ply, load_scene, make_synthetic_scene, project,
                    ray_direction, save_ply, save_scene)
from .raster import (Fragment, KZBuffer, OccupancyMap, depth_insert,
                     occupancy_from_buffer, pixel_id, rasterize_k,
                     screen_radius)
from .encoders import HashGrid, hash_encode, make_hash_grid, positional_encode, sh_encode
from .querygen import FeatureStack, QuerySet, build_queries, reconstruct_x, reorganize
from .fusion import FusionParams, fuse, fusion_mask
from .decoder import UNetConfig, UNetParams, param_count, unet_forward
from .radiance import (BlendMLP, GaussianFragmentList, RadianceMLP,
                       RectifierMLP, gaussian_blend, naive_volume_baseline,
                       radiance_features, rectified_features)
from .trainer import (TrainConfig, TrainState, ablate_dm, ablate_k,
                      ablate_modules, create_state, evaluate, fit,
                      load_checkpoint, precompute_fragments, psnr,
                      render_view, restore_state, save_checkpoint, ssim,
                      train_step)
