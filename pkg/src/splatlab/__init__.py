"""splatlab: a desk-scale Gaussian-splatting renderer and hardware-model lab.

The library renders clouds of 3D Gaussians through the standard
project / tile-sort / rasterize pipeline and layers two scheduling
optimizations on top: cross-frame reuse of depth-sorting results and a
set-associative cache of pixel values keyed by significant-Gaussian IDs.
Cycle-level models of a SIMT GPU and of a frontend/backend splatting
accelerator replay the renderer's traces.
"""

from .cache import AlwaysMissCache, CacheConfig, CacheGroupManager, CacheKey, PixelCache, make_key
from .hwsim import HwConfig, SimReport, account_frame, simulate_accel_tile, simulate_gpu_tile
from .images import quantize, read_ppm, write_image, write_png, write_ppm
from .metrics import (
    CharzReport,
    aggregate_contribution_curve,
    build_charz_report,
    color_difference_vs_k,
    contribution_curve,
    order_inversion_rate,
    psnr,
    significant_fraction,
    significant_sets,
    ssim,
)
from .pipeline import (
    FrameStats,
    ProjectedGaussian,
    RenderConfig,
    ReuseContext,
    SortedSplattingTable,
    TileGrid,
    bin_and_sort,
    compute_alpha,
    project_cloud,
    project_gaussian,
    render_frame,
)
from .plyio import PlyFormatError, load_ply, load_ply_file, save_ply, save_ply_file
from .scale_loss import ScaleLossConfig, geometric_mean_scale, l_scale, l_scale_grad
from .scene import (
    CameraPose,
    Gaussian,
    GaussianCloud,
    SceneError,
    SceneSpec,
    eval_sh_color,
    eval_sh_colors,
    generate_synthetic_cloud,
)
from .scheduler import (
    ScheduleEvent,
    SortReuseConfig,
    SortReuseScheduler,
    Velocity,
    estimate_velocity,
    expand_viewport,
    predict_pose,
    read_pose_trace,
    write_pose_trace,
)

__version__ = "0.1.0"
