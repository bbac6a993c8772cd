"""chromafield: sparse-voxel radiance fields from grayscale multi-view
images, colorized by distilling chroma from per-view teacher images."""

from .cameras import CameraIntrinsics, Pose, generate_rays
from .color import (
    ColorSpace,
    ImageBuf,
    downsample,
    lab_to_rgb,
    rgb_to_gray,
    rgb_to_lab,
    rgb_to_lab_vjp,
    srgb_to_linear,
    upsample2,
)
from .config import PipelineConfig
from .dataset import View, ViewSet, load_viewset
from .distill import ColorDistiller, DistillConfig, distill_color, distill_loss
from .grid import (
    SparseVoxelGrid,
    eval_sh,
    expand_luma_to_rgb,
    freeze_density,
    load_grid,
    sample_trilinear,
    save_grid,
    tv_loss,
)
from .metrics import (
    ConsistencyReport,
    WarpField,
    consistency_error,
    load_flow_warp,
    mean_chroma_magnitude,
    sequence_consistency,
    warp_by_depth,
    warp_image,
)
from .quality import psnr, ssim
from .render import (
    Ray,
    RenderSample,
    render_backward,
    render_image,
    render_ray,
    render_rays,
)
from .scenegen import SceneSpec, bake_dataset, desk_scene, render_gt
from .teacher import TeacherSet, load_teacher_dir, oracle_teacher, save_teacher_dir
from .train_luma import LumaTrainer, TrainConfig, train_luma

__version__ = "0.1.0"
