"""End-to-end orchestration: train, distill, render, evaluate.

Every stage writes its artifacts under the configured output directory and
is skipped on rerun when they already exist (resume semantics), so a crashed
pipeline continues from its last completed stage. The resolved configuration
is written next to the outputs as config.json; re-running from that file
reproduces the run.
"""

from __future__ import annotations

import json
import logging
import time
from pathlib import Path

import numpy as np

from .cameras import Pose
from .color import ColorSpace, ImageBuf, linear_to_srgb
from .config import PipelineConfig
from .dataset import ViewSet, load_viewset
from .distill import ColorDistiller, write_distill_log_csv
from .grid import SparseVoxelGrid, load_grid, save_grid
from .imgio import read_depth, read_png, write_color_png, write_depth
from .metrics import SequenceFrame, sequence_consistency
from .render import render_image
from .teacher import TeacherSet, load_teacher_dir, oracle_teacher
from .train_luma import LumaTrainer, write_log_csv

log = logging.getLogger("chromafield")

STAGE1_CHECKPOINT = "stage1.grid"
COLOR_CHECKPOINT = "color.grid"


def derive_bbox(viewset: ViewSet, pad: float = 0.02) -> tuple[np.ndarray, np.ndarray]:
    """Scene bounds from ground-truth depths when available, else from the
    camera ring."""
    points = []
    rng = np.random.default_rng(0)
    for view in viewset:
        if view.depth is None:
            continue
        from .cameras import generate_rays

        origins, dirs = generate_rays(view.cam, view.pose, 0)
        depth = view.depth
        finite = np.isfinite(depth)
        idx = np.argwhere(finite)
        if idx.size == 0:
            continue
        take = idx[rng.integers(0, len(idx), size=min(500, len(idx)))]
        pts = (
            origins[take[:, 0], take[:, 1]]
            + dirs[take[:, 0], take[:, 1]] * depth[take[:, 0], take[:, 1], None]
        )
        points.append(pts)
    if points:
        pts = np.concatenate(points)
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        span = np.maximum(hi - lo, 1e-3)
        return lo - pad * span, hi + pad * span
    cams = np.stack([v.pose.translation for v in viewset])
    center = cams.mean(axis=0)
    radius = float(np.max(np.linalg.norm(cams - center, axis=1)))
    return center - 2.5 * radius, center + 2.5 * radius


def build_grid(cfg: PipelineConfig, viewset: ViewSet) -> SparseVoxelGrid:
    if cfg.grid.bbox_min is not None and cfg.grid.bbox_max is not None:
        lo = np.asarray(cfg.grid.bbox_min, dtype=np.float64)
        hi = np.asarray(cfg.grid.bbox_max, dtype=np.float64)
    else:
        lo, hi = derive_bbox(viewset)
        log.info("derived bbox: %s .. %s", lo.round(3), hi.round(3))
    return SparseVoxelGrid.create(
        tuple(cfg.grid.resolution), lo, hi,
        channels=1, basis_size=cfg.grid.basis_size,
        density_init=cfg.grid.density_init, sh0_init=cfg.grid.sh0_init,
    )


def load_gt_colors(dataset_dir, viewset: ViewSet,
                   manifest_name: str = "transforms.json") -> dict[str, ImageBuf]:
    """Ground-truth color images recorded by the dataset manifest
    (color_path entries), keyed by view id."""
    root = Path(dataset_dir)
    with open(root / manifest_name) as fh:
        doc = json.load(fh)
    colors: dict[str, ImageBuf] = {}
    for frame in doc["frames"]:
        vid = Path(frame["file_path"]).stem
        cpath = frame.get("color_path")
        if cpath is None:
            continue
        colors[vid] = ImageBuf(read_png(root / cpath), ColorSpace.SRGB)
    missing = [v.view_id for v in viewset if v.view_id not in colors]
    if missing:
        raise ValueError(
            f"{root / manifest_name}: no color_path for views {missing}; "
            "an oracle teacher needs ground-truth colors"
        )
    return colors


def build_teacher(cfg: PipelineConfig, viewset: ViewSet) -> TeacherSet:
    spec = cfg.teacher
    if spec.kind == "dir":
        path = Path(spec.path)
        if not path.is_dir():
            raise FileNotFoundError(f"teacher directory not found: {path}")
        teacher = load_teacher_dir(path, viewset)
        worst = max(teacher.luma_divergence.values())
        log.info("teacher luma divergence: worst view %.4f", worst)
        return teacher
    if spec.kind == "oracle":
        gt = load_gt_colors(cfg.dataset_dir, viewset)
        return oracle_teacher(
            viewset, gt, spec.sigma_h_deg, spec.sigma_c, seed=cfg.seed
        )
    raise ValueError(f"unknown teacher kind {spec.kind!r}")


def run_train(cfg: PipelineConfig, resume: bool = True) -> SparseVoxelGrid:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / STAGE1_CHECKPOINT
    if resume and ckpt.exists():
        log.info("stage 1 checkpoint exists, skipping training: %s", ckpt)
        return load_grid(ckpt)
    viewset = load_viewset(cfg.dataset_dir)
    grid = build_grid(cfg, viewset)
    t0 = time.perf_counter()
    trainer = LumaTrainer(cfg.train)
    trainer.fit(grid, viewset)
    log.info(
        "stage 1: %d steps in %.1fs, train PSNR %.2f dB",
        cfg.train.iterations, time.perf_counter() - t0,
        trainer.evaluate(grid, viewset),
    )
    save_grid(grid, ckpt)
    write_log_csv(trainer.log_, out / "train_log.csv")
    return grid


def run_distill(
    cfg: PipelineConfig, grid: SparseVoxelGrid, resume: bool = True
) -> SparseVoxelGrid:
    out = Path(cfg.output_dir)
    ckpt = out / COLOR_CHECKPOINT
    if resume and ckpt.exists():
        log.info("color checkpoint exists, skipping distillation: %s", ckpt)
        return load_grid(ckpt)
    viewset = load_viewset(cfg.dataset_dir)
    teacher = build_teacher(cfg, viewset)
    t0 = time.perf_counter()
    distiller = ColorDistiller(cfg.distill)
    distiller.fit(grid, teacher, viewset)
    log.info(
        "stage 2: %d epochs in %.1fs", cfg.distill.epochs, time.perf_counter() - t0
    )
    save_grid(distiller.grid_, ckpt)
    write_distill_log_csv(distiller.log_, out / "distill_log.csv")
    return distiller.grid_


def _trajectory_poses(cfg: PipelineConfig, viewset: ViewSet):
    spec = cfg.render
    cam = viewset.views[0].cam
    if spec.trajectory == "train":
        return [(v.view_id, v.pose, v.cam) for v in viewset]
    if spec.trajectory == "orbit":
        target = np.asarray(spec.target, dtype=np.float64)
        out = []
        for k in range(spec.frame_count):
            theta = 2.0 * np.pi * k / spec.frame_count
            eye = np.array(
                [spec.radius * np.cos(theta), spec.height, spec.radius * np.sin(theta)]
            )
            out.append((f"{k:03d}", Pose.look_at(eye, target), cam))
        return out
    raise ValueError(f"unknown trajectory {spec.trajectory!r}")


def run_render(
    cfg: PipelineConfig, grid: SparseVoxelGrid, resume: bool = True
) -> Path:
    out = Path(cfg.output_dir) / "renders"
    manifest_path = out / "poses.json"
    if resume and manifest_path.exists():
        log.info("renders exist, skipping: %s", out)
        return out
    viewset = load_viewset(cfg.dataset_dir)
    out.mkdir(parents=True, exist_ok=True)
    frames = []
    for vid, pose, cam in _trajectory_poses(cfg, viewset):
        color, depth, opacity = render_image(
            grid, cam, pose,
            step=cfg.distill.step, background=cfg.distill.background,
        )
        srgb = linear_to_srgb(color.data.astype(np.float64))
        write_color_png(out / f"{vid}.png", srgb)
        dmap = depth.data[:, :, 0].astype(np.float64)
        # rays that escaped the field have no depth; sentinel them for warping
        solid = opacity.data[:, :, 0] > 0.5
        write_depth(out / f"{vid}.f32", np.where(solid, dmap, np.inf))
        frames.append(
            {
                "file_path": f"{vid}.png",
                "depth_path": f"{vid}.f32",
                "transform_matrix": pose.to_matrix().tolist(),
                "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
                "width": cam.width, "height": cam.height,
            }
        )
    with open(manifest_path, "w") as fh:
        json.dump({"frames": frames}, fh, indent=1, sort_keys=True)
    log.info("rendered %d frames to %s", len(frames), out)
    return out


def load_sequence(renders_dir, manifest_name: str = "poses.json") -> list[SequenceFrame]:
    """Read a rendered (or baked) frame sequence for consistency evaluation."""
    root = Path(renders_dir)
    with open(root / manifest_name) as fh:
        doc = json.load(fh)
    from .cameras import CameraIntrinsics

    frames = []
    for fr in doc["frames"]:
        img = read_png(root / fr["file_path"])
        if img.shape[2] == 1:
            img = np.repeat(img, 3, axis=2)
        depth = read_depth(root / fr["depth_path"])
        frames.append(
            SequenceFrame(
                image=ImageBuf(img, ColorSpace.SRGB),
                depth=depth,
                cam=CameraIntrinsics(
                    fr["fx"], fr["fy"], fr["cx"], fr["cy"], fr["width"], fr["height"]
                ),
                pose=Pose.from_matrix(np.asarray(fr["transform_matrix"])),
            )
        )
    return frames


def run_evaluate(cfg: PipelineConfig, renders_dir, resume: bool = True) -> Path:
    out = Path(cfg.output_dir)
    report_json = out / "consistency.json"
    if resume and report_json.exists():
        log.info("consistency report exists, skipping: %s", report_json)
        return report_json
    frames = load_sequence(renders_dir)
    report = sequence_consistency(
        frames,
        delta_short=cfg.metrics.delta_short,
        delta_long=cfg.metrics.delta_long,
        mode=cfg.metrics.mode,
    )
    report.to_json(report_json)
    report.to_csv(out / "consistency.csv")
    log.info(
        "consistency (%s): short %.6f, long %.6f",
        report.mode, report.mean_short, report.mean_long,
    )
    return report_json


def run_pipeline(cfg: PipelineConfig, resume: bool = True) -> dict:
    """train -> expand/freeze/distill -> render -> evaluate."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save_json(out / "config.json")
    stages = {}
    grid = run_train(cfg, resume=resume)
    stages["stage1"] = str(out / STAGE1_CHECKPOINT)
    color = run_distill(cfg, grid, resume=resume)
    stages["color"] = str(out / COLOR_CHECKPOINT)
    renders = run_render(cfg, color, resume=resume)
    stages["renders"] = str(renders)
    report = run_evaluate(cfg, renders, resume=resume)
    stages["report"] = str(report)
    return stages
