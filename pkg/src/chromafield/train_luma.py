"""Stage 1: fit a 1-channel voxel field to grayscale views.

Each step draws batch_size rays uniformly (with replacement) from the pixel
pool of all training views, takes the mean per-ray squared error plus an
optional TV term, and applies one RMSProp update with separate learning
rates for density and SH.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import _kernels
from .cameras import generate_rays
from .color import ColorSpace
from .dataset import ViewSet
from .grid import SparseVoxelGrid, tv_loss
from .optim import RMSProp
from .quality import psnr
from .render import GradBuffers, _background, _max_samples, _occ_u8, grad_chunks, render_image


@dataclass
class TrainConfig:
    iterations: int = 2000
    batch_size: int = 5000
    lr_density: float = 0.3
    lr_sh: float = 0.03
    lambda_tv: float = 0.0
    rho: float = 0.95
    eps: float = 1e-8
    step: float | None = None  # render stride; None = one voxel edge
    eval_every: int = 0  # 0 disables periodic train-view PSNR
    background: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr_density <= 0 or self.lr_sh <= 0:
            raise ValueError("learning rates must be positive")
        if self.lambda_tv < 0:
            raise ValueError("lambda_tv must be >= 0")


@dataclass
class LogRow:
    step: int
    loss_photo: float
    loss_tv: float
    psnr: float  # nan when not evaluated this step


def write_log_csv(rows: list[LogRow], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss_photo", "loss_tv", "psnr"])
        for r in rows:
            writer.writerow([r.step, r.loss_photo, r.loss_tv, r.psnr])


def _flatten_rays(viewset: ViewSet):
    origins, dirs, targets = [], [], []
    for view in viewset:
        o, d = generate_rays(view.cam, view.pose, 0)
        origins.append(o.reshape(-1, 3))
        dirs.append(d.reshape(-1, 3))
        targets.append(view.image.data.reshape(-1, 1).astype(np.float64))
    return (
        np.ascontiguousarray(np.concatenate(origins)),
        np.ascontiguousarray(np.concatenate(dirs)),
        np.ascontiguousarray(np.concatenate(targets)),
    )


class LumaTrainer:
    """Estimator-style wrapper: configure once, fit(grid, viewset).

    After fit the trained grid is available as ``grid_`` and the training
    log as ``log_``.
    """

    def __init__(self, config: TrainConfig | None = None, **overrides):
        config = config or TrainConfig()
        if overrides:
            config = replace(config, **overrides)
        self.config = config

    def get_params(self) -> dict:
        return asdict(self.config)

    def set_params(self, **params) -> "LumaTrainer":
        self.config = replace(self.config, **params)
        return self

    def fit(self, grid: SparseVoxelGrid, viewset: ViewSet) -> "LumaTrainer":
        cfg = self.config
        if grid.channels != 1:
            raise ValueError("stage 1 requires a 1-channel grid")
        for view in viewset:
            if view.image.space is not ColorSpace.GRAY:
                raise ValueError(f"view {view.view_id}: stage 1 needs gray images")

        step = float(np.min(grid.voxel_size)) if cfg.step is None else cfg.step
        bg = _background(grid, cfg.background)
        origins, dirs, targets = _flatten_rays(viewset)
        n_pixels = origins.shape[0]
        rng = np.random.default_rng(cfg.seed)

        lr = np.empty(grid.params.shape[-1], dtype=grid.params.dtype)
        lr[0] = cfg.lr_density
        lr[1:] = cfg.lr_sh
        opt = RMSProp(grid.params, lr, rho=cfg.rho, eps=cfg.eps)
        bufs = GradBuffers(grid, grad_chunks(cfg.batch_size))
        out_color = np.empty((cfg.batch_size, 1))
        s_max = _max_samples(grid, step)
        occ = _occ_u8(grid)
        all_occ = grid.all_occupied()

        self.log_ = []
        for it in range(cfg.iterations):
            idx = rng.integers(0, n_pixels, size=cfg.batch_size)
            bo = np.ascontiguousarray(origins[idx])
            bd = np.ascontiguousarray(dirs[idx])
            bt = np.ascontiguousarray(targets[idx])
            bufs.zero()
            _kernels.photometric_step(
                bo, bd, bt, grid.params, occ, all_occ, 1, grid.basis_size,
                grid.bbox_min, grid.bbox_max, grid.voxel_size, step, bg,
                s_max, grid.density_frozen, 1.0 / cfg.batch_size,
                bufs.packed, out_color,
            )
            loss_photo = float(np.mean((out_color - bt) ** 2))
            grad = bufs.merged()

            loss_tv = 0.0
            if cfg.lambda_tv > 0.0:
                loss_tv, gd_tv, gsh_tv = tv_loss(grid)
                nx, ny, nz = grid.resolution
                grad[..., 0] += cfg.lambda_tv * gd_tv
                grad[..., 1:] += cfg.lambda_tv * gsh_tv.reshape(nx, ny, nz, -1)

            opt.step(grid.params, grad)

            evaluate = cfg.eval_every > 0 and (it + 1) % cfg.eval_every == 0
            self.log_.append(
                LogRow(
                    step=it + 1,
                    loss_photo=loss_photo,
                    loss_tv=loss_tv,
                    psnr=self.evaluate(grid, viewset) if evaluate else math.nan,
                )
            )
        self.grid_ = grid
        return self

    def evaluate(self, grid: SparseVoxelGrid, viewset: ViewSet) -> float:
        """Mean train-view PSNR of the current grid."""
        cfg = self.config
        step = float(np.min(grid.voxel_size)) if cfg.step is None else cfg.step
        scores = []
        for view in viewset:
            color, _, _ = render_image(
                grid, view.cam, view.pose, step=step, background=cfg.background
            )
            scores.append(psnr(color, view.image))
        return float(np.mean(scores))


def train_luma(
    grid: SparseVoxelGrid, viewset: ViewSet, config: TrainConfig | None = None
) -> tuple[SparseVoxelGrid, list[LogRow]]:
    """Functional entry point for stage 1; returns (trained grid, log)."""
    trainer = LumaTrainer(config)
    trainer.fit(grid, viewset)
    return trainer.grid_, trainer.log_
