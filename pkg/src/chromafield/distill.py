"""Stage 2: distill chroma from per-view teacher images into a frozen-geometry
field.

Per view the loss is taken in Lab space on full rendered images: MSE on the
lightness channel (anchors content) and L1 on the two chroma channels
(distills color). The multi-scale schedule runs scales K..0 coarse to fine;
at every scale finer than K the rendered chroma is additionally tied to the
bilinearly upsampled chroma prediction of the previous (coarser) scale, which
counteracts distillation desaturation. One optimizer update is applied per
view after its full scale loop.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from .cameras import generate_rays
from .color import (
    ColorSpace,
    ImageBuf,
    _rgb_to_lab_ext,
    _srgb_encode_ext,
    _srgb_encode_ext_deriv,
    downsample,
    rgb_to_lab,
    rgb_to_lab_vjp,
    upsample2,
)
from .dataset import ViewSet
from .grid import SparseVoxelGrid, expand_luma_to_rgb, freeze_density
from .optim import RMSProp
from .render import GradBuffers, _background, grad_chunks, render_backward_packed, render_rays
from .teacher import TeacherSet


@dataclass
class DistillConfig:
    epochs: int = 10
    coarsest_scale: int = 3  # K: pyramid levels run K..0
    multiscale: bool = True
    lambda_l: float = 1.0
    lambda_a: float = 1.0
    lambda_b: float = 1.0
    lambda_ms: float = 1.0
    lr_sh: float = 0.01
    rho: float = 0.95
    eps: float = 1e-8
    step: float | None = None
    background: float = 0.0
    luma_recalibration: bool = True
    update_per_scale: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if self.coarsest_scale < 0:
            raise ValueError("coarsest_scale must be >= 0")
        for name in ("lambda_l", "lambda_a", "lambda_b", "lambda_ms"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass
class DistillLogRow:
    epoch: int
    view_id: str
    scale: int
    loss_l: float
    loss_a: float
    loss_b: float
    loss_ms: float
    mae_l: float  # mean |L_render - L_teacher|, for luma-drift monitoring


def write_distill_log_csv(rows: list[DistillLogRow], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["epoch", "view", "scale", "loss_l", "loss_a", "loss_b", "loss_ms", "mae_l"]
        )
        for r in rows:
            writer.writerow(
                [r.epoch, r.view_id, r.scale, r.loss_l, r.loss_a, r.loss_b,
                 r.loss_ms, r.mae_l]
            )


def rendered_to_lab(linear_rgb: np.ndarray) -> np.ndarray:
    """Lab of a rendered linear-RGB image via the linear->sRGB->Lab chain,
    using the smooth out-of-range extensions so gradients stay defined."""
    srgb = _srgb_encode_ext(np.asarray(linear_rgb, dtype=np.float64))
    return _rgb_to_lab_ext(srgb)


# L1 residuals below this many Lab units count as exactly zero: float32
# image storage leaves ~1e-5 Lab of conversion noise on identical inputs,
# and sign() of that noise would otherwise inject full-size gradient jitter.
_L1_DEADBAND = 1e-4


def _l1_sign(d: np.ndarray) -> np.ndarray:
    return np.where(np.abs(d) > _L1_DEADBAND, np.sign(d), 0.0)


def _recalibrate_luma(grid: SparseVoxelGrid) -> None:
    """Rescale SH so re-encoded renders start luma-aligned with the teachers.

    Stage 1 fits gamma-encoded gray values, but the distillation chain
    re-encodes renders as linear RGB, which would open a large initial L gap
    that the Eq.-style L term then has to close (leaking into chroma on the
    way). Mapping each voxel's isotropic value v to decode(v) puts the
    re-encoded render back on the stage-1 gray levels.
    """
    from .color import _srgb_decode_ext
    from .grid import SH_C0

    sh = grid.sh
    dc = sh[..., 0].astype(np.float64) * SH_C0
    ratio = np.where(
        np.abs(dc) > 1e-6, _srgb_decode_ext(dc) / np.where(dc == 0, 1.0, dc),
        1.0 / 12.92,
    )
    sh[...] = (sh * ratio[..., None]).astype(sh.dtype)


def _lab_cotangent_to_linear(linear_rgb: np.ndarray, cot_lab: np.ndarray) -> np.ndarray:
    lin = np.asarray(linear_rgb, dtype=np.float64)
    srgb = _srgb_encode_ext(lin)
    cot_srgb = rgb_to_lab_vjp(srgb, cot_lab)
    return cot_srgb * _srgb_encode_ext_deriv(lin)


def distill_loss(
    rendered: ImageBuf,
    teacher: ImageBuf,
    weights: tuple[float, float, float] = (1.0, 1.0, 1.0),
) -> tuple[float, np.ndarray]:
    """Lab-space distillation loss and its gradient w.r.t. rendered pixels.

    loss = wl * mean((L_t - L_r)^2) + wa * mean(|a_t - a_r|)
         + wb * mean(|b_t - b_r|)

    ``rendered`` is linear RGB, ``teacher`` sRGB; both are converted to Lab
    internally. The L1 subgradient at exactly zero is zero. The returned
    gradient is (H, W, 3), backpropagated through the color conversions.
    """
    if rendered.data.shape != teacher.data.shape:
        raise ValueError(
            f"rendered {rendered.data.shape} vs teacher {teacher.data.shape}"
        )
    if rendered.space is not ColorSpace.LINEAR_RGB:
        raise ValueError(f"rendered image must be LinearRGB, got {rendered.space}")
    if teacher.space is not ColorSpace.SRGB:
        raise ValueError(f"teacher image must be sRGB, got {teacher.space}")
    wl, wa, wb = weights
    lin = rendered.data.astype(np.float64)
    lab_r = rendered_to_lab(lin)
    lab_t = rgb_to_lab(teacher.data.astype(np.float64))

    n = lab_r.shape[0] * lab_r.shape[1]
    d_l = lab_r[..., 0] - lab_t[..., 0]
    d_a = lab_r[..., 1] - lab_t[..., 1]
    d_b = lab_r[..., 2] - lab_t[..., 2]
    loss = (
        wl * float(np.mean(d_l**2))
        + wa * float(np.mean(np.abs(d_a)))
        + wb * float(np.mean(np.abs(d_b)))
    )
    cot_lab = np.stack(
        [
            wl * 2.0 * d_l / n,
            wa * _l1_sign(d_a) / n,
            wb * _l1_sign(d_b) / n,
        ],
        axis=-1,
    )
    return loss, _lab_cotangent_to_linear(lin, cot_lab)


class ColorDistiller:
    """Estimator-style stage-2 runner: fit(grid, teacher, viewset).

    The input grid is not mutated; the colorized copy is ``grid_`` after fit
    and the per-(epoch, view, scale) loss log is ``log_``.
    """

    def __init__(self, config: DistillConfig | None = None, **overrides):
        config = config or DistillConfig()
        if overrides:
            config = replace(config, **overrides)
        self.config = config

    def get_params(self) -> dict:
        return asdict(self.config)

    def set_params(self, **params) -> "ColorDistiller":
        self.config = replace(self.config, **params)
        return self

    def fit(
        self, grid: SparseVoxelGrid, teacher: TeacherSet, viewset: ViewSet
    ) -> "ColorDistiller":
        cfg = self.config
        missing = [v.view_id for v in viewset if v.view_id not in teacher.entries]
        if missing:
            raise ValueError(f"teacher has no entries for views: {missing}")
        w, h = viewset.base_resolution
        if cfg.multiscale and (w % (1 << cfg.coarsest_scale) or h % (1 << cfg.coarsest_scale)):
            raise ValueError(
                f"resolution {w}x{h} not divisible by 2^{cfg.coarsest_scale}"
            )

        g = expand_luma_to_rgb(grid) if grid.channels == 1 else grid.copy()
        freeze_density(g)
        if cfg.luma_recalibration:
            _recalibrate_luma(g)
        step = float(np.min(g.voxel_size)) if cfg.step is None else cfg.step
        bg = _background(g, cfg.background)

        lr = np.empty(g.params.shape[-1], dtype=g.params.dtype)
        lr[0] = 0.0  # geometry frozen; gradients are zero anyway
        lr[1:] = cfg.lr_sh
        opt = RMSProp(g.params, lr, rho=cfg.rho, eps=cfg.eps)

        scales = list(range(cfg.coarsest_scale, -1, -1)) if cfg.multiscale else [0]
        weights = (cfg.lambda_l, cfg.lambda_a, cfg.lambda_b)
        rays = {
            (view.view_id, s): generate_rays(view.cam, view.pose, s)
            for view in viewset
            for s in scales
        }
        bufs = GradBuffers(g, grad_chunks(w * h))
        grad_acc = np.zeros_like(g.params)

        self.log_ = []
        for epoch in range(cfg.epochs):
            for view in viewset:
                teacher_full = teacher.get(view.view_id)
                grad_acc.fill(0.0)
                prev_a = prev_b = None
                for s in scales:
                    origins, dirs = rays[(view.view_id, s)]
                    hs, ws = dirs.shape[:2]
                    color, _, _ = render_rays(g, origins, dirs, step=step, background=bg)
                    lin = color.reshape(hs, ws, 3)
                    rendered = ImageBuf(lin.astype(np.float32), ColorSpace.LINEAR_RGB)
                    teacher_s = downsample(teacher_full, 1 << s)

                    _, cot_lin = distill_loss(rendered, teacher_s, weights)
                    lab_r = rendered_to_lab(lin)
                    loss_ms = 0.0
                    if s != cfg.coarsest_scale and prev_a is not None:
                        # tie chroma to the upsampled coarser prediction
                        d_a = lab_r[..., 1] - prev_a
                        d_b = lab_r[..., 2] - prev_b
                        n = hs * ws
                        loss_ms = cfg.lambda_ms * float(
                            np.mean(np.abs(d_a)) + np.mean(np.abs(d_b))
                        )
                        cot_lab = np.zeros_like(lab_r)
                        cot_lab[..., 1] = cfg.lambda_ms * _l1_sign(d_a) / n
                        cot_lab[..., 2] = cfg.lambda_ms * _l1_sign(d_b) / n
                        cot_lin = cot_lin + _lab_cotangent_to_linear(lin, cot_lab)

                    grad = render_backward_packed(
                        g, origins, dirs, cot_lin.reshape(-1, 3),
                        step=step, background=bg, buffers=bufs,
                    )
                    if cfg.update_per_scale:
                        # coarse-to-fine: each finer scale renders the field
                        # already corrected at the coarser one
                        opt.step(g.params, grad)
                    else:
                        grad_acc += grad
                    # placeholders for the next (finer) scale, detached
                    prev_a = upsample2(
                        ImageBuf(lab_r[..., 1:2].astype(np.float32), ColorSpace.GRAY)
                    ).data[..., 0].astype(np.float64)
                    prev_b = upsample2(
                        ImageBuf(lab_r[..., 2:3].astype(np.float32), ColorSpace.GRAY)
                    ).data[..., 0].astype(np.float64)

                    lab_t = rgb_to_lab(teacher_s.data.astype(np.float64))
                    abs_l = np.abs(lab_r[..., 0] - lab_t[..., 0])
                    self.log_.append(
                        DistillLogRow(
                            epoch=epoch,
                            view_id=view.view_id,
                            scale=s,
                            loss_l=cfg.lambda_l * float(np.mean(abs_l**2)),
                            loss_a=cfg.lambda_a * float(np.mean(np.abs(lab_r[..., 1] - lab_t[..., 1]))),
                            loss_b=cfg.lambda_b * float(np.mean(np.abs(lab_r[..., 2] - lab_t[..., 2]))),
                            loss_ms=loss_ms,
                            mae_l=float(np.mean(abs_l)),
                        )
                    )
                if not cfg.update_per_scale:
                    opt.step(g.params, grad_acc)
        self.grid_ = g
        return self


def distill_color(
    grid: SparseVoxelGrid,
    teacher: TeacherSet,
    viewset: ViewSet,
    config: DistillConfig | None = None,
) -> tuple[SparseVoxelGrid, list[DistillLogRow]]:
    """Functional entry point for stage 2; returns (colorized grid, log)."""
    distiller = ColorDistiller(config)
    distiller.fit(grid, teacher, viewset)
    return distiller.grid_, distiller.log_
