"""Volumetric rendering of sparse voxel grids.

Quadrature: alpha_i = 1 - exp(-sigma_i * delta_i) on fixed-stride segments
from the bbox entry distance (midpoint samples, truncated last segment),
T_i = prod_{j<i} (1 - alpha_j), color = sum T_i alpha_i c_i + T_final * bg,
depth = sum T_i alpha_i t_i / max(sum T_i alpha_i, 1e-8).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .cameras import CameraIntrinsics, Pose, generate_rays
from .color import ColorSpace, ImageBuf
from .grid import SparseVoxelGrid


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    t_near: float
    t_far: float


@dataclass(frozen=True)
class RenderSample:
    color: np.ndarray  # (C,)
    depth: float
    opacity: float


def default_step(grid: SparseVoxelGrid) -> float:
    """Half the smallest voxel edge; a reasonable quadrature stride."""
    return 0.5 * float(np.min(grid.voxel_size))


def make_ray(grid: SparseVoxelGrid, origin, direction) -> Ray:
    """Normalize a direction and intersect with the grid bbox. A miss is
    encoded as t_far < t_near."""
    origin = np.asarray(origin, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    direction = direction / np.linalg.norm(direction)
    tn, tf = _kernels._ray_bbox(
        origin[0], origin[1], origin[2],
        direction[0], direction[1], direction[2],
        grid.bbox_min, grid.bbox_max,
    )
    return Ray(origin, direction, tn, tf)


def _max_samples(grid: SparseVoxelGrid, step: float) -> int:
    diag = float(np.linalg.norm(grid.bbox_max - grid.bbox_min))
    return int(math.ceil(diag / step)) + 2


def _background(grid: SparseVoxelGrid, background) -> np.ndarray:
    if background is None:
        return np.zeros(grid.channels)
    bg = np.atleast_1d(np.asarray(background, dtype=np.float64))
    if bg.size == 1 and grid.channels != 1:
        bg = np.repeat(bg, grid.channels)
    if bg.size != grid.channels:
        raise ValueError(
            f"background has {bg.size} channels, grid has {grid.channels}"
        )
    return bg


def _occ_u8(grid: SparseVoxelGrid) -> np.ndarray:
    return grid.occupancy.view(np.uint8)


def render_rays(
    grid: SparseVoxelGrid,
    origins: np.ndarray,
    dirs: np.ndarray,
    step: float | None = None,
    background=None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Render a flat batch of rays. Returns (color (R, C), depth (R,),
    opacity (R,)) as float64."""
    step = default_step(grid) if step is None else float(step)
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    origins = np.ascontiguousarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 3)
    bg = _background(grid, background)
    n = origins.shape[0]
    color = np.empty((n, grid.channels))
    depth = np.empty(n)
    opacity = np.empty(n)
    _kernels.render_rays_forward(
        origins, dirs, grid.params, _occ_u8(grid), grid.all_occupied(),
        grid.channels, grid.basis_size,
        grid.bbox_min, grid.bbox_max, grid.voxel_size, step, bg,
        color, depth, opacity,
    )
    return color, depth, opacity


def render_ray(
    grid: SparseVoxelGrid, ray: Ray, step: float | None = None, background=None
) -> RenderSample:
    """Render a single ray to a RenderSample."""
    color, depth, opacity = render_rays(
        grid, ray.origin[None], ray.direction[None], step, background
    )
    return RenderSample(color[0], float(depth[0]), float(opacity[0]))


def render_image(
    grid: SparseVoxelGrid,
    cam: CameraIntrinsics,
    pose: Pose,
    scale: int = 0,
    step: float | None = None,
    background=None,
) -> tuple[ImageBuf, ImageBuf, ImageBuf]:
    """Render a full view at pyramid level `scale` (resolution / 2**scale).

    Returns (color, depth, opacity) images; color is Gray for 1-channel grids
    and LinearRGB for 3-channel grids.
    """
    origins, dirs = generate_rays(cam, pose, scale)
    h, w = dirs.shape[:2]
    color, depth, opacity = render_rays(grid, origins, dirs, step, background)
    space = ColorSpace.GRAY if grid.channels == 1 else ColorSpace.LINEAR_RGB
    return (
        ImageBuf(color.reshape(h, w, grid.channels).astype(np.float32), space),
        ImageBuf(depth.reshape(h, w, 1).astype(np.float32), ColorSpace.GRAY),
        ImageBuf(opacity.reshape(h, w, 1).astype(np.float32), ColorSpace.GRAY),
    )


class GradBuffers:
    """Reusable chunked gradient accumulators matching a grid's layout."""

    def __init__(self, grid: SparseVoxelGrid, n_chunks: int):
        self.n_chunks = n_chunks
        # gradients accumulate in the grid's own precision
        self.packed = np.zeros(
            (n_chunks,) + grid.params.shape, dtype=grid.params.dtype
        )
        self._channels = grid.channels
        self._basis = grid.basis_size

    def zero(self) -> None:
        self.packed.fill(0.0)

    def merged(self) -> np.ndarray:
        # fixed chunk order; bit-deterministic for a given chunk count
        if self.n_chunks == 1:
            return self.packed[0]
        return self.packed.sum(axis=0)

    def merged_split(self) -> tuple[np.ndarray, np.ndarray]:
        m = self.merged()
        nx, ny, nz = m.shape[:3]
        return m[..., 0], m[..., 1:].reshape(
            nx, ny, nz, self._channels, self._basis
        )


def grad_chunks(n_rays: int) -> int:
    import numba

    return max(1, min(numba.get_num_threads(), n_rays))


def render_backward_packed(
    grid: SparseVoxelGrid,
    origins: np.ndarray,
    dirs: np.ndarray,
    dl_dcolor: np.ndarray,
    step: float | None = None,
    background=None,
    buffers: GradBuffers | None = None,
) -> np.ndarray:
    """Adjoint of :func:`render_rays`, returning the gradient in the grid's
    packed (Nx, Ny, Nz, 1 + C*B) layout. The returned array may alias the
    buffers; callers accumulate or copy before the next call."""
    step = default_step(grid) if step is None else float(step)
    origins = np.ascontiguousarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 3)
    dl = np.ascontiguousarray(dl_dcolor, dtype=np.float64).reshape(
        -1, grid.channels
    )
    if dl.shape[0] != origins.shape[0]:
        raise ValueError(
            f"{dl.shape[0]} cotangent rows for {origins.shape[0]} rays"
        )
    bg = _background(grid, background)
    if buffers is None:
        buffers = GradBuffers(grid, grad_chunks(origins.shape[0]))
    else:
        buffers.zero()
    out_color = np.empty((origins.shape[0], grid.channels))
    _kernels.render_rays_backward(
        origins, dirs, grid.params, _occ_u8(grid), grid.all_occupied(),
        grid.channels, grid.basis_size,
        grid.bbox_min, grid.bbox_max, grid.voxel_size, step, bg,
        dl, _max_samples(grid, step), grid.density_frozen,
        buffers.packed, out_color,
    )
    return buffers.merged()


def render_backward(
    grid: SparseVoxelGrid,
    origins: np.ndarray,
    dirs: np.ndarray,
    dl_dcolor: np.ndarray,
    step: float | None = None,
    background=None,
    buffers: GradBuffers | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Analytic adjoint of :func:`render_rays` for a color cotangent.

    Returns (d loss / d density, d loss / d sh) as dense arrays aligned with
    the grid. Density gradients are zeroed when the grid is frozen. Voxels
    with zero trilinear weight on every sample receive exactly zero gradient.
    """
    merged = render_backward_packed(
        grid, origins, dirs, dl_dcolor, step, background, buffers
    )
    nx, ny, nz = merged.shape[:3]
    return merged[..., 0], merged[..., 1:].reshape(
        nx, ny, nz, grid.channels, grid.basis_size
    )
