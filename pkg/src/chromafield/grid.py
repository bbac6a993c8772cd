"""Sparse voxel grid: density + spherical-harmonic appearance per voxel.

Storage is a dense float array plus a boolean occupancy mask, which is the
right trade at desk-scale resolutions (<= 128^3). Density is stored
pre-activation and passed through softplus at sample time so the activated
density is always non-negative with smooth gradients. Appearance is a real
spherical-harmonic expansion per channel, basis size 1, 4 or 9.

Internally all per-voxel parameters live interleaved in one
(Nx, Ny, Nz, 1 + C*B) array (density first, then SH channel-major);
``density`` and ``sh`` are writable views into it. The interleaving keeps a
trilinear corner read on one or two cache lines, which the render kernels
rely on.
"""

from __future__ import annotations

import struct

import numpy as np

_MAGIC = b"CFGRID01"
_VERSION = 1

#: Real SH constants (degree 0..2), same layout as the tabulated bases used
#: by voxel radiance field implementations.
SH_C0 = 0.28209479177387814  # 0.5*sqrt(1/pi)
SH_C1 = 0.4886025119029199  # sqrt(3/(4pi))
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)

SUPPORTED_BASIS_SIZES = (1, 4, 9)


def softplus(x):
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sh_basis(direction, basis_size: int) -> np.ndarray:
    """Real SH basis values for unit direction(s), shape (..., basis_size)."""
    if basis_size not in SUPPORTED_BASIS_SIZES:
        raise ValueError(
            f"unsupported SH basis size {basis_size}; expected one of "
            f"{SUPPORTED_BASIS_SIZES}"
        )
    d = np.asarray(direction, dtype=np.float64)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    cols = [np.full_like(x, SH_C0)]
    if basis_size > 1:
        cols += [-SH_C1 * y, SH_C1 * z, -SH_C1 * x]
    if basis_size > 4:
        cols += [
            SH_C2[0] * x * y,
            SH_C2[1] * y * z,
            SH_C2[2] * (2.0 * z * z - x * x - y * y),
            SH_C2[3] * x * z,
            SH_C2[4] * (x * x - y * y),
        ]
    return np.stack(cols, axis=-1)


def eval_sh(coeffs, direction) -> np.ndarray:
    """Evaluate an SH expansion at a unit direction.

    ``coeffs`` has basis size on the last axis; leading axes (e.g. color
    channels) are preserved. The result is not clamped: clamping to
    non-negative radiance happens at final color assembly in the renderer.
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    basis = sh_basis(direction, coeffs.shape[-1])
    return coeffs @ basis


class SparseVoxelGrid:
    """Voxel field over a world-space axis-aligned box.

    Voxel (i, j, k) is centered at bbox_min + (i + 0.5) * voxel_size; sample
    points are trilinearly interpolated between centers with clamp-to-edge
    inside the half-voxel boundary shell.
    """

    def __init__(
        self,
        density: np.ndarray,
        sh: np.ndarray,
        occupancy: np.ndarray,
        bbox_min,
        bbox_max,
        density_frozen: bool = False,
    ):
        density = np.asarray(density)
        sh = np.asarray(sh)
        if sh.ndim != 5 or sh.shape[:3] != density.shape:
            raise ValueError("sh must be (Nx, Ny, Nz, C, B) matching density")
        if occupancy.shape != density.shape:
            raise ValueError("occupancy resolution disagrees with density")
        nx, ny, nz = density.shape
        channels, basis = sh.shape[3], sh.shape[4]
        if channels not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {channels}")
        if basis not in SUPPORTED_BASIS_SIZES:
            raise ValueError(f"unsupported SH basis size {basis}")
        dtype = np.promote_types(density.dtype, sh.dtype)
        self.params = np.empty((nx, ny, nz, 1 + channels * basis), dtype=dtype)
        self.params[..., 0] = density
        self.params[..., 1:] = sh.reshape(nx, ny, nz, channels * basis)
        self._channels = channels
        self._basis = basis
        self.occupancy = np.ascontiguousarray(occupancy, dtype=bool)
        self.bbox_min = np.asarray(bbox_min, dtype=np.float64)
        self.bbox_max = np.asarray(bbox_max, dtype=np.float64)
        self.density_frozen = density_frozen
        if np.any(self.bbox_max <= self.bbox_min):
            raise ValueError("bbox_max must exceed bbox_min on every axis")

    @classmethod
    def create(
        cls,
        resolution: tuple[int, int, int],
        bbox_min,
        bbox_max,
        channels: int = 1,
        basis_size: int = 4,
        density_init: float = -2.0,
        sh0_init: float = 0.0,
        dtype=np.float32,
    ) -> "SparseVoxelGrid":
        nx, ny, nz = resolution
        sh = np.zeros((nx, ny, nz, channels, basis_size), dtype=dtype)
        sh[..., 0] = sh0_init
        return cls(
            density=np.full((nx, ny, nz), density_init, dtype=dtype),
            sh=sh,
            occupancy=np.ones((nx, ny, nz), dtype=bool),
            bbox_min=bbox_min,
            bbox_max=bbox_max,
        )

    def __repr__(self) -> str:
        nx, ny, nz = self.resolution
        return (
            f"SparseVoxelGrid({nx}x{ny}x{nz}, channels={self.channels}, "
            f"basis={self.basis_size}, frozen={self.density_frozen})"
        )

    @property
    def density(self) -> np.ndarray:
        """Pre-activation density, writable view."""
        return self.params[..., 0]

    @density.setter
    def density(self, value) -> None:
        self.params[..., 0] = value

    @property
    def sh(self) -> np.ndarray:
        """SH coefficients (Nx, Ny, Nz, C, B), writable view."""
        nx, ny, nz = self.resolution
        return self.params[..., 1:].reshape(
            nx, ny, nz, self._channels, self._basis
        )

    @sh.setter
    def sh(self, value) -> None:
        self.sh[...] = value

    @property
    def resolution(self) -> tuple[int, int, int]:
        return self.params.shape[:3]

    @property
    def channels(self) -> int:
        return self._channels

    @property
    def basis_size(self) -> int:
        return self._basis

    @property
    def voxel_size(self) -> np.ndarray:
        return (self.bbox_max - self.bbox_min) / np.asarray(self.resolution)

    def all_occupied(self) -> bool:
        return bool(self.occupancy.all())

    def copy(self) -> "SparseVoxelGrid":
        return SparseVoxelGrid(
            self.density.copy(),
            self.sh.copy(),
            self.occupancy.copy(),
            self.bbox_min.copy(),
            self.bbox_max.copy(),
            self.density_frozen,
        )


def sample_trilinear(grid: SparseVoxelGrid, points) -> tuple[np.ndarray, np.ndarray]:
    """Activated density and SH coefficients at world-space points.

    Points outside the bbox get zero density and zero coefficients. Inside,
    values are trilinear between the 8 surrounding voxel centers (weights sum
    to one, voxel centers reproduce stored values exactly); unoccupied corners
    contribute nothing and the activated density is scaled by the occupied
    weight fraction.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    res = np.asarray(grid.resolution)
    g = (pts - grid.bbox_min) / grid.voxel_size - 0.5
    inside = np.all((pts >= grid.bbox_min) & (pts <= grid.bbox_max), axis=-1)
    g = np.clip(g, 0.0, res - 1.0)
    base = np.minimum(g.astype(np.int64), np.maximum(res - 2, 0))
    frac = g - base

    d_acc = np.zeros(pts.shape[0])
    occ_acc = np.zeros(pts.shape[0])
    sh_acc = np.zeros((pts.shape[0], grid.channels, grid.basis_size))
    for corner in range(8):
        off = np.array([(corner >> 2) & 1, (corner >> 1) & 1, corner & 1])
        idx = np.minimum(base + off, res - 1)
        w = np.prod(np.where(off, frac, 1.0 - frac), axis=-1)
        occ = grid.occupancy[idx[:, 0], idx[:, 1], idx[:, 2]]
        w_occ = w * occ
        d_acc += w_occ * grid.density[idx[:, 0], idx[:, 1], idx[:, 2]]
        occ_acc += w_occ
        sh_acc += w_occ[:, None, None] * grid.sh[idx[:, 0], idx[:, 1], idx[:, 2]]

    sigma = softplus(d_acc) * occ_acc * inside
    sh_out = sh_acc * (inside[:, None, None])
    if np.asarray(points).ndim == 1:
        return float(sigma[0]), sh_out[0]
    return sigma, sh_out


def tv_loss(grid: SparseVoxelGrid) -> tuple[float, np.ndarray, np.ndarray]:
    """Total variation over occupied neighbor pairs, squared-difference form.

    Returns (loss, d_loss/d_density, d_loss/d_sh). The sum runs over forward
    differences of the stored density and every SH component along each axis,
    counting each adjacent pair once.
    """
    density = grid.density
    sh = grid.sh
    grad_d = np.zeros(density.shape, dtype=density.dtype)
    grad_sh = np.zeros(sh.shape, dtype=sh.dtype)
    loss = 0.0
    occ = grid.occupancy
    for axis in range(3):
        sl_lo = [slice(None)] * 3
        sl_hi = [slice(None)] * 3
        sl_lo[axis] = slice(None, -1)
        sl_hi[axis] = slice(1, None)
        lo, hi = tuple(sl_lo), tuple(sl_hi)
        pair = occ[lo] & occ[hi]

        diff = (density[hi].astype(np.float64) - density[lo]) * pair
        loss += float(np.sum(diff * diff))
        grad_d[hi] += (2.0 * diff).astype(grad_d.dtype)
        grad_d[lo] -= (2.0 * diff).astype(grad_d.dtype)

        diff_sh = (sh[hi].astype(np.float64) - sh[lo]) * pair[..., None, None]
        loss += float(np.sum(diff_sh * diff_sh))
        grad_sh[hi] += (2.0 * diff_sh).astype(grad_sh.dtype)
        grad_sh[lo] -= (2.0 * diff_sh).astype(grad_sh.dtype)
    return loss, grad_d, grad_sh


def expand_luma_to_rgb(grid: SparseVoxelGrid) -> SparseVoxelGrid:
    """Turn a 1-channel grid into a 3-channel one by copying the luma SH into
    each color channel. Density is untouched, so renders of the new grid are
    channel-wise identical to the old grid's gray renders."""
    if grid.channels != 1:
        raise ValueError(f"grid already has {grid.channels} channels")
    return SparseVoxelGrid(
        density=grid.density.copy(),
        sh=np.repeat(grid.sh, 3, axis=3),
        occupancy=grid.occupancy.copy(),
        bbox_min=grid.bbox_min.copy(),
        bbox_max=grid.bbox_max.copy(),
        density_frozen=grid.density_frozen,
    )


def freeze_density(grid: SparseVoxelGrid) -> SparseVoxelGrid:
    """Mark geometry as frozen; optimizers leave density bit-identical."""
    grid.density_frozen = True
    return grid


def save_grid(grid: SparseVoxelGrid, path) -> None:
    """Write the grid to the binary checkpoint container (little-endian)."""
    nx, ny, nz = grid.resolution
    header = _MAGIC + struct.pack(
        "<IIIIIIB3x",
        _VERSION, nx, ny, nz, grid.channels, grid.basis_size,
        1 if grid.density_frozen else 0,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(
            np.concatenate([grid.bbox_min, grid.bbox_max]).astype("<f4").tobytes()
        )
        fh.write(np.ascontiguousarray(grid.density, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(grid.sh, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(grid.occupancy, dtype=np.uint8).tobytes())


def load_grid(path) -> SparseVoxelGrid:
    """Read a grid checkpoint written by :func:`save_grid`."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a grid checkpoint (magic {magic!r})")
        version, nx, ny, nz, channels, basis, frozen = struct.unpack(
            "<IIIIIIB3x", fh.read(28)
        )
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        bbox = np.frombuffer(fh.read(24), dtype="<f4").astype(np.float64)
        n = nx * ny * nz
        density = np.frombuffer(fh.read(4 * n), dtype="<f4").reshape(nx, ny, nz)
        sh = np.frombuffer(fh.read(4 * n * channels * basis), dtype="<f4").reshape(
            nx, ny, nz, channels, basis
        )
        occupancy = np.frombuffer(fh.read(n), dtype=np.uint8).reshape(nx, ny, nz)
        trailing = fh.read(1)
    if trailing:
        raise ValueError(f"{path}: trailing bytes after checkpoint payload")
    return SparseVoxelGrid(
        density=density,
        sh=sh,
        occupancy=occupancy.astype(bool),
        bbox_min=bbox[:3],
        bbox_max=bbox[3:],
        density_frozen=bool(frozen),
    )
