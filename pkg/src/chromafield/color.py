"""Color-space conversions and image pyramid operations.

All conversions are exact closed forms evaluated in double precision and
vectorized over trailing channel axes: a "pixel" is any array of shape
(..., 3), a gray value any array of shape (...,). Conversions between sRGB,
linear RGB and CIE L*a*b* use the D65 white point, with the white normalization
taken from the row sums of the RGB->XYZ matrix so the neutral axis maps to
a = b = 0 exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class ColorSpace(Enum):
    GRAY = "gray"
    SRGB = "srgb"
    LINEAR_RGB = "linear_rgb"
    LAB = "lab"


_SPACE_CHANNELS = {
    ColorSpace.GRAY: 1,
    ColorSpace.SRGB: 3,
    ColorSpace.LINEAR_RGB: 3,
    ColorSpace.LAB: 3,
}


@dataclass
class ImageBuf:
    """H x W x C floating-point image with an explicit color-space tag.

    ``data`` always carries the channel axis, even for grayscale (C = 1).
    Conversions never mutate in place and never silently change the tag.
    """

    data: np.ndarray
    space: ColorSpace

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim == 2:
            self.data = self.data[:, :, None]
        if self.data.ndim != 3:
            raise ValueError(f"image data must be HxWxC, got shape {self.data.shape}")
        expected = _SPACE_CHANNELS[self.space]
        if self.data.shape[2] != expected:
            raise ValueError(
                f"{self.space.value} image must have {expected} channels, "
                f"got {self.data.shape[2]}"
            )

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass
class ClipStats:
    """Diagnostic counters for out-of-range inputs and gamut clips."""

    range_clips: int = 0
    gamut_clips: int = 0

    def reset(self) -> None:
        self.range_clips = 0
        self.gamut_clips = 0


#: Process-wide diagnostic counters. Purely informational; no control flow
#: depends on them.
clip_stats = ClipStats()


# sRGB primaries -> XYZ under D65. White point = row sums, which keeps
# r = g = b exactly on the neutral axis.
_RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_XYZ_TO_RGB = np.linalg.inv(_RGB_TO_XYZ)
_WHITE = _RGB_TO_XYZ.sum(axis=1)

# Two-branch CIE f(t) constants (exact rationals).
_LAB_EPS = 216.0 / 24389.0
_LAB_KAPPA = 24389.0 / 27.0

_SRGB_JOINT = 0.04045
_LINEAR_JOINT = 0.0031308

#: Rec. 601 luma weights, applied on gamma-encoded values.
GRAY_WEIGHTS = np.array([0.299, 0.587, 0.114])


def _clip_unit(v: np.ndarray) -> np.ndarray:
    clipped = np.clip(v, 0.0, 1.0)
    n = int(np.count_nonzero(clipped != v))
    if n:
        clip_stats.range_clips += n
    return clipped


def srgb_to_linear(v) -> np.ndarray:
    """sRGB electro-optical transfer: gamma-encoded [0,1] to linear light.

    Out-of-range inputs are clamped to [0,1]; clamps are counted in
    ``clip_stats.range_clips``.
    """
    v = _clip_unit(np.asarray(v, dtype=np.float64))
    return np.where(v <= _SRGB_JOINT, v / 12.92, ((v + 0.055) / 1.055) ** 2.4)


def linear_to_srgb(v) -> np.ndarray:
    """Inverse sRGB transfer. Inputs clamped to [0,1] with a counted clip."""
    v = _clip_unit(np.asarray(v, dtype=np.float64))
    return np.where(
        v <= _LINEAR_JOINT, v * 12.92, 1.055 * np.power(v, 1.0 / 2.4) - 0.055
    )


def _srgb_encode_ext(v: np.ndarray) -> np.ndarray:
    # Unclamped encode used inside loss gradients: linear branch extends below
    # the joint (covers v <= 0), power branch extends above 1. Monotone on R+.
    v = np.asarray(v, dtype=np.float64)
    return np.where(
        v <= _LINEAR_JOINT,
        v * 12.92,
        1.055 * np.power(np.maximum(v, _LINEAR_JOINT), 1.0 / 2.4) - 0.055,
    )


def _srgb_encode_ext_deriv(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return np.where(
        v <= _LINEAR_JOINT,
        12.92,
        (1.055 / 2.4) * np.power(np.maximum(v, _LINEAR_JOINT), 1.0 / 2.4 - 1.0),
    )


def _srgb_decode_ext(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return np.where(
        v <= _SRGB_JOINT,
        v / 12.92,
        np.power(np.maximum(v + 0.055, 1e-12) / 1.055, 2.4),
    )


def _srgb_decode_ext_deriv(v: np.ndarray) -> np.ndarray:
    # Right-hand branch at the piecewise joint.
    v = np.asarray(v, dtype=np.float64)
    return np.where(
        v < _SRGB_JOINT,
        1.0 / 12.92,
        (2.4 / 1.055) * np.power(np.maximum(v + 0.055, 1e-12) / 1.055, 1.4),
    )


def _lab_f(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    return np.where(
        t > _LAB_EPS,
        np.cbrt(np.maximum(t, 0.0)),
        (_LAB_KAPPA * t + 16.0) / 116.0,
    )


def _lab_f_deriv(t: np.ndarray) -> np.ndarray:
    # f is C1: both branches meet with slope kappa/116 at eps.
    t = np.asarray(t, dtype=np.float64)
    safe = np.maximum(t, _LAB_EPS)
    return np.where(t > _LAB_EPS, np.cbrt(safe) ** -2 / 3.0, _LAB_KAPPA / 116.0)


def _lab_f_inv(ft: np.ndarray) -> np.ndarray:
    ft = np.asarray(ft, dtype=np.float64)
    cube = ft**3
    return np.where(cube > _LAB_EPS, cube, (116.0 * ft - 16.0) / _LAB_KAPPA)


def _xyz_to_lab(xyz: np.ndarray) -> np.ndarray:
    f = _lab_f(xyz / _WHITE)
    fx, fy, fz = f[..., 0], f[..., 1], f[..., 2]
    return np.stack(
        [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)], axis=-1
    )


def rgb_to_lab(rgb) -> np.ndarray:
    """CIE L*a*b* of sRGB pixels (D65). L in [0,100]; neutral grays map to
    a = b = 0."""
    lin = srgb_to_linear(rgb)
    return _xyz_to_lab(lin @ _RGB_TO_XYZ.T)


def _rgb_to_lab_ext(rgb) -> np.ndarray:
    # Gradient-path variant: no clamping, smooth extensions outside [0,1].
    lin = _srgb_decode_ext(np.asarray(rgb, dtype=np.float64))
    return _xyz_to_lab(lin @ _RGB_TO_XYZ.T)


def lab_to_rgb(lab) -> np.ndarray:
    """Inverse of :func:`rgb_to_lab` on the in-gamut set.

    Out-of-gamut results are clamped per channel to [0,1] and counted in
    ``clip_stats.gamut_clips``.
    """
    lab = np.asarray(lab, dtype=np.float64)
    fy = (lab[..., 0] + 16.0) / 116.0
    fx = fy + lab[..., 1] / 500.0
    fz = fy - lab[..., 2] / 200.0
    xyz = _lab_f_inv(np.stack([fx, fy, fz], axis=-1)) * _WHITE
    lin = xyz @ _XYZ_TO_RGB.T
    out_of_gamut = (lin < 0.0) | (lin > 1.0)
    n = int(np.count_nonzero(out_of_gamut))
    if n:
        clip_stats.gamut_clips += n
    lin = np.clip(lin, 0.0, 1.0)
    return np.where(
        lin <= _LINEAR_JOINT, lin * 12.92, 1.055 * np.power(lin, 1.0 / 2.4) - 0.055
    )


def rgb_to_lab_vjp(rgb, cotangent) -> np.ndarray:
    """Pull a Lab-space gradient back to sRGB space.

    Returns J^T @ cotangent where J is the analytic Jacobian of
    :func:`rgb_to_lab` at ``rgb``. At the piecewise joint of the sRGB curve
    the right-hand derivative is used.
    """
    rgb = np.asarray(rgb, dtype=np.float64)
    cot = np.asarray(cotangent, dtype=np.float64)
    lin = _srgb_decode_ext(rgb)
    t = (lin @ _RGB_TO_XYZ.T) / _WHITE
    # Lab rows in terms of (fx, fy, fz).
    cot_f = np.stack(
        [
            500.0 * cot[..., 1],
            116.0 * cot[..., 0] - 500.0 * cot[..., 1] + 200.0 * cot[..., 2],
            -200.0 * cot[..., 2],
        ],
        axis=-1,
    )
    cot_xyz = cot_f * _lab_f_deriv(t) / _WHITE
    cot_lin = cot_xyz @ _RGB_TO_XYZ
    return cot_lin * _srgb_decode_ext_deriv(rgb)


def rgb_to_gray(rgb) -> np.ndarray:
    """Rec. 601 luma of gamma-encoded sRGB values."""
    rgb = np.asarray(rgb, dtype=np.float64)
    return rgb @ GRAY_WEIGHTS


def downsample(img: ImageBuf, factor: int) -> ImageBuf:
    """Area-average pooling over factor x factor blocks.

    ``factor`` must be a power of two dividing both dimensions. Mean
    preserving; a constant image stays constant.
    """
    if factor < 1 or factor & (factor - 1):
        raise ValueError(f"downsample factor must be a power of two, got {factor}")
    h, w = img.height, img.width
    if h % factor or w % factor:
        raise ValueError(
            f"downsample factor {factor} does not divide image dims {w}x{h}"
        )
    if factor == 1:
        return ImageBuf(img.data.copy(), img.space)
    blocks = img.data.reshape(h // factor, factor, w // factor, factor, img.channels)
    out = blocks.astype(np.float64).mean(axis=(1, 3))
    return ImageBuf(out.astype(np.float32), img.space)


def _upsample_taps(n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # Half-pixel-aligned centers with clamp-to-edge boundaries.
    coords = np.clip((np.arange(2 * n) + 0.5) / 2.0 - 0.5, 0.0, n - 1.0)
    lo = np.minimum(coords.astype(np.int64), max(n - 2, 0))
    hi = np.minimum(lo + 1, n - 1)
    return lo, hi, coords - lo


def upsample2(img: ImageBuf) -> ImageBuf:
    """Bilinear x2 upsampling with half-pixel-aligned sample centers.

    Constants stay constant and interior samples reproduce affine signals;
    boundary rows/columns replicate the edge.
    """
    data = img.data.astype(np.float64)
    lo, hi, f = _upsample_taps(img.height)
    data = data[lo] * (1.0 - f)[:, None, None] + data[hi] * f[:, None, None]
    lo, hi, f = _upsample_taps(img.width)
    data = data[:, lo] * (1.0 - f)[None, :, None] + data[:, hi] * f[None, :, None]
    return ImageBuf(data.astype(np.float32), img.space)
