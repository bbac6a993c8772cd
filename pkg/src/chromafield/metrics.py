"""Cross-view color-consistency evaluation.

A frame pair (i, i+Delta) is scored by warping frame i into frame i+Delta's
viewpoint and taking the masked mean squared difference

    E = (1/|M|) * sum_M ||I_{i+Delta} - warped(I_i)||^2

over the selected channels. The mask M excludes pixels that leave the source
frame, hit the background depth sentinel, or are occluded (reprojected depth
off by more than 1% relative). The chroma-only mode converts both frames to
Lab and scores only (a, b), scaled by 1/100 so magnitudes are comparable to
full-mode sRGB errors.

Warps come either from depth reprojection (exact on synthetic scenes) or
from externally computed optical-flow files.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .cameras import CameraIntrinsics, Pose
from .color import ColorSpace, ImageBuf, rgb_to_lab

_CHROMA_SCALE = 0.01
_OCCLUSION_REL_TOL = 0.01
_FOOTPRINT_REL_TOL = 0.15


@dataclass
class WarpField:
    """Per-destination-pixel source coordinates (x, y) and validity mask."""

    src_x: np.ndarray  # (H, W) float64
    src_y: np.ndarray
    mask: np.ndarray  # (H, W) bool

    def __post_init__(self) -> None:
        if not (self.src_x.shape == self.src_y.shape == self.mask.shape):
            raise ValueError("warp field component shapes disagree")


@dataclass
class PairRecord:
    frame: int
    offset: int
    error: float
    valid_fraction: float
    skipped: str = ""  # non-empty = reason the pair was skipped


@dataclass
class ConsistencyReport:
    mode: str  # "full" or "chroma"
    delta_short: int
    delta_long: int
    records: list[PairRecord] = field(default_factory=list)

    def _mean(self, offset: int) -> float:
        vals = [r.error for r in self.records if r.offset == offset and not r.skipped]
        return float(np.mean(vals)) if vals else float("nan")

    @property
    def mean_short(self) -> float:
        return self._mean(self.delta_short)

    @property
    def mean_long(self) -> float:
        return self._mean(self.delta_long)

    def to_json(self, path) -> None:
        doc = {
            "mode": self.mode,
            "delta_short": self.delta_short,
            "delta_long": self.delta_long,
            "mean_short": self.mean_short,
            "mean_long": self.mean_long,
            "mask_criteria": "occlusion+bounds (no motion-gradient term)",
            "pairs": [
                {
                    "frame": r.frame,
                    "offset": r.offset,
                    "error": r.error,
                    "valid_fraction": r.valid_fraction,
                    "skipped": r.skipped,
                }
                for r in self.records
            ],
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=1)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["frame", "offset", "error", "valid_fraction", "skipped"])
            for r in self.records:
                writer.writerow(
                    [r.frame, r.offset, r.error, r.valid_fraction, r.skipped]
                )


def _pixel_dirs_cam(cam: CameraIntrinsics) -> np.ndarray:
    u = (np.arange(cam.width) + 0.5 - cam.cx) / cam.fx
    v = -(np.arange(cam.height) + 0.5 - cam.cy) / cam.fy
    d = np.empty((cam.height, cam.width, 3))
    d[..., 0] = u[None, :]
    d[..., 1] = v[:, None]
    d[..., 2] = -1.0
    return d


def _bilinear(img: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Sample img (H, W, C) at float coords; callers guarantee in-bounds."""
    h, w = img.shape[:2]
    x0 = np.clip(np.floor(x).astype(np.int64), 0, w - 2 if w > 1 else 0)
    y0 = np.clip(np.floor(y).astype(np.int64), 0, h - 2 if h > 1 else 0)
    fx = (x - x0)[..., None]
    fy = (y - y0)[..., None]
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    return (
        img[y0, x0] * (1 - fy) * (1 - fx)
        + img[y0, x1] * (1 - fy) * fx
        + img[y1, x0] * fy * (1 - fx)
        + img[y1, x1] * fy * fx
    )


def warp_by_depth(
    src_cam: CameraIntrinsics,
    src_pose: Pose,
    src_depth: np.ndarray,
    dst_cam: CameraIntrinsics,
    dst_pose: Pose,
    dst_depth: np.ndarray,
) -> WarpField:
    """Geometry-exact warp: unproject dst pixels by dst depth, reproject into
    src, and mask occlusions by comparing against the src depth map.

    Depths are Euclidean ray distances with +inf marking background.
    """
    dst_depth = np.asarray(dst_depth, dtype=np.float64)
    src_depth = np.asarray(src_depth, dtype=np.float64)
    dirs_cam = _pixel_dirs_cam(dst_cam)
    dirs_cam /= np.linalg.norm(dirs_cam, axis=-1, keepdims=True)
    dirs_world = dirs_cam @ dst_pose.rotation.T
    finite = np.isfinite(dst_depth)
    depth = np.where(finite, dst_depth, 1.0)
    points = dst_pose.translation + dirs_world * depth[..., None]

    rel = (points - src_pose.translation) @ src_pose.rotation
    in_front = rel[..., 2] < -1e-9
    z = np.where(in_front, -rel[..., 2], 1.0)
    src_x = src_cam.cx + src_cam.fx * (rel[..., 0] / z) - 0.5
    src_y = src_cam.cy - src_cam.fy * (rel[..., 1] / z) - 0.5

    eps = 1e-6  # pixels landing on the frame border up to float noise count
    in_bounds = (
        (src_x >= -eps)
        & (src_x <= src_cam.width - 1.0 + eps)
        & (src_y >= -eps)
        & (src_y <= src_cam.height - 1.0 + eps)
    )
    mask = finite & in_front & in_bounds

    # occlusion: the bilinearly reconstructed src depth must match the
    # point's distance from the src camera (blending tracks sloped surfaces),
    # and the bilinear footprint must not straddle a depth discontinuity or
    # the background sentinel, where interpolated samples are meaningless
    dist_src = np.linalg.norm(points - src_pose.translation, axis=-1)
    h, w = src_depth.shape
    x = np.where(mask, src_x, 0.0)
    y = np.where(mask, src_y, 0.0)
    x0 = np.clip(np.floor(x).astype(np.int64), 0, w - 2 if w > 1 else 0)
    y0 = np.clip(np.floor(y).astype(np.int64), 0, h - 2 if h > 1 else 0)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx, fy = x - x0, y - y0
    blend = np.zeros_like(dist_src)
    spread_lo = np.full_like(dist_src, np.inf)
    spread_hi = np.full_like(dist_src, -np.inf)
    for yy, xx, ww in (
        (y0, x0, (1 - fy) * (1 - fx)),
        (y0, x1, (1 - fy) * fx),
        (y1, x0, fy * (1 - fx)),
        (y1, x1, fy * fx),
    ):
        tap = np.where(np.isfinite(src_depth[yy, xx]), src_depth[yy, xx], 1e12)
        blend += ww * tap
        active = ww > 1e-9
        spread_lo = np.where(active, np.minimum(spread_lo, tap), spread_lo)
        spread_hi = np.where(active, np.maximum(spread_hi, tap), spread_hi)
    agree = np.abs(blend - dist_src) <= _OCCLUSION_REL_TOL * dist_src
    smooth = (spread_hi - spread_lo) <= _FOOTPRINT_REL_TOL * dist_src
    return WarpField(src_x, src_y, mask & agree & smooth)


def load_flow_warp(
    path,
    width: int,
    height: int,
    reverse_path=None,
    fb_threshold: float = 1.0,
) -> WarpField:
    """Build a WarpField from a flow file mapping dst pixels to src coords
    (src = pixel + flow).

    With a reverse flow file, validity additionally requires forward-backward
    consistency: |F(p) + B(p + F(p))| <= fb_threshold pixels.
    """
    flow = _read_flow(path, width, height)
    xs = np.arange(width)[None, :] + flow[..., 0]
    ys = np.arange(height)[:, None] + flow[..., 1]
    mask = (xs >= 0.0) & (xs <= width - 1.0) & (ys >= 0.0) & (ys <= height - 1.0)
    if reverse_path is not None:
        rev = _read_flow(reverse_path, width, height)
        back = _bilinear(rev, np.where(mask, xs, 0.0), np.where(mask, ys, 0.0))
        err = np.hypot(flow[..., 0] + back[..., 0], flow[..., 1] + back[..., 1])
        mask &= err <= fb_threshold
    return WarpField(xs, ys, mask)


def _read_flow(path, width: int, height: int) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(8)
        if len(header) != 8:
            raise ValueError(f"{path}: truncated flow header at byte {len(header)}")
        w, h = struct.unpack("<II", header)
        if (w, h) != (width, height):
            raise ValueError(
                f"{path}: flow is {w}x{h}, frames are {width}x{height}"
            )
        payload = fh.read(8 * w * h)
    if len(payload) != 8 * w * h:
        raise ValueError(
            f"{path}: expected {8 * w * h} payload bytes, got {len(payload)} "
            f"(truncated at byte {8 + len(payload)})"
        )
    return (
        np.frombuffer(payload, dtype="<f4").reshape(h, w, 2).astype(np.float64)
    )


def write_flow(path, flow: np.ndarray) -> None:
    """Write a (H, W, 2) flow array in the flow file format."""
    arr = np.asarray(flow, dtype=np.float32)
    h, w = arr.shape[:2]
    with open(path, "wb") as fh:
        fh.write(struct.pack("<II", w, h))
        fh.write(arr.astype("<f4").tobytes())


def warp_image(src: ImageBuf, warp: WarpField) -> ImageBuf:
    """Resample the source frame onto the destination grid (bilinear);
    masked-out pixels are zero."""
    data = src.data.astype(np.float64)
    out = _bilinear(
        data,
        np.where(warp.mask, warp.src_x, 0.0),
        np.where(warp.mask, warp.src_y, 0.0),
    )
    out[~warp.mask] = 0.0
    return ImageBuf(out.astype(np.float32), src.space)


def consistency_error(
    frame: ImageBuf, warped: ImageBuf, mask: np.ndarray, mode: str = "full"
) -> float:
    """Masked mean squared difference between a frame and a frame warped into
    its viewpoint; in chroma mode only (a, b) of Lab, scaled by 1/100."""
    if frame.data.shape != warped.data.shape:
        raise ValueError(
            f"frame {frame.data.shape} vs warped {warped.data.shape}"
        )
    if not np.any(mask):
        raise ValueError("no valid pixels: empty consistency mask")
    if mode == "full":
        a = frame.data.astype(np.float64)
        b = warped.data.astype(np.float64)
    elif mode == "chroma":
        a = rgb_to_lab(frame.data.astype(np.float64))[..., 1:] * _CHROMA_SCALE
        b = rgb_to_lab(warped.data.astype(np.float64))[..., 1:] * _CHROMA_SCALE
    else:
        raise ValueError(f"unknown mode {mode!r}")
    diff = a - b
    per_pixel = np.sum(diff * diff, axis=-1)
    return float(np.sum(per_pixel[mask]) / np.count_nonzero(mask))


@dataclass
class SequenceFrame:
    image: ImageBuf  # sRGB
    depth: np.ndarray
    cam: CameraIntrinsics
    pose: Pose


def sequence_consistency(
    frames: list[SequenceFrame],
    delta_short: int = 1,
    delta_long: int = 7,
    mode: str = "chroma",
) -> ConsistencyReport:
    """Evaluate all (i, i+Delta) pairs for the short and long offsets."""
    if len(frames) <= delta_long:
        raise ValueError(
            f"sequence of {len(frames)} frames too short for delta {delta_long}"
        )
    report = ConsistencyReport(mode=mode, delta_short=delta_short, delta_long=delta_long)
    offsets = [delta_short, delta_long] if delta_long != delta_short else [delta_short]
    for offset in offsets:
        for i in range(len(frames) - offset):
            src, dst = frames[i], frames[i + offset]
            warp = warp_by_depth(
                src.cam, src.pose, src.depth, dst.cam, dst.pose, dst.depth
            )
            frac = float(np.count_nonzero(warp.mask)) / warp.mask.size
            if not np.any(warp.mask):
                report.records.append(
                    PairRecord(i, offset, float("nan"), 0.0, skipped="empty mask")
                )
                continue
            warped = warp_image(src.image, warp)
            err = consistency_error(dst.image, warped, warp.mask, mode)
            report.records.append(PairRecord(i, offset, err, frac))
    return report


def mean_chroma_magnitude(img: ImageBuf) -> float:
    """Mean Lab chroma radius sqrt(a^2 + b^2) over all pixels; grayscale
    images map to 0 by construction."""
    data = img.data.astype(np.float64)
    if data.shape[2] == 1:
        data = np.repeat(data, 3, axis=2)
    lab = rgb_to_lab(data)
    return float(np.mean(np.hypot(lab[..., 1], lab[..., 2])))
