"""Pinhole camera model and per-pixel ray generation.

Convention: camera-to-world poses, right-handed camera frame with +x right,
+y up, looking down -z. Pixel (u, v) has u growing right and v growing down;
rays pass through pixel centers (u + 0.5, v + 0.5).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_ORTHO_TOL = 1e-6


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got {self.fx}, {self.fy}")
        if not (0 < self.cx < self.width) or not (0 < self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside "
                f"{self.width}x{self.height} image"
            )

    def scaled(self, scale: int) -> "CameraIntrinsics":
        """Intrinsics of the same camera rendered at 1/2**scale resolution."""
        if self.width % (1 << scale) or self.height % (1 << scale):
            raise ValueError(
                f"resolution {self.width}x{self.height} not divisible by 2^{scale}"
            )
        k = float(1 << scale)
        return CameraIntrinsics(
            self.fx / k, self.fy / k, self.cx / k, self.cy / k,
            self.width >> scale, self.height >> scale,
        )


@dataclass(frozen=True)
class Pose:
    """Camera-to-world rigid transform."""

    rotation: np.ndarray  # (3, 3)
    translation: np.ndarray  # (3,)

    def __post_init__(self) -> None:
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64))
        r = self.rotation
        if r.shape != (3, 3) or self.translation.shape != (3,):
            raise ValueError("pose needs a 3x3 rotation and length-3 translation")
        if np.max(np.abs(r @ r.T - np.eye(3))) > _ORTHO_TOL:
            raise ValueError("rotation is not orthonormal")
        if np.linalg.det(r) < 0:
            raise ValueError("rotation has negative determinant")

    @classmethod
    def from_matrix(cls, mat) -> "Pose":
        mat = np.asarray(mat, dtype=np.float64)
        if mat.shape != (4, 4):
            raise ValueError(f"expected a 4x4 camera-to-world matrix, got {mat.shape}")
        return cls(mat[:3, :3], mat[:3, 3])

    def to_matrix(self) -> np.ndarray:
        mat = np.eye(4)
        mat[:3, :3] = self.rotation
        mat[:3, 3] = self.translation
        return mat

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 1.0, 0.0)) -> "Pose":
        """Pose at `eye` with the optical axis (-z) pointing at `target`."""
        eye = np.asarray(eye, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - eye
        fwd /= np.linalg.norm(fwd)
        z = -fwd
        x = np.cross(np.asarray(up, dtype=np.float64), z)
        n = np.linalg.norm(x)
        if n < 1e-9:
            raise ValueError("up vector is parallel to the view direction")
        x /= n
        y = np.cross(z, x)
        return cls(np.stack([x, y, z], axis=1), eye)


def generate_rays(
    cam: CameraIntrinsics, pose: Pose, scale: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Rays through every pixel center at pyramid level `scale`.

    Returns (origins, directions) of shape (H, W, 3) with unit directions.
    Scaling divides the resolution by 2**scale while keeping the field of
    view fixed.
    """
    sc = cam.scaled(scale)
    u = (np.arange(sc.width) + 0.5 - sc.cx) / sc.fx
    v = -(np.arange(sc.height) + 0.5 - sc.cy) / sc.fy
    dirs_cam = np.stack(
        [
            np.broadcast_to(u[None, :], (sc.height, sc.width)),
            np.broadcast_to(v[:, None], (sc.height, sc.width)),
            np.full((sc.height, sc.width), -1.0),
        ],
        axis=-1,
    )
    dirs = dirs_cam @ pose.rotation.T
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    origins = np.broadcast_to(pose.translation, dirs.shape).copy()
    return origins, dirs
