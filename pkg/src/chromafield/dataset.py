"""Multi-view dataset ingestion: transforms manifest, images, depths.

The manifest is one ``transforms.json`` per dataset directory:

    {
      "input_kind": "gray",            # optional; "ir" selects min-max
      "frames": [
        {
          "file_path": "gray/000.png",
          "transform_matrix": [[...4x4 camera-to-world...]],
          "fx": 100.0, "fy": 100.0, "cx": 64.0, "cy": 64.0,
          "width": 128, "height": 128,
          "depth_path": "depth/000.f32"   # optional
        }, ...
      ]
    }

View ids are the file stem of ``file_path``. Color inputs are reduced to
grayscale with Rec. 601 luma; IR inputs are min-max normalized per image.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cameras import CameraIntrinsics, Pose
from .color import ColorSpace, ImageBuf, rgb_to_gray
from .imgio import read_depth, read_png


@dataclass
class View:
    view_id: str
    image: ImageBuf  # gray
    pose: Pose
    cam: CameraIntrinsics
    depth: np.ndarray | None = None  # (H, W) float32, +inf = background


@dataclass
class ViewSet:
    views: list[View]

    def __post_init__(self) -> None:
        ids = [v.view_id for v in self.views]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"duplicate view ids: {dupes}")
        sizes = {(v.cam.width, v.cam.height) for v in self.views}
        if len(sizes) > 1:
            raise ValueError(f"views disagree on base resolution: {sorted(sizes)}")

    def __len__(self) -> int:
        return len(self.views)

    def __iter__(self):
        return iter(self.views)

    @property
    def base_resolution(self) -> tuple[int, int]:
        cam = self.views[0].cam
        return cam.width, cam.height

    def ids(self) -> list[str]:
        return [v.view_id for v in self.views]

    def get(self, view_id: str) -> View:
        for v in self.views:
            if v.view_id == view_id:
                return v
        raise KeyError(f"no view with id {view_id!r}")


def _load_frame(root: Path, frame: dict, kind: str, index: int) -> View:
    try:
        rel = frame["file_path"]
        mat = frame["transform_matrix"]
        cam = CameraIntrinsics(
            fx=float(frame["fx"]), fy=float(frame["fy"]),
            cx=float(frame["cx"]), cy=float(frame["cy"]),
            width=int(frame["width"]), height=int(frame["height"]),
        )
    except KeyError as exc:
        raise ValueError(f"frame {index}: missing manifest key {exc}") from None

    img_path = root / rel
    if not img_path.exists():
        raise FileNotFoundError(f"frame {index}: image file not found: {img_path}")
    try:
        pose = Pose.from_matrix(np.asarray(mat, dtype=np.float64))
    except ValueError as exc:
        raise ValueError(f"frame {index} ({rel}): {exc}") from None

    data = read_png(img_path)
    if data.shape[:2] != (cam.height, cam.width):
        raise ValueError(
            f"frame {index} ({rel}): image is {data.shape[1]}x{data.shape[0]}, "
            f"manifest says {cam.width}x{cam.height}"
        )
    if data.shape[2] == 3:
        gray = rgb_to_gray(data).astype(np.float32)[:, :, None]
    else:
        gray = data
    if kind == "ir":
        lo, hi = float(gray.min()), float(gray.max())
        gray = (gray - lo) / (hi - lo) if hi > lo else np.zeros_like(gray)

    depth = None
    if frame.get("depth_path"):
        dpath = root / frame["depth_path"]
        if not dpath.exists():
            raise FileNotFoundError(f"frame {index}: depth file not found: {dpath}")
        depth = read_depth(dpath)

    return View(
        view_id=Path(rel).stem,
        image=ImageBuf(gray.astype(np.float32), ColorSpace.GRAY),
        pose=pose,
        cam=cam,
        depth=depth,
    )


def load_viewset(dataset_dir, manifest_name: str = "transforms.json") -> ViewSet:
    """Load a dataset directory into an immutable ViewSet.

    Raises explicit errors naming the offending manifest entry for missing
    files or invalid poses.
    """
    root = Path(dataset_dir)
    manifest = root / manifest_name
    if not manifest.exists():
        raise FileNotFoundError(f"no manifest at {manifest}")
    with open(manifest) as fh:
        doc = json.load(fh)
    kind = doc.get("input_kind", "gray")
    if kind not in ("gray", "ir"):
        raise ValueError(f"{manifest}: unknown input_kind {kind!r}")
    frames = doc.get("frames")
    if not frames:
        raise ValueError(f"{manifest}: manifest has no frames")
    views = [_load_frame(root, f, kind, i) for i, f in enumerate(frames)]
    return ViewSet(views)
