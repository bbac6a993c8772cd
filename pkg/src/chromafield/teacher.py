"""Per-view colorized teacher images: file ingestion and a synthetic oracle.

The oracle teacher simulates the dominant failure mode of frame-by-frame
colorization: within one view the colors are coherent, but each view gets its
own global chroma transform. Per view it draws one hue rotation and one
chroma gain (seeded) and applies them to the ground-truth image's (a, b)
channels in Lab, leaving L untouched, so the true colors stay recoverable in
expectation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .color import ColorSpace, ImageBuf, lab_to_rgb, rgb_to_gray, rgb_to_lab
from .dataset import ViewSet
from .imgio import read_png, write_color_png


@dataclass
class ViewJitter:
    hue_deg: float
    chroma_gain: float


@dataclass
class TeacherSet:
    entries: dict[str, ImageBuf]  # view id -> sRGB image
    provenance: str  # "file" or "oracle"
    jitter: dict[str, ViewJitter] = field(default_factory=dict)
    luma_divergence: dict[str, float] = field(default_factory=dict)

    def get(self, view_id: str) -> ImageBuf:
        return self.entries[view_id]


def chroma_jitter(lab: np.ndarray, hue_deg: float, chroma_gain: float) -> np.ndarray:
    """Rotate and scale the (a, b) plane of a Lab image; L is untouched
    (the output aliases the input's L values bit for bit)."""
    theta = math.radians(hue_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    a, b = lab[..., 1], lab[..., 2]
    out = lab.copy()
    out[..., 1] = chroma_gain * (cos_t * a - sin_t * b)
    out[..., 2] = chroma_gain * (sin_t * a + cos_t * b)
    return out


def load_teacher_dir(path, viewset: ViewSet) -> TeacherSet:
    """Load one color image per view id (``<view_id>.png``) from a teacher
    directory.

    Reports per-view mean |gray(teacher) - input| as a luma-preservation
    diagnostic; it is recorded, not enforced.
    """
    root = Path(path)
    if not root.is_dir():
        raise FileNotFoundError(f"teacher directory not found: {root}")
    entries: dict[str, ImageBuf] = {}
    divergence: dict[str, float] = {}
    for view in viewset:
        img_path = root / f"{view.view_id}.png"
        if not img_path.exists():
            raise FileNotFoundError(
                f"teacher image missing for view {view.view_id!r}: {img_path}"
            )
        data = read_png(img_path)
        if data.shape[2] == 1:
            data = np.repeat(data, 3, axis=2)
        h, w = data.shape[:2]
        if (w, h) != (view.cam.width, view.cam.height):
            raise ValueError(
                f"teacher image for view {view.view_id!r} is {w}x{h}, "
                f"views are {view.cam.width}x{view.cam.height}"
            )
        entries[view.view_id] = ImageBuf(data, ColorSpace.SRGB)
        luma = rgb_to_gray(data.astype(np.float64))
        divergence[view.view_id] = float(
            np.mean(np.abs(luma - view.image.data[:, :, 0]))
        )
    jitter = {}
    sidecar = root / "teacher.json"
    provenance = "file"
    if sidecar.exists():
        with open(sidecar) as fh:
            meta = json.load(fh)
        provenance = meta.get("provenance", "file")
        for vid, j in meta.get("jitter", {}).items():
            jitter[vid] = ViewJitter(j["hue_deg"], j["chroma_gain"])
    return TeacherSet(entries, provenance, jitter, divergence)


def oracle_teacher(
    viewset: ViewSet,
    gt_colors: dict[str, ImageBuf],
    sigma_h_deg: float = 15.0,
    sigma_c: float = 0.1,
    seed: int = 0,
) -> TeacherSet:
    """Synthesize a deliberately inconsistent teacher from ground-truth
    colors: per view one hue rotation ~ U(-sigma_h, sigma_h) degrees and one
    chroma gain ~ U(1-sigma_c, 1+sigma_c), applied in Lab."""
    rng = np.random.default_rng(seed)
    entries: dict[str, ImageBuf] = {}
    jitter: dict[str, ViewJitter] = {}
    for view in viewset:
        if view.view_id not in gt_colors:
            raise KeyError(f"no ground-truth color for view {view.view_id!r}")
        hue = float(rng.uniform(-sigma_h_deg, sigma_h_deg))
        gain = float(rng.uniform(1.0 - sigma_c, 1.0 + sigma_c))
        gt = gt_colors[view.view_id]
        lab = rgb_to_lab(gt.data.astype(np.float64))
        rgb = lab_to_rgb(chroma_jitter(lab, hue, gain))
        entries[view.view_id] = ImageBuf(rgb.astype(np.float32), ColorSpace.SRGB)
        jitter[view.view_id] = ViewJitter(hue, gain)
    return TeacherSet(entries, "oracle", jitter)


def save_teacher_dir(teacher: TeacherSet, path) -> Path:
    """Write ``<view_id>.png`` frames plus a sidecar recording provenance and
    jitter parameters."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    for vid, img in teacher.entries.items():
        write_color_png(root / f"{vid}.png", img.data)
    meta = {
        "provenance": teacher.provenance,
        "jitter": {
            vid: {"hue_deg": j.hue_deg, "chroma_gain": j.chroma_gain}
            for vid, j in teacher.jitter.items()
        },
    }
    with open(root / "teacher.json", "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
    return root
