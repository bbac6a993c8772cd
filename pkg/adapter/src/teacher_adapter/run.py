"""Batch inference over a grayscale frame directory.

Outputs follow the chromafield teacher-directory contract: one
``<view_id>.png`` color frame per input frame at the input resolution, plus
a ``teacher.json`` sidecar. The adapter's own manifest
(``adapter_manifest.json``) records the model, per-view outputs, failures,
and the luma-preservation diagnostic, along with the grayscale-convention
note (inputs are treated as Rec. 601 luma of gamma-encoded sRGB).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

GRAY_NOTE = "inputs treated as Rec. 601 luma of gamma-encoded sRGB"
_LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


@dataclass
class AdapterManifest:
    model: str
    model_version: str
    grayscale_note: str = GRAY_NOTE
    outputs: dict = field(default_factory=dict)  # view id -> file name
    luma_divergence: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)  # view id -> error text

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(
                {
                    "model": self.model,
                    "model_version": self.model_version,
                    "grayscale_note": self.grayscale_note,
                    "outputs": self.outputs,
                    "luma_divergence": self.luma_divergence,
                    "failures": self.failures,
                },
                fh, indent=1, sort_keys=True,
            )


def _read_gray(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I"):
            return np.asarray(im, dtype=np.float32) / 65535.0
        if im.mode == "L":
            return np.asarray(im, dtype=np.float32) / 255.0
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
        return (arr @ _LUMA_WEIGHTS).astype(np.float32)


def colorize_dir(input_dir, model, output_dir) -> AdapterManifest:
    """Run the model over every PNG in input_dir; write a teacher directory.

    Per-frame failures are recorded in the manifest rather than aborting the
    batch; callers decide whether a partial result is fatal.
    """
    src = Path(input_dir)
    frames = sorted(src.glob("*.png"))
    if not frames:
        raise FileNotFoundError(f"no PNG frames under {src}")
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = AdapterManifest(model=model.name, model_version=model.version)
    for frame in frames:
        vid = frame.stem
        try:
            gray = _read_gray(frame)
            rgb = model.colorize(gray)
            if rgb.shape[:2] != gray.shape or rgb.shape[2] != 3:
                raise ValueError(
                    f"model returned {rgb.shape}, expected {gray.shape + (3,)}"
                )
            q = np.round(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)
            Image.fromarray(q, mode="RGB").save(out / f"{vid}.png")
            luma = q.astype(np.float64) @ _LUMA_WEIGHTS / 255.0
            manifest.outputs[vid] = f"{vid}.png"
            manifest.luma_divergence[vid] = float(np.mean(np.abs(luma - gray)))
        except Exception as exc:  # per-frame isolation
            manifest.failures[vid] = str(exc)
    with open(out / "teacher.json", "w") as fh:
        json.dump({"provenance": "file", "model": model.name}, fh, indent=1)
    manifest.save(out / "adapter_manifest.json")
    return manifest
