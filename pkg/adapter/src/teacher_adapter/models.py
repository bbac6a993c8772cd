"""Colorization model plug-point.

A model is any callable mapping a grayscale frame (H, W) float32 in [0, 1]
to an sRGB frame (H, W, 3) float32 in [0, 1] at the same resolution. The
shipped ``identity`` model replicates luma into three channels, which keeps
CI free of network weights while exercising the full wiring; real models
(neural colorizers) register the same way.

To plug in a real colorizer, subclass ColorizationModel, implement
``colorize``, and add the class to MODELS (or pass an instance straight to
``colorize_dir``).
"""

from __future__ import annotations

import numpy as np


class ColorizationModel:
    name = "base"
    version = "0"

    def colorize(self, gray: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class IdentityModel(ColorizationModel):
    """Neutral-chroma stand-in: copies the luma into R, G and B."""

    name = "identity"
    version = "1"

    def colorize(self, gray: np.ndarray) -> np.ndarray:
        return np.repeat(gray[:, :, None], 3, axis=2).astype(np.float32)


MODELS = {
    "identity": IdentityModel,
}


def get_model(selector: str) -> ColorizationModel:
    try:
        return MODELS[selector]()
    except KeyError:
        raise ValueError(
            f"unknown model {selector!r}; available: {sorted(MODELS)}"
        ) from None
