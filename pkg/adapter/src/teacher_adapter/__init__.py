"""Offline colorization adapter: runs a per-frame colorization model over a
directory of grayscale frames and writes a chromafield teacher directory."""

from .models import MODELS, IdentityModel, get_model
from .run import AdapterManifest, colorize_dir

__version__ = "0.1.0"
