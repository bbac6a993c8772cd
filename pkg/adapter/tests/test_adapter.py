import json

import numpy as np
import pytest
from click.testing import CliRunner
from PIL import Image

from teacher_adapter import IdentityModel, colorize_dir, get_model
from teacher_adapter.cli import main


def _write_gray_frames(root, n=5, size=48):
    rng = np.random.default_rng(0)
    root.mkdir(parents=True, exist_ok=True)
    for i in range(n):
        arr = (rng.random((size, size)) * 65535).astype(np.uint16)
        Image.fromarray(arr, mode="I;16").save(root / f"{i:03d}.png")


def test_identity_model_shapes():
    gray = np.linspace(0, 1, 12, dtype=np.float32).reshape(3, 4)
    rgb = IdentityModel().colorize(gray)
    assert rgb.shape == (3, 4, 3)
    np.testing.assert_array_equal(rgb[..., 0], gray)
    np.testing.assert_array_equal(rgb[..., 1], rgb[..., 2])


def test_unknown_model_rejected():
    with pytest.raises(ValueError, match="unknown model"):
        get_model("bigcolor")


def test_colorize_dir_counts_and_resolution(tmp_path):
    _write_gray_frames(tmp_path / "gray", n=5)
    manifest = colorize_dir(tmp_path / "gray", IdentityModel(), tmp_path / "teacher")
    assert len(manifest.outputs) == 5
    assert not manifest.failures
    for i in range(5):
        with Image.open(tmp_path / "teacher" / f"{i:03d}.png") as im:
            assert im.size == (48, 48)
            assert im.mode == "RGB"
    meta = json.loads((tmp_path / "teacher" / "adapter_manifest.json").read_text())
    assert meta["model"] == "identity"
    assert len(meta["outputs"]) == 5
    # identity model preserves luma up to 8-bit quantization
    assert max(meta["luma_divergence"].values()) < 1.0 / 255 + 1e-6


def test_per_frame_failures_recorded(tmp_path):
    _write_gray_frames(tmp_path / "gray", n=3)

    class Flaky(IdentityModel):
        name = "flaky"

        def colorize(self, gray):
            if not hasattr(self, "_n"):
                self._n = 0
            self._n += 1
            if self._n == 2:
                raise RuntimeError("inference exploded")
            return super().colorize(gray)

    manifest = colorize_dir(tmp_path / "gray", Flaky(), tmp_path / "teacher")
    assert len(manifest.outputs) == 2
    assert list(manifest.failures) == ["001"]


def test_cli_roundtrip_and_exit_codes(tmp_path):
    _write_gray_frames(tmp_path / "gray", n=2)
    runner = CliRunner()
    res = runner.invoke(
        main, [str(tmp_path / "gray"), str(tmp_path / "teacher"), "--model", "identity"]
    )
    assert res.exit_code == 0, res.output
    assert "2 frames colorized" in res.output
    res = runner.invoke(main, [str(tmp_path), str(tmp_path / "t2")])
    assert res.exit_code != 0  # no PNGs in the bare tmp dir


def test_round_trip_into_primary_distillation(tmp_path):
    """Identity-model teacher dirs satisfy the primary package's teacher
    contract and drive one epoch of distillation end to end."""
    chromafield = pytest.importorskip("chromafield")
    from chromafield.dataset import load_viewset
    from chromafield.distill import ColorDistiller, DistillConfig
    from chromafield.grid import SparseVoxelGrid
    from chromafield.scenegen import Rig, Room, SceneSpec, Sphere, bake_dataset
    from chromafield.teacher import load_teacher_dir
    from chromafield.train_luma import LumaTrainer, TrainConfig

    scene = SceneSpec(
        primitives=[Sphere((0.0, -0.9, 0.0), 0.5, (0.7, 0.3, 0.2))],
        room=Room((3.0, 3.0, 3.0), (0.6, 0.6, 0.55)),
        rig=Rig(view_count=4, test_view_count=1, width=32, height_px=32),
    )
    bake_dataset(scene, tmp_path / "ds")
    viewset = load_viewset(tmp_path / "ds")

    manifest = colorize_dir(
        tmp_path / "ds" / "gray", IdentityModel(), tmp_path / "teacher"
    )
    assert not manifest.failures

    teacher = load_teacher_dir(tmp_path / "teacher", viewset)
    assert teacher.provenance == "file"
    assert max(teacher.luma_divergence.values()) < 1.0 / 255 + 1e-6

    lo, hi = scene.bbox()
    grid = SparseVoxelGrid.create((16, 16, 16), lo, hi, density_init=-5.0, sh0_init=0.5)
    LumaTrainer(TrainConfig(iterations=30, batch_size=512, seed=0)).fit(grid, viewset)
    dist = ColorDistiller(DistillConfig(epochs=1, coarsest_scale=2, seed=0))
    dist.fit(grid, teacher, viewset)
    assert dist.grid_.channels == 3
