import math

import numpy as np
import pytest

from chromafield.color import ColorSpace, ImageBuf
from chromafield.cameras import CameraIntrinsics, Pose
from chromafield.dataset import View, ViewSet
from chromafield.grid import SparseVoxelGrid
from chromafield.optim import RMSProp
from chromafield.quality import psnr, ssim
from chromafield.train_luma import LumaTrainer, TrainConfig, train_luma


def test_psnr_examples(rng):
    img = rng.random((16, 16, 1)).astype(np.float32)
    assert psnr(img, img) == math.inf
    shifted = np.full((16, 16), 0.4)
    assert psnr(shifted, shifted + 0.1) == pytest.approx(20.0, abs=1e-6)
    a, b = rng.random((8, 8)), rng.random((8, 8))
    assert psnr(a, b) == pytest.approx(psnr(b, a))
    with pytest.raises(ValueError):
        psnr(np.zeros((4, 4)), np.zeros((5, 5)))


def test_ssim_identical_is_one(rng):
    img = rng.random((32, 32)).astype(np.float64)
    assert ssim(img, img) == pytest.approx(1.0, abs=1e-9)


def test_ssim_negative_for_anticorrelated():
    yy, xx = np.mgrid[0:32, 0:32]
    checker = ((xx + yy) % 2).astype(np.float64)
    assert ssim(checker, 1.0 - checker) < 0


def test_ssim_constant_images_closed_form():
    mu1, mu2 = 0.3, 0.7
    a = np.full((16, 16), mu1)
    b = np.full((16, 16), mu2)
    c1 = 0.01**2
    expect = (2 * mu1 * mu2 + c1) / (mu1**2 + mu2**2 + c1)
    assert ssim(a, b) == pytest.approx(expect, abs=1e-12)


def test_ssim_rejects_bad_input():
    with pytest.raises(ValueError):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)))  # below 11x11
    with pytest.raises(ValueError):
        ssim(np.zeros((16, 16)), np.zeros((16, 17)))


def test_rmsprop_zero_gradient_is_identity(rng):
    params = rng.random((5, 4)).astype(np.float32)
    before = params.copy()
    opt = RMSProp(params, lr=0.1)
    opt.step(params, np.ones_like(params))  # warm the accumulator
    moved = params.copy()
    opt.step(params, np.zeros_like(params))
    np.testing.assert_array_equal(params, moved)
    assert not np.array_equal(params, before)


def test_rmsprop_matches_hand_computation():
    params = np.array([1.0, -2.0])
    g = np.array([0.5, 0.25])
    opt = RMSProp(params, lr=0.1, rho=0.9, eps=1e-8)
    opt.step(params, g)
    v = 0.1 * g**2
    expect = np.array([1.0, -2.0]) - 0.1 * g / (np.sqrt(v) + 1e-8)
    np.testing.assert_allclose(params, expect, rtol=1e-12)


def _tiny_viewset(rng, n_views=1, size=16, value=None):
    views = []
    for i in range(n_views):
        data = (
            np.full((size, size, 1), 0.6, dtype=np.float32)
            if value is None
            else value
        )
        cam = CameraIntrinsics(size / 2, size / 2, size / 2, size / 2, size, size)
        angle = 2 * np.pi * i / max(n_views, 1)
        pose = Pose.look_at(
            [2.0 * np.cos(angle), 0.3, 2.0 * np.sin(angle)], [0, 0, 0]
        )
        views.append(View(f"{i:03d}", ImageBuf(data, ColorSpace.GRAY), pose, cam))
    return ViewSet(views)


def test_zero_iterations_leaves_grid_bitwise(rng):
    g = SparseVoxelGrid.create((8, 8, 8), (-1, -1, -1), (1, 1, 1))
    g.density[:] = rng.standard_normal((8, 8, 8)).astype(np.float32)
    before = g.params.copy()
    vs = _tiny_viewset(rng)
    train_luma(g, vs, TrainConfig(iterations=0))
    np.testing.assert_array_equal(g.params, before)


def test_single_voxel_constant_view_loss_decreases(rng):
    g = SparseVoxelGrid.create((1, 1, 1), (-0.5, -0.5, -0.5), (0.5, 0.5, 0.5),
                               density_init=2.0, sh0_init=0.5)
    vs = _tiny_viewset(rng, n_views=1, size=8)
    _, log = train_luma(
        g, vs, TrainConfig(iterations=50, batch_size=64, lr_density=0.01,
                           lr_sh=0.01, seed=0)
    )
    assert log[-1].loss_photo < log[0].loss_photo


def test_mse_nonincreasing_over_windows(rng):
    g = SparseVoxelGrid.create((16, 16, 16), (-1, -1, -1), (1, 1, 1),
                               density_init=-3.0, sh0_init=0.5)
    data = rng.random((16, 16, 1)).astype(np.float32) * 0.5 + 0.25
    vs = _tiny_viewset(rng, n_views=1, size=16, value=data)
    _, log = train_luma(
        g, vs, TrainConfig(iterations=1000, batch_size=256, seed=3,
                           lr_density=0.1, lr_sh=0.01)
    )
    losses = np.array([r.loss_photo for r in log])
    w1, w2 = losses[:500].mean(), losses[500:].mean()
    assert w2 <= w1 + 1e-9


def test_seeded_runs_bit_identical(rng):
    def run():
        g = SparseVoxelGrid.create((8, 8, 8), (-1, -1, -1), (1, 1, 1),
                                   density_init=-3.0, sh0_init=0.5)
        vs = _tiny_viewset(np.random.default_rng(5), n_views=2, size=16)
        _, log = train_luma(g, vs, TrainConfig(iterations=30, batch_size=128, seed=9))
        return g.params.copy(), log[-1].loss_photo

    p1, l1 = run()
    p2, l2 = run()
    assert l1 == l2
    np.testing.assert_array_equal(p1, p2)


def test_rejects_color_grid_and_color_images(rng):
    g3 = SparseVoxelGrid.create((4, 4, 4), (-1, -1, -1), (1, 1, 1), channels=3)
    vs = _tiny_viewset(rng)
    with pytest.raises(ValueError, match="1-channel"):
        train_luma(g3, vs, TrainConfig(iterations=1))

    g1 = SparseVoxelGrid.create((4, 4, 4), (-1, -1, -1), (1, 1, 1))
    bad_views = []
    for v in vs:
        img = ImageBuf(np.zeros((16, 16, 3), dtype=np.float32), ColorSpace.SRGB)
        bad_views.append(View(v.view_id, img, v.pose, v.cam))
    with pytest.raises(ValueError, match="gray"):
        train_luma(g1, ViewSet(bad_views), TrainConfig(iterations=1))


def test_trainer_get_set_params():
    tr = LumaTrainer(TrainConfig(iterations=7))
    assert tr.get_params()["iterations"] == 7
    tr.set_params(iterations=9, lr_sh=0.5)
    assert tr.config.iterations == 9 and tr.config.lr_sh == 0.5


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(lr_density=0.0)
    with pytest.raises(ValueError):
        TrainConfig(lambda_tv=-1.0)
