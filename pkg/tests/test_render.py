import numpy as np
import pytest

from chromafield.cameras import CameraIntrinsics, Pose
from chromafield.grid import SH_C0, SparseVoxelGrid, expand_luma_to_rgb, softplus
from chromafield.render import (
    make_ray,
    render_backward,
    render_image,
    render_ray,
    render_rays,
)

import oracles


def _empty_grid(res=(8, 8, 8)):
    g = SparseVoxelGrid.create(res, (-1, -1, -1), (1, 1, 1))
    g.occupancy[:] = False  # exactly zero density everywhere
    return g


def _homogeneous_grid(sigma_pre, color, res=(8, 8, 8), channels=1):
    g = SparseVoxelGrid.create(res, (-1, -1, -1), (1, 1, 1), channels=channels)
    g.density[:] = sigma_pre
    g.sh[:] = 0.0
    g.sh[..., 0] = color / SH_C0
    return g


def _random_rays(rng, n, towards=(0.0, 0.0, 0.0), radius=3.0):
    # origins on a sphere outside the bbox, directions roughly at the center
    u = rng.standard_normal((n, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    origins = u * radius
    targets = np.asarray(towards) + 0.3 * rng.standard_normal((n, 3))
    dirs = targets - origins
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return origins, dirs


def test_empty_grid_renders_background():
    g = _empty_grid()
    ray = make_ray(g, [0.0, 0.0, 3.0], [0.0, 0.0, -1.0])
    out = render_ray(g, ray, step=0.05, background=0.25)
    assert out.color[0] == pytest.approx(0.25)
    assert out.opacity == 0.0


def test_ray_missing_bbox_returns_background():
    g = _homogeneous_grid(2.0, 0.8)
    ray = make_ray(g, [5.0, 5.0, 5.0], [0.0, 0.0, -1.0])
    assert ray.t_far < ray.t_near
    out = render_ray(g, ray, step=0.05, background=0.1)
    assert out.color[0] == pytest.approx(0.1)
    assert out.opacity == 0.0


def test_homogeneous_medium_matches_closed_form():
    sigma = float(softplus(1.3))
    color, bg = 0.7, 0.15
    g = _homogeneous_grid(1.3, color)
    origin = np.array([0.0, 0.0, 2.5])
    direction = np.array([0.0, 0.0, -1.0])
    path = 2.0  # chord through the unit cube bbox along z
    out = render_rays(
        g, origin[None], direction[None], step=path / 100.0, background=bg
    )[0][0, 0]
    expect = oracles.homogeneous_color_ref(sigma, path, color, bg)
    assert abs(out - expect) < 1e-3


def test_opaque_first_cell():
    g = _homogeneous_grid(500.0, 0.6)
    origin = np.array([0.0, 0.0, 3.0])
    direction = np.array([0.0, 0.0, -1.0])
    color, depth, opacity = render_rays(g, origin[None], direction[None], step=0.02)
    assert color[0, 0] == pytest.approx(0.6, abs=1e-3)
    assert opacity[0] == pytest.approx(1.0, abs=1e-6)
    assert depth[0] == pytest.approx(2.0, abs=0.03)  # bbox entry at z=1


def test_transmittance_telescoping_random_rays():
    rng = np.random.default_rng(0)
    g = SparseVoxelGrid.create((8, 8, 8), (-1, -1, -1), (1, 1, 1))
    g.density[:] = rng.uniform(-2.0, 3.0, g.density.shape).astype(np.float32)
    origins, dirs = _random_rays(rng, 10_000)
    # zero SH and unit background makes the composited color equal T_final
    color, _, opacity = render_rays(g, origins, dirs, step=0.07, background=1.0)
    np.testing.assert_allclose(color[:, 0] + opacity, 1.0, atol=1e-6)


def test_opacity_monotone_in_density():
    rng = np.random.default_rng(1)
    g = SparseVoxelGrid.create((6, 6, 6), (-1, -1, -1), (1, 1, 1))
    g.density[:] = rng.uniform(-2.0, 1.0, g.density.shape).astype(np.float32)
    origins, dirs = _random_rays(rng, 64)
    base = render_rays(g, origins, dirs, step=0.05)[2]
    for _ in range(100):
        idx = tuple(rng.integers(0, 6, 3))
        g2 = g.copy()
        g2.density[idx] += 1.0
        bumped = render_rays(g2, origins, dirs, step=0.05)[2]
        assert np.all(bumped >= base - 1e-12)


def test_render_deterministic():
    rng = np.random.default_rng(2)
    g = SparseVoxelGrid.create((8, 8, 8), (-1, -1, -1), (1, 1, 1), channels=3)
    g.density[:] = rng.standard_normal(g.density.shape).astype(np.float32)
    g.sh[:] = rng.standard_normal(g.sh.shape).astype(np.float32)
    origins, dirs = _random_rays(rng, 500)
    a = render_rays(g, origins, dirs, step=0.03)
    b = render_rays(g, origins, dirs, step=0.03)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)


def _fd_check_grid(channels, seed, n_params=20, rel_tol=1e-3):
    rng = np.random.default_rng(seed)
    g = SparseVoxelGrid.create(
        (8, 8, 8), (-1, -1, -1), (1, 1, 1), channels=channels, dtype=np.float64
    )
    g.density[:] = rng.uniform(-1.5, 1.5, g.density.shape)
    g.sh[..., 0] = rng.uniform(0.5, 1.5, g.sh.shape[:-1])
    g.sh[..., 1:] = rng.uniform(-0.08, 0.08, g.sh.shape[:-1] + (g.basis_size - 1,))
    origins, dirs = _random_rays(rng, 24)
    dl = rng.standard_normal((24, channels))
    step = 0.06

    grad_d, grad_sh = render_backward(g, origins, dirs, dl, step=step)

    def loss():
        color = render_rays(g, origins, dirs, step=step)[0]
        return float(np.sum(color * dl))

    h = 1e-5
    checked = 0
    for arr, grad in ((g.density, grad_d), (g.sh, grad_sh)):
        order = rng.permutation(arr.size)
        for i in order[: n_params * 4]:
            if checked >= n_params:
                break
            idx = np.unravel_index(i, arr.shape)
            orig = arr[idx]
            arr[idx] = orig + h
            fp = loss()
            arr[idx] = orig - h
            fm = loss()
            arr[idx] = orig
            fd = (fp - fm) / (2 * h)
            if abs(fd) < 1e-7:  # parameter has no ray support
                continue
            assert abs(grad[idx] - fd) / max(abs(fd), 1e-7) < rel_tol, (
                f"param {idx}: analytic {grad[idx]} vs fd {fd}"
            )
            checked += 1
    assert checked >= n_params


def test_backward_matches_finite_differences_gray():
    _fd_check_grid(channels=1, seed=3)


def test_backward_matches_finite_differences_rgb():
    _fd_check_grid(channels=3, seed=4)


def test_backward_zero_cotangent_gives_zero_gradient():
    rng = np.random.default_rng(5)
    g = SparseVoxelGrid.create((4, 4, 4), (-1, -1, -1), (1, 1, 1))
    g.density[:] = rng.standard_normal(g.density.shape).astype(np.float32)
    g.sh[:] = rng.standard_normal(g.sh.shape).astype(np.float32)
    origins, dirs = _random_rays(rng, 16)
    gd, gs = render_backward(g, origins, dirs, np.zeros((16, 1)), step=0.1)
    np.testing.assert_array_equal(gd, 0.0)
    np.testing.assert_array_equal(gs, 0.0)


def test_backward_respects_density_freeze():
    rng = np.random.default_rng(6)
    g = SparseVoxelGrid.create((4, 4, 4), (-1, -1, -1), (1, 1, 1))
    g.density[:] = rng.standard_normal(g.density.shape).astype(np.float32)
    g.sh[..., 0] = 1.0
    g.density_frozen = True
    origins, dirs = _random_rays(rng, 16)
    gd, gs = render_backward(g, origins, dirs, np.ones((16, 1)), step=0.1)
    np.testing.assert_array_equal(gd, 0.0)
    assert np.any(gs != 0.0)


def test_backward_skips_unoccupied_voxels():
    rng = np.random.default_rng(7)
    g = SparseVoxelGrid.create((4, 4, 4), (-1, -1, -1), (1, 1, 1))
    g.density[:] = 0.5
    g.sh[..., 0] = 1.0
    g.occupancy[2, :, :] = False
    origins, dirs = _random_rays(rng, 32)
    gd, gs = render_backward(g, origins, dirs, np.ones((32, 1)), step=0.05)
    np.testing.assert_array_equal(gd[2], 0.0)
    np.testing.assert_array_equal(gs[2], 0.0)
    assert np.any(gd[1] != 0.0)


def _orbit_pose(angle, radius=2.5, height=0.4):
    eye = [radius * np.cos(angle), height, radius * np.sin(angle)]
    return Pose.look_at(eye, [0.0, 0.0, 0.0])


def test_render_image_empty_grid_background():
    g = _empty_grid()
    cam = CameraIntrinsics(60.0, 60.0, 32.0, 32.0, 64, 64)
    color, depth, opacity = render_image(g, cam, _orbit_pose(0.3), scale=0, background=0.5)
    np.testing.assert_allclose(color.data, 0.5, atol=1e-7)
    np.testing.assert_array_equal(opacity.data, 0.0)


def test_render_image_scale_halves_resolution():
    g = _homogeneous_grid(0.0, 0.5)
    cam = CameraIntrinsics(60.0, 60.0, 32.0, 32.0, 64, 64)
    color, _, _ = render_image(g, cam, _orbit_pose(1.0), scale=1)
    assert (color.height, color.width) == (32, 32)
    with pytest.raises(ValueError):
        render_image(g, CameraIntrinsics(60.0, 60.0, 31.5, 31.5, 63, 63), _orbit_pose(1.0), scale=1)


def test_expand_luma_renders_identically():
    rng = np.random.default_rng(8)
    g = SparseVoxelGrid.create((8, 8, 8), (-1, -1, -1), (1, 1, 1))
    g.density[:] = rng.uniform(-1, 2, g.density.shape).astype(np.float32)
    g.sh[..., 0] = rng.uniform(0.2, 2.0, g.sh.shape[:-1]).astype(np.float32)
    g3 = expand_luma_to_rgb(g)
    cam = CameraIntrinsics(60.0, 60.0, 24.0, 24.0, 48, 48)
    for k in range(10):
        pose = _orbit_pose(0.63 * k, radius=2.2 + 0.1 * k, height=0.5 - 0.1 * k)
        gray = render_image(g, cam, pose, step=0.04)[0]
        rgb = render_image(g3, cam, pose, step=0.04)[0]
        for c in range(3):
            np.testing.assert_allclose(
                rgb.data[:, :, c], gray.data[:, :, 0], atol=1e-5
            )
        # equal channels mean neutral chroma after conversion
        spread = rgb.data.max(axis=2) - rgb.data.min(axis=2)
        assert float(spread.max()) < 1e-6
