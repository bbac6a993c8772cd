"""Numba kernels for volumetric rendering and its analytic adjoint.

Ray marching is deterministic: fixed stride from the bbox entry distance,
samples at segment midpoints, the last segment truncated at the exit
distance. Per-ray state is float64 regardless of grid dtype so transmittance
telescoping and gradient checks hold to tight tolerances.

Grid parameters arrive interleaved as (Nx, Ny, Nz, 1 + C*B): density
pre-activation in slot 0, then SH coefficients channel-major. Each trilinear
corner is then one contiguous read, which is what makes the single-core path
fast enough for training.

Samples whose interpolated pre-activation falls below _SKIP_DPRE are treated
as exactly empty (sigma = 0): the activated density there is < 4e-7, so the
alpha it would produce is orders of magnitude below every tolerance in the
test suite, and converged empty space gets marched at near-zero cost. The
forward and adjoint passes apply the identical rule.

The adjoint walks each ray twice: a recording walk rebuilding per-sample
(alpha, transmittance, raw color), then a reverse walk pushing gradients onto
the 8 trilinear corners of every sample. Rays are processed in contiguous
chunks, one gradient buffer per chunk, so accumulation is race-free and
results are bit-identical for a fixed chunk count.
"""

import math

import numpy as np
from numba import njit, prange

_EARLY_STOP_T = 1e-7
_SKIP_DPRE = -15.0


@njit(cache=True, inline="always")
def _softplus(x):
    if x > 0.0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


@njit(cache=True, inline="always")
def _sigmoid(x):
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@njit(cache=True, inline="always")
def _alpha_of(x):
    # 1 - exp(-x); second-order series below 1e-4 (rel. error < 1e-9)
    if x < 1e-4:
        return x * (1.0 - 0.5 * x)
    return -math.expm1(-x)


@njit(cache=True, inline="always")
def _ray_bbox(ox, oy, oz, dx, dy, dz, bmin, bmax):
    tn = 0.0
    tf = 1e30
    for axis in range(3):
        if axis == 0:
            o, d = ox, dx
        elif axis == 1:
            o, d = oy, dy
        else:
            o, d = oz, dz
        lo = bmin[axis]
        hi = bmax[axis]
        if abs(d) < 1e-12:
            if o < lo or o > hi:
                return 0.0, -1.0
        else:
            t0 = (lo - o) / d
            t1 = (hi - o) / d
            if t0 > t1:
                t0, t1 = t1, t0
            if t0 > tn:
                tn = t0
            if t1 < tf:
                tf = t1
    return tn, tf


@njit(cache=True, inline="always")
def _sh_basis_vals(dx, dy, dz, basis, out):
    out[0] = 0.28209479177387814
    if basis > 1:
        out[1] = -0.4886025119029199 * dy
        out[2] = 0.4886025119029199 * dz
        out[3] = -0.4886025119029199 * dx
    if basis > 4:
        out[4] = 1.0925484305920792 * dx * dy
        out[5] = -1.0925484305920792 * dy * dz
        out[6] = 0.31539156525252005 * (2.0 * dz * dz - dx * dx - dy * dy)
        out[7] = -1.0925484305920792 * dx * dz
        out[8] = 0.5462742152960396 * (dx * dx - dy * dy)


@njit(cache=True, inline="always")
def _cell_setup(px, py, pz, bmin, inv_voxel, nx, ny, nz):
    # grid coords with voxel centers at integers, clamp-to-edge shell
    gx = (px - bmin[0]) * inv_voxel[0] - 0.5
    gy = (py - bmin[1]) * inv_voxel[1] - 0.5
    gz = (pz - bmin[2]) * inv_voxel[2] - 0.5
    if gx < 0.0:
        gx = 0.0
    elif gx > nx - 1.0:
        gx = nx - 1.0
    if gy < 0.0:
        gy = 0.0
    elif gy > ny - 1.0:
        gy = ny - 1.0
    if gz < 0.0:
        gz = 0.0
    elif gz > nz - 1.0:
        gz = nz - 1.0
    ix = int(gx)
    iy = int(gy)
    iz = int(gz)
    if ix > nx - 2:
        ix = nx - 2 if nx > 1 else 0
    if iy > ny - 2:
        iy = ny - 2 if ny > 1 else 0
    if iz > nz - 2:
        iz = nz - 2 if nz > 1 else 0
    return ix, iy, iz, gx - ix, gy - iy, gz - iz


@njit(cache=True, inline="always")
def _gather_density(params, occ, all_occ, ix, iy, iz, fx, fy, fz, nx, ny, nz):
    """Density part of a trilinear gather: (pre-activation, occupied weight
    fraction)."""
    d_pre = 0.0
    occ_frac = 0.0
    for corner in range(8):
        ox_ = (corner >> 2) & 1
        oy_ = (corner >> 1) & 1
        oz_ = corner & 1
        cx = ix + ox_
        cy = iy + oy_
        cz = iz + oz_
        if cx > nx - 1:
            cx = nx - 1
        if cy > ny - 1:
            cy = ny - 1
        if cz > nz - 1:
            cz = nz - 1
        w = ((fx if ox_ else 1.0 - fx)
             * (fy if oy_ else 1.0 - fy)
             * (fz if oz_ else 1.0 - fz))
        if w == 0.0:
            continue
        if not all_occ and occ[cx, cy, cz] == 0:
            continue
        d_pre += w * params[cx, cy, cz, 0]
        occ_frac += w
    if all_occ:
        occ_frac = 1.0
    return d_pre, occ_frac


@njit(cache=True, inline="always")
def _gather_sh(params, occ, all_occ, ix, iy, iz, fx, fy, fz, nx, ny, nz, shv):
    n_sh = params.shape[3] - 1
    for j in range(n_sh):
        shv[j] = 0.0
    for corner in range(8):
        ox_ = (corner >> 2) & 1
        oy_ = (corner >> 1) & 1
        oz_ = corner & 1
        cx = ix + ox_
        cy = iy + oy_
        cz = iz + oz_
        if cx > nx - 1:
            cx = nx - 1
        if cy > ny - 1:
            cy = ny - 1
        if cz > nz - 1:
            cz = nz - 1
        w = ((fx if ox_ else 1.0 - fx)
             * (fy if oy_ else 1.0 - fy)
             * (fz if oz_ else 1.0 - fz))
        if w == 0.0:
            continue
        if not all_occ and occ[cx, cy, cz] == 0:
            continue
        for j in range(n_sh):
            shv[j] += w * params[cx, cy, cz, 1 + j]


@njit(cache=True)
def _walk_record(
    ox, oy, oz, dx, dy, dz, tn, tf,
    params, occ, all_occ, channels, basis, bmin, inv_voxel, step, bg,
    basis_vals, shv, s_alpha, s_T, s_dpre, s_occfrac, s_seglen, s_craw,
    out_color,
):
    """Forward march recording per-sample state. Returns the number of
    processed samples; adds the composited color into out_color."""
    nx, ny, nz = params.shape[0], params.shape[1], params.shape[2]
    n_seg = int(math.ceil((tf - tn) / step))
    T = 1.0
    n = 0
    for k in range(n_seg):
        seg_start = tn + k * step
        seg_len = tf - seg_start
        if seg_len > step:
            seg_len = step
        if seg_len <= 0.0:
            break
        t = seg_start + 0.5 * seg_len
        ix, iy, iz, fx, fy, fz = _cell_setup(
            ox + t * dx, oy + t * dy, oz + t * dz, bmin, inv_voxel, nx, ny, nz
        )
        d_pre, occ_frac = _gather_density(
            params, occ, all_occ, ix, iy, iz, fx, fy, fz, nx, ny, nz
        )
        if d_pre < _SKIP_DPRE:
            s_alpha[n] = 0.0
            s_T[n] = T
            s_dpre[n] = d_pre
            s_occfrac[n] = occ_frac
            s_seglen[n] = seg_len
            for c in range(channels):
                s_craw[n, c] = 0.0
            n += 1
            continue
        _gather_sh(params, occ, all_occ, ix, iy, iz, fx, fy, fz, nx, ny, nz, shv)
        sigma = _softplus(d_pre) * occ_frac
        alpha = _alpha_of(sigma * seg_len)
        s_alpha[n] = alpha
        s_T[n] = T
        s_dpre[n] = d_pre
        s_occfrac[n] = occ_frac
        s_seglen[n] = seg_len
        w_ray = T * alpha
        for c in range(channels):
            raw = 0.0
            for b in range(basis):
                raw += shv[c * basis + b] * basis_vals[b]
            s_craw[n, c] = raw
            if raw > 0.0:
                out_color[c] += w_ray * raw
        n += 1
        T *= 1.0 - alpha
        if T < _EARLY_STOP_T:
            break
    for c in range(channels):
        out_color[c] += T * bg[c]
    return n


@njit(cache=True)
def _walk_reverse(
    ox, oy, oz, dx, dy, dz, tn, n,
    params, occ, all_occ, channels, basis, bmin, inv_voxel, step, bg,
    dl_dcolor, grad, frozen,
    basis_vals, s_alpha, s_T, s_dpre, s_occfrac, s_seglen, s_craw, r_vec,
):
    """Reverse walk over recorded samples. r_vec holds the color rendered
    after sample i under unit transmittance, so
    d color / d alpha_i = T_i * (c_i - r_vec)."""
    nx, ny, nz = params.shape[0], params.shape[1], params.shape[2]
    for c in range(channels):
        r_vec[c] = bg[c]
    for i in range(n - 1, -1, -1):
        if s_dpre[i] < _SKIP_DPRE:
            continue
        seg_len = s_seglen[i]
        t = tn + i * step + 0.5 * seg_len
        ix, iy, iz, fx, fy, fz = _cell_setup(
            ox + t * dx, oy + t * dy, oz + t * dz, bmin, inv_voxel, nx, ny, nz
        )
        alpha = s_alpha[i]
        Ti = s_T[i]
        d_alpha = 0.0
        for c in range(channels):
            craw = s_craw[i, c]
            cclamp = craw if craw > 0.0 else 0.0
            d_alpha += dl_dcolor[c] * Ti * (cclamp - r_vec[c])
        d_sigma = d_alpha * seg_len * (1.0 - alpha)
        d_dpre = d_sigma * s_occfrac[i] * _sigmoid(s_dpre[i])
        wa = Ti * alpha
        for corner in range(8):
            ox_ = (corner >> 2) & 1
            oy_ = (corner >> 1) & 1
            oz_ = corner & 1
            cx = ix + ox_
            cy = iy + oy_
            cz = iz + oz_
            if cx > nx - 1:
                cx = nx - 1
            if cy > ny - 1:
                cy = ny - 1
            if cz > nz - 1:
                cz = nz - 1
            w = ((fx if ox_ else 1.0 - fx)
                 * (fy if oy_ else 1.0 - fy)
                 * (fz if oz_ else 1.0 - fz))
            if w == 0.0:
                continue
            if not all_occ and occ[cx, cy, cz] == 0:
                continue
            if not frozen:
                grad[cx, cy, cz, 0] += w * d_dpre
            # straight-through past the color clamp: the max(., 0) lives only
            # in the forward assembly, never gates the SH gradient
            for c in range(channels):
                g = dl_dcolor[c] * wa * w
                for b in range(basis):
                    grad[cx, cy, cz, 1 + c * basis + b] += g * basis_vals[b]
        for c in range(channels):
            craw = s_craw[i, c]
            cclamp = craw if craw > 0.0 else 0.0
            r_vec[c] = alpha * cclamp + (1.0 - alpha) * r_vec[c]


@njit(cache=True, parallel=True)
def render_rays_forward(
    origins, dirs, params, occ, all_occ, channels, basis,
    bmin, bmax, voxel, step, bg,
    out_color, out_depth, out_opacity,
):
    n_rays = origins.shape[0]
    nx, ny, nz = params.shape[0], params.shape[1], params.shape[2]
    n_chunks = min(64, n_rays) if n_rays > 0 else 0
    inv_voxel = np.empty(3)
    for a in range(3):
        inv_voxel[a] = 1.0 / voxel[a]
    for chunk in prange(n_chunks):
        lo = chunk * n_rays // n_chunks
        hi = (chunk + 1) * n_rays // n_chunks
        basis_vals = np.empty(9)
        shv = np.empty(channels * basis)
        for r in range(lo, hi):
            ox, oy, oz = origins[r, 0], origins[r, 1], origins[r, 2]
            dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
            for c in range(channels):
                out_color[r, c] = 0.0
            tn, tf = _ray_bbox(ox, oy, oz, dx, dy, dz, bmin, bmax)
            if tf - tn < 1e-12:
                for c in range(channels):
                    out_color[r, c] = bg[c]
                out_depth[r] = 0.0
                out_opacity[r] = 0.0
                continue
            _sh_basis_vals(dx, dy, dz, basis, basis_vals)
            n_seg = int(math.ceil((tf - tn) / step))
            T = 1.0
            depth_acc = 0.0
            weight_acc = 0.0
            for k in range(n_seg):
                seg_start = tn + k * step
                seg_len = tf - seg_start
                if seg_len > step:
                    seg_len = step
                if seg_len <= 0.0:
                    break
                t = seg_start + 0.5 * seg_len
                ix, iy, iz, fx, fy, fz = _cell_setup(
                    ox + t * dx, oy + t * dy, oz + t * dz,
                    bmin, inv_voxel, nx, ny, nz,
                )
                d_pre, occ_frac = _gather_density(
                    params, occ, all_occ, ix, iy, iz, fx, fy, fz, nx, ny, nz
                )
                if d_pre < _SKIP_DPRE:
                    continue
                _gather_sh(
                    params, occ, all_occ, ix, iy, iz, fx, fy, fz, nx, ny, nz, shv
                )
                sigma = _softplus(d_pre) * occ_frac
                alpha = _alpha_of(sigma * seg_len)
                if alpha > 0.0:
                    w_ray = T * alpha
                    for c in range(channels):
                        raw = 0.0
                        for b in range(basis):
                            raw += shv[c * basis + b] * basis_vals[b]
                        if raw > 0.0:
                            out_color[r, c] += w_ray * raw
                    depth_acc += w_ray * t
                    weight_acc += w_ray
                    T *= 1.0 - alpha
                    if T < _EARLY_STOP_T:
                        break
            for c in range(channels):
                out_color[r, c] += T * bg[c]
            denom = weight_acc if weight_acc > 1e-8 else 1e-8
            out_depth[r] = depth_acc / denom
            out_opacity[r] = weight_acc


@njit(cache=True, parallel=True)
def render_rays_backward(
    origins, dirs, params, occ, all_occ, channels, basis,
    bmin, bmax, voxel, step, bg,
    dl_dcolor, s_max, frozen,
    grad, out_color,
):
    """Chunked adjoint over a ray batch. grad has shape (K, Nx, Ny, Nz, 1+C*B);
    chunk k accumulates rays [k*R/K, (k+1)*R/K)."""
    n_rays = origins.shape[0]
    n_chunks = grad.shape[0]
    inv_voxel = np.empty(3)
    for a in range(3):
        inv_voxel[a] = 1.0 / voxel[a]
    for chunk in prange(n_chunks):
        lo = chunk * n_rays // n_chunks
        hi = (chunk + 1) * n_rays // n_chunks
        basis_vals = np.empty(9)
        shv = np.empty(channels * basis)
        s_alpha = np.empty(s_max)
        s_T = np.empty(s_max)
        s_dpre = np.empty(s_max)
        s_occfrac = np.empty(s_max)
        s_seglen = np.empty(s_max)
        s_craw = np.empty((s_max, channels))
        r_vec = np.empty(channels)
        for r in range(lo, hi):
            ox, oy, oz = origins[r, 0], origins[r, 1], origins[r, 2]
            dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
            for c in range(channels):
                out_color[r, c] = 0.0
            tn, tf = _ray_bbox(ox, oy, oz, dx, dy, dz, bmin, bmax)
            if tf - tn < 1e-12:
                for c in range(channels):
                    out_color[r, c] = bg[c]
                continue
            _sh_basis_vals(dx, dy, dz, basis, basis_vals)
            n = _walk_record(
                ox, oy, oz, dx, dy, dz, tn, tf,
                params, occ, all_occ, channels, basis, bmin, inv_voxel, step, bg,
                basis_vals, shv, s_alpha, s_T, s_dpre, s_occfrac, s_seglen,
                s_craw, out_color[r],
            )
            _walk_reverse(
                ox, oy, oz, dx, dy, dz, tn, n,
                params, occ, all_occ, channels, basis, bmin, inv_voxel, step, bg,
                dl_dcolor[r], grad[chunk], frozen,
                basis_vals, s_alpha, s_T, s_dpre, s_occfrac, s_seglen, s_craw,
                r_vec,
            )


@njit(cache=True, parallel=True)
def photometric_step(
    origins, dirs, targets, params, occ, all_occ, channels, basis,
    bmin, bmax, voxel, step, bg,
    s_max, frozen, loss_scale,
    grad, out_color,
):
    """Fused squared-error step: render, form d loss/d color = loss_scale *
    2 * (color - target) per ray, and immediately run the reverse walk."""
    n_rays = origins.shape[0]
    n_chunks = grad.shape[0]
    inv_voxel = np.empty(3)
    for a in range(3):
        inv_voxel[a] = 1.0 / voxel[a]
    for chunk in prange(n_chunks):
        lo = chunk * n_rays // n_chunks
        hi = (chunk + 1) * n_rays // n_chunks
        basis_vals = np.empty(9)
        shv = np.empty(channels * basis)
        s_alpha = np.empty(s_max)
        s_T = np.empty(s_max)
        s_dpre = np.empty(s_max)
        s_occfrac = np.empty(s_max)
        s_seglen = np.empty(s_max)
        s_craw = np.empty((s_max, channels))
        r_vec = np.empty(channels)
        dl = np.empty(channels)
        for r in range(lo, hi):
            ox, oy, oz = origins[r, 0], origins[r, 1], origins[r, 2]
            dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
            for c in range(channels):
                out_color[r, c] = 0.0
            tn, tf = _ray_bbox(ox, oy, oz, dx, dy, dz, bmin, bmax)
            if tf - tn < 1e-12:
                for c in range(channels):
                    out_color[r, c] = bg[c]
                continue
            _sh_basis_vals(dx, dy, dz, basis, basis_vals)
            n = _walk_record(
                ox, oy, oz, dx, dy, dz, tn, tf,
                params, occ, all_occ, channels, basis, bmin, inv_voxel, step, bg,
                basis_vals, shv, s_alpha, s_T, s_dpre, s_occfrac, s_seglen,
                s_craw, out_color[r],
            )
            for c in range(channels):
                dl[c] = 2.0 * loss_scale * (out_color[r, c] - targets[r, c])
            _walk_reverse(
                ox, oy, oz, dx, dy, dz, tn, n,
                params, occ, all_occ, channels, basis, bmin, inv_voxel, step, bg,
                dl, grad[chunk], frozen,
                basis_vals, s_alpha, s_T, s_dpre, s_occfrac, s_seglen, s_craw,
                r_vec,
            )
