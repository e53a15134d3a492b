# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled ray kernels: fused trilinear lookup, compositing and its adjoint.

Mirrors ``_pykernels`` exactly; processes one ray at a time with per-ray
scratch buffers so memory stays O(n_samples * k).
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log1p, expm1, floor, fabs

cnp.import_array()


cdef inline double _softplus(double x) noexcept nogil:
    if x > 0:
        return x + log1p(exp(-x))
    return log1p(exp(x))


cdef inline double _sigmoid(double x) noexcept nogil:
    cdef double e
    if x >= 0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


cdef inline bint _locate(double px, double py, double pz,
                         const double[:] lo, const double[:] inv_cell,
                         Py_ssize_t nx, Py_ssize_t ny, Py_ssize_t nz,
                         const unsigned char[:] occ, bint use_occ,
                         Py_ssize_t* idx, double* wts) noexcept nogil:
    cdef double ux = (px - lo[0]) * inv_cell[0]
    cdef double uy = (py - lo[1]) * inv_cell[1]
    cdef double uz = (pz - lo[2]) * inv_cell[2]
    cdef Py_ssize_t ix, iy, iz
    cdef double fx, fy, fz
    if ux < 0 or uy < 0 or uz < 0 or ux > nx - 1 or uy > ny - 1 or uz > nz - 1:
        return 0
    ix = <Py_ssize_t>floor(ux)
    iy = <Py_ssize_t>floor(uy)
    iz = <Py_ssize_t>floor(uz)
    if ix > nx - 2:
        ix = nx - 2
    if iy > ny - 2:
        iy = ny - 2
    if iz > nz - 2:
        iz = nz - 2
    if use_occ and not occ[(ix * (ny - 1) + iy) * (nz - 1) + iz]:
        return 0
    fx = ux - ix
    fy = uy - iy
    fz = uz - iz
    cdef Py_ssize_t base = (ix * ny + iy) * nz + iz
    cdef Py_ssize_t sy = nz, sx = ny * nz
    idx[0] = base
    idx[1] = base + 1
    idx[2] = base + sy
    idx[3] = base + sy + 1
    idx[4] = base + sx
    idx[5] = base + sx + 1
    idx[6] = base + sx + sy
    idx[7] = base + sx + sy + 1
    wts[0] = (1 - fx) * (1 - fy) * (1 - fz)
    wts[1] = (1 - fx) * (1 - fy) * fz
    wts[2] = (1 - fx) * fy * (1 - fz)
    wts[3] = (1 - fx) * fy * fz
    wts[4] = fx * (1 - fy) * (1 - fz)
    wts[5] = fx * (1 - fy) * fz
    wts[6] = fx * fy * (1 - fz)
    wts[7] = fx * fy * fz
    return 1


cdef void _march(const double[:] dens, const double[:, ::1] col,
                 const double[:] lo, const double[:] inv_cell,
                 Py_ssize_t nx, Py_ssize_t ny, Py_ssize_t nz,
                 double ox, double oy, double oz, double dx, double dy, double dz,
                 const double[:] t, double far, double stop_T,
                 const unsigned char[:] occ, bint use_occ,
                 Py_ssize_t[:, ::1] idx, double[:, ::1] wts, char[:] inside,
                 double[:] z, double[:, ::1] c, double[:] delta, double[:] a,
                 double[:] trans, double[:] w) noexcept nogil:
    """Forward pass for one ray into the scratch buffers."""
    cdef Py_ssize_t n = t.shape[0], k = col.shape[1]
    cdef Py_ssize_t i, j, b
    cdef double T = 1.0, zz, ww, ti
    for i in range(n):
        ti = t[i]
        if i + 1 < n:
            delta[i] = t[i + 1] - ti
        else:
            delta[i] = far - ti
        trans[i] = T
        if T < stop_T:
            inside[i] = 0
        else:
            inside[i] = _locate(ox + ti * dx, oy + ti * dy, oz + ti * dz, lo, inv_cell,
                                nx, ny, nz, occ, use_occ, &idx[i, 0], &wts[i, 0])
        if inside[i]:
            zz = 0.0
            for j in range(8):
                zz = zz + wts[i, j] * dens[idx[i, j]]
            z[i] = zz
            for b in range(k):
                c[i, b] = 0.0
            for j in range(8):
                ww = wts[i, j]
                for b in range(k):
                    c[i, b] += ww * col[idx[i, j], b]
            for b in range(k):
                c[i, b] = _sigmoid(c[i, b])
            a[i] = _softplus(zz) * delta[i]
            w[i] = T * (-expm1(-a[i]))
            T = T * exp(-a[i])
        else:
            z[i] = 0.0
            for b in range(k):
                c[i, b] = 0.5
            a[i] = 0.0
            w[i] = 0.0
    trans[n] = T


def _scratch(Py_ssize_t n, Py_ssize_t k):
    return (np.empty((n, 8), dtype=np.intp), np.zeros((n, 8)), np.empty(n, dtype=np.int8),
            np.empty(n), np.empty((n, k)), np.empty(n), np.empty(n), np.empty(n + 1),
            np.empty(n))


def _occupancy(occ, Py_ssize_t nx, Py_ssize_t ny, Py_ssize_t nz):
    if occ is None:
        return np.ones(1, dtype=np.uint8), False
    occ = np.ascontiguousarray(occ, dtype=np.uint8).reshape(-1)
    if occ.shape[0] != (nx - 1) * (ny - 1) * (nz - 1):
        raise ValueError("occupancy grid must have one entry per cell")
    return occ, True


def render_rays(density_raw, color_raw, lo, inv_cell, origins, dirs, t_vals, far,
                double stop_T=0.0, occ=None):
    """Composite ``n_rays`` rays; returns ``(radiance, depth, opacity)``."""
    cdef Py_ssize_t nx = density_raw.shape[0], ny = density_raw.shape[1], nz = density_raw.shape[2]
    cdef Py_ssize_t k = color_raw.shape[3]
    cdef const double[:] dens = np.ascontiguousarray(density_raw, dtype=np.float64).reshape(-1)
    cdef const double[:, ::1] col = np.ascontiguousarray(color_raw, dtype=np.float64).reshape(-1, k)
    cdef const double[:] lo_v = np.ascontiguousarray(lo, dtype=np.float64)
    cdef const double[:] inv_v = np.ascontiguousarray(inv_cell, dtype=np.float64)
    cdef const double[:, ::1] o = np.ascontiguousarray(origins, dtype=np.float64)
    cdef const double[:, ::1] d = np.ascontiguousarray(dirs, dtype=np.float64)
    cdef const double[:, ::1] t = np.ascontiguousarray(t_vals, dtype=np.float64)
    cdef const double[:] fr = np.ascontiguousarray(far, dtype=np.float64)
    occ_a, use_occ_ = _occupancy(occ, nx, ny, nz)
    cdef const unsigned char[:] occ_v = occ_a
    cdef bint use_occ = use_occ_
    cdef Py_ssize_t n_rays = t.shape[0], n = t.shape[1]
    radiance_a = np.zeros((n_rays, k))
    depth_a = np.zeros(n_rays)
    opacity_a = np.zeros(n_rays)
    cdef double[:, ::1] radiance = radiance_a
    cdef double[:] depth = depth_a, opacity = opacity_a
    sc = _scratch(n, k)
    cdef Py_ssize_t[:, ::1] idx = sc[0]
    cdef double[:, ::1] wts = sc[1]
    cdef char[:] inside = sc[2]
    cdef double[:] z = sc[3]
    cdef double[:, ::1] c = sc[4]
    cdef double[:] delta = sc[5], a = sc[6], trans = sc[7], w = sc[8]
    cdef Py_ssize_t r, i, b
    cdef double acc, dep
    with nogil:
        for r in range(n_rays):
            _march(dens, col, lo_v, inv_v, nx, ny, nz, o[r, 0], o[r, 1], o[r, 2],
                   d[r, 0], d[r, 1], d[r, 2], t[r], fr[r], stop_T, occ_v, use_occ,
                   idx, wts, inside, z, c, delta, a, trans, w)
            acc = 0.0
            dep = 0.0
            for i in range(n):
                if w[i] != 0.0:
                    acc = acc + w[i]
                    dep = dep + w[i] * t[r, i]
                    for b in range(k):
                        radiance[r, b] += w[i] * c[i, b]
            opacity[r] = acc
            depth[r] = dep / (acc if acc > 1e-10 else 1e-10)
    return radiance_a, depth_a, opacity_a


def train_rays(density_raw, color_raw, lo, inv_cell, origins, dirs, t_vals, near, far,
               filt, ssf, target, double eps, double beta,
               grad_density, grad_color, grad_ssf, y_hat, double stop_T=0.0, occ=None):
    """Forward + reverse pass for a batch of rays.

    Accumulates summed gradients of ``sum_r relmse_r + beta * sum_r dist_r``
    into the ``grad_*`` buffers (which must be C-contiguous float64) and
    writes predictions into ``y_hat``. Returns the unweighted loss sums.
    """
    cdef Py_ssize_t nx = density_raw.shape[0], ny = density_raw.shape[1], nz = density_raw.shape[2]
    cdef Py_ssize_t k = color_raw.shape[3]
    cdef const double[:] dens = np.ascontiguousarray(density_raw, dtype=np.float64).reshape(-1)
    cdef const double[:, ::1] col = np.ascontiguousarray(color_raw, dtype=np.float64).reshape(-1, k)
    cdef const double[:] lo_v = np.ascontiguousarray(lo, dtype=np.float64)
    cdef const double[:] inv_v = np.ascontiguousarray(inv_cell, dtype=np.float64)
    cdef const double[:, ::1] o = np.ascontiguousarray(origins, dtype=np.float64)
    cdef const double[:, ::1] d = np.ascontiguousarray(dirs, dtype=np.float64)
    cdef const double[:, ::1] t = np.ascontiguousarray(t_vals, dtype=np.float64)
    cdef const double[:] nr = np.ascontiguousarray(near, dtype=np.float64)
    cdef const double[:] fr = np.ascontiguousarray(far, dtype=np.float64)
    cdef const double[:, ::1] f = np.ascontiguousarray(filt, dtype=np.float64)
    cdef const double[:, ::1] R = np.ascontiguousarray(ssf, dtype=np.float64)
    cdef const double[:, ::1] y = np.ascontiguousarray(target, dtype=np.float64)
    cdef double[:] gd = grad_density.reshape(-1)
    cdef double[:, ::1] gcol = grad_color.reshape(-1, k)
    cdef double[:, ::1] gR = grad_ssf
    cdef double[:, ::1] yh = y_hat
    occ_a, use_occ_ = _occupancy(occ, nx, ny, nz)
    cdef const unsigned char[:] occ_v = occ_a
    cdef bint use_occ = use_occ_
    cdef Py_ssize_t n_rays = t.shape[0], n = t.shape[1], nch = R.shape[1]
    sc = _scratch(n, k)
    cdef Py_ssize_t[:, ::1] idx = sc[0]
    cdef double[:, ::1] wts = sc[1]
    cdef char[:] inside = sc[2]
    cdef double[:] z = sc[3]
    cdef double[:, ::1] c = sc[4]
    cdef double[:] delta = sc[5], a = sc[6], trans = sc[7], w = sc[8]
    cdef double[:] rad = np.empty(k), grad_rad = np.empty(k), gc = np.empty(k), gy = np.empty(nch)
    cdef double[:] s = np.empty(n), gw = np.empty(n)
    cdef Py_ssize_t r, i, j, b, ch
    cdef double loss_recon = 0.0, loss_dist = 0.0
    cdef double acc, pred, den, diff, span, w_lt, ws_lt, w_tot, ws_tot, left, right
    cdef double suffix, g_a, g_z, cb, dn, ww
    with nogil:
        for r in range(n_rays):
            _march(dens, col, lo_v, inv_v, nx, ny, nz, o[r, 0], o[r, 1], o[r, 2],
                   d[r, 0], d[r, 1], d[r, 2], t[r], fr[r], stop_T, occ_v, use_occ,
                   idx, wts, inside, z, c, delta, a, trans, w)
            for b in range(k):
                acc = 0.0
                for i in range(n):
                    acc = acc + w[i] * c[i, b]
                rad[b] = acc
            # degradation + relative MSE with detached denominator
            for ch in range(nch):
                pred = 0.0
                for b in range(k):
                    pred = pred + rad[b] * f[r, b] * R[b, ch]
                yh[r, ch] = pred
                den = pred + eps
                diff = y[r, ch] - pred
                loss_recon += 0.5 * (diff / den) * (diff / den)
                gy[ch] = -diff / (den * den)
            for b in range(k):
                acc = 0.0
                for ch in range(nch):
                    gR[b, ch] += rad[b] * f[r, b] * gy[ch]
                    acc = acc + R[b, ch] * gy[ch]
                grad_rad[b] = f[r, b] * acc
            # dL/dw from radiance
            for i in range(n):
                acc = 0.0
                if inside[i]:
                    for b in range(k):
                        acc = acc + grad_rad[b] * c[i, b]
                gw[i] = acc
            # distortion on normalized interval midpoints
            span = fr[r] - nr[r]
            w_tot = 0.0
            ws_tot = 0.0
            for i in range(n):
                s[i] = (t[r, i] + 0.5 * delta[i] - nr[r]) / span
                w_tot = w_tot + w[i]
                ws_tot = ws_tot + w[i] * s[i]
            w_lt = 0.0
            ws_lt = 0.0
            for i in range(n):
                dn = delta[i] / span
                left = s[i] * w_lt - ws_lt
                right = (ws_tot - ws_lt - w[i] * s[i]) - s[i] * (w_tot - w_lt - w[i])
                loss_dist += 2.0 * w[i] * left + w[i] * w[i] * dn / 3.0
                if beta != 0.0:
                    gw[i] = gw[i] + beta * (2.0 * (left + right) + (2.0 / 3.0) * w[i] * dn)
                w_lt = w_lt + w[i]
                ws_lt = ws_lt + w[i] * s[i]
            # adjoint of compositing, back to front
            suffix = 0.0
            for i in range(n - 1, -1, -1):
                if inside[i]:
                    g_a = gw[i] * trans[i + 1] - suffix
                    g_z = g_a * delta[i] * _sigmoid(z[i])
                    for j in range(8):
                        gd[idx[i, j]] += wts[i, j] * g_z
                    for b in range(k):
                        cb = c[i, b]
                        gc[b] = w[i] * grad_rad[b] * cb * (1.0 - cb)
                    for j in range(8):
                        ww = wts[i, j]
                        for b in range(k):
                            gcol[idx[i, j], b] += ww * gc[b]
                suffix = suffix + gw[i] * w[i]
    return loss_recon, loss_dist
