"""Vectorized numpy implementation of the batched ray kernels.

Same signatures and semantics as the compiled ``_ckernels`` module; used when
the extension is not built or when ``SPECVOX_BACKEND=python``.
"""

import numpy as np


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


def _trilinear(points, lo, inv_cell, res, occ=None):
    """Flat corner indices (M, 8), weights (M, 8) and an inside mask (M,).

    Points in cells with ``occ == 0`` count as outside.
    """
    res = np.asarray(res)
    u = (points - lo) * inv_cell
    inside = np.all((u >= 0.0) & (u <= res - 1), axis=1)
    i0 = np.clip(np.floor(u), 0, res - 2).astype(np.int64)
    if occ is not None:
        occ = np.asarray(occ).reshape(-1)
        if occ.size != np.prod(res - 1):
            raise ValueError("occupancy grid must have one entry per cell")
        cell = (i0[:, 0] * (res[1] - 1) + i0[:, 1]) * (res[2] - 1) + i0[:, 2]
        inside &= occ[cell] != 0
    f = u - i0
    f[~inside] = 0.0
    i0[~inside] = 0
    idx = np.empty((len(points), 8), dtype=np.int64)
    wts = np.empty((len(points), 8))
    c = 0
    for dx in (0, 1):
        wx = f[:, 0] if dx else 1.0 - f[:, 0]
        for dy in (0, 1):
            wy = f[:, 1] if dy else 1.0 - f[:, 1]
            for dz in (0, 1):
                wz = f[:, 2] if dz else 1.0 - f[:, 2]
                idx[:, c] = ((i0[:, 0] + dx) * res[1] + (i0[:, 1] + dy)) * res[2] + i0[:, 2] + dz
                wts[:, c] = wx * wy * wz
                c += 1
    wts[~inside] = 0.0
    return idx, wts, inside


def _forward(density_raw, color_raw, lo, inv_cell, origins, dirs, t_vals, far, stop_T, occ):
    n_rays, n = t_vals.shape
    k = color_raw.shape[-1]
    res = density_raw.shape
    pts = origins[:, None, :] + t_vals[..., None] * dirs[:, None, :]
    idx, wts, inside = _trilinear(pts.reshape(-1, 3), lo, inv_cell, res, occ)
    z = np.einsum("mc,mc->m", wts, density_raw.reshape(-1)[idx])
    zc = np.einsum("mc,mck->mk", wts, color_raw.reshape(-1, k)[idx])
    sigma = np.where(inside, _softplus(z), 0.0).reshape(n_rays, n)
    color = _sigmoid(zc)
    color[~inside] = 0.5
    color = color.reshape(n_rays, n, k)
    deltas = np.diff(t_vals, axis=1, append=far[:, None])
    a = sigma * deltas
    trans = np.exp(-np.concatenate([np.zeros((n_rays, 1)), np.cumsum(a, axis=1)[:, :-1]], axis=1))
    if stop_T > 0.0:
        # samples reached after transmittance drops below stop_T are skipped
        dead = trans < stop_T
        if dead.any():
            a[dead] = 0.0
            sigma[dead] = 0.0
            color[dead] = 0.5
            inside = inside & ~dead.reshape(-1)
            trans = np.exp(-np.concatenate(
                [np.zeros((n_rays, 1)), np.cumsum(a, axis=1)[:, :-1]], axis=1))
    alpha = -np.expm1(-a)
    w = trans * alpha
    return dict(idx=idx, wts=wts, inside=inside, z=z, color=color, deltas=deltas,
                a=a, trans=trans, w=w, sigma=sigma)


def render_rays(density_raw, color_raw, lo, inv_cell, origins, dirs, t_vals, far, stop_T=0.0,
                occ=None):
    """Composite ``n_rays`` rays; returns ``(radiance, depth, opacity)``.

    Samples met after the transmittance has fallen below ``stop_T`` are
    skipped (``stop_T=0`` evaluates every sample), as are samples in cells
    marked empty by the optional per-cell ``occ`` mask.
    """
    fw = _forward(density_raw, color_raw, lo, inv_cell, origins, dirs, t_vals, far, stop_T, occ)
    w = fw["w"]
    radiance = np.einsum("rn,rnk->rk", w, fw["color"])
    opacity = w.sum(axis=1)
    depth = (w * t_vals).sum(axis=1) / np.maximum(opacity, 1e-10)
    return radiance, depth, opacity


def _excl_cumsum(x):
    out = np.cumsum(x, axis=1)
    out[:, 1:] = out[:, :-1].copy()
    out[:, 0] = 0.0
    return out


def train_rays(density_raw, color_raw, lo, inv_cell, origins, dirs, t_vals, near, far,
               filt, ssf, target, eps, beta, grad_density, grad_color, grad_ssf, y_hat,
               stop_T=0.0, occ=None):
    """Forward + reverse pass for a batch of rays.

    Accumulates *summed* (not averaged) gradients of
    ``sum_r relmse_r + beta * sum_r dist_r`` into the ``grad_*`` buffers and
    writes predictions into ``y_hat``. Returns the two unweighted loss sums.
    """
    fw = _forward(density_raw, color_raw, lo, inv_cell, origins, dirs, t_vals, far, stop_T, occ)
    w, color, deltas, trans, a = fw["w"], fw["color"], fw["deltas"], fw["trans"], fw["a"]
    n_rays, n = w.shape
    k = color.shape[-1]

    radiance = np.einsum("rn,rnk->rk", w, color)
    pred = (radiance * filt) @ ssf
    y_hat[...] = pred
    denom = pred + eps
    diff = target - pred
    loss_recon = 0.5 * np.sum((diff / denom) ** 2)
    g_y = -diff / denom ** 2
    grad_ssf += (radiance * filt).T @ g_y
    g_rad = filt * (g_y @ ssf.T)

    span = (far - near)[:, None]
    s = (t_vals + 0.5 * deltas - near[:, None]) / span
    dn = deltas / span
    w_lt = _excl_cumsum(w)
    ws_lt = _excl_cumsum(w * s)
    w_gt = w.sum(axis=1, keepdims=True) - w_lt - w
    ws_gt = (w * s).sum(axis=1, keepdims=True) - ws_lt - w * s
    left = s * w_lt - ws_lt
    right = ws_gt - s * w_gt
    loss_dist = np.sum(2.0 * w * left + w * w * dn / 3.0)
    g_w = np.einsum("rk,rnk->rn", g_rad, color)
    if beta != 0.0:
        g_w = g_w + beta * (2.0 * (left + right) + (2.0 / 3.0) * w * dn)

    gw_w = g_w * w
    suffix = np.cumsum(gw_w[:, ::-1], axis=1)[:, ::-1] - gw_w
    t_next = trans * np.exp(-a)
    g_a = g_w * t_next - suffix
    inside = fw["inside"]
    g_z = (g_a * deltas).reshape(-1) * _sigmoid(fw["z"]) * inside
    c_flat = color.reshape(-1, k)
    g_zc = (w[..., None] * g_rad[:, None, :]).reshape(-1, k) * c_flat * (1.0 - c_flat)
    g_zc[~inside] = 0.0

    idx, wts = fw["idx"], fw["wts"]
    size = grad_density.size
    flat_idx = idx.reshape(-1)
    grad_density.reshape(-1)[...] += np.bincount(
        flat_idx, weights=(wts * g_z[:, None]).reshape(-1), minlength=size)
    gc = grad_color.reshape(-1, k)
    for b in range(k):
        gc[:, b] += np.bincount(flat_idx, weights=(wts * g_zc[:, b:b + 1]).reshape(-1),
                                minlength=size)
    return float(loss_recon), float(loss_dist)
