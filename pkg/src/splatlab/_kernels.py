"""Numba inner loops for the rasterizer.

Layout contract shared by all kernels: the caller has already culled and
depth-sorted the cloud for one camera, so every per-Gaussian array here is
ordered front-to-back (index 0 composites first).  ``bbox`` rows are
(r0, r1, c0, c1) half-open pixel ranges covering the 3-sigma ellipse.

Parallelism is over image rows.  Each row writes only to its own slice of
the output buffers (``*_rows`` have a leading H axis), so results are
independent of the thread count; the caller reduces over rows afterwards
with a fixed-order numpy sum.  fastmath stays off: these kernels are checked
against finite differences at 1e-4 and must be bit-reproducible.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

# Squared Mahalanobis cutoff: 3 sigma.
CUTOFF_MSQ = 9.0


@njit(cache=True, parallel=True)
def composite_forward(means, conic, opac, colors, bbox,
                      alpha_max, t_stop,
                      image, trans, stop_order, wsum_rows, fp_rows):
    """Front-to-back alpha compositing of depth-ordered splats.

    Fills image (H,W,3) with the foreground term sum(w_i c_i), trans (H,W)
    with the final transmittance (background is composited by the caller),
    stop_order (H,W) with the order index of the last splat composited before
    transmittance crossed t_stop (H*0+M if it never crossed), and per-row
    weight/footprint partials wsum_rows, fp_rows of shape (H, M).
    """
    H, W = trans.shape
    M = opac.shape[0]
    for r in prange(H):
        for g in range(M):
            r0, r1, c0, c1 = bbox[g, 0], bbox[g, 1], bbox[g, 2], bbox[g, 3]
            if r < r0 or r >= r1 or c0 >= c1:
                continue
            mu = means[g, 0]
            mv = means[g, 1]
            ca = conic[g, 0]
            cb = conic[g, 1]
            cc = conic[g, 2]
            o = opac[g]
            col0 = colors[g, 0]
            col1 = colors[g, 1]
            col2 = colors[g, 2]
            for c in range(c0, c1):
                T = trans[r, c]
                if T < t_stop:
                    continue
                dx = c - mu
                dy = r - mv
                msq = ca * dx * dx + 2.0 * cb * dx * dy + cc * dy * dy
                if msq > CUTOFF_MSQ:
                    continue
                alpha = o * np.exp(-0.5 * msq)
                if alpha > alpha_max:
                    alpha = alpha_max
                w = T * alpha
                image[r, c, 0] += w * col0
                image[r, c, 1] += w * col1
                image[r, c, 2] += w * col2
                wsum_rows[r, g] += w
                fp_rows[r, g] += 1
                T_new = T * (1.0 - alpha)
                trans[r, c] = T_new
                if T_new < t_stop:
                    stop_order[r, c] = g


@njit(cache=True, parallel=True)
def accumulate_error(means, conic, opac, bbox,
                     alpha_max, t_stop, resid_sq, se_rows):
    """Replay the compositing sweep, accumulating w_i * resid_sq per splat.

    resid_sq is the per-pixel squared color residual of the *final* rendered
    image against ground truth, so this must run after composite_forward.
    se_rows has shape (H, M).
    """
    H, W = resid_sq.shape
    M = opac.shape[0]
    for r in prange(H):
        T_row = np.ones(W, dtype=np.float64)
        for g in range(M):
            r0, r1, c0, c1 = bbox[g, 0], bbox[g, 1], bbox[g, 2], bbox[g, 3]
            if r < r0 or r >= r1 or c0 >= c1:
                continue
            mu = means[g, 0]
            mv = means[g, 1]
            ca = conic[g, 0]
            cb = conic[g, 1]
            cc = conic[g, 2]
            o = opac[g]
            for c in range(c0, c1):
                T = T_row[c]
                if T < t_stop:
                    continue
                dx = c - mu
                dy = r - mv
                msq = ca * dx * dx + 2.0 * cb * dx * dy + cc * dy * dy
                if msq > CUTOFF_MSQ:
                    continue
                alpha = o * np.exp(-0.5 * msq)
                if alpha > alpha_max:
                    alpha = alpha_max
                se_rows[r, g] += T * alpha * resid_sq[r, c]
                T_row[c] = T * (1.0 - alpha)


@njit(cache=True, parallel=True)
def composite_backward(means, conic, opac, colors, bbox, background,
                       alpha_max, t_stop,
                       trans_final, stop_order, grad_image,
                       dmean_rows, dconic_rows, dopac_rows, dcolor_rows):
    """Reverse (back-to-front) sweep of composite_forward's chain rule.

    Per pixel, with w_i = T_i alpha_i and the suffix color
    S_i = sum_{j>i} w_j c_j + T_final bg, the image gradient pulls back as
        dL/dc_i     = w_i * gpix
        dL/dalpha_i = gpix . (T_i c_i - S_i / (1 - alpha_i))
    Geometry gradients stop where the alpha clamp was active (the clamp is
    flat there); color gradients always flow.  Outputs are per-row partials:
    dmean_rows (H,M,2), dconic_rows (H,M,3) packed (a,b,c) with the off-
    diagonal counted once via dm/db = 2 dx dy, dopac_rows (H,M) w.r.t. the
    *pre-sigmoid-chain* opacity o, dcolor_rows (H,M,3).
    """
    H, W = trans_final.shape
    M = opac.shape[0]
    for r in prange(H):
        T_run = np.empty(W, dtype=np.float64)
        S0 = np.empty(W, dtype=np.float64)
        S1 = np.empty(W, dtype=np.float64)
        S2 = np.empty(W, dtype=np.float64)
        for c in range(W):
            tf = trans_final[r, c]
            T_run[c] = tf
            S0[c] = tf * background[0]
            S1[c] = tf * background[1]
            S2[c] = tf * background[2]
        for g in range(M - 1, -1, -1):
            r0, r1, c0, c1 = bbox[g, 0], bbox[g, 1], bbox[g, 2], bbox[g, 3]
            if r < r0 or r >= r1 or c0 >= c1:
                continue
            mu = means[g, 0]
            mv = means[g, 1]
            ca = conic[g, 0]
            cb = conic[g, 1]
            cc = conic[g, 2]
            o = opac[g]
            col0 = colors[g, 0]
            col1 = colors[g, 1]
            col2 = colors[g, 2]
            for c in range(c0, c1):
                if g > stop_order[r, c]:
                    continue
                dx = c - mu
                dy = r - mv
                msq = ca * dx * dx + 2.0 * cb * dx * dy + cc * dy * dy
                if msq > CUTOFF_MSQ:
                    continue
                G = np.exp(-0.5 * msq)
                alpha = o * G
                clamped = alpha > alpha_max
                if clamped:
                    alpha = alpha_max
                one_m = 1.0 - alpha
                T_i = T_run[c] / one_m
                w = T_i * alpha
                g0 = grad_image[r, c, 0]
                g1 = grad_image[r, c, 1]
                g2 = grad_image[r, c, 2]
                dcolor_rows[r, g, 0] += w * g0
                dcolor_rows[r, g, 1] += w * g1
                dcolor_rows[r, g, 2] += w * g2
                if not clamped:
                    dalpha = (g0 * (T_i * col0 - S0[c] / one_m)
                              + g1 * (T_i * col1 - S1[c] / one_m)
                              + g2 * (T_i * col2 - S2[c] / one_m))
                    dopac_rows[r, g] += dalpha * G
                    dmsq = -0.5 * dalpha * o * G
                    dmean_rows[r, g, 0] += dmsq * (-2.0 * (ca * dx + cb * dy))
                    dmean_rows[r, g, 1] += dmsq * (-2.0 * (cb * dx + cc * dy))
                    dconic_rows[r, g, 0] += dmsq * dx * dx
                    dconic_rows[r, g, 1] += dmsq * 2.0 * dx * dy
                    dconic_rows[r, g, 2] += dmsq * dy * dy
                S0[c] += w * col0
                S1[c] += w * col1
                S2[c] += w * col2
                T_run[c] = T_i
