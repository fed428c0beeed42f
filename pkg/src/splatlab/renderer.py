"""Differentiable CPU rasterizer for anisotropic Gaussian clouds.

The forward pass projects every frustum-visible Gaussian into the camera
(first-order EWA linearization plus a low-pass floor), depth-sorts them, and
alpha-composites front-to-back per pixel with an early stop once
transmittance is spent.  The backward pass replays compositing in reverse
and chains screen-space gradients through projection, covariance assembly,
quaternion normalization and spherical harmonics, back to every cloud
parameter — exact to first order, verified against finite differences.

Rendering is deterministic: identical inputs give bit-identical images and
gradients regardless of the configured thread count, because each thread owns
whole image rows and per-Gaussian reductions happen in a fixed order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numba
import numpy as np

from . import _kernels
from .core import (
    FLOAT,
    Camera,
    GaussianCloud,
    InvalidParameterError,
    build_covariance,
    projection_jacobian,
    quat_rotmat_jacobian,
    quat_to_rotmat,
    sh_basis,
    sh_basis_gradient,
)


@dataclass
class RenderConfig:
    """Rasterizer knobs; the defaults match the trainer's assumptions.

    Attributes:
        lowpass: isotropic variance (px^2) added to every screen covariance.
        alpha_max: per-splat alpha ceiling; keeps (1 - alpha) bounded away
            from zero so the compositing chain rule stays finite.
        transmittance_stop: pixels stop compositing below this transmittance.
        near: camera-frame z culling plane.
        frustum_guard: image rectangle scale used for center culling (1.3
            keeps splats whose center is slightly off-screen).
        n_threads: worker threads for the rasterization kernels; None leaves
            the numba global setting untouched.
    """

    lowpass: float = 0.09
    alpha_max: float = 0.99
    transmittance_stop: float = 1e-4
    near: float = 0.01
    frustum_guard: float = 1.3
    n_threads: Optional[int] = None

    def validate(self) -> None:
        if not 0 < self.alpha_max < 1:
            raise InvalidParameterError("alpha_max must be in (0, 1)")
        if not 0 < self.transmittance_stop < 1:
            raise InvalidParameterError("transmittance_stop must be in (0, 1)")
        if self.lowpass < 0 or self.near <= 0 or self.frustum_guard < 1:
            raise InvalidParameterError("invalid render configuration")


DEFAULT_CONFIG = RenderConfig()


@dataclass
class RenderOutput:
    """Forward-pass image products."""

    image: np.ndarray                # (H, W, 3) in [0, 1]
    final_transmittance: np.ndarray  # (H, W)


@dataclass
class RenderAux:
    """Per-Gaussian statistics gathered during the forward pass.

    weight_sum and footprint count only *active* pixels: inside the 3-sigma
    ellipse and composited before the pixel's transmittance ran out.  se_sum
    is the compositing-weighted squared color error against the ground-truth
    image (zeros when no ground truth was supplied).  stop_order is internal
    compositing bookkeeping reused by render_backward.
    """

    weight_sum: np.ndarray           # (N,)
    se_sum: np.ndarray               # (N,)
    footprint: np.ndarray            # (N,) int64
    visible: np.ndarray              # (N,) bool
    stop_order: Optional[np.ndarray] = None  # (H, W) int64


@dataclass
class ParamGradients:
    """Loss gradients w.r.t. every cloud parameter, plus touch bookkeeping.

    Rows for Gaussians that were culled or never composited are exactly zero
    and have touched == False; the sparse optimizer uses that flag to skip
    them entirely.  screen_grad_norm is the norm of the screen-space center
    gradient (a densification signal for gradient-magnitude heuristics).
    """

    positions: np.ndarray       # (N, 3)
    sizes: np.ndarray           # (N, 3)
    rotations: np.ndarray       # (N, 4)
    opacity_logits: np.ndarray  # (N,)
    sh_coeffs: np.ndarray       # (N, K, 3)
    touched: np.ndarray         # (N,) bool
    screen_grad_norm: np.ndarray  # (N,)

    @classmethod
    def zeros(cls, n: int, sh_k: int) -> "ParamGradients":
        return cls(
            positions=np.zeros((n, 3)),
            sizes=np.zeros((n, 3)),
            rotations=np.zeros((n, 4)),
            opacity_logits=np.zeros(n),
            sh_coeffs=np.zeros((n, sh_k, 3)),
            touched=np.zeros(n, dtype=bool),
            screen_grad_norm=np.zeros(n),
        )


@dataclass
class _ViewData:
    """Everything the kernels need for one (cloud, camera) pair, depth-ordered."""

    order: np.ndarray        # (M,) global indices, front to back
    t_cam: np.ndarray        # (M, 3)
    means_uv: np.ndarray     # (M, 2)
    jac: np.ndarray          # (M, 2, 3) pinhole Jacobian J
    jac_rot: np.ndarray      # (M, 2, 3) J @ R_world2cam
    cov2d: np.ndarray        # (M, 2, 2) incl. low-pass
    conic: np.ndarray        # (M, 3) packed inverse (a, b, c)
    opacities: np.ndarray    # (M,)
    colors: np.ndarray       # (M, 3) clamped to [0, 1]
    color_open: np.ndarray   # (M, 3) bool, True where the clamp was inactive
    basis: np.ndarray        # (M, K)
    dirs: np.ndarray         # (M, 3) unit view directions
    dist: np.ndarray         # (M,) center-to-camera distances
    bbox: np.ndarray         # (M, 4) int64 half-open pixel ranges
    visible: np.ndarray      # (N,) bool


def _apply_thread_count(config: RenderConfig) -> None:
    if config.n_threads is not None:
        numba.set_num_threads(max(1, min(int(config.n_threads),
                                         numba.config.NUMBA_NUM_THREADS)))


def _prepare_view(cloud: GaussianCloud, camera: Camera, config: RenderConfig) -> _ViewData:
    """Cull, project, sort and color the cloud for one camera."""
    n = cloud.count
    w, h = camera.width, camera.height
    rot = camera.rotation

    t_all = cloud.positions @ rot.T + camera.translation
    z = t_all[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = camera.fx * t_all[:, 0] / z + camera.cx
        v = camera.fy * t_all[:, 1] / z + camera.cy
    margin_u = (config.frustum_guard - 1.0) * 0.5 * w
    margin_v = (config.frustum_guard - 1.0) * 0.5 * h
    visible = (z > config.near) \
        & (u >= -margin_u) & (u <= w - 1 + margin_u) \
        & (v >= -margin_v) & (v <= h - 1 + margin_v)
    idx = np.flatnonzero(visible)
    order = idx[np.argsort(z[idx], kind="stable")]
    m = order.size

    t_cam = t_all[order]
    means_uv = np.stack([u[order], v[order]], axis=1)

    jac = projection_jacobian(t_cam, camera.fx, camera.fy)
    jac_rot = jac @ rot
    cov_world = build_covariance(cloud.sizes[order], cloud.rotations[order])
    cov2d = np.einsum("mij,mjk,mlk->mil", jac_rot, cov_world, jac_rot)
    cov2d[:, 0, 0] += config.lowpass
    cov2d[:, 1, 1] += config.lowpass

    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    det = a * c - b * b
    conic = np.stack([c / det, -b / det, a / det], axis=1)

    opacities = 1.0 / (1.0 + np.exp(-cloud.opacity_logits[order]))

    diff = cloud.positions[order] - camera.center
    dist = np.linalg.norm(diff, axis=1)
    dirs = diff / dist[:, None] if m else diff
    basis = sh_basis(dirs, cloud.sh_degree)
    rgb_pre = 0.5 + np.einsum("mk,mkc->mc", basis, cloud.sh_coeffs[order])
    color_open = (rgb_pre > 0.0) & (rgb_pre < 1.0)
    colors = np.clip(rgb_pre, 0.0, 1.0)

    rx = 3.0 * np.sqrt(a)
    ry = 3.0 * np.sqrt(c)
    bbox = np.empty((m, 4), dtype=np.int64)
    bbox[:, 0] = np.clip(np.ceil(means_uv[:, 1] - ry), 0, h).astype(np.int64)
    bbox[:, 1] = np.clip(np.floor(means_uv[:, 1] + ry) + 1, 0, h).astype(np.int64)
    bbox[:, 2] = np.clip(np.ceil(means_uv[:, 0] - rx), 0, w).astype(np.int64)
    bbox[:, 3] = np.clip(np.floor(means_uv[:, 0] + rx) + 1, 0, w).astype(np.int64)

    return _ViewData(order=order, t_cam=t_cam, means_uv=np.ascontiguousarray(means_uv),
                     jac=jac, jac_rot=jac_rot, cov2d=cov2d,
                     conic=np.ascontiguousarray(conic), opacities=np.ascontiguousarray(opacities),
                     colors=np.ascontiguousarray(colors), color_open=color_open,
                     basis=basis, dirs=dirs, dist=dist, bbox=bbox, visible=visible)


def _check_background(background: Optional[np.ndarray]) -> np.ndarray:
    if background is None:
        return np.zeros(3, dtype=FLOAT)
    bg = np.asarray(background, dtype=FLOAT)
    if bg.shape != (3,) or not np.all(np.isfinite(bg)):
        raise InvalidParameterError("background must be a finite RGB triple")
    return bg


def render_forward(cloud: GaussianCloud, camera: Camera,
                   background: Optional[np.ndarray] = None,
                   gt_image: Optional[np.ndarray] = None,
                   config: Optional[RenderConfig] = None,
                   ) -> tuple[RenderOutput, RenderAux]:
    """Render ``cloud`` through ``camera``.

    Args:
        background: RGB composited under the remaining transmittance
            (default black).
        gt_image: optional (H, W, 3) reference; when given, the aux output
            carries each Gaussian's compositing-weighted squared color error
            against it (the raw rendered image is compared, before any
            exposure model).
        config: rasterizer settings (default :data:`DEFAULT_CONFIG`).

    Returns:
        (RenderOutput, RenderAux).  An empty cloud yields the pure background
        with unit transmittance everywhere.

    Raises:
        InvalidParameterError: non-finite parameters, or a gt_image whose
            shape does not match the camera.
    """
    config = config or DEFAULT_CONFIG
    config.validate()
    cloud.validate()
    bg = _check_background(background)
    h, w = camera.height, camera.width
    if gt_image is not None:
        gt_image = np.asarray(gt_image, dtype=FLOAT)
        if gt_image.shape != (h, w, 3):
            raise InvalidParameterError(
                f"gt_image shape {gt_image.shape} does not match camera {h}x{w}")

    view = _prepare_view(cloud, camera, config)
    m = view.order.size

    image = np.zeros((h, w, 3), dtype=FLOAT)
    trans = np.ones((h, w), dtype=FLOAT)
    stop_order = np.full((h, w), m, dtype=np.int64)
    n = cloud.count
    weight_sum = np.zeros(n, dtype=FLOAT)
    se_sum = np.zeros(n, dtype=FLOAT)
    footprint = np.zeros(n, dtype=np.int64)

    if m:
        _apply_thread_count(config)
        wsum_rows = np.zeros((h, m), dtype=FLOAT)
        fp_rows = np.zeros((h, m), dtype=np.int64)
        _kernels.composite_forward(
            view.means_uv, view.conic, view.opacities, view.colors, view.bbox,
            config.alpha_max, config.transmittance_stop,
            image, trans, stop_order, wsum_rows, fp_rows)
        weight_sum[view.order] = wsum_rows.sum(axis=0)
        footprint[view.order] = fp_rows.sum(axis=0)

    image += trans[:, :, None] * bg

    if gt_image is not None and m:
        resid_sq = np.ascontiguousarray(((image - gt_image) ** 2).sum(axis=2))
        se_rows = np.zeros((h, m), dtype=FLOAT)
        _kernels.accumulate_error(
            view.means_uv, view.conic, view.opacities, view.bbox,
            config.alpha_max, config.transmittance_stop, resid_sq, se_rows)
        se_sum[view.order] = se_rows.sum(axis=0)

    output = RenderOutput(image=image, final_transmittance=trans)
    aux = RenderAux(weight_sum=weight_sum, se_sum=se_sum, footprint=footprint,
                    visible=view.visible, stop_order=stop_order)
    return output, aux


def render_backward(cloud: GaussianCloud, camera: Camera,
                    output: RenderOutput, aux: RenderAux,
                    grad_image: np.ndarray,
                    background: Optional[np.ndarray] = None,
                    config: Optional[RenderConfig] = None,
                    ) -> ParamGradients:
    """Pull ``grad_image`` (dLoss/dimage) back to cloud-parameter gradients.

    ``output`` and ``aux`` must come from :func:`render_forward` on the same
    cloud/camera/background/config — the reverse sweep reuses the recorded
    final transmittance and early-stop bookkeeping instead of re-rendering.

    Gradients are exact for the rendered function except across its flat
    regions: the alpha ceiling, color clamp and SH clamp zero the respective
    partials, and culled Gaussians get all-zero rows with touched == False.

    Raises:
        InvalidParameterError: bad grad_image shape / non-finite values, or
            aux missing its compositing bookkeeping.
    """
    config = config or DEFAULT_CONFIG
    config.validate()
    cloud.validate()
    bg = _check_background(background)
    h, w = camera.height, camera.width
    grad_image = np.ascontiguousarray(grad_image, dtype=FLOAT)
    if grad_image.shape != (h, w, 3):
        raise InvalidParameterError(
            f"grad_image shape {grad_image.shape} does not match camera {h}x{w}")
    if not np.all(np.isfinite(grad_image)):
        raise InvalidParameterError("non-finite grad_image")
    if aux.stop_order is None:
        raise InvalidParameterError("aux is missing compositing bookkeeping "
                                    "(was it produced by render_forward?)")

    n = cloud.count
    k = cloud.sh_coeffs.shape[1]
    grads = ParamGradients.zeros(n, k)
    grads.touched = aux.footprint > 0

    view = _prepare_view(cloud, camera, config)
    m = view.order.size
    if m == 0:
        return grads

    _apply_thread_count(config)
    dmean_rows = np.zeros((h, m, 2), dtype=FLOAT)
    dconic_rows = np.zeros((h, m, 3), dtype=FLOAT)
    dopac_rows = np.zeros((h, m), dtype=FLOAT)
    dcolor_rows = np.zeros((h, m, 3), dtype=FLOAT)
    _kernels.composite_backward(
        view.means_uv, view.conic, view.opacities, view.colors, view.bbox, bg,
        config.alpha_max, config.transmittance_stop,
        output.final_transmittance, aux.stop_order, grad_image,
        dmean_rows, dconic_rows, dopac_rows, dcolor_rows)
    dmean = dmean_rows.sum(axis=0)
    dconic = dconic_rows.sum(axis=0)
    dopac = dopac_rows.sum(axis=0)
    dcolor = dcolor_rows.sum(axis=0)

    idx = view.order

    # --- screen covariance -> world covariance, via the conic inverse ------
    conic_full = np.empty((m, 2, 2), dtype=FLOAT)
    conic_full[:, 0, 0] = view.conic[:, 0]
    conic_full[:, 0, 1] = conic_full[:, 1, 0] = view.conic[:, 1]
    conic_full[:, 1, 1] = view.conic[:, 2]
    dconic_full = np.empty((m, 2, 2), dtype=FLOAT)
    dconic_full[:, 0, 0] = dconic[:, 0]
    dconic_full[:, 0, 1] = dconic_full[:, 1, 0] = 0.5 * dconic[:, 1]
    dconic_full[:, 1, 1] = dconic[:, 2]
    dcov2d = -np.einsum("mij,mjk,mkl->mil", conic_full, dconic_full, conic_full)

    cov_world = build_covariance(cloud.sizes[idx], cloud.rotations[idx])
    dcov_world = np.einsum("mji,mjk,mkl->mil", view.jac_rot, dcov2d, view.jac_rot)
    djac_rot = 2.0 * np.einsum("mij,mjk,mkl->mil", dcov2d, view.jac_rot, cov_world)
    djac = djac_rot @ camera.rotation.T

    # --- camera-frame position gradient ------------------------------------
    dt = np.einsum("mji,mj->mi", view.jac, dmean)
    tx, ty, tz = view.t_cam[:, 0], view.t_cam[:, 1], view.t_cam[:, 2]
    fx, fy = camera.fx, camera.fy
    inv_z2 = 1.0 / (tz * tz)
    dt[:, 0] += djac[:, 0, 2] * (-fx * inv_z2)
    dt[:, 1] += djac[:, 1, 2] * (-fy * inv_z2)
    dt[:, 2] += (djac[:, 0, 0] * (-fx * inv_z2)
                 + djac[:, 1, 1] * (-fy * inv_z2)
                 + djac[:, 0, 2] * (2.0 * fx * tx * inv_z2 / tz)
                 + djac[:, 1, 2] * (2.0 * fy * ty * inv_z2 / tz))
    dpos = dt @ camera.rotation

    # --- color: SH coefficients and the view-direction path ----------------
    dcolor_open = dcolor * view.color_open
    dsh = view.basis[:, :, None] * dcolor_open[:, None, :]
    ddir = np.einsum("mkc,mc,mkj->mj",
                     cloud.sh_coeffs[idx], dcolor_open,
                     sh_basis_gradient(view.dirs, cloud.sh_degree))
    proj = np.eye(3, dtype=FLOAT)[None] - view.dirs[:, :, None] * view.dirs[:, None, :]
    dpos += np.einsum("mij,mj->mi", proj, ddir) / view.dist[:, None]

    # --- world covariance -> sizes and rotations ----------------------------
    rmats = quat_to_rotmat(cloud.rotations[idx])
    sizes = cloud.sizes[idx]
    inner = np.einsum("mji,mjk,mkl->mil", rmats, dcov_world, rmats)
    dsizes = 2.0 * sizes * np.einsum("mii->mi", inner)
    drot_mat = 2.0 * np.einsum("mij,mjk,mk->mik", dcov_world, rmats, sizes ** 2)
    dquat = np.einsum("mij,mqij->mq", drot_mat, quat_rotmat_jacobian(cloud.rotations[idx]))

    # --- opacity through the sigmoid ----------------------------------------
    dlogit = dopac * view.opacities * (1.0 - view.opacities)

    grads.positions[idx] = dpos
    grads.sizes[idx] = dsizes
    grads.rotations[idx] = dquat
    grads.opacity_logits[idx] = dlogit
    grads.sh_coeffs[idx] = dsh
    grads.screen_grad_norm[idx] = np.linalg.norm(dmean, axis=1)
    return grads
