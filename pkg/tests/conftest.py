"""Shared test helpers: smooth random scenes and finite-difference checks.

The rasterizer is piecewise smooth: hard edges sit at the 3-sigma ellipse
cutoff (squared Mahalanobis distance = 9), at the 0.99 alpha clamp, at the
[0, 1] color clip, at the transmittance early-stop, and at depth-order ties.
``random_safe_scene`` rejection-samples until every Gaussian/pixel pair is
comfortably away from all of them, so central differences see the same
branch on both sides.
"""

import numpy as np

from splatlab import Camera, GaussianCloud, eval_sh, render_backward, \
    render_forward
from splatlab.core import FLOAT, project_to_2d, build_covariance

SH_C0 = 0.28209479177387814
PARAM_GROUPS = ("positions", "sizes", "rotations", "opacity_logits", "sh_coeffs")


def identity_camera(width=8, height=8, focal=10.0, camera_id=0, gt=None):
    return Camera(camera_id=camera_id, width=width, height=height,
                  fx=focal, fy=focal,
                  cx=(width - 1) / 2.0, cy=(height - 1) / 2.0,
                  world_to_camera=np.eye(4), gt_image=gt)


def _edge_distances(cloud, camera):
    """Min |maha - 9| over pixels and min |alpha - 0.99|, min color margin."""
    us, vs = np.meshgrid(np.arange(camera.width, dtype=FLOAT),
                         np.arange(camera.height, dtype=FLOAT))
    pix = np.stack([us.ravel(), vs.ravel()], axis=1)
    cov3d = build_covariance(cloud.sizes, cloud.rotations)
    edge = np.inf
    alpha_margin = np.inf
    for i in range(cloud.count):
        g = project_to_2d(cloud.positions[i], cov3d[i], camera)
        if g is None:
            return -1.0, -1.0  # behind camera: reject outright
        d = pix - g.mean_uv
        conic = np.linalg.inv(g.cov2d)
        maha = np.einsum("pi,ij,pj->p", d, conic, d)
        edge = min(edge, float(np.min(np.abs(maha - 9.0))))
        o = 1.0 / (1.0 + np.exp(-cloud.opacity_logits[i]))
        alpha_margin = min(alpha_margin, 0.99 - o)
    return edge, alpha_margin


def random_safe_scene(seed, n_gaussians=4, size=8, sh_degree=1, focal=None):
    """A (cloud, camera, target) triple that is locally smooth in every
    parameter: fit for finite-difference gradient checks."""
    focal = 1.25 * size if focal is None else focal
    camera = identity_camera(size, size, focal)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 77)))
    for _ in range(200):
        n = n_gaussians
        span = 0.25 * size * 1.5 / focal  # centers stay well inside the frame
        positions = np.column_stack([
            rng.uniform(-span, span, n),
            rng.uniform(-span, span, n),
            rng.uniform(1.5, 3.0, n),
        ])
        sizes = rng.uniform(0.08, 0.3, (n, 3))
        rotations = rng.normal(size=(n, 4))
        rotations /= np.linalg.norm(rotations, axis=1, keepdims=True)
        logits = rng.uniform(-1.5, 0.8, n)
        k = (sh_degree + 1) ** 2
        sh = rng.normal(scale=0.04, size=(n, k, 3))
        sh[:, 0, :] = (rng.uniform(0.15, 0.85, (n, 3)) - 0.5) / SH_C0
        cloud = GaussianCloud(positions=positions, sizes=sizes,
                              rotations=rotations, opacity_logits=logits,
                              sh_coeffs=sh)

        dirs = positions - camera.center
        colors = eval_sh(sh, dirs)
        if colors.min() < 0.02 or colors.max() > 0.98:
            continue
        z = np.sort(positions[:, 2])
        if n > 1 and np.min(np.diff(z)) < 1e-3:
            continue
        edge, alpha_margin = _edge_distances(cloud, camera)
        if edge < 1e-2 or alpha_margin < 0.06:
            continue
        target = rng.uniform(0.1, 0.9, (size, size, 3))
        return cloud, camera, target
    raise RuntimeError(f"no safe scene found for seed {seed}")


def quadratic_loss_and_grads(cloud, camera, target, background=None):
    """L = 0.5 * sum (render - target)^2 and its parameter gradients."""
    out, aux = render_forward(cloud, camera, background)
    loss = 0.5 * float(np.sum((out.image - target) ** 2))
    grads = render_backward(cloud, camera, out, aux, out.image - target,
                            background)
    return loss, grads


def finite_difference_group_errors(cloud, camera, target, h=1e-5,
                                   background=None):
    """Max relative error per parameter group, analytic vs central FD."""
    _, grads = quadratic_loss_and_grads(cloud, camera, target, background)
    errors = {}
    for group in PARAM_GROUPS:
        arr = getattr(cloud, group)
        analytic = getattr(grads, group)
        worst = 0.0
        for flat in range(arr.size):
            idx = np.unravel_index(flat, arr.shape)
            orig = arr[idx]
            arr[idx] = orig + h
            up, _ = render_forward(cloud, camera, background)
            arr[idx] = orig - h
            dn, _ = render_forward(cloud, camera, background)
            arr[idx] = orig
            fd = (0.5 * np.sum((up.image - target) ** 2)
                  - 0.5 * np.sum((dn.image - target) ** 2)) / (2 * h)
            a = analytic[idx]
            # The FD reference itself carries cancellation noise of about
            # eps * L / (2h) ~= 1e-10 (worse for larger losses), so
            # gradients below ~1e-5 can only be certified absolutely
            # (|a - fd| < tol * 1e-5 = 1e-9), not relatively.
            rel = abs(a - fd) / max(abs(a), abs(fd), 1e-5)
            worst = max(worst, rel)
        errors[group] = worst
    return errors
