"""Reconstruction-precision estimates for Gaussian centers.

Each camera that sees a point constrains it in the two directions
perpendicular to the viewing ray; the depth direction is unconstrained by a
single view.  Modeling the pixel localization noise as sigma_uv pixels, one
camera contributes an information (inverse-covariance) term

    P_c = (f / (z * sigma_uv))^2 * R_c^T diag(1, 1, 0) R_c

with f the mean focal length and z the camera-frame depth.  Terms add over
cameras (independent observations), and the fused matrix is summarized by a
single length scale

    Delta = alpha / sqrt(trace(P)),

the radius at which the optimizer can meaningfully move a center.  Delta
scales position and size updates and floors the sizes so no Gaussian can
shrink below what the cameras can actually resolve.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import FLOAT, Camera, GaussianCloud, InvalidParameterError

DEFAULT_SIGMA_UV = 1.0
DEFAULT_ALPHA = 2.0
DEFAULT_BETA_MIN = 0.5
DEFAULT_NEAR = 0.01


@dataclass
class PrecisionEstimate:
    """Fused localization information for one point."""

    precision: np.ndarray  # (3, 3) information matrix, world frame
    delta: float           # alpha / sqrt(trace), the update scale


def camera_precision_term(camera: Camera, position: np.ndarray,
                          sigma_uv: float = DEFAULT_SIGMA_UV,
                          near: float = DEFAULT_NEAR) -> np.ndarray:
    """One camera's (3, 3) information contribution at ``position``.

    Points at or behind the near plane contribute nothing (zero matrix) —
    a camera cannot localize what it cannot see.

    Raises:
        InvalidParameterError: non-finite position or sigma_uv <= 0.
    """
    position = np.asarray(position, dtype=FLOAT)
    if position.shape != (3,) or not np.all(np.isfinite(position)):
        raise InvalidParameterError("position must be a finite 3-vector")
    if sigma_uv <= 0:
        raise InvalidParameterError("sigma_uv must be positive")
    z = float(camera.camera_frame(position[None, :])[0, 2])
    if z <= near:
        return np.zeros((3, 3), dtype=FLOAT)
    f = 0.5 * (camera.fx + camera.fy)
    gain = (f / (z * sigma_uv)) ** 2
    r_xy = camera.rotation[:2, :]              # rows: camera x and y axes
    return gain * (r_xy.T @ r_xy)              # == R^T diag(1, 1, 0) R


def fuse_precision(cameras: Sequence[Camera], position: np.ndarray,
                   sigma_uv: float = DEFAULT_SIGMA_UV,
                   alpha: float = DEFAULT_ALPHA,
                   near: float = DEFAULT_NEAR) -> PrecisionEstimate:
    """Sum per-camera information terms and derive the update scale Delta.

    If no camera sees the point (zero trace), Delta falls back to the
    single-view pixel footprint at the nearest camera, sigma_uv * z / f,
    so downstream scaling never divides by zero.

    Raises:
        InvalidParameterError: empty camera list.
    """
    if len(cameras) == 0:
        raise InvalidParameterError("fuse_precision needs at least one camera")
    position = np.asarray(position, dtype=FLOAT)
    total = np.zeros((3, 3), dtype=FLOAT)
    for cam in cameras:
        total += camera_precision_term(cam, position, sigma_uv, near)
    tr = float(np.trace(total))
    if tr > 0.0:
        delta = alpha / np.sqrt(tr)
    else:
        dists = [float(np.linalg.norm(position - cam.center)) for cam in cameras]
        i = int(np.argmin(dists))
        f = 0.5 * (cameras[i].fx + cameras[i].fy)
        delta = sigma_uv * max(dists[i], near) / f
    return PrecisionEstimate(precision=total, delta=float(delta))


def deltas_for_cloud(positions: np.ndarray, cameras: Sequence[Camera],
                     sigma_uv: float = DEFAULT_SIGMA_UV,
                     alpha: float = DEFAULT_ALPHA,
                     near: float = DEFAULT_NEAR) -> np.ndarray:
    """Vectorized Delta for every row of ``positions`` (N, 3).

    Uses the identity trace(R^T diag(g, g, 0) R) = 2 g: the full matrices are
    never formed, one pass per camera suffices.  Matches
    :func:`fuse_precision` (including its fallback) to rounding error.
    """
    if len(cameras) == 0:
        raise InvalidParameterError("deltas_for_cloud needs at least one camera")
    positions = np.asarray(positions, dtype=FLOAT)
    n = positions.shape[0]
    trace = np.zeros(n, dtype=FLOAT)
    for cam in cameras:
        z = positions @ cam.rotation[2] + cam.translation[2]
        f = 0.5 * (cam.fx + cam.fy)
        seen = z > near
        trace[seen] += 2.0 * (f / (z[seen] * sigma_uv)) ** 2
    deltas = np.empty(n, dtype=FLOAT)
    ok = trace > 0
    deltas[ok] = alpha / np.sqrt(trace[ok])
    if np.any(~ok):
        centers = np.stack([cam.center for cam in cameras])
        focals = np.array([0.5 * (cam.fx + cam.fy) for cam in cameras])
        for i in np.flatnonzero(~ok):
            d = np.linalg.norm(centers - positions[i], axis=1)
            j = int(np.argmin(d))
            deltas[i] = sigma_uv * max(float(d[j]), near) / focals[j]
    return deltas


def min_size_clamp(cloud: GaussianCloud, deltas: np.ndarray,
                   beta_min: float = DEFAULT_BETA_MIN) -> GaussianCloud:
    """Floor every size at beta_min * Delta, in place; returns the cloud.

    Idempotent: reapplying with the same deltas changes nothing.

    Raises:
        InvalidParameterError: deltas length mismatch or non-positive values.
    """
    deltas = np.asarray(deltas, dtype=FLOAT)
    if deltas.shape != (cloud.count,):
        raise InvalidParameterError(
            f"deltas shape {deltas.shape} does not match cloud of {cloud.count}")
    if cloud.count and (not np.all(np.isfinite(deltas)) or np.any(deltas <= 0)):
        raise InvalidParameterError("deltas must be finite and positive")
    np.maximum(cloud.sizes, beta_min * deltas[:, None], out=cloud.sizes)
    return cloud
