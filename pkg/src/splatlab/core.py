"""Domain types and geometric primitives for 3D Gaussian splatting.

This module holds the parameter containers (:class:`GaussianCloud`,
:class:`Camera`) and the pure-numpy geometry that everything else builds on:
quaternion-to-rotation conversion (with the Jacobian needed by the backward
pass), 3D covariance assembly, perspective projection of means and
covariances (EWA-style first-order linearization), real spherical-harmonics
evaluation, and stable depth ordering.

All arrays are float64.  Functions are pure: they never mutate their inputs
unless the docstring says so.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

FLOAT = np.float64

# Real spherical-harmonics basis constants, graphics ordering (band, then m).
SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)

MAX_SH_DEGREE = 3


class InvalidParameterError(ValueError):
    """A numeric argument is out of its documented domain (NaN, wrong shape, ...)."""


class ConfigurationError(ValueError):
    """A configuration combination is contradictory or incomplete."""


class InternalConsistencyError(RuntimeError):
    """Cross-structure bookkeeping broke an invariant (array lengths, index maps)."""


class FormatError(ValueError):
    """A file being read does not match its documented layout."""


def sh_coeff_count(degree: int) -> int:
    """Number of SH basis functions for a maximum band ``degree`` (inclusive)."""
    if not 0 <= degree <= MAX_SH_DEGREE:
        raise InvalidParameterError(f"SH degree must be in [0, {MAX_SH_DEGREE}], got {degree}")
    return (degree + 1) ** 2


def sh_degree_from_count(count: int) -> int:
    """Inverse of :func:`sh_coeff_count`; raises if ``count`` is not a valid (L+1)^2."""
    degree = int(round(np.sqrt(count))) - 1
    if degree < 0 or degree > MAX_SH_DEGREE or (degree + 1) ** 2 != count:
        raise InvalidParameterError(f"{count} is not a spherical-harmonics coefficient count")
    return degree


# ---------------------------------------------------------------------------
# quaternions
# ---------------------------------------------------------------------------

def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Convert quaternions ``(w, x, y, z)`` to rotation matrices.

    ``q`` has shape (..., 4) and is normalized internally, so callers may pass
    raw (un-normalized) optimization variables.  Returns shape (..., 3, 3).

    Raises:
        InvalidParameterError: if any quaternion is non-finite or has
            (near-)zero norm.
    """
    q = np.asarray(q, dtype=FLOAT)
    if q.shape[-1] != 4:
        raise InvalidParameterError(f"quaternion last dim must be 4, got {q.shape}")
    if not np.all(np.isfinite(q)):
        raise InvalidParameterError("non-finite quaternion")
    norm = np.linalg.norm(q, axis=-1)
    if np.any(norm < 1e-12):
        raise InvalidParameterError("zero-norm quaternion cannot be normalized")
    w, x, y, z = np.moveaxis(q / norm[..., None], -1, 0)

    out = np.empty(q.shape[:-1] + (3, 3), dtype=FLOAT)
    out[..., 0, 0] = 1 - 2 * (y * y + z * z)
    out[..., 0, 1] = 2 * (x * y - w * z)
    out[..., 0, 2] = 2 * (x * z + w * y)
    out[..., 1, 0] = 2 * (x * y + w * z)
    out[..., 1, 1] = 1 - 2 * (x * x + z * z)
    out[..., 1, 2] = 2 * (y * z - w * x)
    out[..., 2, 0] = 2 * (x * z - w * y)
    out[..., 2, 1] = 2 * (y * z + w * x)
    out[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return out


def quat_rotmat_jacobian(q: np.ndarray) -> np.ndarray:
    """Jacobian of :func:`quat_to_rotmat` w.r.t. the *raw* quaternion.

    Returns shape (..., 4, 3, 3): entry [..., k, i, j] is dR_ij/dq_k, where
    q is the un-normalized input.  The internal-normalization chain rule
    (I - u u^T)/|q| is included, so this is the Jacobian the optimizer needs
    when rotations are stored un-normalized.
    """
    q = np.asarray(q, dtype=FLOAT)
    norm = np.linalg.norm(q, axis=-1)
    if np.any(norm < 1e-12):
        raise InvalidParameterError("zero-norm quaternion cannot be normalized")
    u = q / norm[..., None]
    w, x, y, z = np.moveaxis(u, -1, 0)

    # dR/du for the unit quaternion u = (w, x, y, z).
    dRdu = np.zeros(q.shape[:-1] + (4, 3, 3), dtype=FLOAT)
    zero = np.zeros_like(w)
    dRdu[..., 0, :, :] = 2 * np.stack(
        [np.stack([zero, -z, y], axis=-1),
         np.stack([z, zero, -x], axis=-1),
         np.stack([-y, x, zero], axis=-1)], axis=-2)
    dRdu[..., 1, :, :] = 2 * np.stack(
        [np.stack([zero, y, z], axis=-1),
         np.stack([y, -2 * x, -w], axis=-1),
         np.stack([z, w, -2 * x], axis=-1)], axis=-2)
    dRdu[..., 2, :, :] = 2 * np.stack(
        [np.stack([-2 * y, x, w], axis=-1),
         np.stack([x, zero, z], axis=-1),
         np.stack([-w, z, -2 * y], axis=-1)], axis=-2)
    dRdu[..., 3, :, :] = 2 * np.stack(
        [np.stack([-2 * z, -w, x], axis=-1),
         np.stack([w, -2 * z, y], axis=-1),
         np.stack([x, y, zero], axis=-1)], axis=-2)

    # Chain through normalization: du/dq = (I - u u^T) / |q|.
    proj = (np.eye(4, dtype=FLOAT) - u[..., :, None] * u[..., None, :]) / norm[..., None, None]
    return np.einsum("...kq,...qij->...kij", proj, dRdu)


# ---------------------------------------------------------------------------
# containers
# ---------------------------------------------------------------------------

@dataclass
class GaussianCloud:
    """A cloud of N anisotropic 3D Gaussians.

    Attributes:
        positions: (N, 3) centers, world frame.
        sizes: (N, 3) per-axis standard deviations, world units, linear
            (not log) parameterization; must stay positive.
        rotations: (N, 4) quaternions (w, x, y, z); consumers normalize.
        opacity_logits: (N,) opacity in logit space; opacity = sigmoid(logit).
        sh_coeffs: (N, K, 3) spherical-harmonics coefficients per color
            channel, K = (degree+1)^2.  The DC band encodes color via
            rgb = 0.5 + SH_C0 * coeff.
    """

    positions: np.ndarray
    sizes: np.ndarray
    rotations: np.ndarray
    opacity_logits: np.ndarray
    sh_coeffs: np.ndarray

    def __post_init__(self) -> None:
        self.positions = np.ascontiguousarray(self.positions, dtype=FLOAT)
        self.sizes = np.ascontiguousarray(self.sizes, dtype=FLOAT)
        self.rotations = np.ascontiguousarray(self.rotations, dtype=FLOAT)
        self.opacity_logits = np.ascontiguousarray(self.opacity_logits, dtype=FLOAT)
        self.sh_coeffs = np.ascontiguousarray(self.sh_coeffs, dtype=FLOAT)

    @property
    def count(self) -> int:
        return self.positions.shape[0]

    @property
    def sh_degree(self) -> int:
        return sh_degree_from_count(self.sh_coeffs.shape[1])

    @property
    def opacities(self) -> np.ndarray:
        """(N,) opacities in (0, 1), the sigmoid of the stored logits."""
        return 1.0 / (1.0 + np.exp(-self.opacity_logits))

    @classmethod
    def empty(cls, sh_degree: int = 1) -> "GaussianCloud":
        k = sh_coeff_count(sh_degree)
        return cls(
            positions=np.zeros((0, 3)),
            sizes=np.zeros((0, 3)),
            rotations=np.zeros((0, 4)),
            opacity_logits=np.zeros(0),
            sh_coeffs=np.zeros((0, k, 3)),
        )

    def validate(self) -> None:
        """Check structural invariants; raises InternalConsistencyError/InvalidParameterError."""
        n = self.count
        shapes = {
            "positions": (n, 3),
            "sizes": (n, 3),
            "rotations": (n, 4),
            "opacity_logits": (n,),
        }
        for name, want in shapes.items():
            got = getattr(self, name).shape
            if got != want:
                raise InternalConsistencyError(f"{name} has shape {got}, expected {want}")
        if self.sh_coeffs.shape[0] != n or self.sh_coeffs.ndim != 3 or self.sh_coeffs.shape[2] != 3:
            raise InternalConsistencyError(f"sh_coeffs has shape {self.sh_coeffs.shape}")
        sh_degree_from_count(self.sh_coeffs.shape[1])
        for name in ("positions", "sizes", "rotations", "opacity_logits", "sh_coeffs"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise InvalidParameterError(f"non-finite values in {name}")
        if n and np.any(self.sizes <= 0):
            raise InvalidParameterError("sizes must be positive")
        if n:
            norms = np.linalg.norm(self.rotations, axis=1)
            if np.any(norms < 1e-12):
                raise InvalidParameterError("zero-norm rotation quaternion")

    def copy(self) -> "GaussianCloud":
        return GaussianCloud(
            self.positions.copy(), self.sizes.copy(), self.rotations.copy(),
            self.opacity_logits.copy(), self.sh_coeffs.copy())

    def take(self, indices: np.ndarray) -> "GaussianCloud":
        """New cloud holding rows ``indices`` (in the given order)."""
        idx = np.asarray(indices)
        return GaussianCloud(
            self.positions[idx], self.sizes[idx], self.rotations[idx],
            self.opacity_logits[idx], self.sh_coeffs[idx])

    def remove(self, indices: np.ndarray) -> "GaussianCloud":
        """New cloud with rows ``indices`` dropped; survivor order preserved."""
        keep = np.ones(self.count, dtype=bool)
        keep[np.asarray(indices, dtype=np.int64)] = False
        return self.take(np.flatnonzero(keep))

    def append(self, other: "GaussianCloud") -> "GaussianCloud":
        """New cloud = self rows followed by ``other`` rows."""
        if other.sh_coeffs.shape[1] != self.sh_coeffs.shape[1]:
            raise InternalConsistencyError("SH degree mismatch between clouds")
        return GaussianCloud(
            np.concatenate([self.positions, other.positions]),
            np.concatenate([self.sizes, other.sizes]),
            np.concatenate([self.rotations, other.rotations]),
            np.concatenate([self.opacity_logits, other.opacity_logits]),
            np.concatenate([self.sh_coeffs, other.sh_coeffs]))


@dataclass
class Camera:
    """A calibrated pinhole camera, optionally paired with a ground-truth image.

    ``world_to_camera`` is a 4x4 rigid transform; camera frame looks down +z,
    x right, y down.  Pixel (row v, col u) samples the image plane at integer
    coordinates: u = fx * (x/z) + cx, v = fy * (y/z) + cy.
    """

    camera_id: int
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    world_to_camera: np.ndarray
    gt_image: Optional[np.ndarray] = None
    image_name: Optional[str] = None

    def __post_init__(self) -> None:
        self.world_to_camera = np.ascontiguousarray(self.world_to_camera, dtype=FLOAT)
        if self.world_to_camera.shape != (4, 4):
            raise InvalidParameterError(
                f"world_to_camera must be 4x4, got {self.world_to_camera.shape}")
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidParameterError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise InvalidParameterError("image dimensions must be positive")
        if self.gt_image is not None:
            self.gt_image = np.ascontiguousarray(self.gt_image, dtype=FLOAT)
            if self.gt_image.shape != (self.height, self.width, 3):
                raise InvalidParameterError(
                    f"gt_image shape {self.gt_image.shape} does not match "
                    f"camera {self.height}x{self.width}")

    @property
    def rotation(self) -> np.ndarray:
        """(3, 3) world-to-camera rotation block."""
        return self.world_to_camera[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        """(3,) world-to-camera translation block."""
        return self.world_to_camera[:3, 3]

    @property
    def center(self) -> np.ndarray:
        """(3,) camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    def validate(self) -> None:
        r = self.rotation
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-6):
            raise InvalidParameterError("world_to_camera rotation block is not orthonormal")
        if not np.allclose(self.world_to_camera[3], [0, 0, 0, 1], atol=1e-9):
            raise InvalidParameterError("world_to_camera last row must be [0, 0, 0, 1]")

    def camera_frame(self, points: np.ndarray) -> np.ndarray:
        """Transform (N, 3) world points into the camera frame."""
        pts = np.asarray(points, dtype=FLOAT)
        return pts @ self.rotation.T + self.translation


def look_at_camera(camera_id: int, eye: np.ndarray, target: np.ndarray,
                   width: int, height: int, focal: float,
                   up: Sequence[float] = (0.0, 0.0, 1.0)) -> Camera:
    """Build a camera at ``eye`` looking at ``target`` (principal point centered).

    ``up`` is the world up hint; must not be parallel to the view direction.
    """
    eye = np.asarray(eye, dtype=FLOAT)
    fwd = np.asarray(target, dtype=FLOAT) - eye
    n = np.linalg.norm(fwd)
    if n < 1e-12:
        raise InvalidParameterError("look_at: eye and target coincide")
    fwd = fwd / n
    upv = np.asarray(up, dtype=FLOAT)
    right = np.cross(fwd, upv)
    rn = np.linalg.norm(right)
    if rn < 1e-9:
        raise InvalidParameterError("look_at: up is parallel to the view direction")
    right = right / rn
    down = np.cross(fwd, right)  # +y in camera frame points "down" in world
    w2c = np.eye(4, dtype=FLOAT)
    w2c[:3, :3] = np.stack([right, down, fwd])
    w2c[:3, 3] = -w2c[:3, :3] @ eye
    return Camera(camera_id=camera_id, width=width, height=height,
                  fx=focal, fy=focal, cx=(width - 1) / 2.0, cy=(height - 1) / 2.0,
                  world_to_camera=w2c)


@dataclass
class Gaussian2D:
    """A single Gaussian projected into one camera: the renderer's unit of work."""

    mean_uv: np.ndarray       # (2,) pixel coordinates (u, v)
    cov2d: np.ndarray         # (2, 2) screen-space covariance, low-pass included
    depth: float              # camera-frame z
    view_color: np.ndarray    # (3,) SH-evaluated color for this view, in [0, 1]


# ---------------------------------------------------------------------------
# covariance and projection
# ---------------------------------------------------------------------------

def build_covariance(sizes: np.ndarray, rotations: np.ndarray) -> np.ndarray:
    """World-frame covariance R diag(sizes^2) R^T from sizes and quaternions.

    Broadcasts: sizes (..., 3) with rotations (..., 4) gives (..., 3, 3).

    Raises:
        InvalidParameterError: on non-finite input.
    """
    sizes = np.asarray(sizes, dtype=FLOAT)
    if not np.all(np.isfinite(sizes)):
        raise InvalidParameterError("non-finite sizes")
    rot = quat_to_rotmat(rotations)
    scaled = rot * (sizes[..., None, :] ** 2)           # R @ diag(s^2)
    return np.einsum("...ij,...kj->...ik", scaled, rot)  # ... @ R^T


def projection_jacobian(t_cam: np.ndarray, fx: float, fy: float) -> np.ndarray:
    """Jacobian of the pinhole map (u, v) = (fx x/z + cx, fy y/z + cy) at ``t_cam``.

    ``t_cam`` is (..., 3) in the camera frame with z > 0; returns (..., 2, 3).
    """
    t = np.asarray(t_cam, dtype=FLOAT)
    x, y, z = t[..., 0], t[..., 1], t[..., 2]
    J = np.zeros(t.shape[:-1] + (2, 3), dtype=FLOAT)
    J[..., 0, 0] = fx / z
    J[..., 0, 2] = -fx * x / (z * z)
    J[..., 1, 1] = fy / z
    J[..., 1, 2] = -fy * y / (z * z)
    return J


def project_to_2d(position: np.ndarray, covariance3d: np.ndarray, camera: Camera,
                  lowpass: float = 0.09, near: float = 0.01,
                  view_color: Optional[np.ndarray] = None) -> Optional[Gaussian2D]:
    """Project one world-frame Gaussian into ``camera``.

    Linearizes the perspective map at the mean (EWA): with world covariance
    S and world-to-camera rotation W, the screen covariance is
    (J W) S (J W)^T + lowpass * I.  The low-pass floor keeps every splat at
    least ~a pixel wide so sub-pixel Gaussians cannot alias away.

    Returns None if the center is behind the near plane (z <= near).

    Raises:
        InvalidParameterError: on non-finite inputs.
    """
    position = np.asarray(position, dtype=FLOAT)
    covariance3d = np.asarray(covariance3d, dtype=FLOAT)
    if not (np.all(np.isfinite(position)) and np.all(np.isfinite(covariance3d))):
        raise InvalidParameterError("non-finite projection input")
    t = camera.camera_frame(position[None, :])[0]
    if t[2] <= near:
        return None
    uv = np.array([camera.fx * t[0] / t[2] + camera.cx,
                   camera.fy * t[1] / t[2] + camera.cy], dtype=FLOAT)
    JW = projection_jacobian(t, camera.fx, camera.fy) @ camera.rotation
    cov2d = JW @ covariance3d @ JW.T + lowpass * np.eye(2, dtype=FLOAT)
    color = np.zeros(3, dtype=FLOAT) if view_color is None else np.asarray(view_color, dtype=FLOAT)
    return Gaussian2D(mean_uv=uv, cov2d=cov2d, depth=float(t[2]), view_color=color)


# ---------------------------------------------------------------------------
# spherical harmonics
# ---------------------------------------------------------------------------

def sh_basis(directions: np.ndarray, degree: int) -> np.ndarray:
    """Real SH basis values for unit ``directions`` (..., 3); returns (..., K)."""
    k = sh_coeff_count(degree)
    d = np.asarray(directions, dtype=FLOAT)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    out = np.empty(d.shape[:-1] + (k,), dtype=FLOAT)
    out[..., 0] = SH_C0
    if degree >= 1:
        out[..., 1] = -SH_C1 * y
        out[..., 2] = SH_C1 * z
        out[..., 3] = -SH_C1 * x
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        out[..., 4] = SH_C2[0] * x * y
        out[..., 5] = SH_C2[1] * y * z
        out[..., 6] = SH_C2[2] * (2 * zz - xx - yy)
        out[..., 7] = SH_C2[3] * x * z
        out[..., 8] = SH_C2[4] * (xx - yy)
    if degree >= 3:
        xx, yy, zz = x * x, y * y, z * z
        out[..., 9] = SH_C3[0] * y * (3 * xx - yy)
        out[..., 10] = SH_C3[1] * x * y * z
        out[..., 11] = SH_C3[2] * y * (4 * zz - xx - yy)
        out[..., 12] = SH_C3[3] * z * (2 * zz - 3 * xx - 3 * yy)
        out[..., 13] = SH_C3[4] * x * (4 * zz - xx - yy)
        out[..., 14] = SH_C3[5] * z * (xx - yy)
        out[..., 15] = SH_C3[6] * x * (xx - 3 * yy)
    return out


def sh_basis_gradient(directions: np.ndarray, degree: int) -> np.ndarray:
    """d(basis)/d(direction) for unit directions: shape (..., K, 3).

    The derivative is of the polynomial basis w.r.t. the raw components; the
    projection onto the unit sphere's tangent space is the caller's job.
    """
    k = sh_coeff_count(degree)
    d = np.asarray(directions, dtype=FLOAT)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    zero = np.zeros_like(x)
    g = np.zeros(d.shape[:-1] + (k, 3), dtype=FLOAT)
    if degree >= 1:
        g[..., 1, 1] = -SH_C1
        g[..., 2, 2] = SH_C1
        g[..., 3, 0] = -SH_C1
    if degree >= 2:
        g[..., 4, 0] = SH_C2[0] * y
        g[..., 4, 1] = SH_C2[0] * x
        g[..., 5, 1] = SH_C2[1] * z
        g[..., 5, 2] = SH_C2[1] * y
        g[..., 6, 0] = SH_C2[2] * (-2 * x)
        g[..., 6, 1] = SH_C2[2] * (-2 * y)
        g[..., 6, 2] = SH_C2[2] * (4 * z)
        g[..., 7, 0] = SH_C2[3] * z
        g[..., 7, 2] = SH_C2[3] * x
        g[..., 8, 0] = SH_C2[4] * (2 * x)
        g[..., 8, 1] = SH_C2[4] * (-2 * y)
    if degree >= 3:
        g[..., 9, 0] = SH_C3[0] * 6 * x * y
        g[..., 9, 1] = SH_C3[0] * (3 * x * x - 3 * y * y)
        g[..., 9, 2] = zero
        g[..., 10, 0] = SH_C3[1] * y * z
        g[..., 10, 1] = SH_C3[1] * x * z
        g[..., 10, 2] = SH_C3[1] * x * y
        g[..., 11, 0] = SH_C3[2] * (-2 * x * y)
        g[..., 11, 1] = SH_C3[2] * (4 * z * z - x * x - 3 * y * y)
        g[..., 11, 2] = SH_C3[2] * (8 * y * z)
        g[..., 12, 0] = SH_C3[3] * (-6 * x * z)
        g[..., 12, 1] = SH_C3[3] * (-6 * y * z)
        g[..., 12, 2] = SH_C3[3] * (6 * z * z - 3 * x * x - 3 * y * y)
        g[..., 13, 0] = SH_C3[4] * (4 * z * z - 3 * x * x - y * y)
        g[..., 13, 1] = SH_C3[4] * (-2 * x * y)
        g[..., 13, 2] = SH_C3[4] * (8 * x * z)
        g[..., 14, 0] = SH_C3[5] * (2 * x * z)
        g[..., 14, 1] = SH_C3[5] * (-2 * y * z)
        g[..., 14, 2] = SH_C3[5] * (x * x - y * y)
        g[..., 15, 0] = SH_C3[6] * (3 * x * x - 3 * y * y)
        g[..., 15, 1] = SH_C3[6] * (-6 * x * y)
        g[..., 15, 2] = zero
    return g


def eval_sh(coeffs: np.ndarray, direction: np.ndarray, degree: Optional[int] = None
            ) -> np.ndarray:
    """Evaluate SH color for view ``direction``; returns RGB clamped to [0, 1].

    ``coeffs`` is (..., K, 3); ``direction`` broadcasts as (..., 3) and is
    normalized internally.  The DC convention adds a 0.5 offset so zero
    coefficients give mid-gray.

    Raises:
        InvalidParameterError: for a zero-length direction or a coefficient
            count that is not (L+1)^2.
    """
    coeffs = np.asarray(coeffs, dtype=FLOAT)
    want = sh_degree_from_count(coeffs.shape[-2])
    if degree is None:
        degree = want
    elif degree != want:
        raise InvalidParameterError(
            f"degree {degree} does not match coefficient count {coeffs.shape[-2]}")
    d = np.asarray(direction, dtype=FLOAT)
    n = np.linalg.norm(d, axis=-1)
    if np.any(n < 1e-12):
        raise InvalidParameterError("zero-length view direction")
    basis = sh_basis(d / n[..., None], degree)
    rgb = 0.5 + np.einsum("...k,...kc->...c", basis, coeffs)
    return np.clip(rgb, 0.0, 1.0)


# ---------------------------------------------------------------------------
# visibility and ordering
# ---------------------------------------------------------------------------

def sort_by_depth(cloud: GaussianCloud, camera: Camera, *,
                  near: float = 0.01, frustum_guard: float = 1.3
                  ) -> np.ndarray:
    """Indices of frustum-visible Gaussians, sorted front-to-back.

    Visibility = camera-frame z > ``near`` and the projected center inside
    the image rectangle grown to ``frustum_guard`` times its size (so
    Gaussians whose center sits just off-screen still composite).  The sort
    is stable: equal depths keep ascending index order, which pins the
    compositing order (and therefore the rendered image) down to bit level.
    """
    if cloud.count == 0:
        return np.zeros(0, dtype=np.int64)
    t = camera.camera_frame(cloud.positions)
    z = t[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = camera.fx * t[:, 0] / z + camera.cx
        v = camera.fy * t[:, 1] / z + camera.cy
    margin_u = (frustum_guard - 1.0) * 0.5 * camera.width
    margin_v = (frustum_guard - 1.0) * 0.5 * camera.height
    visible = (z > near) \
        & (u >= -margin_u) & (u <= camera.width - 1 + margin_u) \
        & (v >= -margin_v) & (v <= camera.height - 1 + margin_v)
    idx = np.flatnonzero(visible)
    return idx[np.argsort(z[idx], kind="stable")]
