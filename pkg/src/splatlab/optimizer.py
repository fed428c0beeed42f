"""Unbiased sparse Adam over per-Gaussian parameter groups.

Classic Adam divides its running moments by 1 - beta^t to undo the zero
initialization.  That repair is only exact for a parameter updated at every
step; a Gaussian that composites into no pixel for a while would come back
to stale, wrongly-rescaled moments.  The stepper here keeps the moments
unbiased *by construction*: with a per-Gaussian age t (counted in touched
steps only) the moment update uses the blend rate

    a_s(t) = max(1 / t, 1 - beta_s)

so the first touch copies the gradient straight in (t = 1 gives a = 1), the
next few average it, and the rate settles at the usual 1 - beta once
t >= 1 / (1 - beta).  Until then the moment equals the exact arithmetic mean
of the gradients seen so far — no bias, no repair factor, and a Gaussian
born mid-training (a split child) starts cleanly from its inherited state.

Updates for the position and size groups are additionally scaled by the
per-Gaussian reconstruction precision Delta (see :mod:`splatlab.precision`),
which turns the unitless Adam direction into a step in world units the
cameras can actually observe.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np

from .core import (
    FLOAT,
    GaussianCloud,
    InternalConsistencyError,
    InvalidParameterError,
)
from .precision import DEFAULT_BETA_MIN

logger = logging.getLogger(__name__)

DEFAULT_BETA1 = 0.9
DEFAULT_BETA2 = 0.999
DEFAULT_EPSILON = 1e-8

# Parameter-group names, in the order their arrays live on GaussianCloud.
GROUP_NAMES = ("positions", "sizes", "rotations", "opacity_logits", "sh_coeffs")


@dataclass
class ParamGroup:
    """Learning-rate schedule entry for one parameter array."""

    name: str
    learning_rate: float
    scale_by_delta: bool = False


def default_param_groups(position_lr: float = 2e-3,
                         sizes_lr: float = 2e-3,
                         rotation_lr: float = 1e-3,
                         opacity_lr: float = 5e-2,
                         sh_lr: float = 2.5e-3) -> List[ParamGroup]:
    """The trainer's default groups; positions and sizes step in Delta units."""
    return [
        ParamGroup("positions", position_lr, scale_by_delta=True),
        ParamGroup("sizes", sizes_lr, scale_by_delta=True),
        ParamGroup("rotations", rotation_lr),
        ParamGroup("opacity_logits", opacity_lr),
        ParamGroup("sh_coeffs", sh_lr),
    ]


@dataclass
class AdamState:
    """Optimizer state: per-Gaussian age plus first/second moments per group.

    ``ages`` counts how many times each Gaussian has been touched; the
    moments ``g1`` / ``g2`` mirror the shapes of the cloud arrays they track.
    """

    ages: np.ndarray                  # (N,) int64
    g1: Dict[str, np.ndarray]
    g2: Dict[str, np.ndarray]
    beta1: float = DEFAULT_BETA1
    beta2: float = DEFAULT_BETA2
    epsilon: float = DEFAULT_EPSILON
    nan_rejections: int = 0

    @classmethod
    def zeros(cls, cloud: GaussianCloud, beta1: float = DEFAULT_BETA1,
              beta2: float = DEFAULT_BETA2, epsilon: float = DEFAULT_EPSILON
              ) -> "AdamState":
        n = cloud.count
        shapes = {
            "positions": (n, 3),
            "sizes": (n, 3),
            "rotations": (n, 4),
            "opacity_logits": (n,),
            "sh_coeffs": cloud.sh_coeffs.shape,
        }
        return cls(
            ages=np.zeros(n, dtype=np.int64),
            g1={k: np.zeros(s, dtype=FLOAT) for k, s in shapes.items()},
            g2={k: np.zeros(s, dtype=FLOAT) for k, s in shapes.items()},
            beta1=beta1, beta2=beta2, epsilon=epsilon)

    @property
    def count(self) -> int:
        return self.ages.shape[0]

    def check_consistent(self, cloud: Optional[GaussianCloud] = None) -> None:
        """Raise InternalConsistencyError if array lengths disagree."""
        n = self.count
        for name in GROUP_NAMES:
            for moments in (self.g1, self.g2):
                if name not in moments:
                    raise InternalConsistencyError(f"missing moment array {name}")
                if moments[name].shape[0] != n:
                    raise InternalConsistencyError(
                        f"moment {name} tracks {moments[name].shape[0]} Gaussians, "
                        f"ages track {n}")
        if cloud is not None and cloud.count != n:
            raise InternalConsistencyError(
                f"state tracks {n} Gaussians but cloud holds {cloud.count}")


def _blend_rates(ages: np.ndarray, beta: float) -> np.ndarray:
    """a(t) = max(1/t, 1-beta) for integer ages >= 1."""
    return np.maximum(1.0 / ages, 1.0 - beta)


def step_sparse(state: AdamState, cloud: GaussianCloud,
                grads: Mapping[str, np.ndarray] | object,
                touched: np.ndarray,
                deltas: Optional[np.ndarray] = None,
                groups: Optional[Sequence[ParamGroup]] = None,
                *,
                scale_updates: bool = True,
                literal_unnormalized_denominator: bool = False,
                min_size_beta: Optional[float] = DEFAULT_BETA_MIN) -> int:
    """Advance every touched Gaussian by one unbiased Adam step, in place.

    Args:
        grads: mapping (or object with attributes) named like GROUP_NAMES.
        touched: (N,) bool; untouched rows are left bit-identical, their ages
            do not advance.
        deltas: (N,) per-Gaussian precision scales; required when any group
            has scale_by_delta and ``scale_updates`` is on, and for the size
            floor.
        scale_updates: turn off to ignore Delta in the step size (the floor
            still applies when ``min_size_beta`` is set).
        literal_unnormalized_denominator: divide by (g2 + eps) instead of
            sqrt(g2) + eps.  Off by default: the square root keeps the step
            scale-free, which is what lets one learning rate serve the whole
            run.
        min_size_beta: after stepping, floor touched sizes at beta * Delta
            (None skips the floor).

    Returns:
        Number of Gaussians whose update was rejected because a gradient
        contained NaN (their state and parameters stay untouched; the
        occurrence is also counted on ``state.nan_rejections`` and logged).

    Raises:
        InternalConsistencyError: state/cloud/gradient lengths disagree.
        InvalidParameterError: missing deltas, bad touched shape.
    """
    state.check_consistent(cloud)
    n = cloud.count
    touched = np.asarray(touched)
    if touched.shape != (n,) or touched.dtype != np.bool_:
        raise InvalidParameterError("touched must be a (N,) bool mask")
    groups = list(groups) if groups is not None else default_param_groups()

    def grad_of(name: str) -> np.ndarray:
        g = grads[name] if isinstance(grads, Mapping) else getattr(grads, name)
        g = np.asarray(g, dtype=FLOAT)
        if g.shape != state.g1[name].shape:
            raise InternalConsistencyError(
                f"gradient {name} has shape {g.shape}, state expects "
                f"{state.g1[name].shape}")
        return g

    grad_arrays = {g.name: grad_of(g.name) for g in groups}

    needs_delta = (scale_updates and any(g.scale_by_delta for g in groups)) \
        or min_size_beta is not None
    if needs_delta:
        if deltas is None:
            raise InvalidParameterError("this configuration requires deltas")
        deltas = np.asarray(deltas, dtype=FLOAT)
        if deltas.shape != (n,):
            raise InvalidParameterError(
                f"deltas shape {deltas.shape} does not match cloud of {n}")

    idx = np.flatnonzero(touched)
    if idx.size == 0:
        return 0

    # Reject (skip entirely) Gaussians with any NaN gradient this step.
    bad = np.zeros(idx.size, dtype=bool)
    for name in grad_arrays:
        g = grad_arrays[name][idx]
        bad |= np.isnan(g).reshape(idx.size, -1).any(axis=1)
    n_bad = int(bad.sum())
    if n_bad:
        state.nan_rejections += n_bad
        logger.warning("rejecting %d Gaussian update(s) with NaN gradients", n_bad)
        idx = idx[~bad]
        if idx.size == 0:
            return n_bad

    ages = state.ages
    ages[idx] += 1
    a1 = _blend_rates(ages[idx].astype(FLOAT), state.beta1)
    a2 = _blend_rates(ages[idx].astype(FLOAT), state.beta2)

    for group in groups:
        name = group.name
        g = grad_arrays[name][idx]
        extra = g.ndim - 1
        a1e = a1.reshape((-1,) + (1,) * extra)
        a2e = a2.reshape((-1,) + (1,) * extra)
        m1 = state.g1[name]
        m2 = state.g2[name]
        m1[idx] += a1e * (g - m1[idx])
        m2[idx] += a2e * (g * g - m2[idx])
        if literal_unnormalized_denominator:
            step = m1[idx] / (m2[idx] + state.epsilon)
        else:
            step = m1[idx] / (np.sqrt(m2[idx]) + state.epsilon)
        lr = group.learning_rate
        if group.scale_by_delta and scale_updates:
            step = step * deltas[idx].reshape((-1,) + (1,) * extra)
        getattr(cloud, name)[idx] -= lr * step

    # Keep the cloud well-formed: unit-ish quaternions, observable sizes.
    q = cloud.rotations[idx]
    cloud.rotations[idx] = q / np.linalg.norm(q, axis=1, keepdims=True)
    if min_size_beta is not None:
        floor = (min_size_beta * deltas[idx])[:, None]
        cloud.sizes[idx] = np.maximum(cloud.sizes[idx], floor)
    return n_bad


def append_states(state: AdamState, n_new: int) -> AdamState:
    """Grow the state by ``n_new`` fresh rows (age 0, zero moments), in place."""
    if n_new < 0:
        raise InvalidParameterError("n_new must be >= 0")
    state.ages = np.concatenate([state.ages, np.zeros(n_new, dtype=np.int64)])
    for moments in (state.g1, state.g2):
        for name, arr in moments.items():
            pad = np.zeros((n_new,) + arr.shape[1:], dtype=FLOAT)
            moments[name] = np.concatenate([arr, pad])
    return state


def remove_states(state: AdamState, indices: np.ndarray) -> AdamState:
    """Drop rows ``indices``; survivors keep their order. In place."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size and (indices.min() < 0 or indices.max() >= state.count):
        raise InternalConsistencyError("remove_states index out of range")
    keep = np.ones(state.count, dtype=bool)
    keep[indices] = False
    state.ages = state.ages[keep]
    for moments in (state.g1, state.g2):
        for name in moments:
            moments[name] = moments[name][keep]
    return state


def inherit_states(state: AdamState, mother: int, children: Sequence[int],
                   alpha_age: float = 1.0, alpha_moment: float = 0.2) -> AdamState:
    """Seed children's optimizer state from their mother's, in place.

    Children start with age round(alpha_age * mother_age), first moments
    alpha_moment * mother's, and second moments alpha_moment^2 * mother's —
    the damping consistent with "the child sees a fraction alpha_moment of
    the mother's gradient".  alpha_age = alpha_moment = 0 resets children to
    a cold start.

    Raises:
        InternalConsistencyError: out-of-range indices or mother in children.
    """
    n = state.count
    children = list(children)
    if not 0 <= mother < n:
        raise InternalConsistencyError(f"mother index {mother} out of range")
    for c in children:
        if not 0 <= c < n:
            raise InternalConsistencyError(f"child index {c} out of range")
        if c == mother:
            raise InternalConsistencyError("a Gaussian cannot inherit from itself")
    child_age = int(round(alpha_age * int(state.ages[mother])))
    for c in children:
        state.ages[c] = child_age
        for name in state.g1:
            state.g1[name][c] = alpha_moment * state.g1[name][mother]
            state.g2[name][c] = (alpha_moment ** 2) * state.g2[name][mother]
    return state
