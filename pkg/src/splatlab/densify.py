"""Budget-aware densification: pruning, split ordering, and splitting.

Three mechanisms cooperate under a hard Gaussian budget:

* **Effective-opacity pruning.**  A Gaussian's rendered contribution is its
  compositing weight, not its raw opacity: a fully opaque splat hidden
  behind another never reaches a pixel.  Per camera, effective opacity is
  mean compositing weight over the splat's active pixels; a splat is
  prunable only when its *best* camera is still below threshold, and at most
  a small fraction of the cloud goes per event so statistics can recover.

* **Reconstruction-gain ordering.**  Each split candidate is scored by how
  much of each camera's total squared error its own footprint carries
  (normalized per camera, summed over cameras) — splitting where the error
  actually lives, instead of where gradients happen to be large.

* **Density-preserving splits.**  A mother of opacity o is replaced by two
  children displaced along its longest principal axis, with a width scale
  k(o) and child opacity o_c(o) read from an offline-learned table.  The
  table minimizes the 1D profile mismatch between mother and alpha-composited
  children, so a split refines geometry without flashing the image brighter
  or darker.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize_scalar

from .core import (
    FLOAT,
    GaussianCloud,
    FormatError,
    InternalConsistencyError,
    InvalidParameterError,
    quat_to_rotmat,
)
from .optimizer import AdamState, append_states, inherit_states, remove_states
from .precision import deltas_for_cloud, min_size_clamp
from .renderer import RenderAux

DEFAULT_SHIFT = 0.3
DEFAULT_TAU_PRUNE = 0.02
DEFAULT_PRUNE_CAP = 0.01
NAIVE_SIZE_SCALE = 1.0 / 1.6

_X_HALF = 6.0
_DX = 0.01
_X_GRID = np.arange(-_X_HALF, _X_HALF + _DX / 2, _DX, dtype=FLOAT)
_OC_MIN, _OC_MAX = 1e-4, 0.999
_K_MIN, _K_MAX = 0.05, 1.5


# ---------------------------------------------------------------------------
# split-profile objective and table learning
# ---------------------------------------------------------------------------

def _profiles(k: np.ndarray, shift: float) -> tuple[np.ndarray, ...]:
    """Unit-height child profiles on the 1D grid for widths ``k`` (nk,)."""
    k = np.atleast_1d(np.asarray(k, dtype=FLOAT))
    x = _X_GRID[None, :]
    kk = k[:, None]
    p1 = np.exp(-0.5 * ((x - shift) / kk) ** 2)
    p2 = np.exp(-0.5 * ((x + shift) / kk) ** 2)
    return p1, p2


def split_profile_error(opacity: float, size_scale: float, child_opacity: float,
                        shift: float = DEFAULT_SHIFT,
                        objective: str = "composited") -> float:
    """Integrated squared 1D profile mismatch of a candidate split.

    The mother contributes opacity * exp(-x^2/2) along its split axis; two
    children of width ``size_scale`` and opacity ``child_opacity`` sit at
    +/- ``shift``.  With objective="composited" the children combine as
    1 - (1-a1)(1-a2) (front-to-back compositing of overlapping splats);
    "additive" sums them, which is only faithful in the low-opacity limit.
    """
    if objective not in ("composited", "additive"):
        raise InvalidParameterError(f"unknown objective {objective!r}")
    mother = opacity * np.exp(-0.5 * _X_GRID ** 2)
    p1, p2 = _profiles(np.array([size_scale]), shift)
    a1, a2 = child_opacity * p1[0], child_opacity * p2[0]
    if objective == "composited":
        combined = 1.0 - (1.0 - a1) * (1.0 - a2)
    else:
        combined = a1 + a2
    return float(np.trapezoid((mother - combined) ** 2, dx=_DX))


def _best_child_opacity(opacity: float, k: np.ndarray, shift: float,
                        objective: str) -> tuple[np.ndarray, np.ndarray]:
    """For each width in ``k``, the optimal child opacity and its error.

    The composited 1D model is o_c*(p1+p2) - o_c^2*(p1*p2): the error is a
    quartic polynomial in o_c, so its stationary points are the roots of a
    cubic — solved exactly, no inner search loop.
    """
    p1, p2 = _profiles(k, shift)
    mother = np.exp(-0.5 * _X_GRID ** 2)  # unit height; opacity folded in below
    u = p1 + p2
    v = p1 * p2

    def integ(arr):
        return np.trapezoid(arr, dx=_DX, axis=-1)

    i_mm = float(np.trapezoid(mother * mother, dx=_DX))
    i_mu = integ(mother[None, :] * u)
    i_uu = integ(u * u)
    i_mv = integ(mother[None, :] * v)
    i_uv = integ(u * v)
    i_vv = integ(v * v)
    o = opacity

    nk = k.size if hasattr(k, "size") else len(k)
    best_oc = np.empty(nk, dtype=FLOAT)
    best_err = np.empty(nk, dtype=FLOAT)

    def err_at(j, oc):
        return (o * o * i_mm - 2 * oc * o * i_mu[j]
                + oc * oc * (i_uu[j] + 2 * o * i_mv[j])
                - 2 * oc ** 3 * i_uv[j] + oc ** 4 * i_vv[j])

    for j in range(nk):
        if objective == "additive":
            oc = np.clip(o * i_mu[j] / i_uu[j], _OC_MIN, _OC_MAX)
            best_oc[j] = oc
            best_err[j] = o * o * i_mm - 2 * oc * o * i_mu[j] + oc * oc * i_uu[j]
            continue
        # dE/d(oc) = 0: cubic in oc.
        roots = np.roots([4 * i_vv[j], -6 * i_uv[j],
                          2 * (i_uu[j] + 2 * o * i_mv[j]), -2 * o * i_mu[j]])
        cands = [_OC_MIN, _OC_MAX]
        cands += [float(r.real) for r in roots
                  if abs(r.imag) < 1e-12 and _OC_MIN < r.real < _OC_MAX]
        errs = [err_at(j, oc) for oc in cands]
        pick = int(np.argmin(errs))
        best_oc[j] = cands[pick]
        best_err[j] = errs[pick]
    return best_oc, best_err


@dataclass
class SplitTable:
    """Opacity-indexed split parameters, linearly interpolated at lookup."""

    opacity_grid: np.ndarray    # (G,) strictly increasing, in (0, 1)
    size_scale: np.ndarray      # (G,) width multiplier k(o) for the split axis
    child_opacity: np.ndarray   # (G,) o_c(o)

    def validate(self) -> None:
        g = self.opacity_grid
        if g.ndim != 1 or g.size < 2 or np.any(np.diff(g) <= 0):
            raise FormatError("opacity grid must be strictly increasing, length >= 2")
        if np.any((g <= 0) | (g >= 1)):
            raise FormatError("opacity grid values must lie in (0, 1)")
        for name, arr in (("size_scale", self.size_scale),
                          ("child_opacity", self.child_opacity)):
            if arr.shape != g.shape:
                raise FormatError(f"{name} length does not match opacity grid")
            if not np.all(np.isfinite(arr)):
                raise FormatError(f"non-finite {name}")
        if np.any(self.size_scale <= 0):
            raise FormatError("size_scale entries must be positive")
        if np.any((self.child_opacity <= 0) | (self.child_opacity >= 1)):
            raise FormatError("child_opacity entries must lie in (0, 1)")

    def lookup(self, opacity) -> tuple[np.ndarray, np.ndarray]:
        """(size_scale, child_opacity) at ``opacity``; clamps outside the grid."""
        o = np.asarray(opacity, dtype=FLOAT)
        return (np.interp(o, self.opacity_grid, self.size_scale),
                np.interp(o, self.opacity_grid, self.child_opacity))

    def save_csv(self, path) -> None:
        """Write the table; floats keep full precision so load is bit-exact."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["opacity", "size_scale", "child_opacity"])
            for row in zip(self.opacity_grid, self.size_scale, self.child_opacity):
                writer.writerow([repr(float(x)) for x in row])

    @classmethod
    def load_csv(cls, path) -> "SplitTable":
        """Read a table written by :meth:`save_csv`; validates on the way in."""
        try:
            with open(path, newline="") as fh:
                reader = csv.reader(fh)
                header = next(reader, None)
                if header != ["opacity", "size_scale", "child_opacity"]:
                    raise FormatError(f"unexpected split-table header: {header}")
                rows = []
                for lineno, row in enumerate(reader, start=2):
                    if len(row) != 3:
                        raise FormatError(f"line {lineno}: expected 3 columns")
                    try:
                        rows.append([float(x) for x in row])
                    except ValueError as exc:
                        raise FormatError(f"line {lineno}: {exc}") from exc
        except OSError as exc:
            raise FormatError(f"cannot read split table: {exc}") from exc
        if not rows:
            raise FormatError("empty split table")
        data = np.array(rows, dtype=FLOAT)
        table = cls(opacity_grid=data[:, 0], size_scale=data[:, 1],
                    child_opacity=data[:, 2])
        table.validate()
        return table


def naive_split_params(opacity) -> tuple[np.ndarray, np.ndarray]:
    """The classic heuristic: shrink by 1.6, keep the mother's opacity."""
    o = np.asarray(opacity, dtype=FLOAT)
    return np.full_like(o, NAIVE_SIZE_SCALE), o.copy()


def learn_split_table(shift: float = DEFAULT_SHIFT, grid_size: int = 64,
                      objective: str = "composited",
                      opacity_lo: float = 1e-3, opacity_hi: float = 0.999
                      ) -> SplitTable:
    """Fit (k, o_c) per opacity by minimizing :func:`split_profile_error`.

    Deterministic: a width grid search with an exact inner solve for the
    child opacity, then a bounded 1D polish of the width around the grid
    winner.  Runs in a couple of seconds.
    """
    if grid_size < 2:
        raise InvalidParameterError("grid_size must be >= 2")
    if not 0 < opacity_lo < opacity_hi < 1:
        raise InvalidParameterError("opacity bounds must satisfy 0 < lo < hi < 1")
    opacities = np.geomspace(opacity_lo, opacity_hi, grid_size)
    k_grid = np.linspace(_K_MIN, _K_MAX, 146)
    size_scale = np.empty(grid_size, dtype=FLOAT)
    child_op = np.empty(grid_size, dtype=FLOAT)

    for i, o in enumerate(opacities):
        ocs, errs = _best_child_opacity(float(o), k_grid, shift, objective)
        j = int(np.argmin(errs))

        def polished(kv: float) -> float:
            return float(_best_child_opacity(float(o), np.array([kv]), shift,
                                             objective)[1][0])

        lo = k_grid[max(j - 1, 0)]
        hi = k_grid[min(j + 1, k_grid.size - 1)]
        res = minimize_scalar(polished, bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-6})
        k_best = float(res.x) if res.fun <= errs[j] else float(k_grid[j])
        oc_best, _ = _best_child_opacity(float(o), np.array([k_best]), shift,
                                         objective)
        size_scale[i] = k_best
        child_op[i] = float(oc_best[0])

    table = SplitTable(opacity_grid=np.asarray(opacities, dtype=FLOAT),
                       size_scale=size_scale, child_opacity=child_op)
    table.validate()
    return table


# ---------------------------------------------------------------------------
# pruning and prioritization
# ---------------------------------------------------------------------------

def effective_opacity(aux_by_camera: Sequence[RenderAux]) -> np.ndarray:
    """Best-camera mean compositing weight per Gaussian.

    For each camera, a Gaussian's effective opacity is weight_sum divided by
    its footprint (0 if it touched no pixel); the returned score is the max
    over cameras, so a Gaussian survives if *any* view still sees it.

    Raises:
        InvalidParameterError: empty sequence or mismatched lengths.
    """
    if len(aux_by_camera) == 0:
        raise InvalidParameterError("effective_opacity needs at least one view")
    n = aux_by_camera[0].weight_sum.shape[0]
    out = np.zeros(n, dtype=FLOAT)
    for aux in aux_by_camera:
        if aux.weight_sum.shape[0] != n or aux.footprint.shape[0] != n:
            raise InvalidParameterError("aux lengths differ between cameras")
        seen = aux.footprint > 0
        per_view = np.zeros(n, dtype=FLOAT)
        per_view[seen] = aux.weight_sum[seen] / aux.footprint[seen]
        np.maximum(out, per_view, out=out)
    return out


def select_prune(p_prune: np.ndarray, tau_prune: float = DEFAULT_TAU_PRUNE,
                 max_fraction: float = DEFAULT_PRUNE_CAP) -> np.ndarray:
    """Indices to prune: score below tau, at most ceil(max_fraction * N).

    When the cap binds, the lowest-scoring candidates go first; ties resolve
    by index so the selection is deterministic.  Returned indices ascend.
    """
    p = np.asarray(p_prune, dtype=FLOAT)
    if p.ndim != 1:
        raise InvalidParameterError("p_prune must be 1-D")
    if not 0 < max_fraction <= 1:
        raise InvalidParameterError("max_fraction must be in (0, 1]")
    cand = np.flatnonzero(p < tau_prune)
    cap = int(np.ceil(max_fraction * p.size))
    if cand.size > cap:
        cand = cand[np.argsort(p[cand], kind="stable")[:cap]]
    return np.sort(cand)


def snr_priority(se_by_camera: Sequence[np.ndarray]) -> np.ndarray:
    """Split priority: per-camera share of total squared error, summed.

    Cameras whose accumulated error is zero contribute nothing (there is
    nothing to improve in a perfectly reconstructed view).
    """
    if len(se_by_camera) == 0:
        raise InvalidParameterError("snr_priority needs at least one view")
    se0 = np.asarray(se_by_camera[0], dtype=FLOAT)
    out = np.zeros_like(se0)
    for se in se_by_camera:
        se = np.asarray(se, dtype=FLOAT)
        if se.shape != se0.shape:
            raise InvalidParameterError("se lengths differ between cameras")
        total = se.sum()
        if total > 0:
            out += se / total
    return out


# ---------------------------------------------------------------------------
# splitting
# ---------------------------------------------------------------------------

def split_gaussians(cloud: GaussianCloud, indices: np.ndarray, table: SplitTable,
                    shift: float = DEFAULT_SHIFT
                    ) -> tuple[GaussianCloud, np.ndarray]:
    """Replace each indexed mother with two table-parameterized children.

    Children sit at mother +/- shift * sigma_max along the longest principal
    axis; that axis' size is scaled by k(o) and the opacity set to o_c(o);
    all other parameters are copied.  The result cloud lists survivors first
    (original order), then children, two per mother in ``indices`` order.

    Returns:
        (new_cloud, child_rows) with child_rows (len(indices), 2) giving each
        mother's children as rows of the new cloud.

    Raises:
        InvalidParameterError: out-of-range or duplicate indices.
    """
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size == 0:
        return cloud.copy(), np.zeros((0, 2), dtype=np.int64)
    if idx.min() < 0 or idx.max() >= cloud.count:
        raise InvalidParameterError("split index out of range")
    if np.unique(idx).size != idx.size:
        raise InvalidParameterError("duplicate split indices")

    mothers = cloud.take(idx)
    k_scale, child_op = table.lookup(mothers.opacities)

    rot = quat_to_rotmat(mothers.rotations)
    axis_id = np.argmax(mothers.sizes, axis=1)
    rows = np.arange(idx.size)
    axes = rot[rows, :, axis_id]                     # world direction of longest axis
    sigma_max = mothers.sizes[rows, axis_id]
    offset = shift * sigma_max[:, None] * axes

    child_sizes = np.repeat(mothers.sizes, 2, axis=0)
    scaled = mothers.sizes[rows, axis_id] * k_scale
    child_sizes[2 * rows, axis_id] = scaled
    child_sizes[2 * rows + 1, axis_id] = scaled

    child_positions = np.empty((2 * idx.size, 3), dtype=FLOAT)
    child_positions[0::2] = mothers.positions + offset
    child_positions[1::2] = mothers.positions - offset

    child_logits = np.repeat(np.log(child_op) - np.log1p(-child_op), 2)

    children = GaussianCloud(
        positions=child_positions,
        sizes=child_sizes,
        rotations=np.repeat(mothers.rotations, 2, axis=0),
        opacity_logits=child_logits,
        sh_coeffs=np.repeat(mothers.sh_coeffs, 2, axis=0))

    survivors = cloud.remove(idx)
    out = survivors.append(children)
    child_rows = survivors.count + 2 * rows[:, None] + np.array([[0, 1]])
    return out, child_rows


def scheduled_count(n_initial: int, budget: int, event_index: int,
                    n_events: int) -> int:
    """Geometric growth target: n_initial at event 0, budget at the last event."""
    if n_initial <= 0 or budget <= 0:
        raise InvalidParameterError("counts must be positive")
    if n_events <= 0 or event_index >= n_events:
        return budget
    frac = (event_index + 1) / n_events
    target = n_initial * (budget / n_initial) ** frac
    lo, hi = min(n_initial, budget), max(n_initial, budget)
    return int(np.clip(round(target), lo, hi))


@dataclass
class DensifyReport:
    """What one densification event did, in pre-event indices."""

    pruned: np.ndarray          # indices removed
    split: np.ndarray           # indices replaced by children
    prune_score: np.ndarray     # (N_before,) effective opacity, max over views
    priority: np.ndarray        # (N_before,) split ordering score
    n_before: int
    n_after: int
    target: int                 # scheduled count for this event


def densify_step(cloud: GaussianCloud, state: AdamState,
                 aux_by_camera: Sequence[RenderAux],
                 budget: int, table: SplitTable, cameras: Sequence,
                 *,
                 event_index: int, n_events: int, n_initial: int,
                 tau_prune: float = DEFAULT_TAU_PRUNE,
                 prune_cap: float = DEFAULT_PRUNE_CAP,
                 shift: float = DEFAULT_SHIFT,
                 alpha_age: float = 1.0, alpha_moment: float = 0.2,
                 prioritization: str = "gain",
                 prune: bool = True,
                 sigma_uv: float = 1.0, delta_alpha: float = 2.0,
                 beta_min: float = 0.5,
                 ) -> tuple[GaussianCloud, AdamState, DensifyReport, np.ndarray]:
    """Run one densification event: prune, then split up to the schedule.

    ``aux_by_camera`` holds per-camera statistics accumulated since the last
    event (sums of RenderAux fields).  Split mothers are the highest-priority
    survivors; the number of splits is capped so the cloud never exceeds
    ``budget`` or the geometric schedule for this event.  Children inherit
    optimizer state (see :func:`splatlab.optimizer.inherit_states`); pruned
    rows take their state with them.  Afterwards Deltas are recomputed for
    the new geometry and the size floor is re-applied.

    Returns:
        (cloud, state, report, deltas) — cloud/state are the same objects,
        updated in place where possible.

    Raises:
        InternalConsistencyError: bookkeeping mismatch between cloud, state
            and aux arrays, or a budget violation after splitting.
        InvalidParameterError: unknown prioritization mode.
    """
    if prioritization not in ("gain", "opacity"):
        raise InvalidParameterError(f"unknown prioritization {prioritization!r}")
    state.check_consistent(cloud)
    n_before = cloud.count
    for aux in aux_by_camera:
        if aux.weight_sum.shape[0] != n_before:
            raise InternalConsistencyError(
                "aux statistics do not match the cloud (stale accumulator?)")

    prune_score = effective_opacity(aux_by_camera)
    pruned = (select_prune(prune_score, tau_prune, prune_cap)
              if prune else np.zeros(0, dtype=np.int64))
    keep_mask = np.ones(n_before, dtype=bool)
    keep_mask[pruned] = False
    survivors_orig = np.flatnonzero(keep_mask)
    cloud = cloud.remove(pruned)
    state = remove_states(state, pruned)

    if prioritization == "gain":
        priority_full = snr_priority([aux.se_sum for aux in aux_by_camera])
    else:
        opac = np.zeros(n_before, dtype=FLOAT)
        opac[survivors_orig] = cloud.opacities
        priority_full = opac
    priority = priority_full[survivors_orig]

    target = scheduled_count(n_initial, budget, event_index, n_events)
    allowed = max(0, min(target, budget) - cloud.count)
    eligible = np.flatnonzero(priority > 0)
    ranked = eligible[np.argsort(-priority[eligible], kind="stable")]
    chosen = np.sort(ranked[:allowed])

    if chosen.size:
        n_surv = cloud.count
        cloud, child_rows = split_gaussians(cloud, chosen, table, shift)
        append_states(state, 2 * chosen.size)
        for j, mother in enumerate(chosen):
            inherit_states(state, int(mother),
                           [n_surv + 2 * j, n_surv + 2 * j + 1],
                           alpha_age, alpha_moment)
        remove_states(state, chosen)

    state.check_consistent(cloud)
    expected = n_before - pruned.size + chosen.size
    if cloud.count != expected:
        raise InternalConsistencyError(
            f"densify bookkeeping: expected {expected} Gaussians, have {cloud.count}")
    if chosen.size and cloud.count > budget:
        raise InternalConsistencyError(
            f"densify exceeded budget: {cloud.count} > {budget}")

    deltas = deltas_for_cloud(cloud.positions, cameras, sigma_uv, delta_alpha)
    min_size_clamp(cloud, deltas, beta_min)

    report = DensifyReport(
        pruned=pruned, split=survivors_orig[chosen],
        prune_score=prune_score, priority=priority_full,
        n_before=n_before, n_after=cloud.count, target=target)
    return cloud, state, report, deltas
