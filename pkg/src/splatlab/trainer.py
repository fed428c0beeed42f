"""Training loop, loss, exposure compensation, evaluation, synthetic scenes.

Two training arms share the renderer and the loss:

* the default arm — unbiased sparse Adam with precision-scaled position and
  size steps, split-state inheritance, effective-opacity pruning and
  reconstruction-gain split ordering (every piece individually switchable
  for ablations);
* ``baseline_mode`` — the classic recipe: dense bias-corrected Adam over a
  log-size parameterization, clone-or-split densification driven by
  accumulated screen-space gradient magnitude, periodic opacity resets, and
  opacity-threshold pruning, under the same Gaussian budget.

Both arms follow the same geometric budget schedule, so comparisons at equal
budget are apples to apples.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import metrics
from .core import (
    FLOAT,
    Camera,
    ConfigurationError,
    GaussianCloud,
    InvalidParameterError,
    look_at_camera,
    quat_to_rotmat,
)
from .densify import SplitTable, densify_step, learn_split_table, scheduled_count
from .io import Scene
from .optimizer import AdamState, default_param_groups, step_sparse
from .precision import deltas_for_cloud, min_size_clamp
from .renderer import (
    ParamGradients,
    RenderAux,
    RenderConfig,
    render_backward,
    render_forward,
)

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    """Everything that shapes one training run.

    The five ``use_*`` switches ablate the default arm feature by feature;
    ``baseline_mode`` replaces optimizer and densification wholesale with the
    classic recipe (the ``use_*`` switches are then ignored).
    """

    iterations: int = 30000
    budget: Optional[int] = None          # hard Gaussian cap (required)
    seed: int = 0
    loss_lambda: float = 0.2              # (1-l)*L1 + l*(1-SSIM)
    background: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    # densification schedule
    densify_start: int = 500
    densify_interval: int = 500
    densify_end: Optional[int] = None     # default: 0.6 * iterations
    tau_prune: float = 0.02
    prune_cap: float = 0.01
    split_shift: float = 0.3
    inherit_age: float = 1.0
    inherit_moment: float = 0.2

    # optimizer.  Position/size rates are expressed as a fraction of each
    # Gaussian's confidence radius per step (the update is multiplied by
    # Delta_i), so they sit much higher than extent-scaled rates would.
    position_lr: float = 5e-2
    sizes_lr: float = 5e-2
    rotation_lr: float = 1e-3
    opacity_lr: float = 5e-2
    sh_lr: float = 2.5e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    literal_unnormalized_denominator: bool = False

    # precision scaling
    sigma_uv: float = 1.0
    delta_alpha: float = 2.0
    beta_min: float = 0.5

    # exposure compensation (per train image affine color transform)
    exposure_enabled: bool = False
    exposure_lr: float = 1e-3

    # feature switches (default arm)
    use_sparse_adam: bool = True
    use_state_inheritance: bool = True
    use_scaled_updates: bool = True
    use_effective_opacity_pruning: bool = True
    use_snr_prioritization: bool = True

    # classic-recipe arm
    baseline_mode: bool = False
    baseline_position_lr: float = 1.6e-4  # * scene extent, decayed 100x over the run
    baseline_log_size_lr: float = 5e-3
    baseline_opacity_prune: float = 0.005
    baseline_opacity_reset_interval: int = 3000
    baseline_percent_dense: float = 0.01

    # bookkeeping
    probe_interval: int = 100
    render: RenderConfig = field(default_factory=RenderConfig)

    def resolved_densify_end(self) -> int:
        return (int(round(0.6 * self.iterations))
                if self.densify_end is None else self.densify_end)

    def validate(self) -> None:
        if self.iterations <= 0:
            raise ConfigurationError("iterations must be positive")
        if self.budget is None or self.budget <= 0:
            raise ConfigurationError("budget is required and must be positive")
        if not 0.0 <= self.loss_lambda <= 1.0:
            raise ConfigurationError("loss_lambda must be in [0, 1]")
        if self.densify_interval <= 0:
            raise ConfigurationError("densify_interval must be positive")
        if self.densify_start <= 0 or self.resolved_densify_end() > self.iterations:
            raise ConfigurationError("densification window must lie inside the run")
        if not 0.0 <= self.inherit_age <= 1.0:
            raise ConfigurationError("inherit_age must be in [0, 1]")
        self.render.validate()

    def densify_iterations(self) -> List[int]:
        end = self.resolved_densify_end()
        return list(range(self.densify_start, end + 1, self.densify_interval))


@dataclass
class ExposureModel:
    """Per-train-image affine color transform: out = clip(M rgb + b, 0, 1)."""

    camera_ids: List[int]
    matrices: np.ndarray  # (n, 3, 3)
    offsets: np.ndarray   # (n, 3)

    @classmethod
    def identity(cls, camera_ids: Sequence[int]) -> "ExposureModel":
        n = len(camera_ids)
        return cls(camera_ids=list(camera_ids),
                   matrices=np.tile(np.eye(3, dtype=FLOAT), (n, 1, 1)),
                   offsets=np.zeros((n, 3), dtype=FLOAT))

    def row(self, camera_id: int) -> int:
        try:
            return self.camera_ids.index(camera_id)
        except ValueError:
            raise InvalidParameterError(
                f"no exposure parameters for camera {camera_id}") from None

    def apply(self, image: np.ndarray, camera_id: int) -> np.ndarray:
        i = self.row(camera_id)
        return np.clip(image @ self.matrices[i].T + self.offsets[i], 0.0, 1.0)


def compute_loss(rendered: np.ndarray, gt: np.ndarray, loss_lambda: float
                 ) -> tuple[float, np.ndarray]:
    """(1-l) * L1 + l * (1 - SSIM), with its gradient w.r.t. ``rendered``."""
    if not 0.0 <= loss_lambda <= 1.0:
        raise InvalidParameterError("loss_lambda must be in [0, 1]")
    l1_val = metrics.l1(rendered, gt)
    l1_grad = metrics.l1_gradient(rendered, gt)
    if loss_lambda == 0.0:
        return l1_val, l1_grad
    ssim_val, ssim_grad = metrics.ssim_with_gradient(rendered, gt)
    value = (1.0 - loss_lambda) * l1_val + loss_lambda * (1.0 - ssim_val)
    grad = (1.0 - loss_lambda) * l1_grad - loss_lambda * ssim_grad
    return float(value), grad


# ---------------------------------------------------------------------------
# synthetic scenes
# ---------------------------------------------------------------------------

def _ring_cameras(n_cameras: int, image_size: int, radius: float = 2.5
                  ) -> List[Camera]:
    """Cameras on a ring around the unit box, elevations cycling low/mid/high."""
    elevations = (-0.20, 0.12, 0.42)
    focal = 1.2 * image_size
    cams = []
    for j in range(n_cameras):
        phi = 2.0 * np.pi * j / n_cameras
        theta = elevations[j % len(elevations)]
        eye = radius * np.array([np.cos(phi) * np.cos(theta),
                                 np.sin(phi) * np.cos(theta),
                                 np.sin(theta)])
        cams.append(look_at_camera(j, eye, np.zeros(3), image_size, image_size,
                                   focal=focal))
    return cams


def synth_scene(n_gaussians: int = 200, n_cameras: int = 24,
                image_size: int = 96, seed: int = 0, sh_degree: int = 1,
                n_init: Optional[int] = None,
                render_config: Optional[RenderConfig] = None) -> Scene:
    """Build a self-consistent synthetic scene with rendered ground truth.

    A ground-truth cloud of ``n_gaussians`` moderate blobs fills the unit
    box; ``n_cameras`` cameras ring it at radius 2.5 with cycling elevations;
    every camera's ground-truth image is rendered from that cloud, so a
    perfect reconstruction exists by construction.  The initial cloud
    (default n_gaussians // 10, at least 1) subsamples ground-truth centers
    with localization-scale jitter — the shape of a sparse triangulated point
    set — with mid-gray color and modest opacity.

    The camera split is deterministic: ~20% of ids, evenly spaced, are test.
    """
    if n_gaussians <= 0 or n_cameras < 2 or image_size < 8:
        raise InvalidParameterError("scene parameters out of range")
    rng = np.random.default_rng(np.random.SeedSequence((seed, 901)))

    k = (sh_degree + 1) ** 2
    positions = rng.uniform(-0.5, 0.5, (n_gaussians, 3))
    base = rng.uniform(0.03, 0.10, (n_gaussians, 1))
    sizes = base * rng.uniform(0.7, 1.3, (n_gaussians, 3))
    quats = rng.normal(size=(n_gaussians, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    opac = rng.uniform(0.3, 0.95, n_gaussians)
    sh = np.zeros((n_gaussians, k, 3))
    rgb = rng.uniform(0.15, 0.85, (n_gaussians, 3))
    sh[:, 0, :] = (rgb - 0.5) / 0.28209479177387814
    if k > 1:
        sh[:, 1:, :] = rng.normal(0.0, 0.06, (n_gaussians, k - 1, 3))
    gt_cloud = GaussianCloud(positions=positions, sizes=sizes, rotations=quats,
                             opacity_logits=np.log(opac) - np.log1p(-opac),
                             sh_coeffs=sh)

    cameras = _ring_cameras(n_cameras, image_size)
    cfg = render_config or RenderConfig()
    for cam in cameras:
        out, _ = render_forward(gt_cloud, cam, config=cfg)
        cam.gt_image = out.image

    n_test = max(1, round(0.2 * n_cameras))
    test_ids = sorted(set(np.linspace(0, n_cameras - 1, n_test).round().astype(int).tolist()))
    train_ids = [i for i in range(n_cameras) if i not in test_ids]

    n_init = max(1, n_gaussians // 10) if n_init is None else n_init
    if not 0 < n_init <= n_gaussians:
        raise InvalidParameterError("n_init must be in (0, n_gaussians]")
    pick = rng.choice(n_gaussians, size=n_init, replace=False)
    init_pos = gt_cloud.positions[pick].copy()
    deltas = deltas_for_cloud(init_pos, cameras)
    init_pos += rng.normal(size=(n_init, 3)) * deltas[:, None]

    if n_init > 1:
        diff = init_pos[:, None, :] - init_pos[None, :, :]
        dist = np.linalg.norm(diff, axis=2)
        np.fill_diagonal(dist, np.inf)
        nn = np.median(dist.min(axis=1))
    else:
        nn = 0.2
    init_size = float(np.clip(0.6 * nn, 2.0 * np.median(deltas), 0.12))

    init_quats = rng.normal(size=(n_init, 4))
    init_quats /= np.linalg.norm(init_quats, axis=1, keepdims=True)
    init_cloud = GaussianCloud(
        positions=init_pos,
        sizes=np.full((n_init, 3), init_size),
        rotations=init_quats,
        opacity_logits=np.full(n_init, np.log(0.2) - np.log1p(-0.2)),
        sh_coeffs=np.zeros((n_init, k, 3)))

    return Scene(cameras=cameras, train_ids=train_ids, test_ids=test_ids,
                 init_cloud=init_cloud, gt_cloud=gt_cloud)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    """What a run produced: the model, its story, and reusable context."""

    cloud: GaussianCloud
    trace: List[dict]
    exposure: Optional[ExposureModel]
    deltas: np.ndarray
    config: TrainConfig
    nan_rejections: int = 0


class _AuxAccumulator:
    """Per-camera sums of render statistics between densification events."""

    def __init__(self) -> None:
        self.by_camera: Dict[int, RenderAux] = {}

    def add(self, camera_id: int, aux: RenderAux) -> None:
        acc = self.by_camera.get(camera_id)
        if acc is None:
            self.by_camera[camera_id] = RenderAux(
                weight_sum=aux.weight_sum.copy(),
                se_sum=aux.se_sum.copy(),
                footprint=aux.footprint.copy(),
                visible=aux.visible.copy())
        else:
            acc.weight_sum += aux.weight_sum
            acc.se_sum += aux.se_sum
            acc.footprint += aux.footprint
            acc.visible |= aux.visible

    def views(self) -> List[RenderAux]:
        return [self.by_camera[i] for i in sorted(self.by_camera)]

    def reset(self) -> None:
        self.by_camera.clear()


class _ExposureState:
    """Unbiased sparse stepping for the per-image exposure parameters."""

    def __init__(self, model: ExposureModel, beta1: float, beta2: float,
                 epsilon: float) -> None:
        n = len(model.camera_ids)
        self.ages = np.zeros(n, dtype=np.int64)
        self.m1_mat = np.zeros((n, 3, 3), dtype=FLOAT)
        self.m2_mat = np.zeros((n, 3, 3), dtype=FLOAT)
        self.m1_off = np.zeros((n, 3), dtype=FLOAT)
        self.m2_off = np.zeros((n, 3), dtype=FLOAT)
        self.beta1, self.beta2, self.epsilon = beta1, beta2, epsilon

    def step(self, model: ExposureModel, row: int, g_mat: np.ndarray,
             g_off: np.ndarray, lr: float) -> None:
        self.ages[row] += 1
        t = float(self.ages[row])
        a1 = max(1.0 / t, 1.0 - self.beta1)
        a2 = max(1.0 / t, 1.0 - self.beta2)
        self.m1_mat[row] += a1 * (g_mat - self.m1_mat[row])
        self.m2_mat[row] += a2 * (g_mat * g_mat - self.m2_mat[row])
        self.m1_off[row] += a1 * (g_off - self.m1_off[row])
        self.m2_off[row] += a2 * (g_off * g_off - self.m2_off[row])
        model.matrices[row] -= lr * self.m1_mat[row] / (np.sqrt(self.m2_mat[row])
                                                        + self.epsilon)
        model.offsets[row] -= lr * self.m1_off[row] / (np.sqrt(self.m2_off[row])
                                                       + self.epsilon)


def _check_scene_for_training(scene: Scene, config: TrainConfig) -> None:
    scene.validate()
    if scene.init_cloud is None or scene.init_cloud.count == 0:
        raise ConfigurationError("training needs a non-empty initial cloud")
    if len(scene.train_ids) == 0:
        raise ConfigurationError("training needs at least one train camera")
    for cam in scene.train_cameras:
        if cam.gt_image is None:
            raise ConfigurationError(
                f"train camera {cam.camera_id} has no ground-truth image")
    if config.budget is not None and config.budget < scene.init_cloud.count:
        raise ConfigurationError(
            f"budget {config.budget} is below the initial cloud size "
            f"{scene.init_cloud.count}")


def train(config: TrainConfig, scene: Scene,
          split_table: Optional[SplitTable] = None) -> TrainResult:
    """Run one full training; deterministic given (config, scene).

    The loop renders one uniformly-sampled train view per iteration,
    backpropagates the L1/SSIM mix, steps the active arm's optimizer, and on
    schedule runs a densification event over the statistics accumulated since
    the last one.  A probe PSNR against the first test view lands in the
    trace every ``probe_interval`` iterations.

    Raises:
        ConfigurationError: contradictory config or a scene unfit for
            training (no cameras, no ground truth, budget below the initial
            cloud, ...).
    """
    config.validate()
    _check_scene_for_training(scene, config)
    if config.baseline_mode:
        return _train_baseline(config, scene)

    cloud = scene.init_cloud.copy()
    n_initial = cloud.count
    train_cams = scene.train_cameras
    probe_cam = scene.test_cameras[0] if scene.test_ids else None
    bg = np.asarray(config.background, dtype=FLOAT)
    rcfg = config.render
    table = split_table if split_table is not None else learn_split_table(
        shift=config.split_shift)

    groups = default_param_groups(config.position_lr, config.sizes_lr,
                                  config.rotation_lr, config.opacity_lr,
                                  config.sh_lr)
    state = AdamState.zeros(cloud, config.beta1, config.beta2, config.epsilon)
    deltas = deltas_for_cloud(cloud.positions, train_cams,
                              config.sigma_uv, config.delta_alpha)
    min_size_clamp(cloud, deltas, config.beta_min)

    exposure = None
    exp_state = None
    if config.exposure_enabled:
        exposure = ExposureModel.identity([c.camera_id for c in train_cams])
        exp_state = _ExposureState(exposure, config.beta1, config.beta2,
                                   config.epsilon)

    rng_cam = np.random.default_rng(np.random.SeedSequence((config.seed, 11)))
    events = config.densify_iterations()
    n_events = len(events)
    event_set = set(events)
    accum = _AuxAccumulator()
    trace: List[dict] = []
    nan_rejections = 0

    for it in range(1, config.iterations + 1):
        cam = train_cams[int(rng_cam.integers(len(train_cams)))]
        out, aux = render_forward(cloud, cam, bg, gt_image=cam.gt_image,
                                  config=rcfg)
        accum.add(cam.camera_id, aux)

        if exposure is not None:
            row = exposure.row(cam.camera_id)
            pre = out.image @ exposure.matrices[row].T + exposure.offsets[row]
            open_mask = (pre > 0.0) & (pre < 1.0)
            shown = np.clip(pre, 0.0, 1.0)
            loss, dshown = compute_loss(shown, cam.gt_image, config.loss_lambda)
            dpre = dshown * open_mask
            g_mat = np.einsum("hwc,hwd->cd", dpre, out.image)
            g_off = dpre.sum(axis=(0, 1))
            grad_image = dpre @ exposure.matrices[row]
        else:
            loss, grad_image = compute_loss(out.image, cam.gt_image,
                                            config.loss_lambda)

        grads = render_backward(cloud, cam, out, aux, grad_image, bg, rcfg)
        touched = grads.touched if config.use_sparse_adam \
            else np.ones(cloud.count, dtype=bool)
        nan_rejections += step_sparse(
            state, cloud, grads, touched, deltas, groups,
            scale_updates=config.use_scaled_updates,
            literal_unnormalized_denominator=config.literal_unnormalized_denominator,
            min_size_beta=config.beta_min)
        if exposure is not None:
            exp_state.step(exposure, row, g_mat, g_off, config.exposure_lr)

        n_pruned = n_split = 0
        if it in event_set:
            event_index = events.index(it)
            cloud, state, report, deltas = densify_step(
                cloud, state, accum.views(), config.budget, table, train_cams,
                event_index=event_index, n_events=n_events,
                n_initial=n_initial,
                tau_prune=config.tau_prune, prune_cap=config.prune_cap,
                shift=config.split_shift,
                alpha_age=config.inherit_age if config.use_state_inheritance else 0.0,
                alpha_moment=(config.inherit_moment
                              if config.use_state_inheritance else 0.0),
                prioritization=("gain" if config.use_snr_prioritization
                                else "opacity"),
                prune=config.use_effective_opacity_pruning,
                sigma_uv=config.sigma_uv, delta_alpha=config.delta_alpha,
                beta_min=config.beta_min)
            n_pruned, n_split = report.pruned.size, report.split.size
            accum.reset()

        probe = None
        if probe_cam is not None and (it % config.probe_interval == 0
                                      or it == config.iterations):
            probe_out, _ = render_forward(cloud, probe_cam, bg, config=rcfg)
            probe = metrics.psnr(probe_out.image, probe_cam.gt_image)
        trace.append({"iteration": it, "n_gaussians": cloud.count,
                      "loss": loss, "psnr_probe": probe,
                      "n_pruned": n_pruned, "n_split": n_split})

    return TrainResult(cloud=cloud, trace=trace, exposure=exposure,
                       deltas=deltas, config=config,
                       nan_rejections=nan_rejections)


# ---------------------------------------------------------------------------
# classic-recipe arm
# ---------------------------------------------------------------------------

class _BaselineState:
    """Dense bias-corrected Adam over (positions, log sizes, rot, opacity, sh)."""

    PARAMS = ("positions", "log_sizes", "rotations", "opacity_logits",
              "sh_coeffs")

    def __init__(self, cloud: GaussianCloud, beta1: float, beta2: float,
                 epsilon: float) -> None:
        self.beta1, self.beta2, self.epsilon = beta1, beta2, epsilon
        self.t = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}
        for name in self.PARAMS:
            shape = self._shape(cloud, name)
            self.m[name] = np.zeros(shape, dtype=FLOAT)
            self.v[name] = np.zeros(shape, dtype=FLOAT)

    @staticmethod
    def _shape(cloud: GaussianCloud, name: str):
        return {
            "positions": (cloud.count, 3),
            "log_sizes": (cloud.count, 3),
            "rotations": (cloud.count, 4),
            "opacity_logits": (cloud.count,),
            "sh_coeffs": cloud.sh_coeffs.shape,
        }[name]

    def step(self, cloud: GaussianCloud, log_sizes: np.ndarray,
             grads: Dict[str, np.ndarray], lrs: Dict[str, float]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        arrays = {"positions": cloud.positions, "log_sizes": log_sizes,
                  "rotations": cloud.rotations,
                  "opacity_logits": cloud.opacity_logits,
                  "sh_coeffs": cloud.sh_coeffs}
        for name in self.PARAMS:
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            step = (m / bc1) / (np.sqrt(v / bc2) + self.epsilon)
            arrays[name] -= lrs[name] * step

    def take(self, keep: np.ndarray) -> None:
        for name in self.PARAMS:
            self.m[name] = self.m[name][keep]
            self.v[name] = self.v[name][keep]

    def append_zeros(self, n_new: int) -> None:
        for name in self.PARAMS:
            pad = np.zeros((n_new,) + self.m[name].shape[1:], dtype=FLOAT)
            self.m[name] = np.concatenate([self.m[name], pad])
            self.v[name] = np.concatenate([self.v[name], pad])


def _scene_extent(cameras: Sequence[Camera]) -> float:
    centers = np.stack([cam.center for cam in cameras])
    centroid = centers.mean(axis=0)
    return float(np.linalg.norm(centers - centroid, axis=1).max())


def _train_baseline(config: TrainConfig, scene: Scene) -> TrainResult:
    """The classic training recipe under the same budget schedule."""
    cloud = scene.init_cloud.copy()
    n_initial = cloud.count
    log_sizes = np.log(cloud.sizes)
    train_cams = scene.train_cameras
    probe_cam = scene.test_cameras[0] if scene.test_ids else None
    bg = np.asarray(config.background, dtype=FLOAT)
    rcfg = config.render
    extent = _scene_extent(train_cams)

    state = _BaselineState(cloud, config.beta1, config.beta2, config.epsilon)
    rng_cam = np.random.default_rng(np.random.SeedSequence((config.seed, 11)))
    rng_split = np.random.default_rng(np.random.SeedSequence((config.seed, 12)))

    grad_norm_sum = np.zeros(cloud.count, dtype=FLOAT)
    touch_count = np.zeros(cloud.count, dtype=np.int64)

    events = config.densify_iterations()
    n_events = len(events)
    event_set = set(events)
    pos_lr0 = config.baseline_position_lr * extent
    trace: List[dict] = []

    for it in range(1, config.iterations + 1):
        cam = train_cams[int(rng_cam.integers(len(train_cams)))]
        out, aux = render_forward(cloud, cam, bg, config=rcfg)
        loss, grad_image = compute_loss(out.image, cam.gt_image,
                                        config.loss_lambda)
        grads = render_backward(cloud, cam, out, aux, grad_image, bg, rcfg)

        grad_norm_sum += grads.screen_grad_norm
        touch_count += grads.touched

        pos_lr = pos_lr0 * (0.01 ** (it / config.iterations))
        state.step(cloud, log_sizes, {
            "positions": grads.positions,
            "log_sizes": grads.sizes * cloud.sizes,
            "rotations": grads.rotations,
            "opacity_logits": grads.opacity_logits,
            "sh_coeffs": grads.sh_coeffs,
        }, {
            "positions": pos_lr,
            "log_sizes": config.baseline_log_size_lr,
            "rotations": config.rotation_lr,
            "opacity_logits": config.opacity_lr,
            "sh_coeffs": config.sh_lr,
        })
        np.exp(log_sizes, out=cloud.sizes)

        n_pruned = n_split = 0
        if it in event_set:
            event_index = events.index(it)

            # prune transparent Gaussians
            weak = cloud.opacities < config.baseline_opacity_prune
            if weak.any():
                keep = ~weak
                n_pruned = int(weak.sum())
                cloud = cloud.take(np.flatnonzero(keep))
                log_sizes = log_sizes[keep]
                state.take(keep)
                grad_norm_sum = grad_norm_sum[keep]
                touch_count = touch_count[keep]

            # grow toward the schedule, highest mean screen gradient first
            target = scheduled_count(n_initial, config.budget, event_index,
                                     n_events)
            allowed = max(0, min(target, config.budget) - cloud.count)
            if allowed > 0:
                mean_grad = np.zeros(cloud.count, dtype=FLOAT)
                seen = touch_count > 0
                mean_grad[seen] = grad_norm_sum[seen] / touch_count[seen]
                ranked = np.argsort(-mean_grad, kind="stable")
                chosen = np.sort(ranked[:allowed])
                chosen = chosen[mean_grad[chosen] > 0]
                if chosen.size:
                    big = cloud.sizes[chosen].max(axis=1) \
                        > config.baseline_percent_dense * extent
                    clone_idx = chosen[~big]
                    split_idx = chosen[big]
                    pieces = [cloud]
                    drop = np.zeros(cloud.count, dtype=bool)
                    if clone_idx.size:
                        pieces.append(cloud.take(clone_idx))
                    if split_idx.size:
                        mothers = cloud.take(split_idx)
                        rot = quat_to_rotmat(mothers.rotations)
                        children = []
                        for two in range(2):
                            local = rng_split.normal(size=(split_idx.size, 3))
                            offs = np.einsum("mij,mj->mi", rot,
                                             local * mothers.sizes)
                            child = mothers.copy()
                            child.positions = mothers.positions + offs
                            child.sizes = mothers.sizes / 1.6
                            children.append(child)
                        drop[split_idx] = True
                        pieces += children
                    n_split = int(split_idx.size + clone_idx.size)
                    keep = np.flatnonzero(~drop)
                    merged = pieces[0].take(keep)
                    for extra in pieces[1:]:
                        merged = merged.append(extra)
                    n_new = sum(p.count for p in pieces[1:])
                    state.take(keep)
                    state.append_zeros(n_new)
                    log_keep = log_sizes[keep]
                    log_new = np.concatenate(
                        [np.log(p.sizes) for p in pieces[1:]]) if n_new else \
                        np.zeros((0, 3))
                    log_sizes = np.concatenate([log_keep, log_new])
                    cloud = merged

            grad_norm_sum = np.zeros(cloud.count, dtype=FLOAT)
            touch_count = np.zeros(cloud.count, dtype=np.int64)

        if (config.baseline_opacity_reset_interval > 0
                and it % config.baseline_opacity_reset_interval == 0
                and it <= config.resolved_densify_end()):
            cap = np.log(0.01) - np.log1p(-0.01)
            np.minimum(cloud.opacity_logits, cap, out=cloud.opacity_logits)

        probe = None
        if probe_cam is not None and (it % config.probe_interval == 0
                                      or it == config.iterations):
            probe_out, _ = render_forward(cloud, probe_cam, bg, config=rcfg)
            probe = metrics.psnr(probe_out.image, probe_cam.gt_image)
        trace.append({"iteration": it, "n_gaussians": cloud.count,
                      "loss": loss, "psnr_probe": probe,
                      "n_pruned": n_pruned, "n_split": n_split})

    deltas = deltas_for_cloud(cloud.positions, train_cams,
                              config.sigma_uv, config.delta_alpha)
    return TrainResult(cloud=cloud, trace=trace, exposure=None,
                       deltas=deltas, config=config)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def _affine_exposure_fit(rendered: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Least-squares affine color fit of ``rendered`` to ``gt``, clipped."""
    flat = rendered.reshape(-1, 3)
    design = np.concatenate([flat, np.ones((flat.shape[0], 1))], axis=1)
    coef, *_ = np.linalg.lstsq(design, gt.reshape(-1, 3), rcond=None)
    fitted = design @ coef
    return np.clip(fitted.reshape(rendered.shape), 0.0, 1.0)


def evaluate(cloud: GaussianCloud, cameras: Sequence[Camera],
             background: Optional[np.ndarray] = None,
             render_config: Optional[RenderConfig] = None,
             exposure_fit: bool = True) -> dict:
    """Render each camera and report PSNR/SSIM, raw and exposure-fitted.

    The exposure-fitted numbers apply a per-view closed-form affine color
    correction before scoring — the honest way to compare models trained
    with exposure compensation on views that have no trained parameters.

    Raises:
        InvalidParameterError: a camera without ground truth.
    """
    views = []
    for cam in cameras:
        if cam.gt_image is None:
            raise InvalidParameterError(
                f"camera {cam.camera_id} has no ground-truth image to score")
        out, _ = render_forward(cloud, cam, background, config=render_config)
        entry = {
            "camera_id": cam.camera_id,
            "psnr": metrics.psnr(out.image, cam.gt_image),
            "ssim": metrics.ssim(out.image, cam.gt_image),
        }
        if exposure_fit:
            fitted = _affine_exposure_fit(out.image, cam.gt_image)
            entry["psnr_exposure_fit"] = metrics.psnr(fitted, cam.gt_image)
        views.append(entry)
    report = {
        "views": views,
        "mean_psnr": float(np.mean([v["psnr"] for v in views])) if views else None,
        "mean_ssim": float(np.mean([v["ssim"] for v in views])) if views else None,
        "n_gaussians": cloud.count,
    }
    if exposure_fit and views:
        report["mean_psnr_exposure_fit"] = float(
            np.mean([v["psnr_exposure_fit"] for v in views]))
    return report
