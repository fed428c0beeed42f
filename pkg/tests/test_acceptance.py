"""Acceptance suite: one test per headline guarantee of the package.

Each test here is a self-contained contract check, run at its stated
tolerance:

* analytic rasterizer gradients match finite differences,
* the age-based optimizer's moment estimates are exactly unbiased early on,
* sparse stepping is bit-equivalent to dense stepping for a Gaussian that
  is touched every step,
* the learned split table never does worse than the naive split and the
  split displaces children by 0.3 sigma,
* the first-order view-quality gain model tracks the exact one and its
  ranking ignores per-camera error rescaling,
* pruning respects the score threshold and the per-event cap, and removes
  an occluded Gaussian in an end-to-end run,
* multi-camera precision fusion is additive, correct on a closed-form
  configuration, and rotation-equivariant,
* the full training recipe beats the classic baseline at equal and at half
  budget on a held-out synthetic scene, and beats each single-feature
  ablation,
* training is deterministic across thread counts and the on-disk formats
  round-trip.

The three training-comparison tests at the bottom share one cache of
trained runs (keyed by config), so each configuration is trained exactly
once per session no matter which tests are selected.
"""

import statistics
import time

import numpy as np
import pytest

from conftest import (
    finite_difference_group_errors,
    identity_camera,
    random_safe_scene,
)
from splatlab import (
    AdamState,
    Camera,
    GaussianCloud,
    RenderConfig,
    Scene,
    TrainConfig,
    evaluate,
    fuse_precision,
    learn_split_table,
    look_at_camera,
    naive_split_params,
    render_forward,
    select_prune,
    snr_priority,
    split_gaussians,
    split_profile_error,
    step_sparse,
    synth_scene,
    train,
)
from splatlab.io import (
    load_image,
    load_ply,
    read_trace_csv,
    save_image,
    save_ply,
    write_trace_csv,
)


# ---------------------------------------------------------------------------
# shared fixtures


@pytest.fixture(scope="module")
def split_table():
    """One full-resolution split table shared by every test that needs one."""
    return learn_split_table()


def _random_cloud(n, seed=0, sh_k=4):
    rng = np.random.default_rng(seed)
    rot = rng.normal(size=(n, 4))
    rot /= np.linalg.norm(rot, axis=1, keepdims=True)
    return GaussianCloud(
        positions=rng.normal(size=(n, 3)),
        sizes=rng.uniform(0.2, 0.6, (n, 3)),
        rotations=rot,
        opacity_logits=rng.normal(size=n),
        sh_coeffs=rng.normal(size=(n, sh_k, 3)),
    )


def _zero_grads(cloud):
    return {
        "positions": np.zeros_like(cloud.positions),
        "sizes": np.zeros_like(cloud.sizes),
        "rotations": np.zeros_like(cloud.rotations),
        "opacity_logits": np.zeros_like(cloud.opacity_logits),
        "sh_coeffs": np.zeros_like(cloud.sh_coeffs),
    }


# ---------------------------------------------------------------------------
# 1. gradient fidelity


def test_gradient_fidelity():
    """Analytic gradients match central differences on 20 random scenes.

    Every parameter group must come in below 1e-4 relative error on every
    scene (float64, 8x8 images, 3-5 Gaussians), and the whole sweep must
    finish within a minute.
    """
    t0 = time.perf_counter()
    worst = {}
    n_scenes = 20
    for i in range(n_scenes):
        cloud, camera, target = random_safe_scene(seed=500 + i,
                                                  n_gaussians=3 + i % 3)
        errs = finite_difference_group_errors(cloud, camera, target)
        for group, err in errs.items():
            worst[group] = max(worst.get(group, 0.0), err)
    elapsed = time.perf_counter() - t0

    for group, err in sorted(worst.items()):
        assert err < 1e-4, f"group {group}: rel err {err:.3e} >= 1e-4"
    assert elapsed < 60.0, f"gradient sweep took {elapsed:.1f}s (limit 60s)"
    print(f"[PASS] gradient fidelity: worst rel err "
          f"{max(worst.values()):.2e} < 1e-4 across {n_scenes} scenes, "
          f"{elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 2. optimizer unbiasedness


def test_optimizer_unbiasedness():
    """Moment estimates are exact running means early, then fixed points.

    1000 independent random gradient sequences (one per Gaussian row):
    the first moment must equal the arithmetic mean of the seen gradients
    bit-for-bit while 1/t >= 1-beta1, the second moment likewise while
    1/t >= 1-beta2, and a constant gradient must be a fixed point of both
    estimates at every age.  The mean oracle uses the same recurrence
    shape as the update (m += (1/t) * (g - m)) so bit equality is the
    honest expectation, not a fluke of refactoring.
    """
    t0 = time.perf_counter()
    n_seq = 1000
    cloud = _random_cloud(n_seq, seed=7)
    state = AdamState.zeros(cloud)
    touched = np.ones(n_seq, dtype=bool)
    deltas = np.ones(n_seq)
    rng = np.random.default_rng(2024)

    mean1 = None
    mean2 = None
    checked1 = checked2 = 0
    for t in range(1, 1201):
        g = _zero_grads(cloud)
        g["positions"] = rng.normal(size=(n_seq, 3))
        step_sparse(state, cloud, g, touched, deltas=deltas,
                    min_size_beta=None)
        gp = g["positions"]
        if mean1 is None:
            mean1 = gp.copy()
            mean2 = gp * gp
        else:
            mean1 += (1.0 / t) * (gp - mean1)
            mean2 += (1.0 / t) * (gp * gp - mean2)
        if 1.0 / t >= 1.0 - state.beta1:
            np.testing.assert_array_equal(state.g1["positions"], mean1)
            checked1 = t
        if 1.0 / t >= 1.0 - state.beta2:
            np.testing.assert_array_equal(state.g2["positions"], mean2)
            checked2 = t

    # constant gradient: both estimates lock onto g and g^2 immediately and
    # stay there through the regime switch
    cloud_c = _random_cloud(n_seq, seed=8)
    state_c = AdamState.zeros(cloud_c)
    g_const = np.random.default_rng(9).normal(size=(n_seq, 3))
    for t in range(1, 41):
        g = _zero_grads(cloud_c)
        g["positions"] = g_const.copy()
        step_sparse(state_c, cloud_c, g, touched, deltas=deltas,
                    min_size_beta=None)
        np.testing.assert_array_equal(state_c.g1["positions"], g_const)
        np.testing.assert_array_equal(state_c.g2["positions"],
                                      g_const * g_const)
    elapsed = time.perf_counter() - t0

    assert checked1 == 10, f"first-moment mean regime ended at t={checked1}"
    assert checked2 == 999, f"second-moment mean regime ended at t={checked2}"
    assert elapsed < 60.0, f"took {elapsed:.1f}s"
    print(f"[PASS] optimizer unbiasedness: {n_seq} sequences, first moment "
          f"exact mean through t={checked1}, second through t={checked2}, "
          f"constant-gradient fixed point through t=40, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 3. sparse/dense equivalence


def test_sparse_dense_equivalence():
    """A Gaussian touched every step has a bit-identical 1000-step trajectory
    whether its neighbours are stepped densely (with zero gradients) or
    skipped entirely.
    """
    n, row = 6, 2
    steps = 1000
    rng = np.random.default_rng(31)
    gseq = {
        "positions": rng.normal(size=(steps, 3)) * 0.1,
        "sizes": rng.normal(size=(steps, 3)) * 0.01,
        "rotations": rng.normal(size=(steps, 4)) * 0.01,
        "opacity_logits": rng.normal(size=steps) * 0.1,
        "sh_coeffs": rng.normal(size=(steps, 4, 3)) * 0.1,
    }

    def run(dense):
        cloud = _random_cloud(n, seed=11)
        state = AdamState.zeros(cloud)
        deltas = np.full(n, 0.01)
        touched = np.ones(n, dtype=bool) if dense else (
            np.arange(n) == row)
        traj = []
        for t in range(steps):
            g = _zero_grads(cloud)
            for name in g:
                g[name][row] = gseq[name][t]
            step_sparse(state, cloud, g, touched, deltas=deltas,
                        min_size_beta=None)
            traj.append(np.concatenate([
                cloud.positions[row], cloud.sizes[row], cloud.rotations[row],
                [cloud.opacity_logits[row]], cloud.sh_coeffs[row].ravel(),
                [float(state.ages[row])],
                state.g1["positions"][row], state.g2["positions"][row],
            ]))
        return np.array(traj)

    sparse_traj = run(dense=False)
    dense_traj = run(dense=True)
    np.testing.assert_array_equal(sparse_traj, dense_traj)
    print(f"[PASS] sparse/dense equivalence: row {row} of {n} bit-identical "
          f"over {steps} steps ({sparse_traj.shape[1]} tracked components)")


# ---------------------------------------------------------------------------
# 4. split-table dominance and split geometry


def test_split_table_dominance(split_table):
    """At every grid node the learned split's composited-density error is
    no worse than the naive split's, and executing a split displaces the
    children by exactly +/-0.3 sigma along the long axis.
    """
    table = split_table
    worst_gap = -np.inf
    for o, k, oc in zip(table.opacity_grid, table.size_scale,
                        table.child_opacity):
        err_learned = split_profile_error(float(o), float(k), float(oc),
                                          objective="composited")
        kn, ocn = naive_split_params(float(o))
        err_naive = split_profile_error(float(o), float(kn), float(ocn),
                                        objective="composited")
        assert err_learned <= err_naive + 1e-15, (
            f"node o={o:.4f}: learned {err_learned:.3e} > naive "
            f"{err_naive:.3e}")
        worst_gap = max(worst_gap, err_learned - err_naive)

    # split geometry: mother elongated along world y, sigma_long = 2
    mother = GaussianCloud(
        positions=np.array([[0.5, -1.0, 3.0]]),
        sizes=np.array([[0.5, 2.0, 0.5]]),
        rotations=np.array([[1.0, 0.0, 0.0, 0.0]]),
        opacity_logits=np.array([0.0]),  # opacity 0.5
        sh_coeffs=np.zeros((1, 4, 3)),
    )
    k, oc = table.lookup(0.5)
    children, rows = split_gaussians(mother, np.array([0]), table)
    assert children.count == 2 and list(rows[0]) == [0, 1]
    offsets = np.sort(children.positions[:, 1]) - mother.positions[0, 1]
    np.testing.assert_allclose(offsets, [-0.6, 0.6], atol=1e-12)
    np.testing.assert_allclose(children.positions[:, [0, 2]],
                               [[0.5, 3.0]] * 2, atol=1e-12)
    np.testing.assert_allclose(children.sizes[:, 1], float(k) * 2.0,
                               rtol=1e-12)
    np.testing.assert_allclose(children.opacities, float(oc), rtol=1e-12)
    print(f"[PASS] split-table dominance: learned <= naive at all "
          f"{table.opacity_grid.size} nodes (worst gap {worst_gap:.1e}); "
          f"children at +/-0.3 sigma")


# ---------------------------------------------------------------------------
# 5. first-order view-quality gain


def test_split_gain_approximation():
    """Removing a fraction r of one view's squared error, damped by the
    residual (1 - alpha) a split leaves behind, changes that view's quality
    by exactly -10*log10(1 - (1-alpha)*r) dB.  The first-order model
    (10/ln 10)*(1-alpha)*r used for ranking must stay within 5% of that
    for r in {0.01, 0.05, 0.1} and alpha in {0.3, 0.5, 0.7}; and the
    ranking itself must not care about per-camera error rescaling.
    """
    worst = 0.0
    for r in (0.01, 0.05, 0.1):
        for alpha in (0.3, 0.5, 0.7):
            x = (1.0 - alpha) * r
            exact = -10.0 * np.log10(1.0 - x)
            first_order = (10.0 / np.log(10.0)) * x
            rel = abs(first_order - exact) / exact
            worst = max(worst, rel)
            assert rel < 0.05, (
                f"r={r}, alpha={alpha}: first-order {first_order:.5f} vs "
                f"exact {exact:.5f} (rel {rel:.3%})")

    # single camera: the priority IS the per-view squared-error share
    rng = np.random.default_rng(5)
    se = rng.uniform(0.1, 5.0, size=8)
    np.testing.assert_allclose(snr_priority([se]), se / se.sum(),
                               rtol=1e-13)

    # rescaling each camera's errors by any positive factor cannot change
    # the ranking (every share is scale-free)
    for trial in range(20):
        trng = np.random.default_rng(100 + trial)
        se_rows = [trng.uniform(1e-4, 10.0, size=12) for _ in range(4)]
        scales = trng.uniform(0.1, 10.0, size=4)
        p_raw = snr_priority(se_rows)
        p_scaled = snr_priority([s * c for s, c in zip(se_rows, scales)])
        np.testing.assert_array_equal(np.argsort(p_raw),
                                      np.argsort(p_scaled))
        np.testing.assert_allclose(p_raw, p_scaled, rtol=1e-12)
    print(f"[PASS] split gain: first-order within {worst:.2%} of exact "
          f"(<5%) on the 3x3 grid; ranking invariant to per-camera "
          f"rescaling over 20 trials")


# ---------------------------------------------------------------------------
# 6. pruning contract


def _occlusion_scene():
    """Six well-seen blobs, one opaque wall, and one Gaussian hidden behind
    the wall from every camera.  Ground truth comes from the visible part
    only, so the hidden Gaussian is pure dead weight.
    """
    visible_pos = np.array([
        [-2.2, 0.0, 0.0], [-1.8, 0.6, 0.0], [1.8, -0.6, 0.0],
        [2.2, 0.0, 0.0], [0.0, 1.9, 0.0], [0.0, -1.9, 0.0],
    ])
    n_vis = len(visible_pos)
    rng = np.random.default_rng(12)
    gt = GaussianCloud(
        positions=np.vstack([visible_pos, [[0.0, 0.0, 2.0]]]),
        sizes=np.vstack([np.full((n_vis, 3), 0.15),
                         [[0.4, 0.4, 0.02]]]),
        rotations=np.tile([1.0, 0.0, 0.0, 0.0], (n_vis + 1, 1)),
        opacity_logits=np.concatenate([np.full(n_vis, 1.4), [6.0]]),
        sh_coeffs=np.concatenate([
            rng.uniform(-0.8, 0.8, size=(n_vis, 1, 3)),
            [[[0.9, 0.9, 0.9]]],
        ]),
    )
    eyes = [(-0.4, 0.6, 8.0), (0.0, -0.5, 8.0), (0.5, 0.3, 8.0),
            (-0.2, -0.3, 8.0)]
    cameras = []
    for cid, eye in enumerate(eyes):
        cam = look_at_camera(cid, np.array(eye), np.zeros(3),
                             width=64, height=64, focal=80.0,
                             up=(0.0, 1.0, 0.0))
        out, _ = render_forward(gt, cam)
        cam.gt_image = out.image
        cameras.append(cam)

    hidden = GaussianCloud(
        positions=np.array([[0.0, 0.0, 0.0]]),
        sizes=np.full((1, 3), 0.06),
        rotations=np.array([[1.0, 0.0, 0.0, 0.0]]),
        opacity_logits=np.array([0.4]),
        sh_coeffs=np.array([[[0.5, -0.5, 0.2]]]),
    )
    init = gt.append(hidden)
    return Scene(cameras=cameras, train_ids=[0, 1, 2], test_ids=[3],
                 init_cloud=init, gt_cloud=gt)


def test_pruning_contract(split_table):
    """The prune rule keeps everything at or above the 0.02 score threshold
    and never removes more than 1% of the cloud per event; in an
    end-to-end run, a fully occluded Gaussian is gone within two
    densification events.
    """
    # threshold: strictly-below scores are selected, nothing else (cap
    # disabled here so the two rules are checked in isolation)
    scores = np.array([0.5, 0.0199, 0.02, 0.3, 0.00001, 0.02001])
    np.testing.assert_array_equal(select_prune(scores, max_fraction=1.0),
                                  [1, 4])
    # cap: 17 of 250 fall below the threshold but only ceil(1% of 250) = 3
    # may go, and they must be the three lowest
    big = np.full(250, 0.5)
    low_idx = np.arange(20, 241, 13)  # 17 entries
    big[low_idx] = np.linspace(0.001, 0.0199, low_idx.size)
    picked = select_prune(big)
    np.testing.assert_array_equal(picked, low_idx[:3])

    # end-to-end: the hidden Gaussian must disappear within two events
    scene = _occlusion_scene()
    hidden_pos = scene.init_cloud.positions[-1].copy()
    config = TrainConfig(iterations=160, budget=scene.init_cloud.count,
                         seed=0, densify_start=40, densify_interval=40)
    result = train(config, scene, split_table=split_table)
    dists = np.linalg.norm(result.cloud.positions - hidden_pos, axis=1)
    assert dists.min() > 0.3, (
        f"a Gaussian is still {dists.min():.3f} from the occluded start "
        f"after 2 densify events")
    assert result.cloud.count <= scene.init_cloud.count
    print(f"[PASS] pruning contract: threshold 0.02 + 1%-per-event cap on "
          f"constructed vectors; occluded Gaussian pruned within 2 events "
          f"(nearest survivor {dists.min():.2f} away)")


# ---------------------------------------------------------------------------
# 7. precision fusion


def test_precision_fusion():
    """Precision is additive over cameras (a duplicated camera contributes
    twice, exactly), the two-orthogonal-unit-camera configuration gives a
    confidence radius of exactly 1.0, and a rigid rotation of the whole
    rig changes nothing to 1e-10.
    """
    # additivity, bit level, across several poses
    eyes = [(3.0, 0.5, 1.0), (-2.0, 2.0, 1.5), (0.5, -3.0, 2.0),
            (1.0, 1.0, 4.0), (-1.5, -0.5, 2.5)]
    for cid, eye in enumerate(eyes):
        cam = look_at_camera(cid, np.array(eye), np.zeros(3),
                             width=16, height=16, focal=20.0)
        single = fuse_precision([cam], np.zeros(3))
        double = fuse_precision([cam, cam], np.zeros(3))
        np.testing.assert_array_equal(double.precision,
                                      2.0 * single.precision)
        assert double.delta == pytest.approx(single.delta / np.sqrt(2.0),
                                             rel=1e-15)

    # closed form: the point (0,0,1) sits at unit depth both for a camera
    # at the origin looking +z (term diag(1,1,0)) and for one at (1,0,1)
    # looking -x (term diag(0,1,1)); with f = sigma_uv = 1 the fused
    # precision is diag(1,2,1), trace exactly 4, delta exactly 1
    cam_z = identity_camera(focal=1.0)
    w2c = np.array([
        [0.0, 0.0, 1.0, -1.0],
        [0.0, 1.0, 0.0, 0.0],
        [-1.0, 0.0, 0.0, 1.0],
        [0.0, 0.0, 0.0, 1.0],
    ])
    cam_x = Camera(camera_id=1, width=8, height=8, fx=1.0, fy=1.0,
                   cx=3.5, cy=3.5, world_to_camera=w2c)
    est = fuse_precision([cam_z, cam_x], np.array([0.0, 0.0, 1.0]))
    np.testing.assert_array_equal(est.precision,
                                  np.diag([1.0, 2.0, 1.0]))
    assert est.delta == 1.0

    # rotation equivariance: rotate eyes, targets and the query point
    rng = np.random.default_rng(77)
    base_eyes = [np.array(e) for e in eyes[:3]]
    point = np.array([0.2, -0.1, 0.3])
    cams = [look_at_camera(i, e, np.zeros(3), width=16, height=16,
                           focal=20.0) for i, e in enumerate(base_eyes)]
    ref = fuse_precision(cams, point)
    worst = 0.0
    for _ in range(10):
        q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        if np.linalg.det(q) < 0:
            q[:, 0] = -q[:, 0]
        up = q @ np.array([0.0, 0.0, 1.0])
        rcams = [look_at_camera(i, q @ e, np.zeros(3), width=16, height=16,
                                focal=20.0, up=up)
                 for i, e in enumerate(base_eyes)]
        rot = fuse_precision(rcams, q @ point)
        worst = max(worst, abs(rot.delta - ref.delta),
                    float(np.max(np.abs(rot.precision
                                        - q @ ref.precision @ q.T))))
        assert abs(rot.delta - ref.delta) < 1e-10
        np.testing.assert_allclose(rot.precision, q @ ref.precision @ q.T,
                                   atol=1e-10)
    print(f"[PASS] precision fusion: duplicate-camera additivity exact, "
          f"orthogonal-pair delta == 1.0 exactly, rotation equivariance "
          f"worst dev {worst:.1e} < 1e-10")


# ---------------------------------------------------------------------------
# 8-9. desk-scale training comparisons (shared run cache)


DESK_SEEDS = (0, 1, 2)
_DESK_CACHE = {}


@pytest.fixture(scope="module")
def desk(split_table):
    scene = synth_scene(n_gaussians=200, n_cameras=24, image_size=96,
                        seed=0)
    return scene, split_table


def _desk_psnr(desk, seed, **overrides):
    key = (seed, tuple(sorted(overrides.items())))
    if key not in _DESK_CACHE:
        scene, table = desk
        kwargs = dict(iterations=5000, budget=200, seed=seed)
        kwargs.update(overrides)
        result = train(TrainConfig(**kwargs), scene, split_table=table)
        report = evaluate(result.cloud, scene.test_cameras)
        _DESK_CACHE[key] = report["mean_psnr"]
    return _DESK_CACHE[key]


def test_desk_scale_quality(desk):
    """Held-out quality on a 200-Gaussian synthetic scene (24 cameras at
    96x96, trained 5000 iterations from 20 Gaussians): the full recipe at
    budget 200 and at half budget must both match or beat the classic
    baseline at budget 200, as medians over three seeds, inside 20
    minutes.
    """
    t0 = time.perf_counter()
    full = [_desk_psnr(desk, s) for s in DESK_SEEDS]
    half = [_desk_psnr(desk, s, budget=100) for s in DESK_SEEDS]
    base = [_desk_psnr(desk, s, baseline_mode=True) for s in DESK_SEEDS]
    elapsed = time.perf_counter() - t0

    med_full = statistics.median(full)
    med_half = statistics.median(half)
    med_base = statistics.median(base)
    assert med_full >= med_base, (
        f"full budget {med_full:.2f} dB < baseline {med_base:.2f} dB")
    assert med_half >= med_base, (
        f"half budget {med_half:.2f} dB < baseline {med_base:.2f} dB")
    assert elapsed < 1200.0, f"9 runs took {elapsed:.0f}s (limit 1200s)"
    print(f"[PASS] desk-scale quality: full {med_full:.2f} dB and half "
          f"{med_half:.2f} dB >= baseline {med_base:.2f} dB "
          f"(medians of 3 seeds), {elapsed:.0f}s")


ABLATIONS = (
    "use_sparse_adam",
    "use_state_inheritance",
    "use_scaled_updates",
    "use_effective_opacity_pruning",
    "use_snr_prioritization",
)


def test_ablation_directionality(desk):
    """Turning any single feature off may not help: for each ablation,
    the seed-paired PSNR margin (full minus ablated, same scene and seed)
    must be >= -0.1 dB at the median of three seeds.

    The comparison is paired per seed because a single densification
    decision forks the whole trajectory: the full recipe's own spread
    across these three seeds is ~2 dB, an order of magnitude above the
    0.1 dB slack, so comparing per-arm medians would measure seed luck
    rather than the feature's direction.
    """
    full = {s: _desk_psnr(desk, s) for s in DESK_SEEDS}
    lines = []
    for flag in ABLATIONS:
        margins = [full[s] - _desk_psnr(desk, s, **{flag: False})
                   for s in DESK_SEEDS]
        med = statistics.median(margins)
        lines.append(f"{flag}=off -> {med:+.2f} dB")
        assert med >= -0.1, (
            f"{flag}=off beats the full recipe by {-med:.2f} dB at the "
            f"median seed (margins {[round(m, 2) for m in margins]})")
    print(f"[PASS] ablation directionality: median seed-paired margin "
          f">= -0.1 dB for all five features ({'; '.join(lines)})")


# ---------------------------------------------------------------------------
# 10. determinism and formats


def test_determinism_and_formats(split_table, tmp_path):
    """Same seed, different thread counts: bit-identical traces and
    parameters.  PLY and PNG quantize once and are fixed points afterwards;
    the trace CSV round-trips exactly.
    """
    scene = synth_scene(n_gaussians=16, n_cameras=5, image_size=20, seed=3)
    results = []
    for n_threads in (1, 2):
        config = TrainConfig(iterations=120, budget=8, seed=1,
                             densify_start=40, densify_interval=40,
                             render=RenderConfig(n_threads=n_threads))
        results.append(train(config, scene, split_table=split_table))
    a, b = results
    assert a.trace == b.trace
    np.testing.assert_array_equal(a.cloud.positions, b.cloud.positions)
    np.testing.assert_array_equal(a.cloud.sh_coeffs, b.cloud.sh_coeffs)
    np.testing.assert_array_equal(a.deltas, b.deltas)

    # PLY: float32 quantization happens once; the second pass is exact
    ply1 = tmp_path / "a.ply"
    ply2 = tmp_path / "b.ply"
    save_ply(a.cloud, ply1)
    once = load_ply(ply1)
    save_ply(once, ply2)
    twice = load_ply(ply2)
    for name in ("positions", "sizes", "rotations", "opacity_logits",
                 "sh_coeffs"):
        np.testing.assert_array_equal(getattr(once, name),
                                      getattr(twice, name))
    save_ply(twice, tmp_path / "c.ply")
    assert (tmp_path / "c.ply").read_bytes() == ply2.read_bytes()

    # PNG: 8-bit quantization once, then a fixed point; close to original
    img = np.random.default_rng(4).uniform(size=(9, 7, 3))
    png1 = tmp_path / "a.png"
    png2 = tmp_path / "b.png"
    save_image(png1, img)
    first = load_image(png1)
    save_image(png2, first)
    second = load_image(png2)
    np.testing.assert_array_equal(first, second)
    np.testing.assert_allclose(first, img, atol=0.011)

    # trace CSV: exact float round-trip
    csv_path = tmp_path / "trace.csv"
    write_trace_csv(csv_path, a.trace)
    back = read_trace_csv(csv_path)
    assert back == a.trace
    print(f"[PASS] determinism & formats: thread counts 1/2 bit-identical "
          f"({len(a.trace)} trace rows); PLY/PNG quantize once then fixed "
          f"point; CSV exact")
