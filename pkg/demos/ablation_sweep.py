"""
What each training feature buys
===============================

The same short training run with individual features switched off, plus
the classic clone/split recipe for reference.  Margins are small at this
toy scale (the acceptance tests use a bigger scene and three seeds); the
point here is to show every switch is live and what it controls.
"""

import time

from splatlab import TrainConfig, evaluate, learn_split_table, synth_scene, \
    train

scene = synth_scene(n_gaussians=40, n_cameras=10, image_size=48, seed=5)
table = learn_split_table(grid_size=16)

arms = [
    ("full recipe", {}),
    ("no sparse stepping", {"use_sparse_adam": False}),
    ("no state inheritance at split", {"use_state_inheritance": False}),
    ("no confidence-scaled updates", {"use_scaled_updates": False}),
    ("no effective-opacity pruning", {"use_effective_opacity_pruning": False}),
    ("no error-share split ranking", {"use_snr_prioritization": False}),
    ("classic baseline recipe", {"baseline_mode": True}),
]

print(f"{'configuration':32s} {'PSNR':>7s} {'SSIM':>7s} {'count':>6s} "
      f"{'secs':>5s}")
for label, overrides in arms:
    config = TrainConfig(iterations=1500, budget=40, seed=0,
                         densify_start=100, densify_interval=100,
                         **overrides)
    t0 = time.perf_counter()
    result = train(config, scene, split_table=table)
    dt = time.perf_counter() - t0
    report = evaluate(result.cloud, scene.test_cameras)
    print(f"{label:32s} {report['mean_psnr']:7.2f} "
          f"{report['mean_ssim']:7.3f} {result.cloud.count:6d} {dt:5.1f}")

# Turning off the confidence scaling is the most dramatic: the same
# learning rate that is gentle as a fraction of each Gaussian's
# uncertainty radius is far too hot as a raw step.
