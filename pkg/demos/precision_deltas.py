"""
How sure are we about a point's position?
=========================================

Each camera that sees a point pins it down in the two directions of its
image plane but says nothing about depth.  Fusing the per-camera
precision matrices and converting the total to a scalar radius gives
Delta: small when many close-by cameras agree, large when the point is
far away or barely covered.  The trainer uses Delta to scale position
and size updates and to floor Gaussian sizes.
"""

import numpy as np

from splatlab import fuse_precision, look_at_camera


def rig(eyes, point, label):
    cams = [look_at_camera(i, np.asarray(e, float), np.asarray(point, float),
                           width=64, height=64, focal=64.0)
            for i, e in enumerate(eyes)]
    est = fuse_precision(cams, np.asarray(point, float))
    evals = np.sort(np.linalg.eigvalsh(est.precision))
    print(f"{label:34s} Delta = {est.delta:8.5f}   "
          f"precision eigenvalues = {np.round(evals, 1)}")
    return est


point = [0.0, 0.0, 0.0]

# one camera: depth is unconstrained (one zero eigenvalue)
rig([(2.0, 0.0, 0.0)], point, "single camera at distance 2")

# the same camera twice is twice the information: Delta drops by sqrt(2)
rig([(2.0, 0.0, 0.0)] * 2, point, "same camera counted twice")

# a second, orthogonal viewpoint fills in the missing direction
rig([(2.0, 0.0, 0.0), (0.0, 2.0, 0.0)], point, "two orthogonal cameras")

# a full ring nails the point from every side
ring = [(2.0 * np.cos(a), 2.0 * np.sin(a), 0.3)
        for a in np.linspace(0.0, 2 * np.pi, 8, endpoint=False)]
rig(ring, point, "ring of 8 cameras")

# distance matters quadratically: back the ring off and Delta grows
far_ring = [(8.0 * np.cos(a), 8.0 * np.sin(a), 1.2)
            for a in np.linspace(0.0, 2 * np.pi, 8, endpoint=False)]
rig(far_ring, point, "same ring, 4x farther")

# a point behind every camera gets the fallback radius instead:
# pixel-noise times distance over focal length at the nearest camera
est = fuse_precision([look_at_camera(0, np.array([0.0, 0.0, 2.0]),
                                     np.zeros(3), width=64, height=64,
                                     focal=64.0, up=(0, 1, 0))],
                     np.array([0.0, 0.0, 9.0]))
print(f"{'unseen point (fallback)':34s} Delta = {est.delta:8.5f}   "
      f"precision is all zeros: {not est.precision.any()}")
