"""
Rendering a hand-built Gaussian cloud
=====================================

Three anisotropic Gaussians at different depths, viewed by two cameras.
Front-to-back alpha compositing means the nearest Gaussian soaks up most
of the pixel; whatever transmittance is left goes to the ones behind it
and finally to the background.
"""

import numpy as np

from splatlab import GaussianCloud, look_at_camera, render_forward
from splatlab.io import save_image

# Band-0 spherical harmonics are just a scaled constant: a coefficient of
# (c - 0.5) / C0 reproduces the plain RGB color c from any direction.
C0 = 0.28209479177387814


def flat_color(rgb):
    return (np.asarray(rgb, dtype=float).reshape(1, 1, 3) - 0.5) / C0


# a red disc in front, a green sphere in the middle, a blue slab behind
cloud = GaussianCloud(
    positions=np.array([[0.0, 0.0, 2.0],
                        [0.15, 0.1, 3.0],
                        [-0.1, -0.1, 4.5]]),
    sizes=np.array([[0.25, 0.25, 0.05],
                    [0.2, 0.2, 0.2],
                    [0.6, 0.4, 0.1]]),
    rotations=np.array([[1.0, 0.0, 0.0, 0.0]] * 3),
    opacity_logits=np.array([0.8, 0.4, 1.5]),
    sh_coeffs=np.concatenate([flat_color([0.9, 0.2, 0.2]),
                              flat_color([0.2, 0.8, 0.3]),
                              flat_color([0.25, 0.35, 0.9])]),
)

# a straight-on view and a three-quarter view
cam_front = look_at_camera(0, eye=np.array([0.0, 0.0, 0.0]),
                           target=np.array([0.0, 0.0, 3.0]),
                           width=96, height=96, focal=110.0,
                           up=(0.0, 1.0, 0.0))
cam_side = look_at_camera(1, eye=np.array([2.2, 0.8, 1.0]),
                          target=np.array([0.0, 0.0, 3.0]),
                          width=96, height=96, focal=110.0)

for cam, name in ((cam_front, "front"), (cam_side, "side")):
    out, aux = render_forward(cloud, cam)
    center = out.image[48, 48]
    print(f"{name:5s} view: center pixel rgb = {np.round(center, 3)}, "
          f"leftover transmittance = {out.final_transmittance[48, 48]:.3f}")
    print(f"            per-Gaussian compositing weight totals = "
          f"{np.round(aux.weight_sum, 1)} over footprints {aux.footprint}")
    save_image(f"demo_render_{name}.png", out.image)
    print(f"            wrote demo_render_{name}.png")

# The front view stacks all three on the optical axis: the red disc takes
# its share first, the green sphere gets a share of what remains, and the
# blue slab sees only the leftovers.  From the side the depth order is
# the same but the splats no longer overlap as much.
