"""splatlab: desk-scale differentiable 3D Gaussian splatting on the CPU.

A numpy/numba implementation of a full Gaussian-splatting training loop:
an exactly-differentiable rasterizer, a precision-aware unbiased sparse
optimizer, and budget-aware densification (density-preserving splits,
effective-opacity pruning, reconstruction-gain split ordering).
"""

import warnings as _warnings

# Old-TBB installs make numba emit a version warning on import even though it
# falls back to another threading layer cleanly; keep that noise out of
# library users' consoles.  The filter is scoped to that one message.
_warnings.filterwarnings(
    "ignore", message="The TBB threading layer requires TBB version")

from .core import (  # noqa: E402
    Camera,
    ConfigurationError,
    FormatError,
    GaussianCloud,
    Gaussian2D,
    InternalConsistencyError,
    InvalidParameterError,
    build_covariance,
    eval_sh,
    look_at_camera,
    project_to_2d,
    projection_jacobian,
    quat_rotmat_jacobian,
    quat_to_rotmat,
    sh_basis,
    sh_basis_gradient,
    sh_coeff_count,
    sh_degree_from_count,
    sort_by_depth,
)
from .renderer import (  # noqa: E402
    ParamGradients,
    RenderAux,
    RenderConfig,
    RenderOutput,
    render_backward,
    render_forward,
)
from .precision import (  # noqa: E402
    PrecisionEstimate,
    camera_precision_term,
    deltas_for_cloud,
    fuse_precision,
    min_size_clamp,
)
from .optimizer import (  # noqa: E402
    AdamState,
    ParamGroup,
    append_states,
    default_param_groups,
    inherit_states,
    remove_states,
    step_sparse,
)
from .densify import (  # noqa: E402
    DensifyReport,
    SplitTable,
    densify_step,
    effective_opacity,
    learn_split_table,
    naive_split_params,
    scheduled_count,
    select_prune,
    snr_priority,
    split_gaussians,
    split_profile_error,
)
from .metrics import l1, l1_gradient, psnr, ssim, ssim_with_gradient  # noqa: E402
from .trainer import (  # noqa: E402
    Scene,
    TrainConfig,
    TrainResult,
    compute_loss,
    evaluate,
    synth_scene,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "Camera", "GaussianCloud", "Gaussian2D",
    "ConfigurationError", "FormatError", "InternalConsistencyError",
    "InvalidParameterError",
    "build_covariance", "eval_sh", "look_at_camera", "project_to_2d",
    "projection_jacobian", "quat_rotmat_jacobian", "quat_to_rotmat",
    "sh_basis", "sh_basis_gradient", "sh_coeff_count", "sh_degree_from_count",
    "sort_by_depth",
    "ParamGradients", "RenderAux", "RenderConfig", "RenderOutput",
    "render_backward", "render_forward",
    "PrecisionEstimate", "camera_precision_term", "deltas_for_cloud",
    "fuse_precision", "min_size_clamp",
    "AdamState", "ParamGroup", "append_states", "default_param_groups",
    "inherit_states", "remove_states", "step_sparse",
    "DensifyReport", "SplitTable", "densify_step", "effective_opacity",
    "learn_split_table", "naive_split_params", "scheduled_count",
    "select_prune", "snr_priority", "split_gaussians", "split_profile_error",
    "l1", "l1_gradient", "psnr", "ssim", "ssim_with_gradient",
    "Scene", "TrainConfig", "TrainResult", "compute_loss", "evaluate",
    "synth_scene", "train",
    "__version__",
]
