"""curvitopo: topology-preserving assessment for curvilinear 3D structures.

Soft skeletonization and topological smoothing, a geometric (mean pixel
radius) estimator for their iteration count, clDice/GATS scores and losses
with exact reverse-mode gradients, Betti-number evaluation, and synthetic
tubular phantoms with analytic ground truth.
"""

from .errors import (
    AllSlicesEmpty,
    CurvitopoError,
    DegenerateRangeWarning,
    DoesNotFit,
    IoFailure,
    NoBackground,
    NonFinite,
    NotApplicable,
    NotEnoughPlanes,
    ShapeMismatch,
    UnsupportedDtype,
)
from .geometry import (
    MprResult,
    Slice2D,
    canny2d,
    edt2d,
    extract_slices,
    medial_axis2d,
    mpr,
    thin3d,
)
from .loss import (
    GradCheckReport,
    LossValue,
    Tape,
    cldice_loss,
    gats_loss,
    grad_check,
    multihead_loss,
)
from .metrics import (
    BettiTriple,
    MetricReport,
    ari,
    betti,
    betti_error,
    cldice_score,
    dice,
    gats_score,
    rho_dice,
    tprec,
    tsens,
)
from .morphology import (
    PoolKernel,
    pool,
    skeleton_trace,
    smoothing_trace,
    soft_skeletonize,
    thinning_progress,
    topo_smooth,
)
from .phantom import GroundTruth, PhantomSpec, generate, perturb
from .volume import (
    BinaryVolume,
    Volume,
    flip,
    minmax_normalize,
    preprocess,
    read_volume,
    rotate90,
    write_volume,
)

__version__ = "0.1.0"
