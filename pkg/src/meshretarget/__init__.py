"""Content-aware image retargeting by mesh deformation.

A rigid mesh over the output is deformed so that object boxes keep their
aspect ratio; the input is then backward-warped through the mesh pair.
"""

from .errors import (
    DegenerateInputError,
    FoldOverError,
    NumericalError,
    OptimizationError,
    OutOfBoundsError,
    OutsideMeshError,
    RetargetError,
    UnsupportedOperationError,
)
from .geometry import (
    CellCoord,
    Mesh,
    ObjectBox,
    apply_motion,
    build_rigid_mesh,
    check_foldover,
    locate_in_deformed,
    locate_in_rigid,
    map_box,
    map_point,
    rescale_mesh,
)
from .warp import (
    RetargetResult,
    resize_bilinear,
    retarget,
    retarget_enlarge,
    retarget_reduce,
    retarget_warp,
    sample_bilinear,
)
from .objective import LossReport, LossWeights, RetargetJob, total_loss
from .optimize import OptimConfig, optimize_motion
from .metric import DistortionReport, baseline_cr, baseline_scl, distortion_error, measure_result
from .io import JobConfig

__version__ = "0.1.0"
