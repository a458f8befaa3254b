"""X-NOCS toolkit: ground-truth NOCS/X-NOCS maps by depth peeling, multiview
union aggregation, Chamfer evaluation, DLT pose recovery and verified
permutation-equivariant kernels."""
from .aggregate import readout, union
from .core import (
    Camera,
    DecodeError,
    InputError,
    MapKind,
    Mask,
    Mesh,
    NocsMap,
    NumericalError,
    PointCloud,
    XnocsError,
    mask_of,
)
from .io import decode_map, encode_map
from .metrics import ChamferResult, chamfer, chamfer_bruteforce, sample_surface
from .normalize import NormalizationRecord, denormalize_points, normalize_mesh
from .peeler import cast_all, peel, peel_color, sample_cameras
from .pose import PoseEstimate, correspondences_from_map, dlt_pose

__version__ = "0.1.0"
