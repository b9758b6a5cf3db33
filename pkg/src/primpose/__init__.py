"""Category-level shape and similarity-pose estimation from semantic sphere primitives."""

from .descriptor import QuadrupleSample, atomic_descriptor, descriptor_residual, sample_quadruples, shape_descriptor
from .errors import PrimposeError
from .evaluation import chamfer, iou3d, pose_error
from .geometry import Sim3Transform, sim3_apply, umeyama_align
from .labeling import DUST, LabeledPointCloud, SemanticCenters, centralize, oracle_label_observation
from .optimizer import OptimizerConfig, RansacConfig, optimize_shape, optimize_shape_ransac
from .pipeline import EstimationResult, estimate, recover_pose
from .primitives import LinearShapeBasis, PrimitiveSet, decode, fit_primitives, fit_shape_basis
from .shapes import CATEGORIES, SymmetrySpec

__version__ = "0.1.0"
