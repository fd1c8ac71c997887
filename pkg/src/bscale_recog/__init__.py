"""Automatic object recognition in 3D scenes from weighted ball-scale structure."""

from .bscale import DEFAULT_KMAX, DEFAULT_TS, HomogeneityParams, WBsResult, compute_wbs, threshold_wbs
from .evaluation import EvalRecord, combination_sweep, loocv, prepare_features
from .phantom import PhantomSpec, generate_phantom, phantom_subjects
from .pose import DeltaF, PCSystem, RelationF, learn_relationship, pc_from_all_objects, pc_from_mask
from .recognition import Pose, RecognitionResult, apply_pose, coarse_recognize, refine_with_skin
from .shape_model import ModelAssembly, ObjectModel, align_shapes, assemble_model, build_object_model
from .training import WBsSettings, train_assembly
from .volume import BinaryMask, Scene, load_mask, load_volume, save_volume

__version__ = "0.1.0"
