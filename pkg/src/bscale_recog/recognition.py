"""One-shot placement of a trained model assembly in a new scene.

The test scene's weighted b-scale mask gives an intensity PC system; the
learned relationship maps it to a predicted object-union PC system, and the
assembly is moved there by one similarity transform.  No search is done
unless the optional ΔF grid probe is requested.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from . import rotations
from .bscale import WBsResult
from .pose import DegeneratePCError, PCSystem, points_meb_diagonal
from .shape_model import DegenerateShapeError, ModelAssembly, NonSimpleSliceError, landmark_object
from .training import WBsSettings, intensity_structure
from .volume import BinaryMask, Scene

log = logging.getLogger(__name__)

DEFAULT_SKIN_CUTOFF = 0.05  # fraction of the scene maximum marking body


class RecognitionError(RuntimeError):
    pass


@dataclass(frozen=True)
class Pose:
    s: float
    t: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        if not self.s > 0:
            raise ValueError(f"pose scale must be positive, got {self.s}")
        if not rotations.is_rotation(self.R, atol=1e-6):
            raise ValueError("pose rotation is not a proper rotation")

    @classmethod
    def identity(cls) -> "Pose":
        return cls(1.0, np.zeros(3), np.eye(3))

    def to_dict(self) -> dict:
        return {"s": self.s, "t": self.t.tolist(), "R": self.R.ravel().tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Pose":
        return cls(float(d["s"]), np.asarray(d["t"], float), np.asarray(d["R"], float).reshape(3, 3))


@dataclass(frozen=True)
class RecognitionResult:
    pose: Pose
    placed: dict[str, np.ndarray]
    pc_bi: PCSystem
    interval: tuple[float, float]
    predicted_origin: np.ndarray
    predicted_axes: np.ndarray
    diagnostics: dict = field(default_factory=dict)
    wbs_mask: BinaryMask | None = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        return {
            "pose": self.pose.to_dict(),
            "placed": {k: v.tolist() for k, v in self.placed.items()},
            "diagnostics": {
                "pc_bi": self.pc_bi.to_dict(),
                "wbs_interval": list(self.interval),
                "predicted_origin": self.predicted_origin.tolist(),
                "predicted_axes": self.predicted_axes.tolist(),
                **self.diagnostics,
            },
        }


def model_centroid(assembly: ModelAssembly) -> np.ndarray:
    if assembly.frame is not None:
        return assembly.frame.origin
    return assembly.all_points().mean(axis=0)


def transform_points(points: np.ndarray, pose: Pose, center: np.ndarray) -> np.ndarray:
    return pose.s * (np.asarray(points) - center) @ pose.R.T + center + pose.t


def apply_pose(assembly: ModelAssembly, pose: Pose) -> dict[str, np.ndarray]:
    """Mean shapes of every object moved by ``pose`` about the model centroid."""
    c = model_centroid(assembly)
    return {m.label: transform_points(m.mean_points, pose, c) for m in assembly.models}


def _require_trained(assembly: ModelAssembly) -> None:
    if assembly.relation is None or assembly.frame is None or assembly.frame_meb is None:
        raise RecognitionError("model assembly carries no learned relationship")


def pose_from_intensity(assembly: ModelAssembly, pc_bi: PCSystem, meb_bi: float
                        ) -> tuple[Pose, np.ndarray, np.ndarray]:
    """Pose predicted from a test intensity system, with the predicted
    object-union origin and axes."""
    _require_trained(assembly)
    F, frame = assembly.relation, assembly.frame
    origin = pc_bi.origin + F.t
    # training has axes_b = R axes_o, so the objects' axes are R^T axes_b
    axes = F.R.T @ pc_bi.axes
    s = F.s * meb_bi / assembly.frame_meb
    pose = Pose(float(s), origin - frame.origin, axes @ frame.axes.T)
    return pose, origin, axes


def coarse_recognize(test: Scene, assembly: ModelAssembly, settings: WBsSettings = WBsSettings(),
                     wbs: WBsResult | None = None) -> RecognitionResult:
    """Place ``assembly`` in ``test`` from the scene's intensity structure alone.

    ``wbs`` may carry a precomputed weighted b-scale of ``test`` (it must have
    been computed with ``settings``).
    """
    _require_trained(assembly)
    try:
        it = intensity_structure(test, settings, wbs)
    except (DegeneratePCError, ValueError) as exc:
        raise RecognitionError(f"weighted b-scale mask unusable: {exc}") from exc
    pose, origin, axes = pose_from_intensity(assembly, it.pc, it.meb)
    return RecognitionResult(pose, apply_pose(assembly, pose), it.pc, it.interval, origin, axes,
                             {"wbs_mask_voxels": it.mask.count, "meb_bi": it.meb}, it.mask)


# ---------------------------------------------------------------------------
# refinements


def extract_body(scene: Scene, cutoff: float = DEFAULT_SKIN_CUTOFF) -> BinaryMask:
    """Largest component above ``cutoff`` times the scene maximum, holes filled."""
    f = scene.data
    body = f > cutoff * float(f.max())
    lab, n = ndimage.label(body)
    if n == 0:
        return BinaryMask(body, scene.spacing)
    sizes = np.bincount(lab.ravel())[1:]
    body = lab == 1 + int(np.argmax(sizes))
    return BinaryMask(ndimage.binary_fill_holes(body), scene.spacing)


def containment(points: np.ndarray, mask: BinaryMask) -> float:
    """Fraction of ``points`` (mm) whose nearest voxel lies inside ``mask``."""
    idx = np.floor(np.asarray(points) / np.asarray(mask.spacing) + 0.5).astype(np.int64)
    dims = np.asarray(mask.dims)
    ok = np.all((idx >= 0) & (idx < dims), axis=1)
    inside = np.zeros(len(idx), dtype=bool)
    inside[ok] = mask.data[tuple(idx[ok].T)]
    return float(inside.mean()) if len(idx) else 0.0


@dataclass(frozen=True)
class Refinement:
    pose: Pose
    containment: float
    applied: bool


def refine_with_skin(result: RecognitionResult, assembly: ModelAssembly, skin: BinaryMask | None,
                     refine_scale: bool = False) -> Refinement:
    """Shift (and optionally rescale) the pose so the placed skin model matches
    the test skin mask in centroid and box diagonal.  Rotation is kept."""
    pose = result.pose
    if skin is None or "skin" not in assembly.labels:
        log.warning("skin refinement skipped: %s", "no skin mask" if skin is None else "no skin model")
        return Refinement(pose, containment(np.vstack(list(result.placed.values())), skin)
                          if skin is not None else float("nan"), False)
    model = assembly.model("skin")
    n_slices = model.n // model.points_per_slice
    try:
        target = landmark_object(skin, "skin", model.points_per_slice, n_slices).landmarks
    except (DegenerateShapeError, NonSimpleSliceError) as exc:
        log.warning("skin refinement skipped: %s", exc)
        return Refinement(pose, containment(np.vstack(list(result.placed.values())), skin), False)
    placed = result.placed["skin"]
    kappa = points_meb_diagonal(target) / points_meb_diagonal(placed) if refine_scale else 1.0
    c = model_centroid(assembly)
    rel = model.mean_points.mean(axis=0) - c
    t = target.mean(axis=0) - c - kappa * pose.s * (pose.R @ rel)
    new = Pose(pose.s * kappa, t, pose.R)
    pts = np.vstack(list(apply_pose(assembly, new).values()))
    return Refinement(new, containment(pts, skin), True)


def _distance_map(mask: BinaryMask) -> np.ndarray:
    return ndimage.distance_transform_edt(~mask.data, sampling=mask.spacing)


def _mean_distance(points: np.ndarray, dist: np.ndarray, spacing) -> float:
    idx = np.floor(points / np.asarray(spacing) + 0.5).astype(np.int64)
    idx = np.clip(idx, 0, np.asarray(dist.shape) - 1)
    return float(dist[tuple(idx.T)].mean())


def probe_delta_f(result: RecognitionResult, assembly: ModelAssembly, wbs_mask: BinaryMask) -> Pose:
    """Best pose on the ``{-1, 0, 1}`` grid of ΔF standard deviations.

    Each of scale, the three translations and the three Euler angles is
    stepped by its training spread; the score is the mean distance from the
    placed landmarks to the weighted b-scale mask.  The coarse pose is
    scored first and wins ties.
    """
    _require_trained(assembly)
    dF, F = assembly.delta, assembly.relation
    if dF is None:
        return result.pose
    dist = _distance_map(wbs_mask)
    c = model_centroid(assembly)
    pts = assembly.all_points()
    base = result.pose
    steps = [(0, -1, 1)] * 7
    best, best_score = base, _mean_distance(transform_points(pts, base, c), dist, wbs_mask.spacing)
    for combo in itertools.product(*steps):
        if not any(combo):
            continue
        k = np.asarray(combo, dtype=float)
        s = base.s * (1.0 + k[0] * dF.s_std / F.s)
        if s <= 0:
            continue
        cand = Pose(s, base.t + k[1:4] * dF.t_std, rotations.from_euler(k[4:] * dF.euler_std) @ base.R)
        score = _mean_distance(transform_points(pts, cand, c), dist, wbs_mask.spacing)
        if score < best_score:
            best, best_score = cand, score
    return best


def with_pose(result: RecognitionResult, assembly: ModelAssembly, pose: Pose, **diagnostics) -> RecognitionResult:
    return replace(result, pose=pose, placed=apply_pose(assembly, pose),
                   diagnostics={**result.diagnostics, **diagnostics})
