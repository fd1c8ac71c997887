"""Principal-component structure systems and the shape/intensity relationship.

A PC system is the centroid plus canonicalized principal axes of a voxel
set.  The relationship ``F = (s, t, R)`` ties the system of the segmented
objects (shape structure) to the system of the thresholded weighted b-scale
mask (intensity structure) of the same subject:

* ``s``: ratio of bounding-box diagonals, objects over intensity mask;
* ``t``: centroid offset ``origin_o - origin_b`` in mm;
* ``R``: rotation with ``axes_b = R @ axes_o``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import rotations
from .volume import BinaryMask, voxel_coordinates


class DegeneratePCError(ValueError):
    """Voxel set too small or flat to define three principal axes."""


@dataclass(frozen=True)
class PCSystem:
    origin: np.ndarray
    axes: np.ndarray  # columns are the principal axes
    eigenvalues: np.ndarray

    def to_dict(self) -> dict:
        return {
            "origin": self.origin.tolist(),
            "axes": self.axes.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PCSystem":
        return cls(np.asarray(d["origin"], float), np.asarray(d["axes"], float), np.asarray(d["eigenvalues"], float))


def canonicalize_axes(vecs: np.ndarray) -> np.ndarray:
    """Fix eigenvector signs: each column's largest-magnitude component is
    made positive (near-ties go to the lowest coordinate index); the third
    column flips if the frame is left-handed."""
    out = np.array(vecs, dtype=float, copy=True)
    for j in range(3):
        col = np.abs(out[:, j])
        a = int(np.flatnonzero(col >= col.max() - 1e-9)[0])
        if out[a, j] < 0:
            out[:, j] *= -1
    if np.linalg.det(out) < 0:
        out[:, 2] *= -1
    return out


def pc_from_points(points: np.ndarray, rel_tol: float = 1e-10) -> PCSystem:
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) < 4:
        raise DegeneratePCError(f"need at least 4 points, got {len(pts)}")
    origin = pts.mean(axis=0)
    centered = pts - origin
    cov = centered.T @ centered / len(pts)
    vals, vecs = np.linalg.eigh(cov)
    vals, vecs = vals[::-1], vecs[:, ::-1]
    if vals[0] <= 0 or vals[2] <= rel_tol * vals[0]:
        raise DegeneratePCError(f"coplanar or collinear point set (eigenvalues {vals})")
    return PCSystem(origin, canonicalize_axes(vecs), np.clip(vals, 0, None))


def pc_from_mask(mask: BinaryMask) -> PCSystem:
    """PC system of the physical centers of the true voxels."""
    return pc_from_points(voxel_coordinates(mask.data, mask.spacing))


def union_mask(masks: Sequence[BinaryMask]) -> BinaryMask:
    if not masks:
        raise ValueError("no masks given")
    data = np.zeros(masks[0].dims, dtype=bool)
    for m in masks:
        if m.dims != masks[0].dims:
            raise ValueError("masks differ in dims")
        data |= m.data
    return BinaryMask(data, masks[0].spacing)


def pc_from_all_objects(masks: Sequence[BinaryMask]) -> PCSystem:
    return pc_from_mask(union_mask(masks))


def meb_diagonal(mask: BinaryMask) -> float:
    """Diagonal length (mm) of the axis-aligned box around the true voxel centers."""
    idx = np.argwhere(mask.data)
    if len(idx) == 0:
        raise ValueError("empty mask has no bounding box")
    ext = (idx.max(axis=0) - idx.min(axis=0)) * np.asarray(mask.spacing)
    return float(np.sqrt((ext * ext).sum()))


def points_meb_diagonal(points: np.ndarray) -> float:
    pts = np.asarray(points, dtype=float)
    ext = pts.max(axis=0) - pts.min(axis=0)
    return float(np.sqrt((ext * ext).sum()))


def estimate_rotation(pc_o: PCSystem, pc_b: PCSystem) -> np.ndarray:
    """``R`` with ``pc_b.axes == R @ pc_o.axes``."""
    return pc_b.axes @ pc_o.axes.T


# ---------------------------------------------------------------------------
# relationship


@dataclass(frozen=True)
class RelationF:
    s: float
    t: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        if not self.s > 0:
            raise ValueError(f"scale must be positive, got {self.s}")


@dataclass(frozen=True)
class DeltaF:
    s_std: float
    t_std: np.ndarray
    euler_std: np.ndarray


@dataclass(frozen=True)
class TrainingPair:
    """Per-subject shape system and intensity system, with box diagonals."""

    pc_o: PCSystem
    meb_o: float
    pc_b: PCSystem
    meb_b: float

    @classmethod
    def from_masks(cls, object_masks: Sequence[BinaryMask], wbs_mask: BinaryMask) -> "TrainingPair":
        union = union_mask(object_masks)
        return cls(pc_from_mask(union), meb_diagonal(union), pc_from_mask(wbs_mask), meb_diagonal(wbs_mask))


def subject_relation(pair: TrainingPair) -> RelationF:
    return RelationF(
        s=pair.meb_o / pair.meb_b,
        t=pair.pc_o.origin - pair.pc_b.origin,
        R=estimate_rotation(pair.pc_o, pair.pc_b),
    )


def learn_relationship(pairs: Sequence[TrainingPair]) -> tuple[RelationF, DeltaF]:
    """Mean relationship over subjects and its per-component spread.

    Spreads are population standard deviations; the rotation spread is
    taken over the Euler angles of ``R_i @ mean(R)^T``.
    """
    if len(pairs) == 0:
        raise ValueError("no training subjects")
    rel = [subject_relation(p) for p in pairs]
    s = np.array([r.s for r in rel])
    t = np.array([r.t for r in rel])
    Rs = np.array([r.R for r in rel])
    R_mean = rotations.mean_rotation(Rs)
    dev = np.array([rotations.to_euler(Ri @ R_mean.T) for Ri in Rs])
    F = RelationF(float(s.mean()), t.mean(axis=0), R_mean)
    dF = DeltaF(float(s.std()), t.std(axis=0), dev.std(axis=0))
    return F, dF
