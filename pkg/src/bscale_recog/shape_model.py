"""Multi-object statistical shape models built from binary masks.

Landmarks are placed slice by slice: each sampled slice contributes ``m``
points spaced equally in arc length along the outer boundary of the object
cross-section, starting at a canonical point.  Training shapes of all
objects are aligned jointly (one similarity transform per subject) so the
relative layout of the objects survives alignment.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage

from .pose import DeltaF, PCSystem, RelationF
from .volume import BinaryMask

DEFAULT_VARIANCE_KEPT = 0.95
# (points per slice, slices) per object label; larger objects get more landmarks
DEFAULT_LANDMARKS = {
    "skin": (32, 10),
    "liver": (32, 8),
    "spleen": (16, 6),
    "lkidney": (16, 6),
    "rkidney": (16, 6),
}
FALLBACK_LANDMARKS = (16, 6)


class NonSimpleSliceError(ValueError):
    """A slice cross-section has more than one connected component."""


class DegenerateShapeError(ValueError):
    pass


class AssemblyOverlapError(ValueError):
    def __init__(self, a: str, b: str, n_voxels: int):
        super().__init__(f"mean shapes of {a!r} and {b!r} overlap in {n_voxels} voxels")
        self.pair = (a, b)
        self.n_voxels = n_voxels


# ---------------------------------------------------------------------------
# similarity transforms


@dataclass(frozen=True)
class SimilarityTransform:
    """``x -> scale * R @ x + translation``."""

    scale: float = 1.0
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return self.scale * pts @ self.rotation.T + self.translation

    def inverse(self) -> "SimilarityTransform":
        Rt = self.rotation.T
        return SimilarityTransform(1.0 / self.scale, Rt, -(Rt @ self.translation) / self.scale)

    def compose(self, other: "SimilarityTransform") -> "SimilarityTransform":
        """``self ∘ other``: apply ``other`` first."""
        return SimilarityTransform(
            self.scale * other.scale,
            self.rotation @ other.rotation,
            self.scale * self.rotation @ other.translation + self.translation,
        )


def similarity_fit(src: np.ndarray, dst: np.ndarray) -> SimilarityTransform:
    """Least-squares similarity (no reflection) taking ``src`` onto ``dst``."""
    X = np.asarray(src, dtype=float)
    Y = np.asarray(dst, dtype=float)
    if X.shape != Y.shape:
        raise ValueError(f"point sets differ in shape: {X.shape} vs {Y.shape}")
    mx, my = X.mean(axis=0), Y.mean(axis=0)
    X0, Y0 = X - mx, Y - my
    sv = np.linalg.svd(X0, compute_uv=False)
    if len(sv) < 2 or sv[0] == 0 or sv[1] <= 1e-12 * sv[0]:
        raise DegenerateShapeError("landmarks are collinear; similarity transform is undefined")
    U, D, Vt = np.linalg.svd(Y0.T @ X0)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    s = float(np.sum(D * np.diag(S)) / np.sum(X0 * X0))
    return SimilarityTransform(s, R, my - s * R @ mx)


# ---------------------------------------------------------------------------
# contours and landmarks

_MOORE = [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)]
_PLANE_AXES = {2: (0, 1), 0: (1, 2), 1: (2, 0)}


def trace_boundary(img: np.ndarray) -> np.ndarray:
    """Moore-neighbor trace of the outer boundary of a single 2D component.

    Returns ``(L, 2)`` pixel indices in traversal order, without repeating
    the start pixel.
    """
    pad = np.pad(np.asarray(img, dtype=bool), 1)
    fg = np.argwhere(pad)
    if len(fg) == 0:
        return np.zeros((0, 2), dtype=int)
    start = tuple(fg[0])  # first in raster order; its west neighbor is background
    back = (start[0], start[1] - 1)
    cur = start
    out = [start]
    first_next = None
    for _ in range(8 * pad.size):
        d0 = _MOORE.index((back[0] - cur[0], back[1] - cur[1]))
        nxt = None
        for t in range(1, 9):
            da, db = _MOORE[(d0 + t) % 8]
            cand = (cur[0] + da, cur[1] + db)
            if pad[cand]:
                pa, pb = _MOORE[(d0 + t - 1) % 8]
                nxt, new_back = cand, (cur[0] + pa, cur[1] + pb)
                break
        if nxt is None:  # isolated pixel
            break
        if first_next is None:
            first_next = nxt
        elif cur == start and nxt == first_next:
            out.pop()
            break
        out.append(nxt)
        cur, back = nxt, new_back
    return np.asarray(out, dtype=int) - 1


def _signed_area(uv: np.ndarray) -> float:
    u, v = uv[:, 0], uv[:, 1]
    return 0.5 * float(np.sum(u * np.roll(v, -1) - np.roll(u, -1) * v))


_EIGHT = np.ones((3, 3), dtype=bool)


def slice_contour(mask: BinaryMask, index: int, axis: int = 2) -> np.ndarray | None:
    """Counterclockwise outer contour (mm) of one slice, or ``None`` if empty."""
    ua, va = _PLANE_AXES[axis]
    plane = np.transpose(mask.data, (ua, va, axis))[:, :, index]
    if not plane.any():
        return None
    filled = ndimage.binary_fill_holes(plane)
    _, ncomp = ndimage.label(filled, structure=_EIGHT)
    if ncomp > 1:
        raise NonSimpleSliceError(f"slice {index} along axis {axis} has {ncomp} components")
    uv = trace_boundary(filled)
    sp = np.asarray(mask.spacing)
    uv_mm = uv * sp[[ua, va]]
    if len(uv) > 2 and _signed_area(uv_mm) < 0:
        uv, uv_mm = uv[::-1], uv_mm[::-1]
    pts = np.zeros((len(uv), 3))
    pts[:, ua] = uv_mm[:, 0]
    pts[:, va] = uv_mm[:, 1]
    pts[:, axis] = index * sp[axis]
    return pts


def extract_slice_contours(mask: BinaryMask, axis: int = 2) -> dict[int, np.ndarray]:
    """Ordered outer contour of every slice that intersects the object."""
    other = tuple(a for a in range(3) if a != axis)
    occupied = np.flatnonzero(mask.data.any(axis=other))
    return {int(s): slice_contour(mask, int(s), axis) for s in occupied}


def _start_index(contour: np.ndarray) -> int:
    # max x, then max y, then max z
    order = np.lexsort((contour[:, 2], contour[:, 1], contour[:, 0]))
    return int(order[-1])


def equal_space_landmarks(contour: np.ndarray, m: int, start: str | int = "max_x") -> np.ndarray:
    """``m`` points at equal arc-length steps along a closed contour.

    ``start`` is ``"max_x"`` (largest x, ties by largest y) or an explicit
    index into ``contour``.
    """
    pts = np.asarray(contour, dtype=float)
    if m < 3:
        raise ValueError(f"need at least 3 points per contour, got {m}")
    if len(pts) < 2 or np.allclose(pts, pts[0]):
        raise DegenerateShapeError("contour collapses to a single point")
    i0 = _start_index(pts) if start == "max_x" else int(start)
    pts = np.roll(pts, -i0, axis=0)
    closed = np.vstack([pts, pts[:1]])
    seg = np.linalg.norm(np.diff(closed, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    targets = cum[-1] * np.arange(m) / m
    return np.column_stack([np.interp(targets, cum, closed[:, d]) for d in range(3)])


@dataclass(frozen=True)
class Shape:
    """Landmarks of one object, ``points_per_slice`` consecutive points per slice."""

    label: str
    landmarks: np.ndarray
    points_per_slice: int

    @property
    def n(self) -> int:
        return len(self.landmarks)

    @property
    def slices(self) -> np.ndarray:
        return self.landmarks.reshape(-1, self.points_per_slice, 3)


def sample_slices(mask: BinaryMask, n_slices: int, axis: int = 2) -> list[int]:
    """``n_slices`` slice indices equally spaced over the object's extent."""
    other = tuple(a for a in range(3) if a != axis)
    occupied = np.flatnonzero(mask.data.any(axis=other))
    if len(occupied) == 0:
        raise DegenerateShapeError("empty mask has no slices")
    lo, hi = occupied[0], occupied[-1]
    pos = lo + (hi - lo) * (np.arange(n_slices) + 0.5) / n_slices
    return [int(np.floor(p + 0.5)) for p in pos]


def landmark_object(mask: BinaryMask, label: str, m: int | None = None, n_slices: int | None = None,
                    axis: int = 2) -> Shape:
    dm, ds = DEFAULT_LANDMARKS.get(label, FALLBACK_LANDMARKS)
    m = dm if m is None else m
    n_slices = ds if n_slices is None else n_slices
    pts = []
    for s in sample_slices(mask, n_slices, axis):
        contour = slice_contour(mask, s, axis)
        if contour is None:
            raise DegenerateShapeError(f"{label}: sampled slice {s} is empty")
        pts.append(equal_space_landmarks(contour, m))
    return Shape(label, np.vstack(pts), m)


def is_hollow(mask: BinaryMask, axis: int = 2) -> bool:
    """True when some slice has interior holes (an envelope such as the skin)."""
    ua, va = _PLANE_AXES[axis]
    planes = np.transpose(mask.data, (ua, va, axis))
    for s in np.flatnonzero(planes.any(axis=(0, 1))):
        p = planes[:, :, s]
        if ndimage.binary_fill_holes(p).sum() > p.sum():
            return True
    return False


# ---------------------------------------------------------------------------
# alignment


def _points(s) -> np.ndarray:
    return np.asarray(s.landmarks if isinstance(s, Shape) else s, dtype=float)


def align_shapes(shapes: Sequence, reference: int = 0, tol: float = 1e-9, max_iter: int = 50
                 ) -> tuple[list[np.ndarray], list[SimilarityTransform]]:
    """Generalized Procrustes alignment without reflection.

    The frame is anchored to ``shapes[reference]``: after every update the
    mean is similarity-fitted back onto it, so a shape identical to the
    reference gets the identity transform.
    """
    X = [_points(s) for s in shapes]
    if not X:
        raise ValueError("no shapes to align")
    n = X[0].shape
    if any(x.shape != n for x in X):
        raise ValueError("shapes must have equal landmark counts")
    ref = X[reference]
    for x in X:
        similarity_fit(x, ref)  # rejects collinear shapes
    if len(X) == 1:
        return [X[0].copy()], [SimilarityTransform()]
    mean = ref.copy()
    for _ in range(max_iter):
        aligned = [similarity_fit(x, mean).apply(x) for x in X]
        new_mean = np.mean(aligned, axis=0)
        new_mean = similarity_fit(new_mean, ref).apply(new_mean)
        shift = float(np.linalg.norm(new_mean - mean, axis=1).mean())
        mean = new_mean
        if shift < tol:
            break
    transforms = [similarity_fit(x, mean) for x in X]
    return [t.apply(x) for t, x in zip(transforms, X)], transforms


# ---------------------------------------------------------------------------
# models


@dataclass(frozen=True)
class ObjectModel:
    """Mean shape plus the nonzero eigenmodes of the shape covariance.

    ``eigenvectors`` has one column per mode, eigenvalues descending; the
    first ``n_retained`` modes cover the requested share of the variance.
    """

    label: str
    mean: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    n_retained: int
    points_per_slice: int
    hollow: bool = False

    @property
    def n(self) -> int:
        return len(self.mean) // 3

    @property
    def mean_points(self) -> np.ndarray:
        return self.mean.reshape(-1, 3)

    @property
    def covariance(self) -> np.ndarray:
        V = self.eigenvectors
        return (V * self.eigenvalues) @ V.T

    def instance(self, b: np.ndarray) -> np.ndarray:
        """Shape vector ``mean + V b`` over the leading ``len(b)`` modes."""
        b = np.asarray(b, dtype=float)
        return self.mean + self.eigenvectors[:, : len(b)] @ b


def build_object_model(aligned: Sequence, label: str = "", points_per_slice: int | None = None,
                       variance_kept: float = DEFAULT_VARIANCE_KEPT, hollow: bool = False) -> ObjectModel:
    X = np.array([_points(s).ravel() for s in aligned])
    if len(X) == 0:
        raise ValueError("no shapes")
    if points_per_slice is None:
        points_per_slice = aligned[0].points_per_slice if isinstance(aligned[0], Shape) else X.shape[1] // 3
    N = len(X)
    mean = X.mean(axis=0)
    D = X - mean
    vals = np.zeros(0)
    vecs = np.zeros((X.shape[1], 0))
    if N > 1:
        # eigenmodes through the N x N Gram matrix; the covariance has rank <= N - 1
        g_vals, g_vecs = np.linalg.eigh(D @ D.T / (N - 1))
        g_vals, g_vecs = g_vals[::-1], g_vecs[:, ::-1]
        tol = 1e-18 * max(float(np.mean(mean * mean)), 1e-300) * X.shape[1]
        keep = g_vals > tol
        vals = g_vals[keep]
        vecs = D.T @ g_vecs[:, keep] / np.sqrt((N - 1) * vals)
    n_ret = 0
    if len(vals):
        frac = np.cumsum(vals) / vals.sum()
        n_ret = int(np.searchsorted(frac, variance_kept - 1e-12) + 1)
    return ObjectModel(label, mean, vals, vecs, n_ret, int(points_per_slice), hollow)


# ---------------------------------------------------------------------------
# voxelization and the assembly


def _loft(slices: np.ndarray, step: float) -> list[np.ndarray]:
    """Slice polygons plus interpolated polygons between consecutive slices."""
    out = [slices[0]]
    for a, b in zip(slices[:-1], slices[1:]):
        n = max(1, int(np.ceil(np.linalg.norm(b - a, axis=1).max() / step)))
        for i in range(1, n + 1):
            out.append(a + (b - a) * (i / n))
    return out


def _edge_samples(poly: np.ndarray, step: float) -> np.ndarray:
    a, b = poly, np.roll(poly, -1, axis=0)
    n = max(1, int(np.ceil(np.linalg.norm(b - a, axis=1).max() / step)))
    t = np.arange(n) / n
    return (a[:, None, :] + (b - a)[:, None, :] * t[None, :, None]).reshape(-1, 3)


def _fan_samples(poly: np.ndarray, step: float) -> np.ndarray:
    # fills star-shaped polygons, which covers convex cross-sections
    c = poly.mean(axis=0)
    a, b = poly - c, np.roll(poly, -1, axis=0) - c
    reach = max(np.linalg.norm(a, axis=1).max(), np.linalg.norm(b - a, axis=1).max())
    n = max(1, int(np.ceil(reach / step)))
    i, j = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
    sel = i + j <= n
    al, be = i[sel] / n, j[sel] / n
    pts = c + al[None, :, None] * a[:, None, :] + be[None, :, None] * b[:, None, :]
    return pts.reshape(-1, 3)


_BIAS = 1 << 20


def voxelize_shape(points: np.ndarray, points_per_slice: int, spacing: Sequence[float],
                   hollow: bool = False) -> np.ndarray:
    """Unique integer voxel indices (grid anchored at the origin) covered by a
    landmark shape: lofted slice polygons, filled unless ``hollow``."""
    sp = np.asarray(spacing, dtype=float)
    step = 0.5 * sp.min()
    slices = np.asarray(points, dtype=float).reshape(-1, points_per_slice, 3)
    polys = _loft(slices, step)
    sampler = _edge_samples if hollow else _fan_samples
    samples = np.vstack([sampler(p, step) for p in polys] + [slices.reshape(-1, 3)])
    idx = np.floor(samples / sp + 0.5).astype(np.int64)
    # pack rows into one int64 key; a 1-D unique is much faster than axis=0
    key = np.unique(((idx[:, 0] + _BIAS) << 42) | ((idx[:, 1] + _BIAS) << 21) | (idx[:, 2] + _BIAS))
    mask = (1 << 21) - 1
    return np.column_stack([(key >> 42) - _BIAS, ((key >> 21) & mask) - _BIAS, (key & mask) - _BIAS])


def overlap_report(shapes: Sequence[tuple[str, np.ndarray, int, bool]], spacing: Sequence[float]
                   ) -> list[tuple[str, str, int]]:
    """Pairs of ``(label, points, points_per_slice, hollow)`` entries whose
    voxelizations share voxels, with the shared count."""
    vox = [voxelize_shape(p, m, spacing, h) for _, p, m, h in shapes]
    if not vox:
        return []
    lo = np.min([v.min(axis=0) for v in vox], axis=0)
    hi = np.max([v.max(axis=0) for v in vox], axis=0)
    dims = tuple(int(d) for d in hi - lo + 1)
    keys = [np.ravel_multi_index(tuple((v - lo).T), dims) for v in vox]
    out = []
    for a in range(len(shapes)):
        for b in range(a + 1, len(shapes)):
            n = len(np.intersect1d(keys[a], keys[b], assume_unique=True))
            if n:
                out.append((shapes[a][0], shapes[b][0], n))
    return out


@dataclass
class ModelAssembly:
    """Object models in a common frame, plus the learned relationship.

    ``frame`` is the mean PC system of the training objects expressed in
    the model frame and ``frame_meb`` their mean box diagonal; together
    they anchor the assembly when it is placed in a new image.
    """

    models: list[ObjectModel]
    spacing: tuple[float, float, float]
    relation: RelationF | None = None
    delta: DeltaF | None = None
    frame: PCSystem | None = None
    frame_meb: float | None = None
    meta: dict = field(default_factory=dict)

    @property
    def labels(self) -> list[str]:
        return [m.label for m in self.models]

    def model(self, label: str) -> ObjectModel:
        for m in self.models:
            if m.label == label:
                return m
        raise KeyError(label)

    def all_points(self) -> np.ndarray:
        return np.vstack([m.mean_points for m in self.models])


def check_non_overlap(models: Sequence[ObjectModel], spacing: Sequence[float],
                      points: Sequence[np.ndarray] | None = None) -> None:
    pts = [m.mean_points for m in models] if points is None else points
    report = overlap_report([(m.label, p, m.points_per_slice, m.hollow) for m, p in zip(models, pts)], spacing)
    if report:
        raise AssemblyOverlapError(*report[0])


def assemble_model(models: Sequence[ObjectModel], spacing: Sequence[float]) -> ModelAssembly:
    """Collect object models after checking their mean shapes are disjoint."""
    labels = [m.label for m in models]
    if len(set(labels)) != len(labels):
        raise ValueError(f"duplicate object labels: {labels}")
    check_non_overlap(models, spacing)
    return ModelAssembly(list(models), tuple(float(v) for v in spacing))
