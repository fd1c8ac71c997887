"""Training: model assembly plus the learned shape/intensity relationship."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import rotations
from .bscale import DEFAULT_KMAX, DEFAULT_PERCENTILE, DEFAULT_TS, HomogeneityParams, compute_wbs, \
    default_interval, default_sigma, threshold_wbs, WBsResult
from .pose import PCSystem, TrainingPair, learn_relationship, meb_diagonal, pc_from_mask, union_mask
from .shape_model import DEFAULT_VARIANCE_KEPT, ModelAssembly, Shape, align_shapes, assemble_model, \
    build_object_model, is_hollow, landmark_object
from .volume import BinaryMask, Scene

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class WBsSettings:
    """How a scene is turned into its thresholded weighted b-scale mask."""

    sigma: float | None = None  # None: derived from each scene
    ts: float = DEFAULT_TS
    kmax: int = DEFAULT_KMAX
    percentile: float = DEFAULT_PERCENTILE
    interval: tuple[float, float] | None = None  # fixed interval overrides the percentile
    threads: int = 1

    def params_for(self, scene: Scene) -> HomogeneityParams:
        sigma = default_sigma(scene) if self.sigma is None else self.sigma
        return HomogeneityParams(sigma, self.ts)


@dataclass(frozen=True)
class IntensityStructure:
    wbs: WBsResult
    interval: tuple[float, float]
    mask: BinaryMask
    pc: PCSystem
    meb: float


def intensity_structure(scene: Scene, settings: WBsSettings = WBsSettings(),
                        wbs: WBsResult | None = None) -> IntensityStructure:
    """Weighted b-scale, its thresholded mask, and the mask's PC system."""
    if wbs is None:
        wbs = compute_wbs(scene, settings.params_for(scene), settings.kmax, settings.threads)
    interval = settings.interval or default_interval(wbs.wbs, settings.percentile)
    mask = threshold_wbs(wbs.wbs, interval)
    return IntensityStructure(wbs, interval, mask, pc_from_mask(mask), meb_diagonal(mask))


@dataclass
class SubjectFeatures:
    """Per-subject quantities reused across folds and object subsets."""

    id: str
    masks: Mapping[str, BinaryMask]
    intensity: IntensityStructure
    landmark_counts: Mapping[str, tuple[int, int]] = field(default_factory=dict)
    _shapes: dict = field(default_factory=dict, repr=False)
    _hollow: dict = field(default_factory=dict, repr=False)

    def shape(self, label: str) -> Shape:
        if label not in self._shapes:
            m, ns = self.landmark_counts.get(label, (None, None))
            self._shapes[label] = landmark_object(self.masks[label], label, m, ns)
        return self._shapes[label]

    def hollow(self, label: str) -> bool:
        if label not in self._hollow:
            self._hollow[label] = is_hollow(self.masks[label])
        return self._hollow[label]

    def pair(self, labels: Sequence[str]) -> TrainingPair:
        union = union_mask([self.masks[l] for l in labels])
        it = self.intensity
        return TrainingPair(pc_from_mask(union), meb_diagonal(union), it.pc, it.meb)


def subject_features(id: str, scene: Scene, masks: Mapping[str, BinaryMask],
                     settings: WBsSettings = WBsSettings(),
                     landmark_counts: Mapping[str, tuple[int, int]] | None = None) -> SubjectFeatures:
    return SubjectFeatures(id, dict(masks), intensity_structure(scene, settings), dict(landmark_counts or {}))


def train_assembly(subjects: Sequence[SubjectFeatures], labels: Sequence[str],
                   variance_kept: float = DEFAULT_VARIANCE_KEPT) -> ModelAssembly:
    """Build the object models of ``labels`` and attach ``(F, dF)``.

    Shapes of all objects are aligned jointly, one similarity per subject,
    anchored on the first subject.  The assembly frame is the mean of the
    subjects' object-union PC systems mapped into the model frame.
    """
    if not subjects:
        raise ValueError("no training subjects")
    labels = list(labels)
    shapes = [[s.shape(l) for l in labels] for s in subjects]
    sizes = [sh.n for sh in shapes[0]]
    joint = [np.vstack([sh.landmarks for sh in row]) for row in shapes]
    aligned, transforms = align_shapes(joint)
    bounds = np.cumsum([0] + sizes)
    models = []
    for a, label in enumerate(labels):
        per_obj = [x[bounds[a] : bounds[a + 1]] for x in aligned]
        models.append(build_object_model(per_obj, label, shapes[0][a].points_per_slice, variance_kept,
                                         hollow=subjects[0].hollow(label)))
    spacing = subjects[0].masks[labels[0]].spacing
    assembly = assemble_model(models, spacing)

    pairs = [s.pair(labels) for s in subjects]
    F, dF = learn_relationship(pairs)
    origins = np.array([T.apply(p.pc_o.origin) for T, p in zip(transforms, pairs)])
    axes = np.array([T.rotation @ p.pc_o.axes for T, p in zip(transforms, pairs)])
    eig = np.array([T.scale ** 2 * p.pc_o.eigenvalues for T, p in zip(transforms, pairs)])
    mebs = np.array([T.scale * p.meb_o for T, p in zip(transforms, pairs)])
    assembly.relation, assembly.delta = F, dF
    assembly.frame = PCSystem(origins.mean(axis=0), rotations.mean_rotation(axes), eig.mean(axis=0))
    assembly.frame_meb = float(mebs.mean())
    assembly.meta["training_subjects"] = [s.id for s in subjects]
    log.debug("trained %s on %d subjects: s=%.4f t=%s", labels, len(subjects), F.s, np.round(F.t, 3))
    return assembly
