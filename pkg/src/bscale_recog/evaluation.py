"""Leave-one-out evaluation, error metrics and object-subset sweeps."""

from __future__ import annotations

import csv
import itertools
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import rotations
from .bscale import resolve_threads
from .phantom import Subject
from .pose import pc_from_all_objects
from .recognition import pose_from_intensity
from .training import SubjectFeatures, WBsSettings, subject_features, train_assembly

log = logging.getLogger(__name__)

CSV_COLUMNS = ("subject", "subset", "t_err_mm", "rot_x_deg", "rot_y_deg", "rot_z_deg", "scale_ratio")


class FoldError(RuntimeError):
    def __init__(self, fold: int, subject: str, cause: BaseException):
        super().__init__(f"fold {fold} (held-out {subject}): {type(cause).__name__}: {cause}")
        self.fold = fold
        self.subject = subject


@dataclass(frozen=True)
class EvalRecord:
    subject: str
    subset: tuple[str, ...]
    t_err: float
    rot_err: np.ndarray  # absolute heading-x, attitude-y, bank-z (deg)
    scale_ratio: float
    gimbal: bool = False

    def row(self) -> list:
        return [self.subject, "+".join(self.subset), f"{self.t_err:.6f}",
                *(f"{a:.6f}" for a in self.rot_err), f"{self.scale_ratio:.6f}"]


@dataclass(frozen=True)
class Summary:
    subset: tuple[str, ...]
    n: int
    t_err_mean: float
    t_err_std: float
    rot_err_mean: np.ndarray
    rot_err_std: np.ndarray
    scale_min: float
    scale_max: float


def translation_error(predicted, true) -> float:
    return float(np.linalg.norm(np.asarray(predicted, float) - np.asarray(true, float)))


def orientation_error(R_pred: np.ndarray, R_true: np.ndarray) -> tuple[np.ndarray, bool]:
    """Absolute Euler angles of ``R_pred @ R_true.T`` and a near-gimbal flag."""
    D = np.asarray(R_pred) @ np.asarray(R_true).T
    return np.abs(rotations.to_euler(D)), rotations.near_gimbal(D)


def summarize(records: Sequence[EvalRecord]) -> Summary:
    t = np.array([r.t_err for r in records])
    rot = np.array([r.rot_err for r in records])
    s = np.array([r.scale_ratio for r in records])
    return Summary(records[0].subset, len(records), float(t.mean()), float(t.std()),
                   rot.mean(axis=0), rot.std(axis=0), float(s.min()), float(s.max()))


def prepare_features(subjects: Sequence[Subject], settings: WBsSettings = WBsSettings(),
                     landmark_counts: Mapping[str, tuple[int, int]] | None = None) -> list[SubjectFeatures]:
    """Per-subject weighted b-scale structures, computed once for all folds."""
    return [subject_features(s.id, s.scene, s.masks, settings, landmark_counts) for s in subjects]


def evaluate_fold(features: Sequence[SubjectFeatures], held_out: int, labels: Sequence[str]) -> EvalRecord:
    train = [f for i, f in enumerate(features) if i != held_out]
    test = features[held_out]
    assembly = train_assembly(train, labels)
    it = test.intensity
    pose, origin, axes = pose_from_intensity(assembly, it.pc, it.meb)
    truth = pc_from_all_objects([test.masks[l] for l in labels])
    R_true = truth.axes @ assembly.frame.axes.T
    rot, gimbal = orientation_error(pose.R, R_true)
    if gimbal:
        log.warning("fold %d: orientation error decomposition near gimbal lock", held_out)
    return EvalRecord(test.id, tuple(labels), translation_error(origin, truth.origin), rot, pose.s, gimbal)


def loocv(features: Sequence[SubjectFeatures], labels: Sequence[str], threads: int = 1) -> list[EvalRecord]:
    """One record per held-out subject, in subject order.

    Folds run on up to ``threads`` workers; a failing fold raises
    :class:`FoldError` naming it.
    """
    if len(features) < 3:
        raise ValueError(f"leave-one-out needs at least 3 subjects, got {len(features)}")
    labels = tuple(labels)

    def run(i: int) -> EvalRecord:
        try:
            return evaluate_fold(features, i, labels)
        except Exception as exc:
            raise FoldError(i, features[i].id, exc) from exc

    # warm the per-subject landmark caches before workers share them
    for i, f in enumerate(features):
        try:
            for l in labels:
                f.shape(l)
                f.hollow(l)
        except Exception as exc:
            raise FoldError(i, f.id, exc) from exc
    n = resolve_threads(threads)
    if n == 1:
        return [run(i) for i in range(len(features))]
    with ThreadPoolExecutor(n) as pool:
        return list(pool.map(run, range(len(features))))


def all_subsets(labels: Sequence[str]) -> list[tuple[str, ...]]:
    return [c for k in range(1, len(labels) + 1) for c in itertools.combinations(labels, k)]


def combination_sweep(features: Sequence[SubjectFeatures], labels: Sequence[str],
                      subsets: Iterable[Sequence[str]] | None = None, threads: int = 1
                      ) -> list[tuple[Summary, list[EvalRecord]]]:
    """LOOCV for every object subset, sorted by mean translation error."""
    subsets = all_subsets(labels) if subsets is None else [tuple(s) for s in subsets]
    out = []
    for sub in subsets:
        recs = loocv(features, sub, threads)
        out.append((summarize(recs), recs))
        log.info("subset %s: mean translation error %.3f mm", "+".join(sub), out[-1][0].t_err_mean)
    order = sorted(range(len(out)), key=lambda i: (out[i][0].t_err_mean, i))
    return [out[i] for i in order]


def write_csv(path: str | os.PathLike, records: Iterable[EvalRecord], config: Mapping | None = None) -> None:
    with open(Path(path), "w", newline="") as fh:
        if config is not None:
            fh.write("# config: " + json.dumps(config, sort_keys=True) + "\n")
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow(r.row())


def read_csv(path: str | os.PathLike) -> list[dict]:
    with open(Path(path), newline="") as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))
