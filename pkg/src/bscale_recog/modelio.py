"""JSON serialization of trained model assemblies."""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .pose import DeltaF, PCSystem, RelationF
from .rotations import EULER_TAG
from .shape_model import ModelAssembly, ObjectModel

FORMAT = "bscale-recog-model"
VERSION = 1


class ModelFormatError(ValueError):
    pass


def _object_to_dict(m: ObjectModel) -> dict:
    return {
        "label": m.label,
        "n": m.n,
        "points_per_slice": m.points_per_slice,
        "hollow": m.hollow,
        "mean": m.mean.tolist(),
        "eigenvalues": m.eigenvalues.tolist(),
        # one list per mode
        "eigenvectors": m.eigenvectors.T.tolist(),
        "n_retained": m.n_retained,
    }


def _object_from_dict(d: dict) -> ObjectModel:
    mean = np.asarray(d["mean"], dtype=float)
    if len(mean) != 3 * int(d["n"]):
        raise ModelFormatError(f"object {d['label']}: mean has {len(mean)} values for n={d['n']}")
    vecs = np.asarray(d["eigenvectors"], dtype=float).reshape(-1, len(mean)).T
    return ObjectModel(d["label"], mean, np.asarray(d["eigenvalues"], dtype=float), vecs,
                       int(d["n_retained"]), int(d["points_per_slice"]), bool(d.get("hollow", False)))


def assembly_to_dict(assembly: ModelAssembly) -> dict:
    out: dict = {
        "format": FORMAT,
        "version": VERSION,
        "labels": assembly.labels,
        "spacing": list(assembly.spacing),
        "objects": [_object_to_dict(m) for m in assembly.models],
        "meta": assembly.meta,
    }
    F, dF = assembly.relation, assembly.delta
    if F is not None:
        rel = {"s": F.s, "t": F.t.tolist(), "R": F.R.ravel().tolist(), "euler_convention": EULER_TAG}
        if dF is not None:
            rel.update(s_std=dF.s_std, t_std=dF.t_std.tolist(), euler_std=dF.euler_std.tolist())
        out["relationship"] = rel
    if assembly.frame is not None:
        out["frame"] = {**assembly.frame.to_dict(), "meb": assembly.frame_meb}
    return out


def assembly_from_dict(d: dict) -> ModelAssembly:
    if d.get("format") != FORMAT:
        raise ModelFormatError(f"not a model file (format={d.get('format')!r})")
    if d.get("version") != VERSION:
        raise ModelFormatError(f"unsupported model version {d.get('version')!r}")
    try:
        models = [_object_from_dict(o) for o in d["objects"]]
        asm = ModelAssembly(models, tuple(float(v) for v in d["spacing"]), meta=dict(d.get("meta", {})))
        rel = d.get("relationship")
        if rel is not None:
            conv = rel.get("euler_convention", EULER_TAG)
            if conv != EULER_TAG:
                raise ModelFormatError(f"model uses Euler convention {conv!r}, expected {EULER_TAG!r}")
            asm.relation = RelationF(float(rel["s"]), np.asarray(rel["t"], float),
                                     np.asarray(rel["R"], float).reshape(3, 3))
            if "s_std" in rel:
                asm.delta = DeltaF(float(rel["s_std"]), np.asarray(rel["t_std"], float),
                                   np.asarray(rel["euler_std"], float))
        frame = d.get("frame")
        if frame is not None:
            asm.frame = PCSystem.from_dict(frame)
            asm.frame_meb = float(frame["meb"])
    except ModelFormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed model file: {exc}") from exc
    return asm


def save_assembly(assembly: ModelAssembly, path: str | os.PathLike) -> None:
    Path(path).write_text(json.dumps(assembly_to_dict(assembly), indent=1))


def load_assembly(path: str | os.PathLike) -> ModelAssembly:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: {exc}") from exc
    return assembly_from_dict(d)
