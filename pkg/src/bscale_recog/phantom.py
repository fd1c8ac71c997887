"""Synthetic abdominal phantoms with ground-truth object masks.

A subject is a superellipsoid body with a bright skin shell around soft
tissue, holding ellipsoidal organs.  Each subject draws a global similarity
jitter (translation, rotation, scale) plus small per-organ translation and
size jitter; all draws come from ``default_rng([seed, subject])``.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from . import rotations
from .pose import PCSystem, pc_from_all_objects
from .volume import DEFAULT_SPACING, BinaryMask, Scene, load_mask, load_volume, save_volume

MAX_RESAMPLES = 100
LABELS = ("skin", "liver", "lkidney", "rkidney", "spleen")


class PhantomError(RuntimeError):
    pass


@dataclass
class EllipsoidSpec:
    label: str
    center: tuple[float, float, float]  # mm, relative to the volume center
    semi_axes: tuple[float, float, float]
    euler_deg: tuple[float, float, float] = (0.0, 0.0, 0.0)
    intensity: float = 150.0
    noise_std: float | None = None  # None: use PhantomSpec.noise_std


@dataclass
class SkinSpec:
    """Superellipsoid envelope.  ``closed=False`` leaves the body open along z
    (cut by the scan range, as in a CT of the abdomen) and ignores the z
    semi-axis."""

    semi_axes: tuple[float, float, float] = (37.0, 30.0, 40.0)
    exponent: float = 2.5
    thickness: float = 2.5
    intensity: float = 220.0
    tissue_intensity: float = 100.0
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    closed: bool = False


@dataclass
class Jitter:
    translation_mm: float = 3.0
    rotation_deg: float = 3.0
    scale_frac: float = 0.02
    object_translation_mm: float = 2.0
    object_scale_frac: float = 0.05


def _default_objects() -> list[EllipsoidSpec]:
    return [
        EllipsoidSpec("liver", (-12.0, -3.0, 3.0), (13.0, 10.0, 8.0), (0.0, 0.0, 15.0), 160.0),
        EllipsoidSpec("lkidney", (12.5, 13.0, -7.0), (4.5, 5.5, 5.0), (0.0, 0.0, 10.0), 195.0),
        EllipsoidSpec("rkidney", (-11.5, 13.5, -7.0), (4.5, 5.5, 5.0), (0.0, 0.0, -10.0), 185.0),
        EllipsoidSpec("spleen", (18.0, 3.0, 4.0), (6.0, 8.5, 6.5), (0.0, 0.0, -20.0), 135.0),
    ]


def _tupled(d: dict, keys) -> dict:
    return {k: tuple(v) if k in keys and v is not None else v for k, v in d.items()}


@dataclass
class PhantomSpec:
    dims: tuple[int, int, int] = (72, 60, 44)
    spacing: tuple[float, float, float] = DEFAULT_SPACING
    objects: list[EllipsoidSpec] = field(default_factory=_default_objects)
    skin: SkinSpec | None = field(default_factory=SkinSpec)
    noise_std: float = 1.0
    jitter: Jitter = field(default_factory=Jitter)
    offset_mm: tuple[float, float, float] = (0.0, 0.0, 0.0)
    min_gap_mm: float = 2.5
    min_eig_separation: float = 0.10
    seed: int = 0

    @property
    def labels(self) -> list[str]:
        return (["skin"] if self.skin is not None else []) + [o.label for o in self.objects]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        d = dict(d)
        if "objects" in d:
            d["objects"] = [EllipsoidSpec(**_tupled(o, ("center", "semi_axes", "euler_deg")))
                            for o in d["objects"]]
        if d.get("skin") is not None:
            d["skin"] = SkinSpec(**_tupled(d["skin"], ("semi_axes", "center")))
        if "jitter" in d:
            d["jitter"] = Jitter(**d["jitter"])
        for k in ("dims", "spacing", "offset_mm"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)

    def without_variation(self) -> "PhantomSpec":
        return dataclasses.replace(self, noise_std=0.0, jitter=Jitter(0, 0, 0, 0, 0),
                                   objects=[dataclasses.replace(o, noise_std=0.0) for o in self.objects])


@dataclass(frozen=True)
class Phantom:
    scene: Scene
    masks: dict[str, BinaryMask]
    truth: PCSystem


def _grid_mm(dims, spacing) -> np.ndarray:
    axes = [np.arange(n) * s for n, s in zip(dims, spacing)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def _draw_jitter(rng: np.random.Generator, spec: PhantomSpec) -> dict:
    j = spec.jitter
    return {
        "t": rng.uniform(-1, 1, 3) * j.translation_mm,
        "rot": rng.uniform(-1, 1, 3) * j.rotation_deg,
        "s": 1.0 + rng.uniform(-1, 1) * j.scale_frac,
        "obj_t": rng.uniform(-1, 1, (len(spec.objects), 3)) * j.object_translation_mm,
        "obj_s": 1.0 + rng.uniform(-1, 1, (len(spec.objects), 3)) * j.object_scale_frac,
    }


def _render_masks(spec: PhantomSpec, jit: dict, grid: np.ndarray) -> dict[str, np.ndarray]:
    dims = np.asarray(spec.dims)
    center = (dims - 1) / 2.0 * np.asarray(spec.spacing) + np.asarray(spec.offset_mm)
    R = rotations.from_euler(jit["rot"])
    # canonical coordinates: invert p = s R q + center + t
    q = (grid - center - jit["t"]) @ R / jit["s"]
    masks: dict[str, np.ndarray] = {}
    body = None
    if spec.skin is not None:
        sk = spec.skin
        e = sk.exponent
        qc = q - np.asarray(sk.center)
        outer_ax = np.asarray(sk.semi_axes, dtype=float)
        inner_ax = outer_ax - sk.thickness
        if not sk.closed:
            qc = qc[..., :2]
            outer_ax, inner_ax = outer_ax[:2], inner_ax[:2]
        outer = (np.abs(qc / outer_ax) ** e).sum(axis=-1) <= 1.0
        body = (np.abs(qc / inner_ax) ** e).sum(axis=-1) <= 1.0
        masks["skin"] = outer & ~body
    for o, dt, ds in zip(spec.objects, jit["obj_t"], jit["obj_s"]):
        Q = rotations.from_euler(o.euler_deg)
        local = (q - np.asarray(o.center) - dt) @ Q
        masks[o.label] = ((local / (np.asarray(o.semi_axes) * ds)) ** 2).sum(axis=-1) <= 1.0
    masks["__body__"] = body if body is not None else np.zeros(grid.shape[:3], dtype=bool)
    return masks


def _valid(spec: PhantomSpec, masks: dict[str, np.ndarray]) -> bool:
    labels = [l for l in masks if l != "__body__"]
    for l in labels:
        if not masks[l].any():
            return False
        m = masks[l]
        if l == "skin" and not (spec.skin and spec.skin.closed):
            continue
        # object must not touch the volume border
        if m[0].any() or m[-1].any() or m[:, 0].any() or m[:, -1].any() or m[:, :, 0].any() or m[:, :, -1].any():
            return False
    if spec.skin is not None:
        inside = masks["__body__"]
        for l in labels:
            if l != "skin" and not inside[masks[l]].all():
                return False
    for a in range(len(labels)):
        dist = ndimage.distance_transform_edt(~masks[labels[a]], sampling=spec.spacing)
        for b in range(a + 1, len(labels)):
            if dist[masks[labels[b]]].min() < spec.min_gap_mm:
                return False
    return True


def _eig_separated(pc: PCSystem, rel: float) -> bool:
    v = pc.eigenvalues
    return bool((v[0] - v[1]) >= rel * v[0] and (v[1] - v[2]) >= rel * v[1])


def generate_phantom(spec: PhantomSpec, subject: int) -> Phantom:
    """Scene, true masks and ground-truth object-union PC system of one subject."""
    rng = np.random.default_rng([spec.seed, subject])
    grid = _grid_mm(spec.dims, spec.spacing)
    for _ in range(MAX_RESAMPLES):
        jit = _draw_jitter(rng, spec)
        masks = _render_masks(spec, jit, grid)
        if not _valid(spec, masks):
            continue
        body = masks.pop("__body__")
        objs = {l: BinaryMask(masks[l], spec.spacing) for l in spec.labels}
        truth = pc_from_all_objects(list(objs.values()))
        if not _eig_separated(truth, spec.min_eig_separation):
            continue
        break
    else:
        raise PhantomError(f"subject {subject}: no valid object layout after {MAX_RESAMPLES} draws")

    f = np.zeros(spec.dims, dtype=float)
    noise_std = np.zeros(spec.dims, dtype=float)
    if spec.skin is not None:
        f[body] = spec.skin.tissue_intensity
        f[masks["skin"]] = spec.skin.intensity
        noise_std[body | masks["skin"]] = spec.noise_std
    for o in spec.objects:
        m = masks[o.label]
        f[m] = o.intensity
        noise_std[m] = spec.noise_std if o.noise_std is None else o.noise_std
    if noise_std.any():
        f = f + rng.standard_normal(f.shape) * noise_std
    f = np.clip(np.floor(f + 0.5), 0, np.iinfo(np.uint16).max).astype(np.uint16)
    return Phantom(Scene(f, spec.spacing), objs, truth)


# ---------------------------------------------------------------------------
# datasets on disk: <dir>/dataset.json and <dir>/subject_XXX/{scene,<label>}.mhd


def subject_dir(root: str | Path, subject: int) -> Path:
    return Path(root) / f"subject_{subject:03d}"


def save_dataset(root: str | Path, spec: PhantomSpec, n: int) -> list[Path]:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    out = []
    for i in range(n):
        ph = generate_phantom(spec, i)
        d = subject_dir(root, i)
        d.mkdir(exist_ok=True)
        save_volume(ph.scene, d / "scene.mhd")
        for label, m in ph.masks.items():
            save_volume(m, d / f"{label}.mhd")
        out.append(d)
    (root / "dataset.json").write_text(json.dumps({"n": n, "labels": spec.labels, "spec": spec.to_dict()}, indent=2))
    return out


@dataclass
class Subject:
    """One subject's scene and object masks, with an id for reporting."""

    id: str
    scene: Scene
    masks: dict[str, BinaryMask]


def load_dataset(root: str | Path, labels: Sequence[str] | None = None) -> list[Subject]:
    root = Path(root)
    dirs = sorted(p for p in root.iterdir() if p.is_dir() and (p / "scene.mhd").exists())
    if not dirs:
        raise FileNotFoundError(f"no subject directories with scene.mhd under {root}")
    subjects = []
    for d in dirs:
        wanted = labels
        if wanted is None:
            wanted = sorted(p.stem for p in d.glob("*.mhd") if p.stem != "scene")
        masks = {l: load_mask(d / f"{l}.mhd") for l in wanted}
        subjects.append(Subject(d.name, load_volume(d / "scene.mhd"), masks))
    return subjects


def phantom_subjects(spec: PhantomSpec, n: int) -> list[Subject]:
    out = []
    for i in range(n):
        ph = generate_phantom(spec, i)
        out.append(Subject(f"subject_{i:03d}", ph.scene, ph.masks))
    return out
