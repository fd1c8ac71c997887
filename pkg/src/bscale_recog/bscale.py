"""Ball scale (b-scale) and intensity-weighted ball scale.

For every voxel ``c`` the ball radius ``k`` grows from 1 while the fraction
of the shell ``B_k - B_{k-1}`` that is homogeneous with ``c`` stays at or
above ``t_s``; the b-scale is the last radius that passed.  The weighted
scene is ``f(c) * r(c)``.

Shell members falling outside the scene domain are dropped from both the
numerator and the denominator of the fraction; a shell with no in-domain
member stops the growth.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numba
import numpy as np

from .volume import BinaryMask, Scene

DEFAULT_TS = 0.85
DEFAULT_KMAX = 26
KMAX_HARD_CAP = 64
DEFAULT_PERCENTILE = 75.0


class ShellExhausted(Exception):
    """No member of the requested shell lies inside the scene domain."""


@dataclass(frozen=True)
class HomogeneityParams:
    sigma: float
    ts: float = DEFAULT_TS

    def __post_init__(self):
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not (0 < self.ts <= 1):
            raise ValueError(f"t_s must lie in (0, 1], got {self.ts}")


@dataclass(frozen=True)
class ShellTable:
    """Integer offsets of each shell ``B_k - B_{k-1}`` for ``k = 1..kmax``.

    ``offsets[starts[k]:starts[k + 1]]`` is shell ``k``, sorted
    lexicographically by (z, y, x) offset; ``starts[0] == starts[1] == 0`` (the center is shell 0 and is
    not stored).
    """

    spacing: tuple[float, float, float]
    kmax: int
    offsets: np.ndarray
    starts: np.ndarray

    def shell(self, k: int) -> np.ndarray:
        if not 1 <= k <= self.kmax:
            raise IndexError(f"shell {k} outside 1..{self.kmax}")
        return self.offsets[self.starts[k] : self.starts[k + 1]]

    def ball_size(self, k: int) -> int:
        """|B_k| including the center."""
        return int(self.starts[min(k, self.kmax) + 1]) + 1


def normalized_distance(offsets: np.ndarray, spacing: Sequence[float]) -> np.ndarray:
    """sqrt(sum(nu_i^2 e_i^2) / min(nu^2)) for integer offsets ``e``."""
    nu2 = np.asarray(spacing, dtype=float) ** 2
    e = np.asarray(offsets, dtype=float)
    return np.sqrt((e * e * nu2).sum(axis=-1) / nu2.min())


def build_shell_table(spacing: Sequence[float], kmax: int, hard_cap: int = KMAX_HARD_CAP) -> ShellTable:
    spacing = tuple(float(v) for v in spacing)
    if len(spacing) != 3 or min(spacing) <= 0:
        raise ValueError(f"spacing must be 3 positive values, got {spacing}")
    if kmax < 1:
        raise ValueError(f"kmax must be >= 1, got {kmax}")
    if kmax > hard_cap:
        raise ValueError(f"kmax {kmax} exceeds the hard cap {hard_cap}")
    nu = np.asarray(spacing)
    # one extra ring guards against rounding in the bound; the distance test decides
    ext = np.floor(kmax * nu.min() / nu).astype(int) + 1
    axes = [np.arange(-e, e + 1) for e in ext]
    # lexicographic in (z, y, x), i.e. memory order of the x-fastest payload
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).transpose(2, 1, 0, 3).reshape(-1, 3)
    d = normalized_distance(grid, spacing)
    shell = np.ceil(d).astype(np.int64)
    keep = (shell >= 1) & (shell <= kmax)
    grid, shell = grid[keep], shell[keep]
    order = np.argsort(shell, kind="stable")
    offsets = np.ascontiguousarray(grid[order].astype(np.int64))
    counts = np.bincount(shell, minlength=kmax + 1)
    starts = np.zeros(kmax + 2, dtype=np.int64)
    starts[1:] = np.cumsum(counts)
    return ShellTable(spacing, int(kmax), offsets, starts)


def homogeneity_weight(d, sigma: float):
    """Unnormalized zero-mean Gaussian ``exp(-d^2 / (2 sigma^2))``."""
    d = np.asarray(d, dtype=float)
    out = np.exp(-(d * d) / (2.0 * sigma * sigma))
    return float(out) if out.ndim == 0 else out


def default_sigma(scene: Scene) -> float:
    """Half the mean absolute face-neighbor intensity difference.

    Falls back to 1.0 on a constant scene, where any width gives W = 1.
    """
    f = scene.data.astype(np.float64)
    total, count = 0.0, 0
    for ax in range(3):
        if f.shape[ax] > 1:
            diff = np.abs(np.diff(f, axis=ax))
            total += float(diff.sum())
            count += diff.size
    sigma = 0.5 * total / count if count else 0.0
    return sigma if sigma > 0 else 1.0


# ---------------------------------------------------------------------------
# kernels


@numba.njit(nogil=True, cache=True)
def _shell_fo(f, i, j, k, fc, offsets, lo, hi, inv2s2):
    nx, ny, nz = f.shape
    s = 0.0
    n = 0
    for p in range(lo, hi):
        x = i + offsets[p, 0]
        y = j + offsets[p, 1]
        z = k + offsets[p, 2]
        if x < 0 or x >= nx or y < 0 or y >= ny or z < 0 or z >= nz:
            continue
        d = fc - f[x, y, z]
        s += math.exp(-d * d * inv2s2)
        n += 1
    return s, n


@numba.njit(nogil=True, cache=True)
def _radius(f, i, j, k, offsets, starts, kmax, ts, inv2s2):
    fc = f[i, j, k]
    r = 0
    for kk in range(1, kmax + 1):
        s, n = _shell_fo(f, i, j, k, fc, offsets, starts[kk], starts[kk + 1], inv2s2)
        if n == 0 or s / n < ts:
            break
        r = kk
    return r


@numba.njit(nogil=True, cache=True)
def _weight_lut(vmax, inv2s2):
    # same expression as the direct path, so lookups are bit-identical
    lut = np.empty(vmax + 1, dtype=np.float64)
    for v in range(vmax + 1):
        d = float(v)
        lut[v] = math.exp(-d * d * inv2s2)
    return lut


@numba.njit(nogil=True, cache=True)
def _bscale_range_lut(fp, pdims, pad, dims, flat_off, starts, ext, kmax, ts, lut, lo, hi, r_out):
    """Integer-intensity path over a padded x-fastest flat array ``fp``.

    Padding voxels hold -1 and are skipped, which drops out-of-domain shell
    members from both sums exactly as the direct path does.
    """
    nx, ny, nz = dims
    px, py = pdims[0], pdims[1]
    for flat in range(lo, hi):
        i = flat % nx
        j = (flat // nx) % ny
        k = flat // (nx * ny)
        c = (i + pad[0]) + (j + pad[1]) * px + (k + pad[2]) * px * py
        fc = fp[c]
        r = 0
        for kk in range(1, kmax + 1):
            a, b = starts[kk], starts[kk + 1]
            s = 0.0
            n = 0
            if (i - ext[kk, 0] >= 0 and i + ext[kk, 0] < nx and j - ext[kk, 1] >= 0
                    and j + ext[kk, 1] < ny and k - ext[kk, 2] >= 0 and k + ext[kk, 2] < nz):
                for p in range(a, b):
                    d = fc - fp[c + flat_off[p]]
                    if d < 0:
                        d = -d
                    s += lut[d]
                n = b - a
            else:
                for p in range(a, b):
                    v = fp[c + flat_off[p]]
                    if v < 0:
                        continue
                    d = fc - v
                    if d < 0:
                        d = -d
                    s += lut[d]
                    n += 1
            if n == 0 or s / n < ts:
                break
            r = kk
        r_out[flat] = r


@numba.njit(nogil=True, cache=True)
def _bscale_range(f, offsets, starts, kmax, ts, inv2s2, lo, hi, r_out):
    nx, ny, _ = f.shape
    for flat in range(lo, hi):
        i = flat % nx
        j = (flat // nx) % ny
        k = flat // (nx * ny)
        r_out[i, j, k] = _radius(f, i, j, k, offsets, starts, kmax, ts, inv2s2)


def _partitions(n: int, parts: int) -> list[tuple[int, int]]:
    parts = max(1, min(parts, n))
    edges = np.linspace(0, n, parts + 1).astype(np.int64)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def resolve_threads(threads: int | None) -> int:
    if threads is None or threads <= 0:
        return os.cpu_count() or 1
    return int(threads)


# ---------------------------------------------------------------------------
# public operations


def fraction_of_object(scene: Scene, c: Sequence[int], k: int, table: ShellTable, params: HomogeneityParams) -> float:
    if not 1 <= k <= table.kmax:
        raise ValueError(f"k={k} outside 1..{table.kmax}")
    f = np.asarray(scene.data, dtype=np.float64)
    i, j, kk = (int(v) for v in c)
    s, n = _shell_fo(
        f, i, j, kk, f[i, j, kk], table.offsets, table.starts[k], table.starts[k + 1],
        1.0 / (2.0 * params.sigma ** 2),
    )
    if n == 0:
        raise ShellExhausted(f"shell {k} around {tuple(c)} lies entirely outside the domain")
    return s / n


def bscale_at(scene: Scene, c: Sequence[int], table: ShellTable, params: HomogeneityParams) -> int:
    f = np.asarray(scene.data, dtype=np.float64)
    i, j, k = (int(v) for v in c)
    return int(_radius(f, i, j, k, table.offsets, table.starts, table.kmax, params.ts,
                       1.0 / (2.0 * params.sigma ** 2)))


@dataclass(frozen=True)
class WBsResult:
    """Paired b-scale and weighted b-scale scenes plus the parameters used."""

    radius: Scene
    wbs: Scene
    params: HomogeneityParams
    kmax: int


def compute_wbs(
    scene: Scene,
    params: HomogeneityParams | None = None,
    kmax: int = DEFAULT_KMAX,
    threads: int | None = 1,
    table: ShellTable | None = None,
) -> WBsResult:
    """Per-voxel b-scale ``r`` and weighted b-scale ``r' = f * r``.

    The volume is cut into contiguous x-fastest index ranges, one output
    partition per worker.  Each voxel depends only on the read-only scene
    and shell table, so the result does not depend on ``threads``.
    """
    if params is None:
        params = HomogeneityParams(default_sigma(scene))
    if table is None or table.kmax != kmax or table.spacing != scene.spacing:
        table = build_shell_table(scene.spacing, kmax)
    inv2s2 = 1.0 / (2.0 * params.sigma ** 2)
    r = np.zeros(scene.dims, dtype=np.uint16)
    r_flat = None
    nthreads = resolve_threads(threads)
    # several chunks per worker keeps the load balanced on uneven volumes
    chunks = _partitions(scene.size, nthreads * 4 if nthreads > 1 else 1)

    if np.issubdtype(scene.data.dtype, np.integer) and scene.data.max() < 2 ** 31 - 1:
        ext = np.zeros((table.kmax + 1, 3), dtype=np.int64)
        for k in range(1, table.kmax + 1):
            ext[k] = np.abs(table.shell(k)).max(axis=0)
        pad = ext.max(axis=0)
        fp = np.pad(scene.data.astype(np.int32), [(p, p) for p in pad], constant_values=-1)
        pdims = np.asarray(fp.shape, dtype=np.int64)
        fp = fp.ravel(order="F")
        lut = _weight_lut(int(scene.data.max()), inv2s2)
        o = table.offsets
        flat_off = np.ascontiguousarray(o[:, 0] + o[:, 1] * pdims[0] + o[:, 2] * pdims[0] * pdims[1])
        dims = np.asarray(scene.dims, dtype=np.int64)
        r_flat = np.zeros(scene.size, dtype=np.uint16)

        def run(bounds):
            _bscale_range_lut(fp, pdims, pad, dims, flat_off, table.starts, ext, table.kmax, params.ts, lut,
                              bounds[0], bounds[1], r_flat)
    else:
        f = np.ascontiguousarray(scene.data, dtype=np.float64)

        def run(bounds):
            _bscale_range(f, table.offsets, table.starts, table.kmax, params.ts, inv2s2, bounds[0], bounds[1], r)

    if nthreads == 1:
        for b in chunks:
            run(b)
    else:
        with ThreadPoolExecutor(max_workers=nthreads) as pool:
            list(pool.map(run, chunks))
    if r_flat is not None:
        r = r_flat.reshape(scene.dims, order="F")
    meta = {"BScaleKMax": str(table.kmax), "BScaleTs": repr(params.ts), "BScaleSigma": repr(params.sigma)}
    wbs = (scene.data.astype(np.float32) * r.astype(np.float32)).astype(np.float32)
    return WBsResult(Scene(r, scene.spacing, dict(meta)), Scene(wbs, scene.spacing, dict(meta)), params, table.kmax)


def default_interval(wbs: Scene, percentile: float = DEFAULT_PERCENTILE) -> tuple[float, float]:
    """``[P, max]`` of the nonzero weighted radii."""
    if not 0 <= percentile <= 100:
        raise ValueError(f"percentile must lie in [0, 100], got {percentile}")
    vals = wbs.data[wbs.data > 0]
    if vals.size == 0:
        return (math.inf, math.inf)
    return float(np.percentile(vals, percentile)), float(vals.max())


def threshold_wbs(wbs: Scene, interval: tuple[float, float] | None = None) -> BinaryMask:
    """Mask of voxels with ``lo <= r' <= hi``; default interval from :func:`default_interval`."""
    lo, hi = default_interval(wbs) if interval is None else interval
    if lo > hi:
        raise ValueError(f"empty threshold interval [{lo}, {hi}]")
    d = wbs.data
    return BinaryMask((d >= lo) & (d <= hi), wbs.spacing)
