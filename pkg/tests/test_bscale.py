from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bscale_recog.bscale import (
    DEFAULT_KMAX,
    DEFAULT_TS,
    HomogeneityParams,
    ShellExhausted,
    bscale_at,
    build_shell_table,
    compute_wbs,
    default_interval,
    default_sigma,
    fraction_of_object,
    homogeneity_weight,
    normalized_distance,
    threshold_wbs,
)
from bscale_recog.volume import Scene

from oracles import naive_bscale, two_blob_scene


def _enumerate_shell(spacing, k):
    """Offsets of shell k by brute force over a generous cube."""
    ext = int(k * max(spacing) / min(spacing)) + 1
    out = []
    nu2 = np.asarray(spacing, float) ** 2
    for e in itertools.product(range(-ext, ext + 1), repeat=3):
        d = math.sqrt(float((np.asarray(e) ** 2 * nu2).sum()) / nu2.min())
        if k - 1 < d <= k:
            out.append(e)
    return sorted(out)


def test_defaults():
    assert DEFAULT_TS == 0.85
    assert DEFAULT_KMAX == 26


def test_unit_shell_is_face_neighbors():
    t = build_shell_table((1, 1, 1), 3)
    sh = t.shell(1)
    assert len(sh) == 6
    assert sorted(map(tuple, sh)) == sorted(
        [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)])
    assert t.ball_size(0) == 1
    assert t.ball_size(1) - t.ball_size(0) == 6


def test_anisotropic_shell_excludes_long_axis():
    t = build_shell_table((1, 1, 2), 2)
    assert (0, 0, 1) not in map(tuple, t.shell(1))
    assert (0, 0, 1) in map(tuple, t.shell(2))
    np.testing.assert_allclose(normalized_distance(np.array([[0, 0, 1]]), (1, 1, 2)), [2.0])


@pytest.mark.parametrize("spacing", [(1, 1, 1), (1, 1, 2), (1.17, 1.17, 1.17), (0.8, 1.3, 2.1)])
def test_shells_match_brute_force(spacing):
    t = build_shell_table(spacing, 5)
    for k in range(1, 6):
        assert sorted(map(tuple, t.shell(k))) == _enumerate_shell(spacing, k)


def test_shell_order_is_lexicographic_zyx():
    t = build_shell_table((1, 1, 1), 6)
    for k in range(1, 7):
        keys = [(z, y, x) for x, y, z in t.shell(k)]
        assert keys == sorted(keys)


@settings(max_examples=20, deadline=None)
@given(st.tuples(*[st.floats(0.3, 3.0)] * 3), st.integers(1, 6))
def test_shells_partition_the_ball(spacing, kmax):
    t = build_shell_table(spacing, kmax)
    offs = [tuple(o) for o in t.offsets]
    assert len(set(offs)) == len(offs)
    for k in range(1, kmax + 1):
        dk = normalized_distance(t.shell(k), spacing)
        assert np.all((dk > k - 1) & (dk <= k))
    # nothing inside the ball is missing
    ext = int(kmax * max(spacing) / min(spacing)) + 1
    full = np.array(list(itertools.product(range(-ext, ext + 1), repeat=3)))
    dd = normalized_distance(full, spacing)
    assert int(((dd > 0) & (dd <= kmax)).sum()) == len(offs)


def test_kmax_hard_cap():
    with pytest.raises(ValueError, match="hard cap"):
        build_shell_table((1, 1, 1), 65)
    with pytest.raises(ValueError):
        build_shell_table((1, 1, 1), 0)


def test_homogeneity_weight_values():
    assert homogeneity_weight(0.0, 2.0) == 1.0
    assert homogeneity_weight(2.0, 2.0) == pytest.approx(math.exp(-0.5))
    assert homogeneity_weight(2.0, 2.0) == pytest.approx(0.6065, abs=1e-4)
    assert homogeneity_weight(1e6, 1.0) == 0.0


@given(st.floats(0, 1e3), st.floats(0, 1e3), st.floats(0.01, 100))
def test_homogeneity_weight_monotone(a, b, sigma):
    lo, hi = sorted((a, b))
    assert homogeneity_weight(hi, sigma) <= homogeneity_weight(lo, sigma) <= 1.0


def test_params_validation():
    with pytest.raises(ValueError):
        HomogeneityParams(0.0)
    with pytest.raises(ValueError):
        HomogeneityParams(1.0, 1.5)
    with pytest.raises(ValueError):
        HomogeneityParams(1.0, 0.0)
    HomogeneityParams(1.0, 1.0)


def test_fo_constant_scene_is_one():
    sc = Scene(np.full((7, 7, 7), 50, np.uint16), (1, 1, 1))
    t = build_shell_table((1, 1, 1), 4)
    p = HomogeneityParams(1.0)
    for c in [(0, 0, 0), (3, 3, 3), (6, 2, 1)]:
        for k in range(1, 5):
            assert fraction_of_object(sc, c, k, t, p) == 1.0


def test_fo_half_crossing_edge():
    # voxel on a diagonal step: three face neighbors across the edge, three not
    f = np.full((9, 9, 9), 10, np.uint16)
    f[np.indices(f.shape).sum(axis=0) > 12] = 200
    sc = Scene(f, (1, 1, 1))
    t = build_shell_table((1, 1, 1), 2)
    p = HomogeneityParams(1.0)
    assert fraction_of_object(sc, (4, 4, 4), 1, t, p) == pytest.approx(0.5, abs=1e-12)
    assert bscale_at(sc, (4, 4, 4), t, p) == 0


def test_fo_all_different_is_zero():
    f = np.full((5, 5, 5), 200, np.uint16)
    f[2, 2, 2] = 0
    t = build_shell_table((1, 1, 1), 2)
    assert fraction_of_object(Scene(f), (2, 2, 2), 1, t, HomogeneityParams(1.0)) == pytest.approx(0.0, abs=1e-12)


def test_fo_excludes_out_of_domain_members():
    f = np.full((9, 9, 9), 10, np.uint16)
    f[4:] = 200
    t = build_shell_table((1, 1, 1), 3)
    # corner voxel: only 3 face neighbors are in the domain, all homogeneous
    assert fraction_of_object(Scene(f), (0, 0, 0), 1, t, HomogeneityParams(1.0)) == 1.0


def test_shell_exhausted():
    sc = Scene(np.full((1, 1, 1), 5, np.uint16))
    t = build_shell_table((1, 1, 1), 2)
    with pytest.raises(ShellExhausted):
        fraction_of_object(sc, (0, 0, 0), 1, t, HomogeneityParams(1.0))
    assert bscale_at(sc, (0, 0, 0), t, HomogeneityParams(1.0)) == 0
    assert compute_wbs(sc, HomogeneityParams(1.0), kmax=2).radius.data[0, 0, 0] == 0


def test_constant_scene_reaches_cap():
    sc = Scene(np.full((45, 45, 45), 80, np.uint16), (1, 1, 1))
    t = build_shell_table((1, 1, 1), 20)
    assert bscale_at(sc, (22, 22, 22), t, HomogeneityParams(1.0)) == 20


def test_constant_scene_with_strict_threshold_caps_or_exhausts():
    sc = Scene(np.full((9, 9, 9), 80, np.uint16), (1, 1, 1))
    r = compute_wbs(sc, HomogeneityParams(1.0, 1.0 - 1e-9), kmax=5).radius.data
    assert np.all(r == 5)


def test_homogeneous_ball_radius():
    n = 31
    g = np.indices((n, n, n)) - 15
    f = np.where((g ** 2).sum(axis=0) <= 100, 200, 20).astype(np.uint16)
    sc = Scene(f, (1, 1, 1))
    t = build_shell_table((1, 1, 1), 14)
    r = bscale_at(sc, (15, 15, 15), t, HomogeneityParams(1.0))
    assert r in (9, 10)
    assert r == naive_bscale(f.astype(np.float64), np.ones(3), 14, 0.85, 1.0)[15, 15, 15]


def test_compute_wbs_products():
    f = np.zeros((6, 6, 6), np.uint16)
    f[1:5, 1:5, 1:5] = 100
    res = compute_wbs(Scene(f, (1, 1, 1)), HomogeneityParams(1.0), kmax=4)
    r, w = res.radius.data, res.wbs.data
    assert w.dtype == np.float32
    assert np.all(w[f == 0] == 0)
    assert np.array_equal(w, f.astype(np.float32) * r.astype(np.float32))
    assert res.wbs.meta["BScaleKMax"] == "4"
    assert float(res.wbs.meta["BScaleTs"]) == 0.85


def test_wbs_value_example():
    # a voxel of intensity 100 with r = 5 carries 500
    f = np.full((15, 15, 15), 100, np.uint16)
    res = compute_wbs(Scene(f, (1, 1, 1)), HomogeneityParams(1.0), kmax=5)
    assert res.radius.data[7, 7, 7] == 5
    assert res.wbs.data[7, 7, 7] == 500.0


@pytest.mark.parametrize("seed", [0, 1])
@pytest.mark.parametrize("spacing", [(1.0, 1.0, 1.0), (1.0, 1.0, 2.0), (0.9, 1.2, 1.5)])
def test_compute_wbs_matches_oracle(seed, spacing):
    f = two_blob_scene(seed, 20)
    sc = Scene(f, spacing)
    p = HomogeneityParams(default_sigma(sc))
    res = compute_wbs(sc, p, kmax=6)
    ref = naive_bscale(f.astype(np.float64), np.asarray(spacing, float), 6, p.ts, p.sigma)
    np.testing.assert_array_equal(res.radius.data, ref)


def test_bscale_at_agrees_with_compute_wbs():
    f = two_blob_scene(4, 14)
    sc = Scene(f)
    p = HomogeneityParams(default_sigma(sc))
    t = build_shell_table(sc.spacing, 5)
    r = compute_wbs(sc, p, kmax=5, table=t).radius.data
    rng = np.random.default_rng(0)
    for c in rng.integers(0, 14, (40, 3)):
        assert bscale_at(sc, c, t, p) == r[tuple(c)]


def test_float_scene_matches_integer_path():
    f = two_blob_scene(5, 16)
    p = HomogeneityParams(3.0)
    a = compute_wbs(Scene(f), p, kmax=5).radius.data
    b = compute_wbs(Scene(f.astype(np.float64)), p, kmax=5).radius.data
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("threads", [2, 3, 8, 0])
def test_thread_count_does_not_change_output(threads):
    sc = Scene(two_blob_scene(7, 18))
    a = compute_wbs(sc, kmax=6, threads=1)
    b = compute_wbs(sc, kmax=6, threads=threads)
    assert a.radius.data.tobytes() == b.radius.data.tobytes()
    assert a.wbs.data.tobytes() == b.wbs.data.tobytes()


def test_repeat_runs_identical():
    sc = Scene(two_blob_scene(8, 16))
    assert compute_wbs(sc, kmax=5).wbs.data.tobytes() == compute_wbs(sc, kmax=5).wbs.data.tobytes()


def test_radius_bounded_by_kmax():
    res = compute_wbs(Scene(np.full((12, 12, 12), 9, np.uint16)), HomogeneityParams(1.0), kmax=3)
    assert res.radius.data.max() == 3
    assert res.radius.data.min() >= 0


def test_default_sigma():
    f = np.zeros((2, 1, 1), np.uint16)
    f[1] = 10
    assert default_sigma(Scene(f)) == 5.0
    assert default_sigma(Scene(np.full((3, 3, 3), 7, np.uint16))) == 1.0


def test_threshold_intervals():
    w = Scene(np.arange(27, dtype=np.float32).reshape(3, 3, 3))
    assert threshold_wbs(w, (0, math.inf)).count == 27
    assert threshold_wbs(w, (float(w.data.max()) + 1, math.inf)).count == 0
    assert threshold_wbs(w, (3, 5)).count == 3
    with pytest.raises(ValueError):
        threshold_wbs(w, (5, 3))
    lo, hi = default_interval(w)
    assert hi == 26.0
    assert lo == pytest.approx(np.percentile(np.arange(1, 27), 75))


def test_upper_quartile_mask_sits_inside_blobs():
    n = 32
    g = np.indices((n, n, n)).transpose(1, 2, 3, 0)
    blobs = np.zeros((n, n, n), bool)
    # blobs large enough to own the upper quartile of nonzero values
    for c, rad in (((10, 10, 10), 11), ((21, 21, 21), 11)):
        blobs |= ((g - np.array(c)) ** 2).sum(-1) <= rad * rad
    rng = np.random.default_rng(0)
    f = np.where(blobs, 180, 10) + rng.normal(0, 1.0, blobs.shape)
    sc = Scene(np.clip(np.rint(f), 0, None).astype(np.uint16))
    mask = threshold_wbs(compute_wbs(sc, kmax=8).wbs)
    assert mask.count > 0
    assert not (mask.data & ~blobs).any()
