import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from helpers import W, H, curved_depth, flat_depth, grid_xy, ranking_scene
from phytac import geometry as geo
from phytac.errors import InsufficientContactError, PhytacError, ShapeError
from phytac.geometry import (GraspCandidate, PatchMetrics, Scene, estimate_normals_curvature, extract_patch,
                             flat_patch_from_depth, make_pose, measure_patch, mismatch_rate,
                             rank_candidates)
from phytac.numerics import Rng

from conftest import plane_points

IDENT = np.eye(4)


def random_rotation(rng):
    q = rng.normal(4)
    q /= np.linalg.norm(q)
    a, b, c, d = q
    return np.array([
        [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
        [2 * (b * c + a * d), a * a - b * b + c * c - d * d, 2 * (c * d - a * b)],
        [2 * (b * d - a * c), 2 * (c * d + a * b), a * a - b * b - c * c + d * d],
    ])


def bumpy_surface(rng, n=1500):
    xy = rng.uniform((n, 2), -12.0, 12.0)
    z = 0.4 * np.sin(xy[:, 0] / 3.0) * np.cos(xy[:, 1] / 4.0) + 0.02 * xy[:, 0]
    return np.column_stack([xy, z])


# -- extraction ------------------------------------------------------------------------

def test_point_inside_window_kept():
    pts = np.vstack([[0.0, 0.0, 5.0], plane_points(5)])
    patch = extract_patch(pts, IDENT, 20.0, 20.0)
    assert np.any(np.all(patch.points == [0.0, 0.0, 5.0], axis=1))


def test_point_past_boundary_removed():
    pts = np.vstack([[10.001, 0.0, 5.0], [10.0, 0.0, 5.0], plane_points(5)])
    patch = extract_patch(pts, IDENT, 20.0, 20.0)
    assert not np.any(patch.points[:, 0] > 10.0)
    assert np.any(patch.points[:, 0] == 10.0)


def test_translation_out_of_window_is_insufficient_contact():
    pose = make_pose(np.eye(3), [100.0, 0.0, 0.0])
    with pytest.raises(InsufficientContactError):
        extract_patch(plane_points(10), pose, 20.0, 20.0)


def test_bad_window_and_rotation():
    with pytest.raises(ShapeError):
        extract_patch(plane_points(10), IDENT, 0.0, 20.0)
    bad = IDENT.copy()
    bad[0, 0] = 2.0
    with pytest.raises(ShapeError):
        extract_patch(plane_points(10), bad, 20.0, 20.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(2.0, 30.0), st.floats(2.0, 30.0))
def test_window_containment(seed, w, h):
    rng = Rng(seed)
    pts = rng.uniform((800, 3), -15.0, 15.0)
    pose = make_pose(random_rotation(rng), rng.normal(3))
    try:
        patch = extract_patch(pts, pose, w, h, grid=(8, 8))
    except InsufficientContactError:
        return
    assert np.all(np.abs(patch.points[:, 0]) <= w / 2)
    assert np.all(np.abs(patch.points[:, 1]) <= h / 2)
    assert patch.depth_map.shape == (8, 8)
    assert np.all(np.isfinite(patch.depth_map))


def test_depth_map_nearest_point_and_hole_fill():
    # two layers: the rasterized depth must come from the upper one
    pts = np.vstack([plane_points(40, z=-1.0), plane_points(40, z=0.5)])
    patch = extract_patch(pts, IDENT, 20.0, 20.0, grid=(16, 16))
    assert np.allclose(patch.depth_map, 0.5)


def test_contact_region_drops_far_side():
    pts = np.vstack([plane_points(20, z=0.0), plane_points(20, z=-30.0)])
    patch = extract_patch(pts, IDENT, 20.0, 20.0, max_depth=8.0)
    assert patch.points[:, 2].min() == 0.0


# -- normals and curvature ------------------------------------------------------------------

def test_plane_normals_and_curvature():
    patch = flat_patch_from_depth(np.zeros((20, 20)), W, H)
    est = estimate_normals_curvature(patch, k=12)
    assert np.allclose(est.normals, [0.0, 0.0, 1.0], atol=1e-12)
    assert est.curvature.max() <= 1e-9


def test_sphere_curvature_near_constant():
    r = 40.0
    gx, gy = grid_xy(32, 32)
    depth = np.sqrt(r * r - gx ** 2 - gy ** 2) - r
    est = estimate_normals_curvature(flat_patch_from_depth(depth, W, H), k=12)
    assert est.curvature.std() / est.curvature.mean() <= 0.1
    # normals point outward from the sphere centre, toward the sensor
    pts = flat_patch_from_depth(depth, W, H).points
    radial = (pts - [0.0, 0.0, -r]) / r
    assert np.min(np.sum(est.normals * radial, axis=1)) > 0.999


def test_degenerate_neighborhood_flagged():
    pts = np.vstack([np.zeros((20, 3)), plane_points(5)])
    patch = geo.ContactPatch(pts, W, H, np.zeros((8, 8)))
    est = estimate_normals_curvature(patch, k=12)
    assert est.degenerate[:20].all()
    assert np.all(est.curvature[est.degenerate] == 0.0)
    assert np.all(est.normals[est.degenerate] == [0.0, 0.0, 1.0])


def test_normals_deterministic_and_k_bounds():
    patch = flat_patch_from_depth(curved_depth("cap", Rng(1)), W, H)
    a = estimate_normals_curvature(patch, 12)
    b = estimate_normals_curvature(patch, 12)
    assert np.array_equal(a.normals, b.normals) and np.array_equal(a.curvature, b.curvature)
    with pytest.raises(ValueError):
        estimate_normals_curvature(patch, 3)


# -- patch metrics ----------------------------------------------------------------------

def test_plane_metrics_ideal():
    m = measure_patch(flat_patch_from_depth(flat_depth(Rng(2)), W, H))
    assert m.s_rough <= 1e-6 * 20  # tilted plane, float roundoff only
    assert m.c_n >= 1 - 1e-9
    assert m.u_c <= 1e-6


def test_exact_plane_metrics():
    m = measure_patch(flat_patch_from_depth(np.zeros((16, 16)), W, H))
    assert m.s_rough <= 1e-9 and m.c_n >= 1 - 1e-9 and m.u_c <= 1e-6


def test_opposing_slopes_normal_consistency():
    gx, _ = grid_xy(40, 40)
    m = measure_patch(flat_patch_from_depth(-np.abs(gx), W, H))
    assert m.c_n == pytest.approx(math.cos(math.pi / 4), abs=0.05)


def test_single_spike_roughness():
    depth = np.zeros((10, 10))
    depth[4, 6] = 1.0
    m = measure_patch(flat_patch_from_depth(depth, W, H))
    assert m.s_rough == pytest.approx(math.sqrt(1 / 100), rel=0.2)


# -- ranking -----------------------------------------------------------------------------

def cand(s):
    return GraspCandidate(IDENT.copy(), s)


def test_rank_hand_evaluation():
    r = rank_candidates([cand(0.8)], [PatchMetrics(0.5, 0.5, 0.5)], normalized=True)[0]
    assert r.f_cost == pytest.approx(0.5, abs=1e-15)
    assert r.w_p == pytest.approx(0.35, abs=1e-15)


def test_rank_single_candidate():
    r = rank_candidates([cand(0.7)], [PatchMetrics(1.3, 0.4, 2.0)])
    assert len(r) == 1
    assert r[0].f_cost == 0.0
    assert r[0].w_p == pytest.approx(0.5 * 0.3)


def test_rank_empty_and_bad_weights():
    with pytest.raises(PhytacError):
        rank_candidates([], [])
    with pytest.raises(ValueError):
        rank_candidates([cand(0.5)], [PatchMetrics(0, 1, 0)], alpha=0.5, beta=0.5, gamma=0.5)


def test_rank_ties_prefer_higher_score_then_index():
    raw = [PatchMetrics(0.0, 1.0, 0.0)] * 3
    r = rank_candidates([cand(0.5), cand(0.5), cand(0.5)], raw, delta=0.0)
    assert [x.index for x in r] == [0, 1, 2]
    r = rank_candidates([cand(0.2), cand(0.9), cand(0.5)], raw, delta=0.0)
    assert [x.index for x in r] == [1, 2, 0]


def test_flat_candidate_ranked_first():
    for seed in range(10):
        cands, patches, flat_at = ranking_scene(Rng(seed))
        r = rank_candidates(cands, [measure_patch(p) for p in patches])
        assert r[0].index == flat_at


raw_metric = st.builds(PatchMetrics, st.floats(0, 5), st.floats(0, 1), st.floats(0, 5))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(raw_metric, st.floats(0, 1)), min_size=1, max_size=8),
       st.floats(0.01, 100), st.floats(-50, 50))
def test_affine_invariance_of_normalization(items, a, b):
    cands = [cand(s) for _, s in items]
    raw = [m for m, _ in items]
    # spreads below the shifted values' resolution collapse under a*x + b
    gaps = np.diff(sorted(m.s_rough for m in raw))
    assume(np.all((gaps == 0) | (gaps >= 1e-6)))
    moved = [PatchMetrics(a * m.s_rough + b, m.c_n, m.u_c) for m in raw]
    r1 = rank_candidates(cands, raw)
    r2 = rank_candidates(cands, moved)
    n1 = {x.index: (x.metrics.s_rough, x.w_p) for x in r1}
    n2 = {x.index: (x.metrics.s_rough, x.w_p) for x in r2}
    assert all(abs(n1[i][0] - n2[i][0]) <= 1e-9 and abs(n1[i][1] - n2[i][1]) <= 1e-9 for i in n1)
    if len(r1) == 1 or r1[1].w_p - r1[0].w_p > 1e-9:
        assert r1[0].index == r2[0].index


@settings(max_examples=200, deadline=None)
@given(st.lists(st.builds(PatchMetrics, st.floats(0, 1), st.floats(0, 1), st.floats(0, 1)), min_size=2, max_size=6),
       st.lists(st.floats(0, 1), min_size=6, max_size=6), st.integers(0, 5), st.floats(1e-6, 0.5))
def test_monotonic_in_normalized_roughness(metrics, scores, which, bump):
    which %= len(metrics)
    if metrics[which].s_rough + bump > 1.0:
        return
    cands = [cand(s) for s in scores[:len(metrics)]]
    base = rank_candidates(cands, metrics, normalized=True)
    moved = list(metrics)
    m = moved[which]
    moved[which] = PatchMetrics(m.s_rough + bump, m.c_n, m.u_c)
    after = rank_candidates(cands, moved, normalized=True)
    get = lambda rs: next(x for x in rs if x.index == which)  # noqa: E731
    assert get(after).f_cost > get(base).f_cost
    assert get(after).w_p > get(base).w_p


@settings(max_examples=300, deadline=None)
@given(st.lists(st.tuples(raw_metric, st.floats(0, 1)), min_size=1, max_size=8))
def test_wp_in_unit_interval(items):
    for r in rank_candidates([cand(s) for _, s in items], [m for m, _ in items]):
        assert 0.0 <= r.f_cost <= 1.0 + 1e-12
        assert 0.0 <= r.w_p <= 1.0 + 1e-12


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_rigid_transform_invariance(seed):
    rng = Rng(seed)
    pts = bumpy_surface(rng)
    pose = make_pose(np.eye(3), [0.5, -0.3, 0.0])
    extra = make_pose(random_rotation(rng), rng.normal(3) * 20)
    moved = geo.apply_pose(extra, pts)
    pose2 = pose @ geo.invert_pose(extra)
    m1 = measure_patch(extract_patch(pts, pose, W, H))
    m2 = measure_patch(extract_patch(moved, pose2, W, H))
    for a, b in ((m1.s_rough, m2.s_rough), (m1.c_n, m2.c_n), (m1.u_c, m2.u_c)):
        assert abs(a - b) <= 1e-9


# -- mismatch rate --------------------------------------------------------------------

def test_mismatch_rate_examples():
    good = PatchMetrics(0.0, 1.0, 0.0)
    bad = PatchMetrics(1.0, 0.5, 1.0)
    agree = ([cand(0.9), cand(0.5)], [good, bad])
    assert mismatch_rate([agree] * 3, n=2) == 0.0
    forced = ([cand(0.9), cand(0.85)], [bad, good])
    assert mismatch_rate([forced, agree], n=2) == 0.5
    assert mismatch_rate([forced], n=1) == 0.0


# -- scene files ----------------------------------------------------------------------

def test_scene_round_trip(tmp_path):
    rng = Rng(4)
    pose = make_pose(random_rotation(rng), rng.normal(3))
    scene = Scene(rng.normal((50, 3)), [GraspCandidate(pose, 0.75), GraspCandidate(IDENT.copy(), 0.1)])
    geo.write_scene(scene, tmp_path / "s.txt")
    back = geo.read_scene(tmp_path / "s.txt")
    assert np.allclose(back.points, scene.points, rtol=1e-8)
    assert np.array_equal(back.candidates[0].pose, pose)
    assert back.candidates[0].score_s == 0.75


def test_malformed_scene(tmp_path):
    (tmp_path / "bad.txt").write_text("points 2\n0 0 0\n")
    with pytest.raises(PhytacError):
        geo.read_scene(tmp_path / "bad.txt")
