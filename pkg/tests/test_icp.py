import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import contaminated_map, displaced_scan, pose_error, random_displacement
from semloam.features import FeatureSet
from semloam.geometry import Pose, random_pose, so3_exp
from semloam.icp import (
    IcpConfig,
    RegistrationError,
    Submap,
    fit_line,
    fit_plane_constrained,
    line_residuals,
    plane_residuals,
    point_to_line_distance,
    point_to_plane_distance,
    register,
    update_submap,
)
from semloam.synth import structured_scene

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def test_line_distance_examples():
    assert point_to_line_distance([1, 2, 0], [0, 0, 0], [2, 0, 0]) == 2.0
    assert point_to_line_distance([5, 0, 0], [0, 0, 0], [2, 0, 0]) == 0.0
    assert point_to_line_distance([0, 0, 1], [0, 0, 0], [1, 0, 0]) == 1.0
    with pytest.raises(ValueError):
        point_to_line_distance([0, 0, 1], [1, 1, 1], [1, 1, 1])


def test_plane_distance_examples():
    plane = ([0, 0, 0], [1, 0, 0], [0, 1, 0])
    assert point_to_plane_distance([5, 7, 3], *plane) == 3.0
    assert point_to_plane_distance([4, -2, 0], *plane) == 0.0
    assert point_to_plane_distance([0, 0, -2], *plane) == 2.0
    with pytest.raises(ValueError):
        point_to_plane_distance([0, 0, 1], [0, 0, 0], [1, 0, 0], [2, 0, 0])


@settings(max_examples=200, deadline=None)
@given(seeds)
def test_distances_rigid_invariant(seed):
    r = np.random.default_rng(seed)
    c, m1, m2, m3 = r.normal(size=(4, 3)) * 5
    T = random_pose(r)
    moved = [T.transform(v) for v in (c, m1, m2, m3)]
    assert abs(point_to_line_distance(c, m1, m2) - point_to_line_distance(*moved[:3])) < 1e-9
    assert abs(point_to_plane_distance(c, m1, m2, m3) - point_to_plane_distance(*moved)) < 1e-9


def _relerr(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12)


@settings(max_examples=50, deadline=None)
@given(seeds)
def test_residual_jacobians_central_difference(seed):
    r = np.random.default_rng(seed)
    p = r.normal(size=3) * 10
    center, d = r.normal(size=3) * 10, r.normal(size=3)
    d /= np.linalg.norm(d)
    n = r.normal(size=3)
    n /= np.linalg.norm(n)
    rl, Jl = line_residuals(p[None], center[None], d[None])
    sp, Jp = plane_residuals(p[None], center[None], n[None])
    num_l, num_p = np.zeros((3, 6)), np.zeros(6)
    for k in range(6):
        e = np.zeros(6)
        e[k] = 1e-6
        pp, pm = Pose.exp(e).transform(p), Pose.exp(-e).transform(p)
        num_l[:, k] = (line_residuals(pp[None], center[None], d[None])[0][0] - line_residuals(pm[None], center[None], d[None])[0][0]) / 2e-6
        num_p[k] = (plane_residuals(pp[None], center[None], n[None])[0][0] - plane_residuals(pm[None], center[None], n[None])[0][0]) / 2e-6
    assert _relerr(Jl[0], num_l) < 1e-5
    assert _relerr(Jp[0], num_p) < 1e-5
    # residual norms are the distances
    assert abs(np.linalg.norm(rl[0]) - point_to_line_distance(p, center, center + d)) < 1e-9
    m2, m3 = center + np.cross(n, d), center + np.cross(n, np.cross(n, d))
    assert abs(abs(sp[0]) - point_to_plane_distance(p, center, m2, m3)) < 1e-9


def test_fit_line_examples(rng):
    pts = np.array([[k, 0.0, 0.0] for k in range(5)])
    c, d = fit_line(pts)
    np.testing.assert_allclose(np.abs(d), [1, 0, 0], atol=1e-12)
    blob = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 0]], float)
    assert fit_line(blob) is None
    c, d = fit_line([[0, 0, 0], [2, 2, 0]])
    np.testing.assert_allclose(c, [1, 1, 0])
    np.testing.assert_allclose(np.abs(d), [2**-0.5, 2**-0.5, 0], atol=1e-12)


def test_isotropic_blob_is_degenerate():
    # tetrahedron-plus-centre: scatter matrix is a multiple of the identity
    pts = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1], [0, 0, 0]], float)
    assert fit_line(pts) is None


def test_fit_plane_examples(taxonomy):
    road, building = taxonomy.id_of("road"), taxonomy.id_of("building")
    flat = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0], [0.5, 0.3, 0]], float)
    c, n = fit_plane_constrained(flat, road, 30.0, taxonomy)
    np.testing.assert_allclose(np.abs(n), [0, 0, 1], atol=1e-12)
    tilted = flat.copy()
    tilted[:, 2] = tilted[:, 0]
    assert fit_plane_constrained(tilted, road, 30.0, taxonomy) is None
    assert fit_plane_constrained(tilted, road, 30.0, taxonomy, constrained=False) is not None
    wall = flat[:, [2, 0, 1]]
    c, n = fit_plane_constrained(wall, building, 30.0, taxonomy)
    np.testing.assert_allclose(np.abs(n), [1, 0, 0], atol=1e-12)
    assert fit_plane_constrained(flat, building, 30.0, taxonomy) is None
    # unconstrained classes accept any orientation
    assert fit_plane_constrained(tilted, taxonomy.id_of("vegetation"), 30.0, taxonomy) is not None


def test_update_submap_window(taxonomy, rng):
    frames = [structured_scene(np.random.default_rng(k), taxonomy, dense=False) for k in range(4)]
    sub = update_submap(Submap(taxonomy, 3), frames[0], Pose.identity())
    assert len(sub) == 1
    for f in frames[1:]:
        sub = update_submap(sub, f, Pose.identity())
    assert len(sub) == 3
    assert all(a is not frames[0] for a in sub.frames)
    np.testing.assert_array_equal(sub.frames[0].edge_points, frames[1].edge_points)


def test_submap_insertion_order_irrelevant(taxonomy):
    frames = [structured_scene(np.random.default_rng(k), taxonomy, dense=False) for k in range(3)]
    a = Submap(taxonomy, 3, frames)
    b = Submap(taxonomy, 3, frames[::-1])
    for kind in ("edge", "plane"):
        pa, la = a.all_points(kind)
        pb, lb = b.all_points(kind)
        key = lambda p, l: sorted(zip(l.tolist(), map(tuple, p.tolist())))
        assert key(pa, la) == key(pb, lb)


@pytest.mark.parametrize("kind", ["edge", "plane"])
def test_kdtree_matches_brute_force(taxonomy, kind):
    r = np.random.default_rng(5)
    pts = r.uniform(-20, 20, size=(1000, 3))
    lbl = r.integers(0, 3, size=1000)
    big = np.full(taxonomy.size, 1e-6)  # voxels too small to merge anything
    tax = type(taxonomy)(taxonomy.classes, taxonomy.raw_to_class, dict(taxonomy.per_class_weight), dict(enumerate(big)))
    fs = FeatureSet(pts, lbl, np.ones(1000), pts.copy(), lbl.copy(), np.zeros(1000))
    sub = Submap(tax, 1, [fs])
    queries = r.uniform(-20, 20, size=(100, 3))
    for cls in range(3):
        cloud = sub.cloud(kind, cls)
        assert len(cloud) == int((lbl == cls).sum())
        d, i = sub.nearest(kind, cls, queries, 5)
        dist = np.linalg.norm(queries[:, None, :] - cloud[None], axis=2)
        brute = np.argsort(dist, axis=1, kind="stable")[:, :5]
        np.testing.assert_array_equal(i, brute)
        np.testing.assert_allclose(d, np.take_along_axis(dist, brute, axis=1), rtol=1e-12)


def test_self_registration(taxonomy):
    world = structured_scene(np.random.default_rng(0), taxonomy)
    sub = Submap(taxonomy, 1, [world])
    (ep, el), (pp, pl) = sub.all_points("edge"), sub.all_points("plane")
    slice_ = FeatureSet(ep, el, np.ones(len(ep)), pp, pl, np.zeros(len(pp)))
    res = register(slice_, sub, Pose.identity(), taxonomy.weights())
    assert res.converged
    te, re = pose_error(res.pose, Pose.identity())
    # only neighbourhoods straddling the two-wall corner leave a residual
    assert te < 1e-3 and re < 1e-3
    assert res.final_cost / (res.n_edge_corr + res.n_plane_corr) < 1e-3


def test_recovers_known_displacement(taxonomy):
    sub = Submap(taxonomy, 1, [structured_scene(np.random.default_rng(0), taxonomy)])
    T = Pose(so3_exp([0, 0, np.radians(5)]), [0.5, 0.0, 0.0])
    res = register(displaced_scan(7, taxonomy, T), sub, Pose.identity(), taxonomy.weights())
    te, re = pose_error(res.pose, T)
    assert te < 0.01 and re < 0.1


def test_cost_non_increasing(taxonomy):
    sub = Submap(taxonomy, 1, [structured_scene(np.random.default_rng(0), taxonomy)])
    T = random_displacement(np.random.default_rng(9))
    res = register(displaced_scan(9, taxonomy, T), sub, Pose.identity(), taxonomy.weights())
    assert res.cost_history
    assert all(after <= before for before, after in res.cost_history)


def test_absent_classes_raise(taxonomy):
    world = structured_scene(np.random.default_rng(0), taxonomy)
    sub = Submap(taxonomy, 1, [world])
    veg = taxonomy.id_of("vegetation")
    fs = FeatureSet(world.edge_points, np.full(world.n_edges, veg), world.edge_roughness,
                    world.planar_points, np.full(world.n_planars, veg), world.planar_roughness)
    with pytest.raises(RegistrationError, match="edge features"):
        register(fs, sub, Pose.identity(), taxonomy.weights())


def test_plane_constraint_helps_on_false_plane(taxonomy):
    sub = Submap(taxonomy, 1, [contaminated_map(taxonomy)])
    T = Pose(so3_exp([0, 0, np.radians(3)]), [0.5, 0.3, 0.1])
    scan = displaced_scan(77, taxonomy, T)
    on = register(scan, sub, Pose.identity(), taxonomy.weights(), IcpConfig(plane_constraint=True))
    off = register(scan, sub, Pose.identity(), taxonomy.weights(), IcpConfig(plane_constraint=False))
    assert pose_error(on.pose, T)[0] < pose_error(off.pose, T)[0]


def test_config_validation():
    with pytest.raises(ValueError):
        IcpConfig(n_ne=1)
