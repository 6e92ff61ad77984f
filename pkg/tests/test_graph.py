import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.sparse.csgraph import connected_components

from semloam.dataset import SemanticScan
from semloam.geometry import Pose, random_pose, so3_exp
from semloam.graph import GraphConfig, GraphMap, GraphNode, SemanticGraph, build_graph, similarity

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def blob(rng, center, n, radius):
    d = rng.normal(size=(n, 3))
    d *= (rng.uniform(0, 1, n) ** (1 / 3) * radius / np.linalg.norm(d, axis=1))[:, None]
    return np.asarray(center, float) + d


def graph_of(points_by_label, taxonomy):
    pts = np.concatenate([p for _, p in points_by_label])
    lbl = np.concatenate([np.full(len(p), taxonomy.id_of(n)) for n, p in points_by_label])
    return SemanticScan.from_points(pts, lbl)


def test_empty_scan_graph(taxonomy):
    assert len(build_graph(SemanticScan.empty(), taxonomy)) == 0


def test_two_pole_clusters(taxonomy, rng):
    a, b = blob(rng, [5, 0, 0], 50, 1.0), blob(rng, [5, 10, 0], 50, 1.0)
    g = build_graph(graph_of([("pole", a), ("pole", b)], taxonomy), taxonomy)
    assert len(g) == 2
    got = sorted(map(tuple, g.centroids))
    want = sorted([tuple(a.mean(axis=0)), tuple(b.mean(axis=0))])
    np.testing.assert_allclose(got, want, atol=1e-12)
    assert all(n.point_count == 50 for n in g.nodes)


def test_ground_classes_are_not_nodes(taxonomy, rng):
    g = build_graph(graph_of([("road", blob(rng, [0, 0, 0], 100, 1.0))], taxonomy), taxonomy)
    assert len(g) == 0


def test_node_cap_keeps_largest(taxonomy, rng):
    clusters = [("building", blob(rng, [10.0 * (k % 15), 10.0 * (k // 15), 0], 20 + k, 0.5)) for k in range(150)]
    g = build_graph(graph_of(clusters, taxonomy), taxonomy)
    assert len(g) == 100
    assert sorted(n.point_count for n in g.nodes) == list(range(70, 170))


def test_clusters_match_brute_force_single_linkage(taxonomy, rng):
    # well-separated clusters: voxel pooling agrees with point-level linkage
    centers = rng.uniform(-40, 40, size=(12, 3))
    centers = centers[np.all(np.linalg.norm(centers[:, None] - centers[None], axis=2) + 100 * np.eye(12) > 6, axis=1)]
    pts = np.concatenate([blob(rng, c, 30, 0.8) for c in centers])
    g = build_graph(SemanticScan.from_points(pts, np.full(len(pts), taxonomy.id_of("pole"))), taxonomy)
    adj = np.linalg.norm(pts[:, None] - pts[None], axis=2) <= 1.0
    n, comp = connected_components(adj, directed=False)
    brute = sorted(tuple(pts[comp == k].mean(axis=0)) for k in range(n) if (comp == k).sum() >= 10)
    np.testing.assert_allclose(sorted(map(tuple, g.centroids)), brute, atol=1e-9)


@settings(max_examples=15, deadline=None)
@given(seeds)
def test_node_count_monotone_in_min_size(seed):
    from semloam.taxonomy import LabelTaxonomy

    tax = LabelTaxonomy.default()
    r = np.random.default_rng(seed)
    pts = np.concatenate([blob(r, r.uniform(-30, 30, 3), int(r.integers(3, 40)), 0.7) for _ in range(20)])
    scan = SemanticScan.from_points(pts, np.full(len(pts), tax.id_of("trunk")))
    counts = [len(build_graph(scan, tax, GraphConfig(min_cluster_size=m))) for m in (1, 5, 10, 20, 40)]
    assert counts == sorted(counts, reverse=True)


def _graph(centroids, labels):
    return SemanticGraph([GraphNode(tuple(map(float, c)), int(l), 10) for c, l in zip(centroids, labels)])


def test_similarity_examples():
    g = _graph([[0, 0, 0], [10, 0, 0], [3, 4, 0]], [8, 8, 4])
    assert similarity(g, g) == 1.0
    assert similarity(_graph([[0, 0, 0]], [8]), _graph([[0, 0, 0]], [4])) == 0.0
    two = _graph([[0, 0, 0], [10, 0, 0]], [8, 8])
    rotated = two.transformed(Pose(so3_exp([0, 0, np.pi / 2]), None))
    assert similarity(two, rotated) == pytest.approx(1.0, abs=1e-12)
    assert similarity(SemanticGraph([]), g) == 0.0


def test_similarity_hand_value():
    # histograms {pole: 2} vs {pole: 2, building: 2}: H = 2/4; pole distances 10 vs 12: D = 1 - 2/20
    a = _graph([[0, 0, 0], [10, 0, 0]], [8, 8])
    b = _graph([[0, 0, 0], [12, 0, 0], [0, 5, 0], [0, 9, 0]], [8, 8, 4, 4])
    assert similarity(a, b) == pytest.approx(0.5 * 0.5 + 0.5 * 0.9, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(seeds)
def test_similarity_symmetric_and_rigid_invariant(seed):
    r = np.random.default_rng(seed)
    a = _graph(r.uniform(-30, 30, size=(15, 3)), r.integers(4, 10, 15))
    b = _graph(r.uniform(-30, 30, size=(12, 3)), r.integers(4, 10, 12))
    s = similarity(a, b)
    assert 0.0 <= s <= 1.0
    assert abs(s - similarity(b, a)) < 1e-12
    assert abs(s - similarity(a.transformed(random_pose(r)), b)) < 1e-9


def test_graph_map_bookkeeping():
    gm = GraphMap()
    with pytest.raises(KeyError):
        gm.get([0])
    graphs = [_graph([[k, 0, 0]], [8]) for k in range(1000)]
    for k, g in enumerate(graphs):
        gm.append(k, g, Pose.translate(k, 0, 0))
    assert gm.get([0, 999]) == [graphs[0], graphs[999]]
    assert gm.get([5])[0] is graphs[5]
    assert gm.pose(7).allclose(Pose.translate(7, 0, 0))
    with pytest.raises(ValueError):
        gm.append(3, graphs[0], Pose.identity())
    with pytest.raises(KeyError):
        gm.get([1000])


def test_graph_bytes_roundtrip():
    g = _graph([[1.5, -2.25, 3.0], [0, 0, 0]], [8, 4])
    back = SemanticGraph.from_bytes(g.to_bytes())
    np.testing.assert_allclose(back.centroids, g.centroids)
    assert back.labels.tolist() == [8, 4]
