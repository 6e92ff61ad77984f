"""Semantic graphs: per-scan object centroids used for place recognition."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .dataset import SemanticScan
from .geometry import Pose
from .taxonomy import LabelTaxonomy

MAX_NODES = 100
_NODE_DTYPE = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("label", "<u2")])


@dataclass(frozen=True)
class GraphConfig:
    compact_radius: float = 1.0
    extended_radius: float = 2.0
    min_cluster_size: int = 10
    max_nodes: int = MAX_NODES
    distance_cap: float = 20.0


@dataclass(frozen=True)
class GraphNode:
    centroid: tuple[float, float, float]
    label: int
    point_count: int


@dataclass
class SemanticGraph:
    nodes: list[GraphNode]
    scan_index: int = -1

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def centroids(self) -> np.ndarray:
        return np.array([n.centroid for n in self.nodes], dtype=float).reshape(-1, 3)

    @property
    def labels(self) -> np.ndarray:
        return np.array([n.label for n in self.nodes], dtype=np.int64)

    def transformed(self, pose: Pose) -> "SemanticGraph":
        c = pose.transform(self.centroids) if self.nodes else np.zeros((0, 3))
        return SemanticGraph(
            [GraphNode(tuple(float(v) for v in p), n.label, n.point_count) for p, n in zip(c, self.nodes)],
            self.scan_index,
        )

    def to_bytes(self) -> bytes:
        """Node count (uint32) then x, y, z float32 and label uint16 per node."""
        rec = np.zeros(len(self.nodes), dtype=_NODE_DTYPE)
        if self.nodes:
            c = self.centroids
            rec["x"], rec["y"], rec["z"] = c[:, 0], c[:, 1], c[:, 2]
            rec["label"] = self.labels
        return np.uint32(len(self.nodes)).tobytes() + rec.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes, scan_index: int = -1) -> "SemanticGraph":
        n = int(np.frombuffer(data[:4], dtype="<u4")[0])
        rec = np.frombuffer(data[4:], dtype=_NODE_DTYPE, count=n)
        nodes = [GraphNode((float(r["x"]), float(r["y"]), float(r["z"])), int(r["label"]), 0) for r in rec]
        return cls(nodes, scan_index)


def _cluster(points: np.ndarray, radius: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Single-linkage clusters -> (sum of coordinates, counts) per cluster.

    Points are first pooled into voxels of edge radius/sqrt(3), whose members
    are all within ``radius`` of one another; voxel centroids are then linked
    whenever they lie within ``radius``.
    """
    size = radius / np.sqrt(3.0)
    keys = np.floor(points / size).astype(np.int64)
    _, vox, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    vox = vox.reshape(-1)
    sums = np.stack([np.bincount(vox, weights=points[:, k]) for k in range(3)], axis=1)
    centers = sums / counts[:, None]
    pairs = cKDTree(centers).query_pairs(radius, output_type="ndarray")
    n = len(centers)
    adj = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n)) if len(pairs) else coo_matrix((n, n))
    _, comp = connected_components(adj, directed=False)
    csum = np.stack([np.bincount(comp, weights=sums[:, k]) for k in range(3)], axis=1)
    ccount = np.bincount(comp, weights=counts).astype(np.int64)
    return csum, ccount, comp


def build_graph(scan: SemanticScan, taxonomy: LabelTaxonomy, cfg: GraphConfig = GraphConfig(), scan_index: int = -1) -> SemanticGraph:
    """Cluster each non-ground class and keep the largest clusters as nodes."""
    nodes = []
    for cls in np.unique(scan.labels):
        cls = int(cls)
        if cls in taxonomy.ground:
            continue
        pts = scan.points[scan.labels == cls]
        radius = cfg.compact_radius if cls in taxonomy.compact else cfg.extended_radius
        sums, counts, _ = _cluster(pts, radius)
        for s, c in zip(sums, counts):
            if c >= cfg.min_cluster_size:
                nodes.append(GraphNode(tuple(float(v) for v in s / c), cls, int(c)))
    nodes.sort(key=lambda n: (-n.point_count, n.centroid))
    return SemanticGraph(nodes[: cfg.max_nodes], scan_index)


def _pairwise_sorted(c: np.ndarray) -> np.ndarray:
    i, j = np.triu_indices(len(c), k=1)
    return np.sort(np.linalg.norm(c[i] - c[j], axis=1))


def similarity(g1: SemanticGraph, g2: SemanticGraph, distance_cap: float = 20.0) -> float:
    """Deterministic graph similarity in [0, 1].

    Half label-histogram intersection, half agreement of the sorted intra-class
    centroid distance lists.  Invariant to rigid motion of either graph.
    """
    if len(g1) == 0 or len(g2) == 0:
        return 0.0
    l1, l2 = g1.labels, g2.labels
    n = int(max(l1.max(), l2.max())) + 1
    h1, h2 = np.bincount(l1, minlength=n), np.bincount(l2, minlength=n)
    hist = float(np.minimum(h1, h2).sum() / max(h1.sum(), h2.sum()))
    c1, c2 = g1.centroids, g2.centroids
    scores = []
    for cls in range(n):
        if h1[cls] < 2 or h2[cls] < 2:
            continue
        d1 = _pairwise_sorted(c1[l1 == cls])
        d2 = _pairwise_sorted(c2[l2 == cls])
        m = min(len(d1), len(d2))
        mad = float(np.mean(np.abs(d1[:m] - d2[:m])))
        scores.append(1.0 - min(mad, distance_cap) / distance_cap)
    dist = float(np.mean(scores)) if scores else hist
    return 0.5 * hist + 0.5 * dist


@dataclass
class GraphMap:
    """Append-only store of (scan index, graph, pose at insertion)."""

    entries: list[tuple[int, SemanticGraph, Pose]] = field(default_factory=list)
    _index: dict[int, int] = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return len(self.entries)

    def append(self, scan_index: int, graph: SemanticGraph, pose: Pose) -> None:
        if self.entries and scan_index <= self.entries[-1][0]:
            raise ValueError(f"scan index {scan_index} not greater than last {self.entries[-1][0]}")
        self._index[scan_index] = len(self.entries)
        self.entries.append((scan_index, graph, pose))

    def get(self, indices) -> list[SemanticGraph]:
        out = []
        for i in indices:
            if i not in self._index:
                raise KeyError(f"scan {i} not in graph map")
            out.append(self.entries[self._index[i]][1])
        return out

    def pose(self, scan_index: int) -> Pose:
        if scan_index not in self._index:
            raise KeyError(f"scan {scan_index} not in graph map")
        return self.entries[self._index[scan_index]][2]
