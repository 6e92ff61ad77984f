"""LOAM-style edge/planar feature selection and per-class voxel downsampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import SemanticScan
from .geometry import Pose


@dataclass(frozen=True)
class FeatureConfig:
    alpha: float = 0.1
    n_ring_parts: int = 6
    n_edge_per_part: int = 20
    n_plane_per_part: int = 50
    neighborhood_half_width: int = 5
    discontinuity: float = 1.0  # meters; range jump that disqualifies edge candidates

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if min(self.n_ring_parts, self.n_edge_per_part, self.n_plane_per_part, self.neighborhood_half_width) < 1:
            raise ValueError("feature counts and neighbourhood must be >= 1")


@dataclass
class FeatureSet:
    edge_points: np.ndarray
    edge_labels: np.ndarray
    edge_roughness: np.ndarray
    planar_points: np.ndarray
    planar_labels: np.ndarray
    planar_roughness: np.ndarray

    @classmethod
    def empty(cls) -> "FeatureSet":
        z3, zi, zf = np.zeros((0, 3)), np.zeros(0, dtype=np.int64), np.zeros(0)
        return cls(z3, zi, zf, z3.copy(), zi.copy(), zf.copy())

    @property
    def n_edges(self) -> int:
        return len(self.edge_points)

    @property
    def n_planars(self) -> int:
        return len(self.planar_points)

    def transformed(self, pose: Pose) -> "FeatureSet":
        return FeatureSet(
            pose.transform(self.edge_points),
            self.edge_labels,
            self.edge_roughness,
            pose.transform(self.planar_points),
            self.planar_labels,
            self.planar_roughness,
        )

    def downsampled(self, voxel_sizes) -> "FeatureSet":
        ei = downsample_indices(self.edge_points, self.edge_labels, voxel_sizes)
        pi = downsample_indices(self.planar_points, self.planar_labels, voxel_sizes)
        return FeatureSet(
            self.edge_points[ei],
            self.edge_labels[ei],
            self.edge_roughness[ei],
            self.planar_points[pi],
            self.planar_labels[pi],
            self.planar_roughness[pi],
        )


def roughness(p_i, neighbors) -> float:
    """Range-normalised magnitude of the summed neighbour displacements."""
    p_i = np.asarray(p_i, dtype=float)
    neighbors = np.asarray(neighbors, dtype=float).reshape(-1, 3)
    n = len(neighbors)
    if n < 1:
        raise ValueError("roughness needs at least one neighbour")
    norm = float(np.linalg.norm(p_i))
    if norm < 1e-9:
        raise ValueError("roughness undefined for a point at the sensor origin")
    return float(np.linalg.norm((neighbors - p_i).sum(axis=0)) / (n * norm))


def ring_roughness(points: np.ndarray, half_width: int) -> np.ndarray:
    """Roughness of every point of an azimuth-ordered ring.

    Points without ``half_width`` neighbours on both sides get NaN.
    """
    m = len(points)
    out = np.full(m, np.nan)
    if m < 2 * half_width + 1:
        return out
    csum = np.vstack([np.zeros((1, 3)), np.cumsum(points, axis=0)])
    idx = np.arange(half_width, m - half_width)
    window = csum[idx + half_width + 1] - csum[idx - half_width]
    n = 2 * half_width
    summed = window - (n + 1) * points[idx]
    out[idx] = np.linalg.norm(summed, axis=1) / (n * np.linalg.norm(points[idx], axis=1))
    return out


def _near_discontinuity(ranges: np.ndarray, half_width: int, threshold: float) -> np.ndarray:
    m = len(ranges)
    jumps = np.abs(np.diff(ranges)) > threshold
    cj = np.concatenate([[0], np.cumsum(jumps)])
    out = np.zeros(m, dtype=bool)
    if m < 2 * half_width + 1:
        return out
    idx = np.arange(half_width, m - half_width)
    # window pairs k = i-h .. i+h-1
    out[idx] = (cj[idx + half_width] - cj[idx - half_width]) > 0
    return out


def extract_features(scan: SemanticScan, cfg: FeatureConfig = FeatureConfig()) -> FeatureSet:
    """Select edge and planar features per ring part.

    Each ring is ordered by azimuth and the points with a full neighbourhood
    are split into ``n_ring_parts`` parts of equal count.  Within a part the
    sharpest points above ``alpha`` become edges and the flattest points below
    ``alpha`` become planars.  Roughness ties go to the smaller scan index.
    """
    if len(scan) == 0:
        return FeatureSet.empty()
    h = cfg.neighborhood_half_width
    edge_idx, edge_r, plane_idx, plane_r = [], [], [], []
    azimuth = np.arctan2(scan.points[:, 1], scan.points[:, 0])
    for ring in np.unique(scan.rings):
        members = np.flatnonzero(scan.rings == ring)
        if len(members) < 2 * h + 1:
            continue
        members = members[np.lexsort((members, azimuth[members]))]
        pts = scan.points[members]
        rough = ring_roughness(pts, h)
        blocked = _near_discontinuity(scan.ranges[members], h, cfg.discontinuity)
        valid = np.arange(h, len(members) - h)
        for part in np.array_split(valid, cfg.n_ring_parts):
            if len(part) == 0:
                continue
            r = rough[part]
            sidx = members[part]
            cand = (r > cfg.alpha) & ~blocked[part]
            if cand.any():
                c = np.flatnonzero(cand)
                order = np.lexsort((sidx[c], -r[c]))[: cfg.n_edge_per_part]
                edge_idx.append(sidx[c][order])
                edge_r.append(r[c][order])
            flat = r < cfg.alpha
            if flat.any():
                c = np.flatnonzero(flat)
                order = np.lexsort((sidx[c], r[c]))[: cfg.n_plane_per_part]
                plane_idx.append(sidx[c][order])
                plane_r.append(r[c][order])

    def gather(idx_list, r_list):
        if not idx_list:
            return np.zeros((0, 3)), np.zeros(0, dtype=np.int64), np.zeros(0)
        idx = np.concatenate(idx_list)
        return scan.points[idx], scan.labels[idx], np.concatenate(r_list)

    return FeatureSet(*gather(edge_idx, edge_r), *gather(plane_idx, plane_r))


def downsample_indices(points: np.ndarray, labels: np.ndarray, voxel_sizes) -> np.ndarray:
    """Indices of the per-class voxel representatives, ascending.

    ``voxel_sizes`` is indexable by class id.  Inside every occupied voxel of a
    class the point closest to the voxel centroid is kept; ties are broken by
    coordinates so the result does not depend on input order.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    labels = np.asarray(labels).reshape(-1)
    if len(points) == 0:
        return np.zeros(0, dtype=np.int64)
    keep = []
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        size = float(voxel_sizes[int(cls)])
        if size <= 0:
            raise ValueError(f"voxel size for class {cls} must be positive")
        pts = points[members]
        keys = np.floor(pts / size).astype(np.int64)
        keys -= keys.min(axis=0)
        span = keys.max(axis=0) + 1
        flat = (keys[:, 0] * span[1] + keys[:, 1]) * span[2] + keys[:, 2]
        _, group = np.unique(flat, return_inverse=True)
        counts = np.bincount(group)
        centroid = np.stack([np.bincount(group, weights=pts[:, k]) for k in range(3)], axis=1) / counts[:, None]
        d2 = ((pts - centroid[group]) ** 2).sum(axis=1)
        order = np.lexsort((pts[:, 2], pts[:, 1], pts[:, 0], d2, group))
        first = np.ones(len(order), dtype=bool)
        first[1:] = group[order][1:] != group[order][:-1]
        keep.append(members[order[first]])
    return np.sort(np.concatenate(keep))


def semantic_downsample(points: np.ndarray, labels: np.ndarray, voxel_sizes) -> tuple[np.ndarray, np.ndarray]:
    """Per-class voxel-grid filter; classes never share a voxel."""
    idx = downsample_indices(points, labels, voxel_sizes)
    return np.asarray(points, dtype=float).reshape(-1, 3)[idx], np.asarray(labels).reshape(-1)[idx]
