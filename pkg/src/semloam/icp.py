"""Semantic scan-to-submap registration.

Edge features are matched to lines fitted in the same-class edge submap and
planar features to planes fitted in the same-class planar submap.  The pose is
refined with Levenberg-Marquardt over a left-multiplied twist; the objective
is the class-weighted sum of squared point-to-line / point-to-plane distances.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .features import FeatureSet, downsample_indices
from .geometry import Pose, skew
from .taxonomy import LabelTaxonomy

log = logging.getLogger(__name__)

EDGE, PLANE = "edge", "plane"


@dataclass(frozen=True)
class IcpConfig:
    n_ne: int = 5
    n_np: int = 5
    max_iterations: int = 30
    convergence_eps: float = 1e-6
    max_correspondence_dist: float = 1.0
    plane_normal_tolerance: float = 30.0  # degrees
    line_fit_ratio: float = 3.0
    plane_fit_ratio: float = 0.1
    plane_constraint: bool = True
    lm_lambda0: float = 1e-4
    lm_increase: float = 10.0
    lm_decrease: float = 0.3

    def __post_init__(self):
        if self.n_ne < 2 or self.n_np < 3:
            raise ValueError("need n_ne >= 2 and n_np >= 3")


class RegistrationError(RuntimeError):
    """No usable correspondences; carries the diagnostic counts."""

    def __init__(self, message, n_edge_features=0, n_plane_features=0, n_edge_corr=0, n_plane_corr=0):
        super().__init__(
            f"{message} (edge features {n_edge_features}, planar features {n_plane_features}, "
            f"edge corr {n_edge_corr}, plane corr {n_plane_corr})"
        )
        self.n_edge_features = n_edge_features
        self.n_plane_features = n_plane_features
        self.n_edge_corr = n_edge_corr
        self.n_plane_corr = n_plane_corr


@dataclass
class RegistrationResult:
    pose: Pose
    final_cost: float  # weighted sum of unsquared distances at ``pose``
    n_edge_corr: int
    n_plane_corr: int
    converged: bool
    iterations: int = 0
    n_features: int = 0
    last_update_norm: float = float("inf")
    cost_history: list[tuple[float, float]] = field(default_factory=list)

    @property
    def inlier_ratio(self) -> float:
        return (self.n_edge_corr + self.n_plane_corr) / self.n_features if self.n_features else 0.0


# -- distances and their derivatives ------------------------------------------


def point_to_line_distance(c, m1, m2) -> float:
    c, m1, m2 = (np.asarray(v, dtype=float) for v in (c, m1, m2))
    base = np.linalg.norm(m1 - m2)
    if base < 1e-9:
        raise ValueError("line support points coincide")
    return float(np.linalg.norm(np.cross(c - m1, c - m2)) / base)


def point_to_plane_distance(c, m1, m2, m3) -> float:
    c, m1, m2, m3 = (np.asarray(v, dtype=float) for v in (c, m1, m2, m3))
    normal = np.cross(m1 - m2, m1 - m3)
    norm = np.linalg.norm(normal)
    if norm < 1e-9:
        raise ValueError("plane support points are collinear")
    return float(abs((c - m1) @ normal) / norm)


def point_jacobian(points_world: np.ndarray) -> np.ndarray:
    """d(exp(delta) p)/d(delta) at delta = 0, shape (N, 3, 6)."""
    points_world = np.asarray(points_world, dtype=float).reshape(-1, 3)
    J = np.zeros((len(points_world), 3, 6))
    J[:, :, :3] = -skew(points_world)
    J[:, :, 3:] = np.eye(3)
    return J


def line_residuals(points_world, centers, directions):
    """Perpendicular offset from each point to its line, with Jacobians.

    The residual norm is the point-to-line distance.  Returns (r (N,3), J (N,3,6)).
    """
    q = points_world - centers
    proj = np.eye(3) - directions[:, :, None] * directions[:, None, :]
    r = np.einsum("nij,nj->ni", proj, q)
    J = np.einsum("nij,njk->nik", proj, point_jacobian(points_world))
    return r, J


def plane_residuals(points_world, centers, normals):
    """Signed point-to-plane distance with Jacobians; returns (s (N,), J (N,6))."""
    s = np.einsum("ni,ni->n", points_world - centers, normals)
    J = np.einsum("ni,nik->nk", normals, point_jacobian(points_world))
    return s, J


# -- primitive fitting ----------------------------------------------------------


def _scatter(neigh: np.ndarray):
    centers = neigh.mean(axis=1)
    d = neigh - centers[:, None, :]
    cov = np.einsum("nki,nkj->nij", d, d) / neigh.shape[1]
    evals, evecs = np.linalg.eigh(cov)  # ascending
    return centers, evals, evecs


def fit_lines(neigh: np.ndarray, ratio: float):
    """Batched line fit over (M, k, 3) neighbourhoods -> (centers, dirs, ok)."""
    centers, evals, evecs = _scatter(neigh)
    ok = (evals[:, 2] > 1e-12) & (evals[:, 2] >= ratio * evals[:, 1])
    return centers, evecs[:, :, 2], ok


def fit_planes(neigh: np.ndarray, ratio: float):
    centers, evals, evecs = _scatter(neigh)
    ok = (evals[:, 1] > 1e-12) & (evals[:, 0] <= ratio * evals[:, 1])
    return centers, evecs[:, :, 0], ok


def plane_orientation_ok(normals: np.ndarray, labels: np.ndarray, tol_deg: float, ground, vertical) -> np.ndarray:
    """Ground-like planes need a vertical normal, building/fence a horizontal one."""
    nz = np.abs(normals[:, 2])
    ok = np.ones(len(normals), dtype=bool)
    is_ground = np.isin(labels, list(ground))
    is_vertical = np.isin(labels, list(vertical))
    tol = np.radians(tol_deg)
    ok[is_ground] = nz[is_ground] >= np.cos(tol) - 1e-12
    ok[is_vertical] = nz[is_vertical] <= np.sin(tol) + 1e-12
    return ok


def fit_line(points, line_fit_ratio: float = 3.0):
    """Centroid and principal direction, or None when not line-like."""
    pts = np.asarray(points, dtype=float).reshape(1, -1, 3)
    centers, dirs, ok = fit_lines(pts, line_fit_ratio)
    return (centers[0], dirs[0]) if ok[0] else None


def fit_plane_constrained(
    points,
    label: int,
    tol: float = 30.0,
    taxonomy: LabelTaxonomy | None = None,
    plane_fit_ratio: float = 0.1,
    constrained: bool = True,
):
    """Least-squares plane (centroid, unit normal), or None when rejected."""
    taxonomy = taxonomy or LabelTaxonomy.default()
    pts = np.asarray(points, dtype=float).reshape(1, -1, 3)
    centers, normals, ok = fit_planes(pts, plane_fit_ratio)
    if constrained:
        ok &= plane_orientation_ok(normals, np.array([label]), tol, taxonomy.ground, taxonomy.vertical)
    return (centers[0], normals[0]) if ok[0] else None


# -- submap ---------------------------------------------------------------------


class Submap:
    """Sliding window of world-frame feature clouds split by class.

    Each class has its own (downsampled) edge and planar cloud and kd-tree.
    """

    def __init__(self, taxonomy: LabelTaxonomy, n_max: int = 20, frames=None):
        self.taxonomy = taxonomy
        self.n_max = n_max
        self.frames: list[FeatureSet] = list(frames or [])[-n_max:] if n_max > 0 else []
        self.clouds: dict[tuple[str, int], np.ndarray] = {}
        self._trees: dict[tuple[str, int], cKDTree] = {}
        self._rebuild()

    def _rebuild(self):
        voxels = self.taxonomy.voxels()
        self.clouds.clear()
        self._trees.clear()
        for kind in (EDGE, PLANE):
            if not self.frames:
                continue
            if kind == EDGE:
                pts = np.concatenate([f.edge_points for f in self.frames])
                lbl = np.concatenate([f.edge_labels for f in self.frames])
            else:
                pts = np.concatenate([f.planar_points for f in self.frames])
                lbl = np.concatenate([f.planar_labels for f in self.frames])
            keep = downsample_indices(pts, lbl, voxels)
            pts, lbl = pts[keep], lbl[keep]
            for cls in np.unique(lbl):
                cloud = pts[lbl == cls]
                self.clouds[(kind, int(cls))] = cloud
                self._trees[(kind, int(cls))] = cKDTree(cloud)

    def __len__(self) -> int:
        return len(self.frames)

    def is_empty(self) -> bool:
        return not self.clouds

    def cloud(self, kind: str, label: int) -> np.ndarray:
        return self.clouds.get((kind, int(label)), np.zeros((0, 3)))

    def nearest(self, kind: str, label: int, queries, k: int):
        """k nearest same-class submap points -> (distances (N,k), indices (N,k))."""
        tree = self._trees.get((kind, int(label)))
        queries = np.asarray(queries, dtype=float).reshape(-1, 3)
        if tree is None or tree.n < k:
            return np.full((len(queries), k), np.inf), np.full((len(queries), k), -1, dtype=np.int64)
        d, i = tree.query(queries, k=k)
        return d.reshape(len(queries), k), i.reshape(len(queries), k)

    def all_points(self, kind: str):
        keys = sorted(key for key in self.clouds if key[0] == kind)
        if not keys:
            return np.zeros((0, 3)), np.zeros(0, dtype=np.int64)
        return (
            np.concatenate([self.clouds[key] for key in keys]),
            np.concatenate([np.full(len(self.clouds[key]), key[1]) for key in keys]),
        )


def update_submap(submap: Submap, features: FeatureSet, pose: Pose) -> Submap:
    """New submap with ``features`` (sensor frame at ``pose``) appended."""
    return Submap(submap.taxonomy, submap.n_max, submap.frames + [features.transformed(pose)])


# -- registration -----------------------------------------------------------------


@dataclass
class _Correspondences:
    edge_src: np.ndarray
    edge_center: np.ndarray
    edge_dir: np.ndarray
    edge_w: np.ndarray
    edge_label: np.ndarray
    plane_src: np.ndarray
    plane_center: np.ndarray
    plane_normal: np.ndarray
    plane_w: np.ndarray
    plane_label: np.ndarray

    @property
    def n_edge(self) -> int:
        return len(self.edge_src)

    @property
    def n_plane(self) -> int:
        return len(self.plane_src)


def associate(features: FeatureSet, submap: Submap, pose: Pose, weights, cfg: IcpConfig, cache: dict | None = None) -> _Correspondences:
    """Same-class correspondences for ``features`` placed at ``pose``.

    ``cache`` (one dict per feature set / submap pair) keeps line and plane
    fits between calls; a feature is refitted only when its neighbour set
    changes.  Neighbours are fitted in index order so cached and fresh fits
    are bitwise identical.
    """
    weights = np.asarray(weights, dtype=float)
    tax = submap.taxonomy
    parts = {EDGE: ([], [], [], [], []), PLANE: ([], [], [], [], [])}
    for kind, pts, lbls, k in (
        (EDGE, features.edge_points, features.edge_labels, cfg.n_ne),
        (PLANE, features.planar_points, features.planar_labels, cfg.n_np),
    ):
        if len(pts) == 0:
            continue
        world = pose.transform(pts)
        for cls in np.unique(lbls):
            sel = np.flatnonzero(lbls == cls)
            dist, idx = submap.nearest(kind, cls, world[sel], k)
            idx = np.sort(idx, axis=1)
            near = np.isfinite(dist[:, -1]) & (dist[:, -1] <= cfg.max_correspondence_dist)
            if not near.any():
                continue
            key = (kind, int(cls))
            if cache is None or key not in cache:
                entry = (np.full((len(sel), k), -1, dtype=np.int64), np.zeros((len(sel), 3)), np.zeros((len(sel), 3)), np.zeros(len(sel), dtype=bool))
                if cache is not None:
                    cache[key] = entry
            else:
                entry = cache[key]
            prev_idx, c_centers, c_vecs, c_ok = entry
            todo = np.flatnonzero(near & np.any(idx != prev_idx, axis=1))
            if len(todo):
                neigh = submap.cloud(kind, cls)[idx[todo]]
                if kind == EDGE:
                    centers, vecs, ok = fit_lines(neigh, cfg.line_fit_ratio)
                else:
                    centers, vecs, ok = fit_planes(neigh, cfg.plane_fit_ratio)
                    if cfg.plane_constraint:
                        ok &= plane_orientation_ok(vecs, np.full(len(vecs), cls), cfg.plane_normal_tolerance, tax.ground, tax.vertical)
                prev_idx[todo], c_centers[todo], c_vecs[todo], c_ok[todo] = idx[todo], centers, vecs, ok
            use = np.flatnonzero(near & c_ok)
            if len(use) == 0:
                continue
            acc = parts[kind]
            acc[0].append(pts[sel[use]])
            acc[1].append(c_centers[use])
            acc[2].append(c_vecs[use])
            acc[3].append(np.full(len(use), weights[int(cls)]))
            acc[4].append(np.full(len(use), int(cls)))

    def cat(lst, shape):
        return np.concatenate(lst) if lst else np.zeros(shape)

    e, p = parts[EDGE], parts[PLANE]
    return _Correspondences(
        cat(e[0], (0, 3)), cat(e[1], (0, 3)), cat(e[2], (0, 3)), cat(e[3], (0,)), cat(e[4], (0,)).astype(np.int64),
        cat(p[0], (0, 3)), cat(p[1], (0, 3)), cat(p[2], (0, 3)), cat(p[3], (0,)), cat(p[4], (0,)).astype(np.int64),
    )


def _squared_cost(corr: _Correspondences, pose: Pose) -> float:
    cost = 0.0
    if corr.n_edge:
        r, _ = line_residuals(pose.transform(corr.edge_src), corr.edge_center, corr.edge_dir)
        cost += float(np.sum(corr.edge_w * np.einsum("ni,ni->n", r, r)))
    if corr.n_plane:
        s, _ = plane_residuals(pose.transform(corr.plane_src), corr.plane_center, corr.plane_normal)
        cost += float(np.sum(corr.plane_w * s * s))
    return cost


def _distance_cost(corr: _Correspondences, pose: Pose) -> float:
    cost = 0.0
    if corr.n_edge:
        r, _ = line_residuals(pose.transform(corr.edge_src), corr.edge_center, corr.edge_dir)
        cost += float(np.sum(corr.edge_w * np.linalg.norm(r, axis=1)))
    if corr.n_plane:
        s, _ = plane_residuals(pose.transform(corr.plane_src), corr.plane_center, corr.plane_normal)
        cost += float(np.sum(corr.plane_w * np.abs(s)))
    return cost


def _normal_equations(corr: _Correspondences, pose: Pose, center=np.zeros(3)):
    """Gauss-Newton system for a left perturbation about ``center``.

    Residuals are shift-invariant, so linearising in a frame whose origin is
    ``center`` only changes the twist coordinates, keeping rotation and
    translation well conditioned far from the world origin.
    """
    H = np.zeros((6, 6))
    g = np.zeros(6)
    if corr.n_edge:
        r, J = line_residuals(pose.transform(corr.edge_src) - center, corr.edge_center - center, corr.edge_dir)
        H += np.einsum("n,nij,nik->jk", corr.edge_w, J, J)
        g += np.einsum("n,nij,ni->j", corr.edge_w, J, r)
    if corr.n_plane:
        s, J = plane_residuals(pose.transform(corr.plane_src) - center, corr.plane_center - center, corr.plane_normal)
        H += np.einsum("n,ni,nj->ij", corr.plane_w, J, J)
        g += np.einsum("n,ni,n->i", corr.plane_w, J, s)
    return H, g


def perturb(pose: Pose, delta, center) -> Pose:
    """exp(delta) applied in the frame translated to ``center``."""
    shift = Pose(None, center)
    return shift @ Pose.exp(delta) @ shift.inverse() @ pose


def register(features: FeatureSet, submap: Submap, init: Pose, weights, cfg: IcpConfig = IcpConfig()) -> RegistrationResult:
    """Align sensor-frame ``features`` to ``submap`` starting from ``init``.

    Raises:
        RegistrationError: if no valid correspondence exists at some iterate.
    """
    n_features = features.n_edges + features.n_planars
    pose = init
    lam = cfg.lm_lambda0
    history = []
    converged = False
    last_norm = float("inf")
    it = 0
    center = init.translation.copy()
    cache: dict = {}
    for it in range(1, cfg.max_iterations + 1):
        corr = associate(features, submap, pose, weights, cfg, cache)
        if corr.n_edge + corr.n_plane == 0:
            raise RegistrationError("no valid correspondences", features.n_edges, features.n_planars)
        H, g = _normal_equations(corr, pose, center)
        cost = _squared_cost(corr, pose)
        accepted = False
        while lam < 1e12:
            delta = -np.linalg.solve(H + lam * np.eye(6), g)
            candidate = perturb(pose, delta, center)
            new_cost = _squared_cost(corr, candidate)
            if new_cost <= cost:
                accepted = True
                lam = max(lam * cfg.lm_decrease, 1e-12)
                break
            lam *= cfg.lm_increase
        if not accepted:
            # no descent possible at any damping: already at the minimum
            lam = cfg.lm_lambda0
            last_norm = 0.0
            converged = True
            break
        history.append((cost, new_cost))
        pose = candidate
        last_norm = float(np.linalg.norm(delta))
        if last_norm < cfg.convergence_eps:
            converged = True
            break

    corr = associate(features, submap, pose, weights, cfg, cache)
    if corr.n_edge + corr.n_plane == 0:
        raise RegistrationError("no valid correspondences at final pose", features.n_edges, features.n_planars)
    return RegistrationResult(
        pose=pose,
        final_cost=_distance_cost(corr, pose),
        n_edge_corr=corr.n_edge,
        n_plane_corr=corr.n_plane,
        converged=converged,
        iterations=it,
        n_features=n_features,
        last_update_norm=last_norm,
        cost_history=history,
    )
