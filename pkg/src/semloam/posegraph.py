"""SE(3) pose graph with odometry and loop edges, optimised by Levenberg-Marquardt."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix, diags
from scipy.sparse.linalg import spsolve

from .features import semantic_downsample
from .geometry import (
    Pose,
    se3_left_jacobian_batch,
    se3_log_batch,
    se3_right_jacobian,
    skew,
    so3_exp_batch,
    so3_left_jacobian_batch,
)

ODOMETRY, LOOP = "odometry", "loop"


class DisconnectedGraphError(ValueError):
    def __init__(self, unreachable):
        super().__init__(f"nodes not connected to the fixed node: {sorted(unreachable)}")
        self.unreachable = sorted(unreachable)


@dataclass
class Edge:
    i: int
    j: int
    measurement: Pose  # Z_ij, pose of j expressed in i
    weight: float = 1.0
    kind: str = ODOMETRY


@dataclass
class PoseGraph:
    nodes: list[Pose] = field(default_factory=list)
    edges: list[Edge] = field(default_factory=list)
    fixed: set[int] = field(default_factory=lambda: {0})

    def add_node(self, pose: Pose) -> int:
        self.nodes.append(pose)
        return len(self.nodes) - 1

    def add_edge(self, i: int, j: int, measurement: Pose, weight: float = 1.0, kind: str = ODOMETRY) -> None:
        n = len(self.nodes)
        if not (0 <= i < n and 0 <= j < n):
            raise IndexError(f"edge ({i}, {j}) references a missing node (have {n})")
        self.edges.append(Edge(i, j, measurement, weight, kind))

    def chi2(self, poses=None) -> float:
        """Weighted sum of squared edge errors."""
        poses = self.nodes if poses is None else poses
        if not self.edges:
            return 0.0
        return _EdgeArrays(self.edges).chi2(*_pack(poses))

    def unreachable(self) -> set[int]:
        adj = [[] for _ in self.nodes]
        for e in self.edges:
            adj[e.i].append(e.j)
            adj[e.j].append(e.i)
        seen = set(self.fixed) & set(range(len(self.nodes)))
        queue = deque(seen)
        while queue:
            k = queue.popleft()
            for m in adj[k]:
                if m not in seen:
                    seen.add(m)
                    queue.append(m)
        return set(range(len(self.nodes))) - seen

    def to_g2o(self) -> str:
        lines = []
        for k, p in enumerate(self.nodes):
            q = p.quaternion()
            lines.append("VERTEX_SE3:QUAT " + " ".join([str(k)] + [repr(float(v)) for v in (*p.translation, *q)]))
        for k in sorted(self.fixed):
            lines.append(f"FIX {k}")
        for e in self.edges:
            z = e.measurement
            info = np.eye(6) * e.weight
            upper = [repr(float(info[r, c])) for r in range(6) for c in range(r, 6)]
            lines.append(
                "EDGE_SE3:QUAT "
                + " ".join([str(e.i), str(e.j)] + [repr(float(v)) for v in (*z.translation, *z.quaternion())] + upper)
            )
        return "\n".join(lines) + "\n"

    @classmethod
    def from_g2o(cls, text: str) -> "PoseGraph":
        graph = cls(fixed=set())
        vertices = {}
        for line in text.splitlines():
            tok = line.split()
            if not tok:
                continue
            if tok[0] == "VERTEX_SE3:QUAT":
                v = [float(x) for x in tok[2:9]]
                vertices[int(tok[1])] = Pose.from_quaternion(v[3:7], v[:3])
            elif tok[0] == "FIX":
                graph.fixed.add(int(tok[1]))
        graph.nodes = [vertices[k] for k in sorted(vertices)]
        for line in text.splitlines():
            tok = line.split()
            if tok and tok[0] == "EDGE_SE3:QUAT":
                v = [float(x) for x in tok[3:10]]
                graph.add_edge(int(tok[1]), int(tok[2]), Pose.from_quaternion(v[3:7], v[:3]), float(tok[10]))
        if not graph.fixed:
            graph.fixed = {0}
        return graph


def relative(a: Pose, b: Pose) -> Pose:
    return a.inverse() @ b


def edge_error(T_i: Pose, T_j: Pose, Z_ij: Pose) -> np.ndarray:
    """log(Z_ij^-1 T_i^-1 T_j); zero when the relative pose matches Z_ij."""
    return (Z_ij.inverse() @ T_i.inverse() @ T_j).log()


def edge_jacobians(T_i: Pose, T_j: Pose, Z_ij: Pose):
    """Residual and its derivatives w.r.t. left perturbations of T_i and T_j."""
    e = edge_error(T_i, T_j, Z_ij)
    Jr_inv = np.linalg.inv(se3_right_jacobian(e))
    Jj = Jr_inv @ T_j.inverse().adjoint()
    return e, -Jj, Jj


@dataclass
class OptimizationResult:
    poses: list[Pose]
    chi2: float
    initial_chi2: float
    iterations: int
    converged: bool
    chi2_history: list[float] = field(default_factory=list)


class _EdgeArrays:
    """Edge measurements packed for batched residual evaluation."""

    def __init__(self, edges):
        self.i = np.array([e.i for e in edges], dtype=np.int64)
        self.j = np.array([e.j for e in edges], dtype=np.int64)
        self.w = np.array([e.weight for e in edges], dtype=float)
        self.ZRt = np.array([e.measurement.rotation.T for e in edges]).reshape(-1, 3, 3)
        self.Zt = np.array([e.measurement.translation for e in edges]).reshape(-1, 3)

    def residuals(self, R, t):
        Ri, Rj = R[self.i], R[self.j]
        RiT = np.transpose(Ri, (0, 2, 1))
        Re = self.ZRt @ RiT @ Rj
        te = np.einsum("nij,nj->ni", self.ZRt, np.einsum("nij,nj->ni", RiT, t[self.j] - t[self.i]) - self.Zt)
        return se3_log_batch(Re, te)

    def chi2(self, R, t) -> float:
        r = self.residuals(R, t)
        return float(np.sum(self.w * np.einsum("ni,ni->n", r, r)))


def _pack(poses):
    return np.array([p.rotation for p in poses]).reshape(-1, 3, 3), np.array([p.translation for p in poses]).reshape(-1, 3)


def _apply(R, t, step, free):
    """Left-multiply exp(step_k) onto every free pose."""
    xi = step.reshape(-1, 6)
    dR = so3_exp_batch(xi[:, :3])
    dt = np.einsum("nij,nj->ni", so3_left_jacobian_batch(xi[:, :3]), xi[:, 3:])
    R2, t2 = R.copy(), t.copy()
    R2[free] = dR @ R[free]
    t2[free] = np.einsum("nij,nj->ni", dR, t[free]) + dt
    return R2, t2


def optimize(
    graph: PoseGraph, max_iters: int = 50, eps: float = 1e-9, lambda0: float = 1e-6, rel_tol: float = 1e-12
) -> OptimizationResult:
    """Minimise the weighted squared edge errors over all non-fixed poses.

    Levenberg-Marquardt with diagonal damping on the sparse normal equations.
    Stops when the step norm drops below ``eps``, the relative chi2 decrease
    below ``rel_tol``, or no damped step reduces chi2.

    Raises:
        DisconnectedGraphError: if some node cannot reach a fixed node.
    """
    missing = graph.unreachable()
    if missing:
        raise DisconnectedGraphError(missing)
    n = len(graph.nodes)
    free = np.array([k for k in range(n) if k not in graph.fixed], dtype=np.int64)
    col = np.full(n, -1, dtype=np.int64)
    col[free] = np.arange(len(free))
    dim = 6 * len(free)
    R, t = _pack(graph.nodes)
    edges = _EdgeArrays(graph.edges)
    chi2 = edges.chi2(R, t) if graph.edges else 0.0
    history = [chi2]
    initial = chi2
    if dim == 0 or not graph.edges:
        return OptimizationResult(list(graph.nodes), chi2, initial, 0, True, history)

    ci, cj = col[edges.i], col[edges.j]
    blk = np.arange(6)
    lam = lambda0
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        r = edges.residuals(R, t)
        RjT = np.transpose(R[edges.j], (0, 2, 1))
        ad = np.zeros((len(r), 6, 6))
        ad[:, :3, :3] = RjT
        ad[:, 3:, 3:] = RjT
        ad[:, 3:, :3] = skew(-np.einsum("nij,nj->ni", RjT, t[edges.j])) @ RjT
        Jj = np.linalg.inv(se3_left_jacobian_batch(-r)) @ ad
        B = edges.w[:, None, None] * np.einsum("nki,nkj->nij", Jj, Jj)
        gj = edges.w[:, None] * np.einsum("nki,nk->ni", Jj, r)

        rows, cols, vals = [], [], []
        g = np.zeros(dim)
        for a, b, sign in ((ci, ci, 1.0), (cj, cj, 1.0), (ci, cj, -1.0), (cj, ci, -1.0)):
            m = (a >= 0) & (b >= 0)
            rows.append((6 * a[m, None, None] + blk[None, :, None]).repeat(6, axis=2).ravel())
            cols.append((6 * b[m, None, None] + blk[None, None, :]).repeat(6, axis=1).ravel())
            vals.append((sign * B[m]).ravel())
        for c_, sign in ((ci, -1.0), (cj, 1.0)):
            m = c_ >= 0
            np.add.at(g, (6 * c_[m, None] + blk).ravel(), (sign * gj[m]).ravel())
        H = coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(dim, dim)).tocsc()
        diag = H.diagonal() + 1e-12

        accepted = False
        while lam < 1e12:
            step = -spsolve(H + diags(lam * diag, format="csc"), g)
            R2, t2 = _apply(R, t, step, free)
            new_chi2 = edges.chi2(R2, t2)
            if new_chi2 <= chi2:
                accepted = True
                lam = max(lam * 0.3, 1e-12)
                break
            lam *= 10.0
        if not accepted:
            converged = True
            break
        decrease = chi2 - new_chi2
        R, t, chi2 = R2, t2, new_chi2
        history.append(chi2)
        if np.linalg.norm(step) < eps or decrease <= rel_tol * max(history[-2], 1e-300):
            converged = True
            break
    poses = list(graph.nodes)
    for k in free:
        poses[k] = Pose(R[k], t[k])
    return OptimizationResult(poses, chi2, initial, it, converged, history)


def rebuild_outputs(poses, scan_points, scan_labels, voxel_sizes=None):
    """Transform every scan's labelled points by its pose and concatenate.

    With ``voxel_sizes`` the merged map is downsampled per class again.
    Returns (map_points, map_labels).
    """
    if len(poses) != len(scan_points):
        raise ValueError(f"{len(poses)} poses for {len(scan_points)} scans")
    if not poses:
        return np.zeros((0, 3)), np.zeros(0, dtype=np.int64)
    pts = np.concatenate([p.transform(x) for p, x in zip(poses, scan_points)])
    lbl = np.concatenate([np.asarray(x) for x in scan_labels])
    if voxel_sizes is not None and len(pts):
        pts, lbl = semantic_downsample(pts, lbl, voxel_sizes)
    return pts, lbl
