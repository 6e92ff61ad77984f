"""Trajectory accuracy: ATE after rigid alignment and KITTI segment RPE."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose

SEGMENT_LENGTHS = (100, 200, 300, 400, 500, 600, 700, 800)


def _positions(traj) -> np.ndarray:
    return np.array([p.translation for p in traj], dtype=float).reshape(-1, 3)


def rigid_alignment(source: np.ndarray, target: np.ndarray) -> Pose:
    """Least-squares rotation + translation mapping ``source`` onto ``target`` (Kabsch)."""
    mu_s, mu_t = source.mean(axis=0), target.mean(axis=0)
    cov = (target - mu_t).T @ (source - mu_s)
    U, _, Vt = np.linalg.svd(cov)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    return Pose(R, mu_t - R @ mu_s)


def ate(est, gt) -> float:
    """RMSE of translational residuals after rigid alignment of est onto gt."""
    if len(est) != len(gt):
        raise ValueError(f"trajectory length mismatch: {len(est)} estimated vs {len(gt)} ground truth")
    if len(est) == 0:
        raise ValueError("empty trajectories")
    a, b = _positions(est), _positions(gt)
    aligned = rigid_alignment(a, b).transform(a)
    return float(np.sqrt(np.mean(np.sum((aligned - b) ** 2, axis=1))))


def path_distances(traj) -> np.ndarray:
    pos = _positions(traj)
    steps = np.linalg.norm(np.diff(pos, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(steps)])


@dataclass
class RpeResult:
    trans_pct: float
    rot_deg_per_100m: float
    n_segments: int
    insufficient_length: bool
    per_length: dict[int, tuple[float, float, int]] = field(default_factory=dict)


def kitti_rpe(est, gt, lengths=SEGMENT_LENGTHS) -> RpeResult:
    """Mean relative translation (%) and rotation (deg/100 m) over gt segments.

    A segment starts at every frame and ends at the first frame whose gt path
    distance exceeds the start's by the segment length.
    """
    if len(est) != len(gt):
        raise ValueError(f"trajectory length mismatch: {len(est)} estimated vs {len(gt)} ground truth")
    dist = path_distances(gt)
    per = {L: [] for L in lengths}
    for first in range(len(gt)):
        for L in lengths:
            last = int(np.searchsorted(dist, dist[first] + L, side="right"))
            if last >= len(gt):
                continue
            d_gt = gt[first].inverse() @ gt[last]
            d_est = est[first].inverse() @ est[last]
            err = d_est.inverse() @ d_gt
            per[L].append((np.linalg.norm(err.translation) / L, err.rotation_angle() / L))
    all_err = [e for L in lengths for e in per[L]]
    if not all_err:
        return RpeResult(0.0, 0.0, 0, True)
    arr = np.array(all_err)
    breakdown = {
        L: (float(np.mean([e[0] for e in v]) * 100.0), float(np.degrees(np.mean([e[1] for e in v])) * 100.0), len(v))
        for L, v in per.items()
        if v
    }
    return RpeResult(
        float(arr[:, 0].mean() * 100.0),
        float(np.degrees(arr[:, 1].mean()) * 100.0),
        len(arr),
        False,
        breakdown,
    )


@dataclass
class EvalReport:
    ate_rmse: float
    rpe_trans: float
    rpe_rot: float
    n_segments: int
    insufficient_length: bool
    per_segment: dict[int, tuple[float, float, int]] = field(default_factory=dict)

    def to_text(self, title: str = "trajectory") -> str:
        lines = [
            f"{title}",
            f"  ATE RMSE            : {self.ate_rmse:.4f} m",
        ]
        if self.insufficient_length:
            lines.append("  RPE                 : insufficient length (< 100 m of ground truth)")
        else:
            lines.append(f"  RPE translation     : {self.rpe_trans:.4f} %")
            lines.append(f"  RPE rotation        : {self.rpe_rot:.4f} deg/100m")
            lines.append(f"  segments            : {self.n_segments}")
            for L, (t, r, n) in sorted(self.per_segment.items()):
                lines.append(f"    {L:4d} m : {t:.4f} %  {r:.4f} deg/100m  ({n})")
        return "\n".join(lines) + "\n"

    def to_kv(self, prefix: str = "") -> str:
        items = {
            "ate_rmse": self.ate_rmse,
            "rpe_trans_pct": self.rpe_trans,
            "rpe_rot_deg_per_100m": self.rpe_rot,
            "n_segments": self.n_segments,
            "insufficient_length": int(self.insufficient_length),
        }
        for L, (t, r, n) in sorted(self.per_segment.items()):
            items[f"rpe_trans_pct.{L}"] = t
            items[f"rpe_rot_deg_per_100m.{L}"] = r
        return "".join(f"{prefix}{k} = {v!r}\n" for k, v in items.items())


def evaluate(est, gt, lengths=SEGMENT_LENGTHS) -> EvalReport:
    rpe = kitti_rpe(est, gt, lengths)
    return EvalReport(ate(est, gt), rpe.trans_pct, rpe.rot_deg_per_100m, rpe.n_segments, rpe.insufficient_length, rpe.per_length)
