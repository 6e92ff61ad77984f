import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import horn_alignment
from semloam.evaluation import ate, evaluate, kitti_rpe, path_distances, rigid_alignment
from semloam.geometry import Pose, random_pose, so3_exp

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def curvy_path(n=400, step=1.0, seed=0):
    r = np.random.default_rng(seed)
    poses = [Pose.identity()]
    for _ in range(n - 1):
        inc = Pose(so3_exp([0, 0, r.normal(0, 0.02)]), [step, 0, 0])
        poses.append(poses[-1] @ inc)
    return poses


def drifted(gt, scale):
    out = [gt[0]]
    for a, b in zip(gt, gt[1:]):
        rel = a.inverse() @ b
        out.append(out[-1] @ Pose(rel.rotation, rel.translation * scale))
    return out


def test_ate_examples():
    gt = curvy_path(100)
    assert ate(gt, gt) < 1e-12
    shifted = [Pose.translate(3, 4, 0) @ p for p in gt]
    assert ate(shifted, gt) < 1e-9


def test_ate_single_displacement_matches_horn_oracle():
    gt = curvy_path(100)
    est = list(gt)
    est[37] = Pose.translate(0, 1.0, 0) @ est[37]
    a, b = np.array([p.translation for p in est]), np.array([p.translation for p in gt])
    aligned = horn_alignment(a, b).transform(a)
    oracle = np.sqrt(np.mean(np.sum((aligned - b) ** 2, axis=1)))
    assert ate(est, gt) == pytest.approx(oracle, abs=1e-12)
    assert ate(est, gt) == pytest.approx(0.1, abs=0.005)


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_kabsch_matches_horn(seed):
    r = np.random.default_rng(seed)
    src = r.normal(size=(20, 3)) * 10
    T = random_pose(r)
    dst = T.transform(src) + r.normal(scale=0.1, size=src.shape)
    np.testing.assert_allclose(rigid_alignment(src, dst).matrix(), horn_alignment(src, dst).matrix(), atol=1e-9)


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_metrics_invariant_to_rigid_transform(seed):
    r = np.random.default_rng(seed)
    gt = curvy_path(250, seed=seed % 1000)
    est = drifted(gt, 1.005)
    est = [p @ Pose.exp(r.normal(0, 0.01, 6)) for p in est]
    T = random_pose(r)
    moved = [T @ p for p in est]
    assert abs(ate(moved, gt) - ate(est, gt)) < 1e-9
    a, b = kitti_rpe(est, gt), kitti_rpe(moved, gt)
    assert abs(a.trans_pct - b.trans_pct) < 1e-9 and abs(a.rot_deg_per_100m - b.rot_deg_per_100m) < 1e-9
    assert ate(est, gt) >= 0 and a.trans_pct >= 0 and a.rot_deg_per_100m >= 0


def test_rpe_identical_is_zero():
    gt = curvy_path(300)
    res = kitti_rpe(gt, gt)
    assert res.trans_pct == 0.0 and res.rot_deg_per_100m == 0.0 and not res.insufficient_length


def test_rpe_one_percent_drift():
    gt = curvy_path(900)
    res = kitti_rpe(drifted(gt, 1.01), gt)
    assert abs(res.trans_pct - 1.0) <= 0.1
    assert res.n_segments > 0 and set(res.per_length) == {100, 200, 300, 400, 500, 600, 700, 800}


def test_rpe_short_trajectory_flagged():
    gt = curvy_path(51)
    assert path_distances(gt)[-1] == pytest.approx(50.0)
    res = kitti_rpe(gt, gt)
    assert res.insufficient_length and res.n_segments == 0


def test_length_mismatch_and_empty():
    with pytest.raises(ValueError):
        ate([Pose.identity()], [])
    with pytest.raises(ValueError):
        ate([], [])
    with pytest.raises(ValueError):
        kitti_rpe([Pose.identity()], [])


def test_report_formats():
    gt = curvy_path(300)
    rep = evaluate(drifted(gt, 1.01), gt)
    text = rep.to_text("odometry")
    assert text.startswith("odometry\n") and "ATE RMSE" in text and "100 m" in text
    kv = dict(line.split(" = ") for line in rep.to_kv("odometry.").splitlines())
    assert float(kv["odometry.rpe_trans_pct"]) == pytest.approx(rep.rpe_trans)
    assert "insufficient" in evaluate(gt[:20], gt[:20]).to_text()
