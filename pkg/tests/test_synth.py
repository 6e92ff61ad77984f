import json

import numpy as np
import pytest

from semloam.dataset import list_sequence, read_scan, read_trajectory
from semloam.geometry import Pose
from semloam.synth import (
    Box,
    Cylinder,
    SceneRenderer,
    SceneSpec,
    SceneSpecError,
    Sphere,
    path_poses,
    single_pole_spec,
    square_loop_spec,
    straight_line_spec,
    synth_dataset,
)


def test_single_pole_roundtrip(tmp_path, taxonomy):
    out = synth_dataset(single_pole_spec(), tmp_path / "pole")
    pairs = list_sequence(out)
    assert len(pairs) == 1
    scan = read_scan(*pairs[0], taxonomy)
    names = {taxonomy.name_of(int(c)) for c in np.unique(scan.labels)}
    assert "pole" in names
    pole = scan.points[scan.labels == taxonomy.id_of("pole")]
    # surface hits of a radius 0.15 pole centred 6 m ahead of the sensor
    d = np.hypot(pole[:, 0] - 6.0, pole[:, 1])
    assert np.all(np.abs(d - 0.15) < 0.05)
    assert read_trajectory(out / "poses.txt")[0].allclose(Pose.identity())


def test_ground_hits_lie_on_the_plane(taxonomy):
    spec = single_pole_spec()
    pts, raw = SceneRenderer(spec).render(path_poses(spec)[0], np.random.default_rng(0))
    ground = taxonomy.map_raw(raw) == taxonomy.id_of("road")
    assert ground.sum() > 1000
    assert np.all(np.abs(pts[ground, 2] + spec.sensor_height) < 0.1)


def test_square_loop_returns_to_start():
    spec = square_loop_spec(side=80.0, n_scans=200, scan_spacing=2.0)
    poses = path_poses(spec)
    assert len(poses) == 200
    # 200 scans x 2 m wrap past the start of a ~297 m circuit: the end revisits the first scans
    ends = np.array([p.translation for p in poses])
    assert np.min(np.linalg.norm(ends[150:, None, :2] - ends[None, :10, :2], axis=2)) < 2.0
    closed = square_loop_spec(side=80.0, n_scans=100, scan_spacing=None)
    p = path_poses(closed)
    step = np.linalg.norm(p[1].translation - p[0].translation)
    assert np.linalg.norm(p[-1].translation - p[0].translation) < 1.5 * step


def test_open_path_too_long():
    with pytest.raises(SceneSpecError):
        path_poses(straight_line_spec(length=50.0, n_scans=100, scan_spacing=2.0))


def test_same_seed_byte_identical(tmp_path):
    spec = straight_line_spec(length=20.0, n_scans=3, scan_spacing=2.0)
    a, b = synth_dataset(spec, tmp_path / "a", seed=5), synth_dataset(spec, tmp_path / "b", seed=5)
    c = synth_dataset(spec, tmp_path / "c", seed=6)
    for name in ("velodyne/000002.bin", "labels/000002.label", "poses.txt", "scene.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert (a / "velodyne/000001.bin").read_bytes() != (c / "velodyne/000001.bin").read_bytes()


def test_scene_json_roundtrip():
    spec = square_loop_spec(side=60.0, n_scans=10, seed=3)
    back = SceneSpec.from_dict(json.loads(spec.to_json()))
    assert back == spec


@pytest.mark.parametrize(
    "bad",
    [
        SceneSpec(waypoints=[(0, 0)], n_scans=2),
        SceneSpec(waypoints=[(0, 0), (1, 0)], n_scans=0),
        SceneSpec(waypoints=[(0, 0), (1, 0)], boxes=[Box((0, 0, 0), (0, 1, 1))]),
        SceneSpec(waypoints=[(0, 0), (1, 0)], cylinders=[Cylinder((0, 0), -1, 0, 1)]),
        SceneSpec(waypoints=[(0, 0), (1, 0)], spheres=[Sphere((0, 0, 0), 1, "car")]),
        SceneSpec(waypoints=[(0, 0), (1, 0)], azimuth_step_deg=0),
    ],
)
def test_degenerate_specs_rejected(tmp_path, bad):
    with pytest.raises(SceneSpecError):
        synth_dataset(bad, tmp_path / "x")


def test_presets_need_axis_aligned_paths():
    from semloam.synth import _populate

    with pytest.raises(SceneSpecError):
        _populate(SceneSpec(waypoints=[(0, 0), (10, 10)]), np.random.default_rng(0))
