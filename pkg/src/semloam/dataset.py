"""KITTI / SemanticKITTI file formats: scans, labels, pose files, PLY maps."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import Pose
from .taxonomy import DISCARD, LabelTaxonomy

# HDL-64E vertical field of view, degrees
RING_FOV = (-24.9, 2.0)
N_RINGS = 64


class DatasetError(ValueError):
    pass


@dataclass
class SemanticScan:
    """One sweep. All arrays share the first dimension."""

    points: np.ndarray  # (N, 3) float64, sensor frame
    labels: np.ndarray  # (N,) retained class ids
    rings: np.ndarray  # (N,) laser index
    ranges: np.ndarray  # (N,)
    intensity: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.points)

    @classmethod
    def empty(cls) -> "SemanticScan":
        return cls(np.zeros((0, 3)), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros(0))

    @classmethod
    def from_points(cls, points, labels, rings=None) -> "SemanticScan":
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        if rings is None:
            rings = ring_index(points)
        return cls(points, labels, np.asarray(rings, dtype=np.int64), np.linalg.norm(points, axis=1))

    def subset(self, mask) -> "SemanticScan":
        return SemanticScan(
            self.points[mask],
            self.labels[mask],
            self.rings[mask],
            self.ranges[mask],
            None if self.intensity is None else self.intensity[mask],
        )


def ring_index(points: np.ndarray, n_rings: int = N_RINGS, fov=RING_FOV) -> np.ndarray:
    """Bucket points into laser rings by elevation angle."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    elev = np.degrees(np.arctan2(points[:, 2], np.hypot(points[:, 0], points[:, 1])))
    lo, hi = fov
    ring = np.floor((elev - lo) / (hi - lo) * n_rings).astype(np.int64)
    return np.clip(ring, 0, n_rings - 1)


def ring_elevations(n_rings: int = N_RINGS, fov=RING_FOV) -> np.ndarray:
    """Elevation (degrees) of each ring's bin centre."""
    lo, hi = fov
    return lo + (np.arange(n_rings) + 0.5) * (hi - lo) / n_rings


def read_scan(bin_path, label_path, taxonomy: LabelTaxonomy, range_limits=None) -> SemanticScan:
    """Read a velodyne ``.bin`` and its ``.label`` file.

    Points whose raw label maps to DISCARD are removed, and so are points
    outside ``range_limits`` (min, max) when given.
    """
    raw = np.fromfile(bin_path, dtype="<f4")
    if raw.size % 4:
        raise DatasetError(f"{bin_path}: size is not a multiple of 4 float32 values")
    xyzi = raw.reshape(-1, 4)
    words = np.fromfile(label_path, dtype="<u4")
    if len(words) != len(xyzi):
        raise DatasetError(f"point/label count mismatch: {len(xyzi)} points in {bin_path}, {len(words)} labels in {label_path}")
    labels = taxonomy.map_raw(words & 0xFFFF)
    points = xyzi[:, :3].astype(np.float64)
    ranges = np.linalg.norm(points, axis=1)
    keep = labels != DISCARD
    if range_limits is not None:
        lo, hi = range_limits
        keep &= (ranges >= lo) & (ranges <= hi)
    else:
        keep &= ranges > 0
    points = points[keep]
    return SemanticScan(points, labels[keep], ring_index(points), ranges[keep], xyzi[keep, 3].astype(np.float64))


def write_scan(bin_path, label_path, points: np.ndarray, raw_labels: np.ndarray, intensity=None) -> None:
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    xyzi = np.zeros((len(points), 4), dtype="<f4")
    xyzi[:, :3] = points
    if intensity is not None:
        xyzi[:, 3] = intensity
    xyzi.tofile(bin_path)
    np.asarray(raw_labels, dtype="<u4").tofile(label_path)


def write_trajectory(path, poses) -> None:
    with open(path, "w") as f:
        for p in poses:
            f.write(_pose_line(p) + "\n")


def _pose_line(p: Pose) -> str:
    vals = p.matrix()[:3].reshape(-1)
    return " ".join(_fmt(v) for v in vals)


def _fmt(v: float) -> str:
    if v == 0:
        return "0"
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def read_trajectory(path) -> list[Pose]:
    poses = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            fields = line.split()
            if len(fields) != 12:
                raise DatasetError(f"{path}:{lineno}: expected 12 numbers, got {len(fields)}")
            try:
                m = np.array([float(x) for x in fields]).reshape(3, 4)
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from None
            poses.append(Pose(m[:, :3], m[:, 3]))
    return poses


def read_calib_tr(path) -> Pose:
    """Velodyne-to-camera extrinsic ``Tr`` from a KITTI ``calib.txt``."""
    with open(path) as f:
        for line in f:
            key, _, rest = line.partition(":")
            if key.strip() == "Tr":
                return Pose.from_matrix(np.vstack([np.array(rest.split(), dtype=float).reshape(3, 4), [0, 0, 0, 1]]))
    raise DatasetError(f"{path}: no Tr entry")


def camera_to_lidar(poses, tr: Pose) -> list[Pose]:
    """Express KITTI camera-frame ground truth in the velodyne frame."""
    tr_inv = tr.inverse()
    return [tr_inv @ p @ tr for p in poses]


def export_map(points: np.ndarray, labels: np.ndarray, path, taxonomy: LabelTaxonomy, binary: bool = True) -> None:
    """Write a coloured PLY (x, y, z float32; red, green, blue uint8)."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if not np.all(np.isfinite(points)):
        raise ValueError("map contains non-finite coordinates")
    colors = taxonomy.colors()[labels] if len(labels) else np.zeros((0, 3), dtype=np.uint8)
    fmt = "binary_little_endian" if binary else "ascii"
    header = (
        f"ply\nformat {fmt} 1.0\nelement vertex {len(points)}\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n"
    )
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        if binary:
            rec = np.zeros(len(points), dtype=[("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("r", "u1"), ("g", "u1"), ("b", "u1")])
            rec["x"], rec["y"], rec["z"] = points.T
            rec["r"], rec["g"], rec["b"] = colors.T
            f.write(rec.tobytes())
        else:
            for p, c in zip(points.astype(np.float32), colors):
                f.write(f"{p[0]} {p[1]} {p[2]} {c[0]} {c[1]} {c[2]}\n".encode("ascii"))


def read_ply(path) -> tuple[np.ndarray, np.ndarray]:
    """Read back a PLY written by :func:`export_map`; returns (xyz, rgb)."""
    with open(path, "rb") as f:
        data = f.read()
    end = data.index(b"end_header\n") + len(b"end_header\n")
    header = data[:end].decode("ascii").splitlines()
    n = next(int(h.split()[-1]) for h in header if h.startswith("element vertex"))
    if any("binary_little_endian" in h for h in header):
        rec = np.frombuffer(data[end:], dtype=[("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("r", "u1"), ("g", "u1"), ("b", "u1")], count=n)
        xyz = np.stack([rec["x"], rec["y"], rec["z"]], axis=1)
        rgb = np.stack([rec["r"], rec["g"], rec["b"]], axis=1)
    else:
        rows = np.array([line.split() for line in data[end:].decode("ascii").splitlines() if line.strip()], dtype=float).reshape(-1, 6)
        xyz, rgb = rows[:, :3], rows[:, 3:].astype(np.uint8)
    return xyz, rgb


def list_sequence(root) -> list[tuple[Path, Path]]:
    """Matched (bin, label) pairs under ``root/velodyne`` and ``root/labels``."""
    root = Path(root)
    scan_dir, label_dir = root / "velodyne", root / "labels"
    if not scan_dir.is_dir():
        raise DatasetError(f"{root}: missing velodyne/ directory")
    if not label_dir.is_dir():
        raise DatasetError(f"{root}: missing labels/ directory")
    bins = sorted(scan_dir.glob("*.bin"))
    if not bins:
        raise DatasetError(f"{root}: no scans found")
    pairs = []
    for b in bins:
        lab = label_dir / (b.stem + ".label")
        if not lab.exists():
            raise DatasetError(f"{b}: no matching label file {lab}")
        pairs.append((b, lab))
    return pairs
