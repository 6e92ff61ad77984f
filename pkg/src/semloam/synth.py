"""Deterministic synthetic datasets in KITTI / SemanticKITTI layout.

Scenes are built from labelled primitives (ground plane, axis-aligned boxes,
vertical cylinders, spheres).  Each scan is produced by intersecting the beams
of a 64-ring scanner with the primitives, so ring structure and occlusion
match what the feature extractor expects.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .dataset import N_RINGS, RING_FOV, ring_elevations, write_scan, write_trajectory
from .features import FeatureSet
from .geometry import Pose, so3_exp
from .taxonomy import NAME_TO_RAW, LabelTaxonomy


class SceneSpecError(ValueError):
    pass


@dataclass
class Box:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]
    label: str = "building"


@dataclass
class Cylinder:
    center: tuple[float, float]
    radius: float
    z0: float
    z1: float
    label: str = "pole"


@dataclass
class Sphere:
    center: tuple[float, float, float]
    radius: float
    label: str = "vegetation"


@dataclass
class SceneSpec:
    waypoints: list[tuple[float, float]]
    closed: bool = False
    n_scans: int = 10
    scan_spacing: float | None = None  # metres between scans; closed paths wrap around
    corner_radius: float = 10.0
    sensor_height: float = 1.73
    road_half_width: float = 4.0
    sidewalk_width: float = 3.5
    boxes: list[Box] = field(default_factory=list)
    cylinders: list[Cylinder] = field(default_factory=list)
    spheres: list[Sphere] = field(default_factory=list)
    azimuth_step_deg: float = 1.0
    max_range: float = 100.0
    range_noise: float = 0.01

    def validate(self) -> None:
        if len(self.waypoints) < 2 and not (len(self.waypoints) == 1 and self.n_scans == 1):
            raise SceneSpecError("need at least two waypoints (or one waypoint for a single scan)")
        if self.n_scans < 1:
            raise SceneSpecError("n_scans must be >= 1")
        if self.azimuth_step_deg <= 0 or self.max_range <= 0:
            raise SceneSpecError("azimuth step and max range must be positive")
        for b in self.boxes:
            if any(h <= l for l, h in zip(b.lo, b.hi)):
                raise SceneSpecError(f"degenerate box {b}")
        for c in self.cylinders:
            if c.radius <= 0 or c.z1 <= c.z0:
                raise SceneSpecError(f"degenerate cylinder {c}")
        for s in self.spheres:
            if s.radius <= 0:
                raise SceneSpecError(f"degenerate sphere {s}")
        for prim in (*self.boxes, *self.cylinders, *self.spheres):
            if prim.label not in NAME_TO_RAW:
                raise SceneSpecError(f"unknown label {prim.label!r}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        d["waypoints"] = [tuple(w) for w in d["waypoints"]]
        d["boxes"] = [Box(tuple(b["lo"]), tuple(b["hi"]), b.get("label", "building")) for b in d.get("boxes", [])]
        d["cylinders"] = [Cylinder(tuple(c["center"]), c["radius"], c["z0"], c["z1"], c.get("label", "pole")) for c in d.get("cylinders", [])]
        d["spheres"] = [Sphere(tuple(s["center"]), s["radius"], s.get("label", "vegetation")) for s in d.get("spheres", [])]
        return cls(**d)


# -- path -------------------------------------------------------------------------


def _fillet_path(waypoints, closed: bool, radius: float, spacing: float = 0.05) -> np.ndarray:
    """Dense polyline through the waypoints with circular arcs at corners."""
    w = np.asarray(waypoints, dtype=float)
    n = len(w)
    if closed:
        corners = range(n)
    else:
        corners = range(1, n - 1)
    tangent_pts = {}
    for k in corners:
        prev, cur, nxt = w[(k - 1) % n], w[k], w[(k + 1) % n]
        a, b = prev - cur, nxt - cur
        la, lb = np.linalg.norm(a), np.linalg.norm(b)
        a, b = a / la, b / lb
        cos_t = np.clip(a @ b, -1.0, 1.0)
        half = np.arccos(cos_t) / 2.0
        if abs(np.pi / 2 - half) < 1e-9 or radius <= 0:
            continue  # straight through
        d = radius / np.tan(half)
        d = min(d, 0.45 * la, 0.45 * lb)
        r_eff = d * np.tan(half)
        p_in, p_out = cur + a * d, cur + b * d
        bis = a + b
        bis /= np.linalg.norm(bis)
        center = cur + bis * (r_eff / np.sin(half))
        tangent_pts[k] = (p_in, p_out, center, r_eff)
    pieces = []
    order = list(range(n)) + ([0] if closed else [])
    start = tangent_pts[0][1] if closed and 0 in tangent_pts else w[0]
    cursor = start
    for idx in order[1:]:
        if idx in tangent_pts:
            p_in, p_out, center, r = tangent_pts[idx]
            pieces.append(_segment(cursor, p_in, spacing))
            a0 = np.arctan2(*(p_in - center)[::-1])
            a1 = np.arctan2(*(p_out - center)[::-1])
            da = (a1 - a0 + np.pi) % (2 * np.pi) - np.pi
            m = max(int(abs(da) * r / spacing), 2)
            ang = a0 + da * np.linspace(0, 1, m)
            pieces.append(center + r * np.stack([np.cos(ang), np.sin(ang)], axis=1))
            cursor = p_out
        else:
            pieces.append(_segment(cursor, w[idx], spacing))
            cursor = w[idx]
    return np.concatenate(pieces)


def _segment(a, b, spacing):
    m = max(int(np.linalg.norm(b - a) / spacing), 1)
    return a + (b - a) * np.linspace(0, 1, m + 1)[:, None]


def path_poses(spec: SceneSpec) -> list[Pose]:
    """World-frame sensor poses spaced evenly along the path."""
    if len(spec.waypoints) == 1:
        x, y = spec.waypoints[0]
        return [Pose(None, (x, y, spec.sensor_height))]
    dense = _fillet_path(spec.waypoints, spec.closed, spec.corner_radius)
    seg = np.linalg.norm(np.diff(dense, axis=0), axis=1)
    keep = np.concatenate([[True], seg > 1e-12])
    dense = dense[keep]
    s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(dense, axis=0), axis=1))])
    total = s[-1]
    if spec.scan_spacing is not None:
        targets = np.arange(spec.n_scans) * spec.scan_spacing
        if spec.closed:
            targets = targets % total
        elif targets[-1] > total:
            raise SceneSpecError(f"{spec.n_scans} scans at {spec.scan_spacing} m exceed the path length {total:.1f} m")
    elif spec.closed:
        targets = np.arange(spec.n_scans) * total / spec.n_scans
    else:
        targets = np.linspace(0.0, total, spec.n_scans) if spec.n_scans > 1 else np.array([0.0])
    poses = []
    for st in targets:
        x = np.interp(st, s, dense[:, 0])
        y = np.interp(st, s, dense[:, 1])
        ds = 0.5
        x2, y2 = np.interp(st + ds, s, dense[:, 0]), np.interp(st + ds, s, dense[:, 1])
        x1, y1 = np.interp(st - ds, s, dense[:, 0]), np.interp(st - ds, s, dense[:, 1])
        if spec.closed and st + ds > total:
            x2, y2 = np.interp(st + ds - total, s, dense[:, 0]), np.interp(st + ds - total, s, dense[:, 1])
        if st - ds < 0:
            if spec.closed:
                x1, y1 = np.interp(st - ds + total, s, dense[:, 0]), np.interp(st - ds + total, s, dense[:, 1])
            else:
                x1, y1 = x, y
        yaw = np.arctan2(y2 - y1, x2 - x1)
        poses.append(Pose(so3_exp([0.0, 0.0, yaw]), (x, y, spec.sensor_height)))
    return poses


# -- beam casting ---------------------------------------------------------------------


def beam_directions(azimuth_step_deg: float, n_rings: int = N_RINGS, fov=RING_FOV) -> np.ndarray:
    elev = np.radians(ring_elevations(n_rings, fov))
    az = np.radians(np.arange(0.0, 360.0, azimuth_step_deg))
    E, A = np.meshgrid(elev, az, indexing="ij")
    return np.stack([np.cos(E) * np.cos(A), np.cos(E) * np.sin(A), np.sin(E)], axis=-1).reshape(-1, 3)


def _wrap(a):
    return (a + np.pi) % (2 * np.pi) - np.pi


def _sector(o, corners_xy, margin=0.0):
    """Azimuth (centre, half-width) covering ``corners_xy`` seen from ``o``."""
    rel = corners_xy - o[:2]
    if margin > 0 and np.linalg.norm(rel.mean(axis=0)) <= margin:
        return 0.0, np.pi
    ang = np.arctan2(rel[:, 1], rel[:, 0])
    c = np.arctan2(np.sin(ang).sum(), np.cos(ang).sum())
    hw = np.abs(_wrap(ang - c)).max()
    if margin > 0:
        hw += np.arcsin(min(1.0, margin / np.linalg.norm(rel.mean(axis=0))))
    return c, hw


def _closest_hits(o, d, az, prims, sector, intersect):
    """Nearest hit distance and primitive index per ray, culled by azimuth."""
    t_best = np.full(len(d), np.inf)
    k_best = np.zeros(len(d), dtype=np.int64)
    for k, prim in enumerate(prims):
        c, hw = sector(prim)
        rays = np.flatnonzero(np.abs(_wrap(az - c)) <= hw + 1e-9) if hw < np.pi else np.arange(len(d))
        if len(rays) == 0:
            continue
        t = intersect(o, d[rays], prim)
        better = t < t_best[rays]
        t_best[rays[better]] = t[better]
        k_best[rays[better]] = k
    return t_best, k_best


def _box_t(o, d, box):
    lo, hi = np.asarray(box.lo), np.asarray(box.hi)
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo - o) / d
        t2 = (hi - o) / d
    t1 = np.where(np.isnan(t1), -np.inf, t1)
    t2 = np.where(np.isnan(t2), np.inf, t2)
    tmin = np.minimum(t1, t2).max(axis=1)
    tmax = np.maximum(t1, t2).min(axis=1)
    return np.where((tmax >= tmin) & (tmin > 1e-6), tmin, np.inf)


def _cylinder_t(o, d, cyl):
    ox, oy = o[0] - cyl.center[0], o[1] - cyl.center[1]
    a = d[:, 0] ** 2 + d[:, 1] ** 2
    b = 2 * (ox * d[:, 0] + oy * d[:, 1])
    c = ox**2 + oy**2 - cyl.radius**2
    disc = b * b - 4 * a * c
    with np.errstate(invalid="ignore", divide="ignore"):
        t = (-b - np.sqrt(disc)) / (2 * a)
    z = o[2] + t * d[:, 2]
    return np.where((disc >= 0) & (t > 1e-6) & (z >= cyl.z0) & (z <= cyl.z1), t, np.inf)


def _sphere_t(o, d, sph):
    oc = o - np.asarray(sph.center)
    b = 2 * d @ oc
    disc = b * b - 4 * (oc @ oc - sph.radius**2)
    with np.errstate(invalid="ignore"):
        t = (-b - np.sqrt(disc)) / 2
    return np.where((disc >= 0) & (t > 1e-6), t, np.inf)


class SceneRenderer:
    def __init__(self, spec: SceneSpec):
        spec.validate()
        self.spec = spec
        self.dirs = beam_directions(spec.azimuth_step_deg)
        if len(spec.waypoints) >= 2:
            self._path_tree = cKDTree(_fillet_path(spec.waypoints, spec.closed, spec.corner_radius, spacing=0.25))
        else:
            self._path_tree = cKDTree(np.asarray(spec.waypoints, dtype=float).reshape(-1, 2))

    def ground_labels(self, xy: np.ndarray) -> np.ndarray:
        dist, _ = self._path_tree.query(xy)
        spec = self.spec
        out = np.full(len(xy), NAME_TO_RAW["terrain"], dtype=np.uint32)
        out[dist < spec.road_half_width + spec.sidewalk_width] = NAME_TO_RAW["sidewalk"]
        out[dist < spec.road_half_width] = NAME_TO_RAW["road"]
        return out

    def render(self, pose: Pose, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """Sensor-frame points and raw SemanticKITTI labels for one scan."""
        spec = self.spec
        o = pose.translation
        d = self.dirs @ pose.rotation.T
        with np.errstate(divide="ignore", invalid="ignore"):
            t_ground = np.where(d[:, 2] < -1e-9, -o[2] / d[:, 2], np.inf)
        az = np.arctan2(d[:, 1], d[:, 0])

        def box_sector(b):
            xy = np.array([[b.lo[0], b.lo[1]], [b.lo[0], b.hi[1]], [b.hi[0], b.lo[1]], [b.hi[0], b.hi[1]]])
            inside = b.lo[0] <= o[0] <= b.hi[0] and b.lo[1] <= o[1] <= b.hi[1]
            return (0.0, np.pi) if inside else _sector(o, xy)

        t_box, k_box = _closest_hits(o, d, az, spec.boxes, box_sector, _box_t)
        t_cyl, k_cyl = _closest_hits(
            o, d, az, spec.cylinders, lambda c: _sector(o, np.array([c.center]), c.radius), _cylinder_t
        )
        t_sph, k_sph = _closest_hits(
            o, d, az, spec.spheres, lambda s: _sector(o, np.array([s.center[:2]]), s.radius), _sphere_t
        )
        stack = np.stack([t_ground, t_box, t_cyl, t_sph], axis=1)
        which = np.argmin(stack, axis=1)
        t = stack[np.arange(len(d)), which]
        hit = t <= spec.max_range
        labels = np.zeros(len(d), dtype=np.uint32)
        world = o + d * np.where(np.isfinite(t), t, 0.0)[:, None]
        g = which == 0
        labels[g] = self.ground_labels(world[g, :2])
        for idx, prims, ks in ((1, spec.boxes, k_box), (2, spec.cylinders, k_cyl), (3, spec.spheres, k_sph)):
            m = which == idx
            if m.any():
                raw = np.array([NAME_TO_RAW[p.label] for p in prims], dtype=np.uint32)
                labels[m] = raw[ks[m]]
        t_noisy = t + rng.normal(0.0, spec.range_noise, size=len(t)) if spec.range_noise > 0 else t
        pts = self.dirs[hit] * t_noisy[hit, None]
        return pts, labels[hit]


def generate(spec: SceneSpec, seed: int = 0):
    """Yield (gt pose relative to the first scan, points, raw labels) per scan."""
    renderer = SceneRenderer(spec)
    poses = path_poses(spec)
    origin_inv = poses[0].inverse()
    for k, pose in enumerate(poses):
        rng = np.random.default_rng([seed, k])
        pts, lbl = renderer.render(pose, rng)
        yield origin_inv @ pose, pts, lbl


def synth_dataset(spec: SceneSpec, out_dir, seed: int = 0) -> Path:
    """Write velodyne/, labels/, poses.txt and scene.json under ``out_dir``."""
    spec.validate()
    out = Path(out_dir)
    (out / "velodyne").mkdir(parents=True, exist_ok=True)
    (out / "labels").mkdir(parents=True, exist_ok=True)
    gt = []
    for k, (pose, pts, lbl) in enumerate(generate(spec, seed)):
        write_scan(out / "velodyne" / f"{k:06d}.bin", out / "labels" / f"{k:06d}.label", pts, lbl)
        gt.append(pose)
    write_trajectory(out / "poses.txt", gt)
    (out / "scene.json").write_text(spec.to_json())
    return out


# -- scene presets ----------------------------------------------------------------------


def _populate(spec: SceneSpec, rng: np.random.Generator) -> SceneSpec:
    """Line axis-aligned path segments with buildings, poles, trees and signs."""
    path = _fillet_path(spec.waypoints, spec.closed, spec.corner_radius, spacing=0.25)
    tree = cKDTree(path)
    w = np.asarray(spec.waypoints, dtype=float)
    segs = list(zip(w[:-1], w[1:])) + ([(w[-1], w[0])] if spec.closed else [])

    def clear_of_path(xy, margin):
        return tree.query(np.atleast_2d(xy))[0].min() >= margin

    for a, b in segs:
        direction = b - a
        length = float(np.linalg.norm(direction))
        u = direction / length
        nrm = np.array([-u[1], u[0]])
        if abs(u[0]) > 1e-9 and abs(u[1]) > 1e-9:
            raise SceneSpecError("scene presets need axis-aligned path segments")
        for side in (-1.0, 1.0):
            s = rng.uniform(0.0, 6.0)
            while s < length:
                blen = rng.uniform(8.0, 18.0)
                off = rng.uniform(10.5, 12.5)
                depth = rng.uniform(6.0, 10.0)
                height = rng.uniform(5.0, 14.0)
                p0 = a + u * s + nrm * side * off
                p1 = a + u * min(s + blen, length) + nrm * side * (off + depth)
                corners = np.array([p0, p1, [p0[0], p1[1]], [p1[0], p0[1]]])
                if clear_of_path(corners, 9.5):
                    lo = np.minimum(p0, p1)
                    hi = np.maximum(p0, p1)
                    spec.boxes.append(Box((lo[0], lo[1], 0.0), (hi[0], hi[1], height), "building"))
                s += blen + rng.uniform(3.0, 9.0)
            s = rng.uniform(0.0, 10.0)
            while s < length:
                xy = a + u * s + nrm * side * rng.uniform(5.5, 6.5)
                if clear_of_path(xy, 5.0):
                    spec.cylinders.append(Cylinder((xy[0], xy[1]), 0.12, 0.0, rng.uniform(4.0, 7.0), "pole"))
                    if rng.uniform() < 0.3:
                        z = rng.uniform(2.0, 2.6)
                        c = xy - nrm * side * 0.2
                        half = np.abs(u) * 0.35 + np.abs(nrm) * 0.03
                        spec.boxes.append(
                            Box((c[0] - half[0], c[1] - half[1], z), (c[0] + half[0], c[1] + half[1], z + 0.6), "traffic-sign")
                        )
                s += rng.uniform(10.0, 25.0)
            s = rng.uniform(0.0, 10.0)
            while s < length:
                xy = a + u * s + nrm * side * rng.uniform(7.6, 8.4)
                if clear_of_path(xy, 7.0):
                    spec.cylinders.append(Cylinder((xy[0], xy[1]), rng.uniform(0.15, 0.3), 0.0, 3.5, "trunk"))
                    spec.spheres.append(Sphere((xy[0], xy[1], rng.uniform(4.3, 5.0)), rng.uniform(1.2, 1.8), "vegetation"))
                s += rng.uniform(8.0, 22.0)
    return spec


def square_loop_spec(side: float = 80.0, n_scans: int = 200, seed: int = 0, scan_spacing: float | None = 2.0, **kw) -> SceneSpec:
    """Closed square circuit; with the defaults the last 80 m re-drive the start."""
    spec = SceneSpec(
        waypoints=[(0.0, 0.0), (side, 0.0), (side, side), (0.0, side)],
        closed=True,
        n_scans=n_scans,
        scan_spacing=scan_spacing,
        **kw,
    )
    return _populate(spec, np.random.default_rng(seed))


def straight_line_spec(length: float = 200.0, n_scans: int = 100, seed: int = 0, scan_spacing: float | None = 2.0, **kw) -> SceneSpec:
    spec = SceneSpec(
        waypoints=[(0.0, 0.0), (length, 0.0)], closed=False, n_scans=n_scans, scan_spacing=scan_spacing, **kw
    )
    return _populate(spec, np.random.default_rng(seed))


def single_pole_spec() -> SceneSpec:
    return SceneSpec(waypoints=[(0.0, 0.0)], n_scans=1, cylinders=[Cylinder((6.0, 0.0), 0.15, 0.0, 5.0, "pole")])


# -- compact scene for registration tests --------------------------------------------


def structured_scene(rng: np.random.Generator, taxonomy: LabelTaxonomy | None = None, dense: bool = True) -> FeatureSet:
    """Labelled ground, two perpendicular walls and four poles, in one frame.

    Ground and walls are planar features, poles and the wall corner are edge
    features.  ``dense`` controls sampling density (map vs. scan).
    """
    tax = taxonomy or LabelTaxonomy.default()
    road, building, pole = tax.id_of("road"), tax.id_of("building"), tax.id_of("pole")
    step = 0.15 if dense else 0.5
    z0 = -1.7

    def grid(u0, u1, v0, v1):
        u = np.arange(u0, u1 + 1e-9, step)
        v = np.arange(v0, v1 + 1e-9, step)
        U, V = np.meshgrid(u, v, indexing="ij")
        U = U + rng.uniform(-0.3, 0.3, U.shape) * step
        V = V + rng.uniform(-0.3, 0.3, V.shape) * step
        return U.ravel(), V.ravel()

    gx, gy = grid(-10.0, 10.0, -10.0, 10.0)
    ground = np.stack([gx, gy, np.full_like(gx, z0)], axis=1)
    wy, wz = grid(-9.0, 9.0, z0, 4.0)
    wall_a = np.stack([np.full_like(wy, 9.0), wy, wz], axis=1)
    wx, wz = grid(-9.0, 9.0, z0, 4.0)
    wall_b = np.stack([wx, np.full_like(wx, 9.0), wz], axis=1)
    planars = np.concatenate([ground, wall_a, wall_b])
    planar_labels = np.concatenate([np.full(len(ground), road), np.full(len(wall_a) + len(wall_b), building)])

    zs = np.arange(z0, 2.5, 0.1 if dense else 0.3)
    zs = zs + rng.uniform(-0.02, 0.02, zs.shape)
    edges, edge_labels = [], []
    for cx, cy in ((3.0, -4.0), (-4.0, 3.0), (-5.0, -5.5), (4.5, 4.0)):
        edges.append(np.stack([np.full_like(zs, cx), np.full_like(zs, cy), zs], axis=1))
        edge_labels.append(np.full(len(zs), pole))
    edges.append(np.stack([np.full_like(zs, 9.0), np.full_like(zs, 9.0), zs], axis=1))
    edge_labels.append(np.full(len(zs), building))
    edges = np.concatenate(edges)
    edge_labels = np.concatenate(edge_labels)
    return FeatureSet(edges, edge_labels, np.ones(len(edges)), planars, planar_labels, np.zeros(len(planars)))
