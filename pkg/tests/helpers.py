"""Shared fixtures and oracles for the test suite."""

import numpy as np

from semloam.features import FeatureSet
from semloam.geometry import Pose, so3_exp
from semloam.synth import structured_scene


def random_displacement(rng, max_deg=5.0, max_trans=1.0) -> Pose:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    t = rng.normal(size=3)
    t *= rng.uniform(0, max_trans) / np.linalg.norm(t)
    return Pose(so3_exp(axis * np.radians(rng.uniform(0, max_deg))), t)


def displaced_scan(seed, taxonomy, displacement: Pose) -> FeatureSet:
    """Sparse resampling of the structured scene seen from ``displacement``."""
    return structured_scene(np.random.default_rng(seed), taxonomy, dense=False).transformed(displacement.inverse())


def contaminated_map(taxonomy, seed=0) -> FeatureSet:
    """Dense structured scene whose road patch at x < -3 is replaced by a 45 degree plane.

    The false plane crosses the true ground at x = -6.5, so nearby road
    features find it inside the correspondence gate.
    """
    road = taxonomy.id_of("road")
    world = structured_scene(np.random.default_rng(seed), taxonomy, dense=True)
    X, Y = np.meshgrid(np.arange(-10, -3, 0.15), np.arange(-9, 9, 0.15), indexing="ij")
    ramp = np.stack([X.ravel(), Y.ravel(), -1.7 + (X.ravel() + 6.5)], axis=1)
    pp, pl = world.planar_points, world.planar_labels
    keep = ~((pl == road) & (pp[:, 0] < -3))
    return FeatureSet(
        world.edge_points,
        world.edge_labels,
        world.edge_roughness,
        np.concatenate([pp[keep], ramp]),
        np.concatenate([pl[keep], np.full(len(ramp), road)]),
        np.zeros(int(keep.sum()) + len(ramp)),
    )


def pose_error(estimate: Pose, truth: Pose) -> tuple[float, float]:
    """(translation m, rotation deg) of ``truth^-1 estimate``."""
    e = truth.inverse() @ estimate
    return float(np.linalg.norm(e.translation)), float(np.degrees(e.rotation_angle()))


def horn_alignment(source, target) -> Pose:
    """Closed-form absolute orientation via the unit-quaternion eigenproblem."""
    source, target = np.asarray(source, float), np.asarray(target, float)
    ms, mt = source.mean(axis=0), target.mean(axis=0)
    S = (source - ms).T @ (target - mt)
    (sxx, sxy, sxz), (syx, syy, syz), (szx, szy, szz) = S
    N = np.array(
        [
            [sxx + syy + szz, syz - szy, szx - sxz, sxy - syx],
            [syz - szy, sxx - syy - szz, sxy + syx, szx + sxz],
            [szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy],
            [sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz],
        ]
    )
    w, v = np.linalg.eigh(N)
    q0, qx, qy, qz = v[:, -1]
    R = np.array(
        [
            [q0**2 + qx**2 - qy**2 - qz**2, 2 * (qx * qy - q0 * qz), 2 * (qx * qz + q0 * qy)],
            [2 * (qy * qx + q0 * qz), q0**2 - qx**2 + qy**2 - qz**2, 2 * (qy * qz - q0 * qx)],
            [2 * (qz * qx - q0 * qy), 2 * (qz * qy + q0 * qx), q0**2 - qx**2 - qy**2 + qz**2],
        ]
    )
    return Pose(R, mt - R @ ms)
