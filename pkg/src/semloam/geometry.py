"""Rigid-body transforms on SE(3).

Twists are ordered ``(omega, v)``: the first three entries are the rotation
vector in radians, the last three the translational part in meters.  All pose
updates in the solvers are left perturbations, ``T <- exp(delta) @ T``.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial.transform import Rotation

# log() refuses rotations this close to pi
LOG_ANGLE_LIMIT = np.pi - 1e-6


def skew(w: np.ndarray) -> np.ndarray:
    """Hat operator; works on a single 3-vector or an (N, 3) batch."""
    w = np.asarray(w, dtype=float)
    out = np.zeros(w.shape[:-1] + (3, 3))
    out[..., 0, 1] = -w[..., 2]
    out[..., 0, 2] = w[..., 1]
    out[..., 1, 0] = w[..., 2]
    out[..., 1, 2] = -w[..., 0]
    out[..., 2, 0] = -w[..., 1]
    out[..., 2, 1] = w[..., 0]
    return out


def _so3_coeffs(theta: float) -> tuple[float, float, float]:
    # sin(t)/t, (1-cos t)/t^2, (t-sin t)/t^3 with series near zero
    if theta < 1e-3:
        t2 = theta * theta
        return 1.0 - t2 / 6.0 + t2 * t2 / 120.0, 0.5 - t2 / 24.0 + t2 * t2 / 720.0, 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    return np.sin(theta) / theta, (1.0 - np.cos(theta)) / theta**2, (theta - np.sin(theta)) / theta**3


def so3_exp(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    theta = float(np.linalg.norm(w))
    a, b, _ = _so3_coeffs(theta)
    W = skew(w)
    return np.eye(3) + a * W + b * (W @ W)


def so3_log(R: np.ndarray) -> np.ndarray:
    cos_theta = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = float(np.arccos(cos_theta))
    if theta >= LOG_ANGLE_LIMIT:
        raise ValueError(f"rotation angle {theta:.9f} too close to pi for log")
    vee = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < 1e-3:
        t2 = theta * theta
        return vee * (0.5 + t2 / 12.0 + 7.0 * t2 * t2 / 720.0)
    return vee * (theta / (2.0 * np.sin(theta)))


def so3_left_jacobian(w: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(w))
    _, b, c = _so3_coeffs(theta)
    W = skew(w)
    return np.eye(3) + b * W + c * (W @ W)


def so3_left_jacobian_inv(w: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(w))
    W = skew(w)
    if theta < 1e-3:
        k = 1.0 / 12.0 + theta**2 / 720.0
    else:
        k = 1.0 / theta**2 - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))
    return np.eye(3) - 0.5 * W + k * (W @ W)


class Pose:
    """An element of SE(3) stored as a rotation matrix and a translation."""

    __slots__ = ("_R", "_t")

    def __init__(self, rotation=None, translation=None):
        R = np.eye(3) if rotation is None else np.array(rotation, dtype=float).reshape(3, 3)
        t = np.zeros(3) if translation is None else np.array(translation, dtype=float).reshape(3)
        R.flags.writeable = False
        t.flags.writeable = False
        self._R = R
        self._t = t

    @property
    def rotation(self) -> np.ndarray:
        return self._R

    @property
    def translation(self) -> np.ndarray:
        return self._t

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_matrix(cls, m) -> "Pose":
        m = np.asarray(m, dtype=float)
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def from_quaternion(cls, q_xyzw, translation) -> "Pose":
        return cls(Rotation.from_quat(q_xyzw).as_matrix(), translation)

    @classmethod
    def translate(cls, x: float, y: float, z: float) -> "Pose":
        return cls(None, (x, y, z))

    @classmethod
    def exp(cls, xi) -> "Pose":
        xi = np.asarray(xi, dtype=float).reshape(6)
        w, v = xi[:3], xi[3:]
        return cls(so3_exp(w), so3_left_jacobian(w) @ v)

    def log(self) -> np.ndarray:
        w = so3_log(self._R)
        return np.concatenate([w, so3_left_jacobian_inv(w) @ self._t])

    def quaternion(self) -> np.ndarray:
        """Rotation as (qx, qy, qz, qw)."""
        return Rotation.from_matrix(self._R).as_quat()

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self._R
        m[:3, 3] = self._t
        return m

    def inverse(self) -> "Pose":
        Rt = self._R.T
        return Pose(Rt, -Rt @ self._t)

    def __matmul__(self, other: "Pose") -> "Pose":
        if not isinstance(other, Pose):
            return NotImplemented
        R = self._R @ other._R
        # one Newton step towards the nearest rotation keeps long products orthonormal
        R = R @ (1.5 * np.eye(3) - 0.5 * (R.T @ R))
        return Pose(R, self._R @ other._t + self._t)

    def transform(self, points) -> np.ndarray:
        """Apply to a 3-vector or an (N, 3) array of points."""
        points = np.asarray(points, dtype=float)
        return points @ self._R.T + self._t

    def adjoint(self) -> np.ndarray:
        """6x6 adjoint for (omega, v) ordered twists."""
        ad = np.zeros((6, 6))
        ad[:3, :3] = self._R
        ad[3:, 3:] = self._R
        ad[3:, :3] = skew(self._t) @ self._R
        return ad

    def rotation_angle(self) -> float:
        return float(np.arccos(np.clip((np.trace(self._R) - 1.0) / 2.0, -1.0, 1.0)))

    def allclose(self, other: "Pose", atol: float = 1e-9) -> bool:
        return bool(np.allclose(self._R, other._R, atol=atol) and np.allclose(self._t, other._t, atol=atol))

    def __repr__(self) -> str:
        return f"Pose(t={np.array2string(self._t, precision=4)}, angle={np.degrees(self.rotation_angle()):.4f}deg)"

    def __reduce__(self):
        return (Pose, (np.array(self._R), np.array(self._t)))


def compose(a: Pose, b: Pose) -> Pose:
    return a @ b


def inverse(p: Pose) -> Pose:
    return p.inverse()


def exp(xi) -> Pose:
    return Pose.exp(xi)


def log(p: Pose) -> np.ndarray:
    return p.log()


def transform_point(p: Pose, x) -> np.ndarray:
    return p.transform(x)


def se3_left_jacobian(xi) -> np.ndarray:
    """Left Jacobian of SE(3): exp(xi + d) ~= exp(J_l(xi) d) exp(xi)."""
    xi = np.asarray(xi, dtype=float)
    w, v = xi[:3], xi[3:]
    theta = float(np.linalg.norm(w))
    W, V = skew(w), skew(v)
    if theta < 1e-2:
        t2 = theta * theta
        c1 = 1.0 / 6.0 - t2 / 120.0
        c2 = 1.0 / 24.0 - t2 / 720.0
        c3 = 1.0 / 120.0 - t2 / 2520.0
    else:
        c1 = (theta - np.sin(theta)) / theta**3
        c2 = (theta**2 + 2.0 * np.cos(theta) - 2.0) / (2.0 * theta**4)
        c3 = (2.0 * theta - 3.0 * np.sin(theta) + theta * np.cos(theta)) / (2.0 * theta**5)
    WV = W @ V
    VW = V @ W
    WVW = WV @ W
    Q = (
        0.5 * V
        + c1 * (WV + VW + WVW)
        + c2 * (W @ WV + VW @ W - 3.0 * WVW)
        + c3 * (WVW @ W + W @ WVW)
    )
    J = so3_left_jacobian(w)
    out = np.zeros((6, 6))
    out[:3, :3] = J
    out[3:, 3:] = J
    out[3:, :3] = Q
    return out


def se3_right_jacobian(xi) -> np.ndarray:
    return se3_left_jacobian(-np.asarray(xi, dtype=float))


# -- batched variants (leading axis = batch) ----------------------------------------


def _so3_coeffs_batch(theta: np.ndarray):
    small = theta < 1e-3
    t = np.where(small, 1.0, theta)
    t2 = theta * theta
    a = np.where(small, 1.0 - t2 / 6.0 + t2 * t2 / 120.0, np.sin(t) / t)
    b = np.where(small, 0.5 - t2 / 24.0 + t2 * t2 / 720.0, (1.0 - np.cos(t)) / t**2)
    c = np.where(small, 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0, (t - np.sin(t)) / t**3)
    return a, b, c


def so3_exp_batch(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=float).reshape(-1, 3)
    a, b, _ = _so3_coeffs_batch(np.linalg.norm(w, axis=1))
    W = skew(w)
    return np.eye(3) + a[:, None, None] * W + b[:, None, None] * (W @ W)


def so3_left_jacobian_batch(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=float).reshape(-1, 3)
    _, b, c = _so3_coeffs_batch(np.linalg.norm(w, axis=1))
    W = skew(w)
    return np.eye(3) + b[:, None, None] * W + c[:, None, None] * (W @ W)


def so3_log_batch(R: np.ndarray) -> np.ndarray:
    cos_theta = np.clip((np.trace(R, axis1=1, axis2=2) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos_theta)
    if np.any(theta >= LOG_ANGLE_LIMIT):
        raise ValueError("rotation angle too close to pi for log")
    vee = np.stack([R[:, 2, 1] - R[:, 1, 2], R[:, 0, 2] - R[:, 2, 0], R[:, 1, 0] - R[:, 0, 1]], axis=1)
    small = theta < 1e-3
    t = np.where(small, 1.0, theta)
    t2 = theta * theta
    k = np.where(small, 0.5 + t2 / 12.0 + 7.0 * t2 * t2 / 720.0, t / (2.0 * np.sin(t)))
    return vee * k[:, None]


def se3_log_batch(R: np.ndarray, t: np.ndarray) -> np.ndarray:
    w = so3_log_batch(R)
    theta = np.linalg.norm(w, axis=1)
    small = theta < 1e-3
    th = np.where(small, 1.0, theta)
    k = np.where(small, 1.0 / 12.0 + theta**2 / 720.0, 1.0 / th**2 - (1.0 + np.cos(th)) / (2.0 * th * np.sin(th)))
    W = skew(w)
    J_inv = np.eye(3) - 0.5 * W + k[:, None, None] * (W @ W)
    return np.concatenate([w, np.einsum("nij,nj->ni", J_inv, t)], axis=1)


def se3_left_jacobian_batch(xi: np.ndarray) -> np.ndarray:
    xi = np.asarray(xi, dtype=float).reshape(-1, 6)
    w, v = xi[:, :3], xi[:, 3:]
    theta = np.linalg.norm(w, axis=1)
    small = theta < 1e-2
    t = np.where(small, 1.0, theta)
    t2 = theta * theta
    c1 = np.where(small, 1.0 / 6.0 - t2 / 120.0, (t - np.sin(t)) / t**3)
    c2 = np.where(small, 1.0 / 24.0 - t2 / 720.0, (t**2 + 2.0 * np.cos(t) - 2.0) / (2.0 * t**4))
    c3 = np.where(small, 1.0 / 120.0 - t2 / 2520.0, (2.0 * t - 3.0 * np.sin(t) + t * np.cos(t)) / (2.0 * t**5))
    W, V = skew(w), skew(v)
    WV, VW = W @ V, V @ W
    WVW = WV @ W
    Q = (
        0.5 * V
        + c1[:, None, None] * (WV + VW + WVW)
        + c2[:, None, None] * (W @ WV + VW @ W - 3.0 * WVW)
        + c3[:, None, None] * (WVW @ W + W @ WVW)
    )
    J = so3_left_jacobian_batch(w)
    out = np.zeros((len(xi), 6, 6))
    out[:, :3, :3] = J
    out[:, 3:, 3:] = J
    out[:, 3:, :3] = Q
    return out


def random_pose(rng: np.random.Generator, max_angle: float = np.pi * 0.9, max_translation: float = 10.0) -> Pose:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0.0, max_angle)
    return Pose(so3_exp(axis * angle), rng.uniform(-max_translation, max_translation, size=3))
