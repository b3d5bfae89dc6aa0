"""Pinhole cameras, SE(3) poses with learnable corrections, rays and scene contraction.

Tangent vectors are ordered (rotation, translation): ``xi = (w1, w2, w3, r1, r2, r3)``.
Poses are camera-to-world; cameras look down +z with +y pointing down the image.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_SMALL_ANGLE = 1e-8
# below these angles the coefficient functions switch to their Taylor series
_SERIES_ANGLE = 1e-2
_SLOPE_SERIES_ANGLE = 1e-1


def hat(w) -> np.ndarray:
    wx, wy, wz = w
    return np.array([[0.0, -wz, wy], [wz, 0.0, -wx], [-wy, wx, 0.0]])


# --- quaternions (w, x, y, z) ------------------------------------------------


def canonical_quat(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q)
    return -q if q[0] < 0 else q


def quat_multiply(a, b) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(R) -> np.ndarray:
    """Rotation matrix to canonical quaternion (Shepperd's branch selection)."""
    R = np.asarray(R, dtype=np.float64)
    tr = np.trace(R)
    diag = np.diag(R)
    i = int(np.argmax(np.r_[tr, diag]))
    if i == 0:
        s = 2.0 * np.sqrt(1.0 + tr)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif i == 1:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif i == 2:
        s = 2.0 * np.sqrt(1.0 - R[0, 0] + R[1, 1] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 - R[0, 0] - R[1, 1] + R[2, 2])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    return canonical_quat(q)


def quat_angle(q0, q1) -> float:
    """Geodesic angle (radians) between two rotations."""
    q0, q1 = canonical_quat(q0), canonical_quat(q1)
    # relative rotation q0^-1 q1; atan2 stays accurate near the identity where arccos does not
    rel = quat_multiply(q0 * np.array([1.0, -1.0, -1.0, -1.0]), q1)
    return 2.0 * float(np.arctan2(np.linalg.norm(rel[1:]), abs(rel[0])))


def slerp(q0, q1, t: float) -> np.ndarray:
    q0 = canonical_quat(q0)
    q1 = canonical_quat(q1)
    d = float(np.dot(q0, q1))
    if d < 0.0:  # shortest arc
        q1, d = -q1, -d
    d = min(d, 1.0)
    omega = np.arccos(d)
    if omega < 1e-12:
        return canonical_quat((1 - t) * q0 + t * q1)
    s = np.sin(omega)
    return canonical_quat((np.sin((1 - t) * omega) * q0 + np.sin(t * omega) * q1) / s)


# --- poses -------------------------------------------------------------------


@dataclass(frozen=True)
class Pose:
    """Camera-to-world rigid transform, rotation stored as a w >= 0 unit quaternion."""

    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=np.float64)
        if abs(np.linalg.norm(q) - 1.0) > 1e-9:
            raise ValueError(f"rotation quaternion not unit norm: |q| = {np.linalg.norm(q)}")
        object.__setattr__(self, "rotation", -q if q[0] < 0 else q)
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64))

    @classmethod
    def from_matrix(cls, m) -> "Pose":
        m = np.asarray(m, dtype=np.float64)
        return cls(matrix_to_quat(m[:3, :3]), m[:3, 3].copy())

    @classmethod
    def from_rt(cls, R, t) -> "Pose":
        return cls(matrix_to_quat(R), np.asarray(t, dtype=np.float64))

    @property
    def R(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.R
        m[:3, 3] = self.translation
        return m

    def __matmul__(self, other: "Pose") -> "Pose":
        q = canonical_quat(quat_multiply(self.rotation, other.rotation))
        return Pose(q, self.R @ other.translation + self.translation)

    def inverse(self) -> "Pose":
        qi = self.rotation * np.array([1.0, -1.0, -1.0, -1.0])
        return Pose(qi, -(quat_to_matrix(qi) @ self.translation))

    def transform(self, points) -> np.ndarray:
        return np.asarray(points) @ self.R.T + self.translation


def _exp_coefficients(theta: float):
    """A = sin(th)/th, B = (1-cos th)/th^2, C = (th - sin th)/th^3."""
    if theta < _SERIES_ANGLE:
        t2 = theta * theta
        A = 1 - t2 / 6 + t2 * t2 / 120 - t2**3 / 5040
        B = 0.5 - t2 / 24 + t2 * t2 / 720 - t2**3 / 40320
        C = 1 / 6 - t2 / 120 + t2 * t2 / 5040 - t2**3 / 362880
    else:
        A = np.sin(theta) / theta
        B = (1 - np.cos(theta)) / theta**2
        C = (theta - np.sin(theta)) / theta**3
    return A, B, C


def _exp_coefficient_slopes(theta: float):
    """dA/dth / th, dB/dth / th, dC/dth / th."""
    if theta < _SLOPE_SERIES_ANGLE:
        t2 = theta * theta
        t4 = t2 * t2
        return (
            -1 / 3 + t2 / 30 - t4 / 840 + t4 * t2 / 45360,
            -1 / 12 + t2 / 180 - t4 / 6720 + t4 * t2 / 453600,
            -1 / 60 + t2 / 1260 - t4 / 60480 + t4 * t2 / 4989600,
        )
    s, c = np.sin(theta), np.cos(theta)
    return (
        (theta * c - s) / theta**3,
        (theta * s - 2 + 2 * c) / theta**4,
        ((1 - c) * theta - 3 * theta + 3 * s) / theta**5,
    )


def se3_exp_rt(tangent) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form exponential as (R, t): Rodrigues rotation and V-matrix translation."""
    xi = np.asarray(tangent, dtype=np.float64)
    w, rho = xi[:3], xi[3:]
    theta = float(np.linalg.norm(w))
    W = hat(w)
    W2 = W @ W
    A, B, C = _exp_coefficients(theta)
    R = np.eye(3) + A * W + B * W2
    V = np.eye(3) + B * W + C * W2
    return R, V @ rho


def se3_exp(tangent) -> Pose:
    xi = np.asarray(tangent, dtype=np.float64)
    if not np.all(np.isfinite(xi)):
        raise ValueError("se3_exp: tangent must be finite")
    w = xi[:3]
    theta = float(np.linalg.norm(w))
    half = 0.5 * theta
    if theta < _SMALL_ANGLE:
        q = np.r_[1.0 - theta * theta / 8, 0.5 * w]
    else:
        q = np.r_[np.cos(half), np.sin(half) / theta * w]
    _, t = se3_exp_rt(xi)
    return Pose(canonical_quat(q), t)


def se3_log(pose: Pose) -> np.ndarray:
    q = pose.rotation  # w >= 0, so the angle lies in [0, pi]
    v = q[1:]
    s = float(np.linalg.norm(v))
    theta = 2.0 * np.arctan2(s, q[0])
    if s < _SMALL_ANGLE:
        w = 2.0 * v / q[0]
    else:
        w = theta / s * v
    theta = float(np.linalg.norm(w))
    W = hat(w)
    if theta < _SERIES_ANGLE:
        t2 = theta * theta
        coef = 1 / 12 + t2 / 720 + t2 * t2 / 30240
    else:
        A, B, _ = _exp_coefficients(theta)
        coef = (1 - A / (2 * B)) / theta**2
    V_inv = np.eye(3) - 0.5 * W + coef * (W @ W)
    return np.r_[w, V_inv @ pose.translation]


def se3_exp_derivatives(tangent):
    """Exponential map plus its exact partials.

    Returns ``R, t, dR, dt`` with ``dR[k] = dR/dxi_k`` (6, 3, 3) and
    ``dt[k] = dt/dxi_k`` (6, 3), so that for any point x
    ``d(R x + t)/dxi_k = dR[k] @ x + dt[k]``.
    """
    xi = np.asarray(tangent, dtype=np.float64)
    w, rho = xi[:3], xi[3:]
    theta = float(np.linalg.norm(w))
    W = hat(w)
    W2 = W @ W
    A, B, C = _exp_coefficients(theta)
    dA, dB, dC = _exp_coefficient_slopes(theta)
    R = np.eye(3) + A * W + B * W2
    V = np.eye(3) + B * W + C * W2
    dR = np.zeros((6, 3, 3))
    dt = np.zeros((6, 3))
    for k in range(3):
        E = hat(np.eye(3)[k])
        sym = E @ W + W @ E
        dR[k] = dA * w[k] * W + A * E + dB * w[k] * W2 + B * sym
        dV = dB * w[k] * W + B * E + dC * w[k] * W2 + C * sym
        dt[k] = dV @ rho
    dt[3:] = V.T  # d(V rho)/d rho_j = V[:, j]
    return R, V @ rho, dR, dt


def apply_correction(pose: Pose, tangent) -> Pose:
    """World-side correction: ``exp(tangent) * pose``."""
    return se3_exp(tangent) @ pose


def interpolate_pose(p0: Pose, p1: Pose, t: float) -> Pose:
    """Slerp on rotation, linear interpolation on translation."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"interpolation parameter {t} outside [0, 1]")
    q = slerp(p0.rotation, p1.rotation, t)
    return Pose(q, (1 - t) * p0.translation + t * p1.translation)


# --- cameras and rays ----------------------------------------------------------


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        errors = []
        if not (self.fx > 0 and self.fy > 0):
            errors.append("focal lengths must be positive")
        if not 0 <= self.cx < self.width:
            errors.append(f"cx={self.cx} outside [0, {self.width})")
        if not 0 <= self.cy < self.height:
            errors.append(f"cy={self.cy} outside [0, {self.height})")
        if errors:
            raise ValueError("; ".join(errors))

    def to_dict(self) -> dict:
        return dict(fx=self.fx, fy=self.fy, cx=self.cx, cy=self.cy, width=self.width, height=self.height)


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    h_near: float
    h_far: float

    def __post_init__(self):
        if not 0 <= self.h_near < self.h_far:
            raise ValueError(f"invalid ray bounds [{self.h_near}, {self.h_far}]")
        if abs(np.linalg.norm(self.direction) - 1.0) > 1e-9:
            raise ValueError("ray direction must be unit length")

    def at(self, h):
        return self.origin + np.multiply.outer(h, self.direction)


@dataclass(frozen=True)
class SceneBox:
    min_corner: np.ndarray
    max_corner: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min_corner, dtype=np.float64)
        hi = np.asarray(self.max_corner, dtype=np.float64)
        if not np.all(lo < hi):
            raise ValueError("scene box min_corner must be < max_corner componentwise")
        object.__setattr__(self, "min_corner", lo)
        object.__setattr__(self, "max_corner", hi)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.min_corner + self.max_corner)

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.max_corner - self.min_corner))

    @property
    def scale(self) -> np.ndarray:
        """d(contract)/dx per axis."""
        return 2.0 / (self.max_corner - self.min_corner)


def camera_directions(intr: Intrinsics, u, v) -> np.ndarray:
    """Unnormalized camera-frame directions through pixel centres."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    return np.stack(
        [(u + 0.5 - intr.cx) / intr.fx, (v + 0.5 - intr.cy) / intr.fy, np.ones_like(u)], axis=-1
    )


def pixel_rays(intr: Intrinsics, R: np.ndarray, t: np.ndarray, u, v) -> tuple[np.ndarray, np.ndarray]:
    """World-space origins and unit directions for arrays of pixel indices."""
    d = camera_directions(intr, u, v) @ np.asarray(R).T
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    o = np.broadcast_to(np.asarray(t, dtype=np.float64), d.shape).copy()
    return o, d


def pixel_ray(intr: Intrinsics, pose: Pose, px, near: float, far: float) -> Ray:
    u, v = px
    if not (0 <= u < intr.width and 0 <= v < intr.height):
        raise ValueError(f"pixel {px} outside {intr.width}x{intr.height} image")
    o, d = pixel_rays(intr, pose.R, pose.translation, u, v)
    return Ray(o, d, near, far)


def contract(points, box: SceneBox) -> np.ndarray:
    """Affine map of the scene box onto [-1, 1]^3."""
    return (np.asarray(points) - box.min_corner) * box.scale - 1.0


def uncontract(points, box: SceneBox) -> np.ndarray:
    return (np.asarray(points) + 1.0) / box.scale + box.min_corner


def look_at(position, target, up=(0.0, 0.0, 1.0)) -> Pose:
    position = np.asarray(position, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - position
    z /= np.linalg.norm(z)
    x = np.cross(z, up)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return Pose.from_rt(np.stack([x, y, z], axis=1), position)


def pose_errors(estimated: list[Pose], reference: list[Pose]) -> tuple[np.ndarray, np.ndarray]:
    """Per-camera rotation geodesic (degrees) and camera-centre distance."""
    rot = np.array([np.degrees(quat_angle(a.rotation, b.rotation)) for a, b in zip(estimated, reference)])
    trans = np.array([np.linalg.norm(a.translation - b.translation) for a, b in zip(estimated, reference)])
    return rot, trans
