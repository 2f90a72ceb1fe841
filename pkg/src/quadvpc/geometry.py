"""Quaternion algebra and bearing-vector geometry on the unit sphere.

Quaternions are plain float64 arrays ``[w, x, y, z]`` (scalar first,
Hamilton product).  A bearing is represented by the unit quaternion that
rotates ``e_z`` onto it; the rotated ``e_x``, ``e_y`` span the 2D tangent
plane of the bearing.  Image coordinates are normalized homogeneous
coordinates ``(u, v)`` with the third component fixed at 1.

Every function broadcasts over leading axes, so the same code path serves
scalar calls and the batched evaluations inside the solver.
"""

from __future__ import annotations

import numpy as np

Array = np.ndarray

EX = np.array([1.0, 0.0, 0.0])
EY = np.array([0.0, 1.0, 0.0])
EZ = np.array([0.0, 0.0, 1.0])

# Minimum optical-axis component before a projection is declared degenerate.
EPS_Z = 1e-6
# Dot-product margin below which the rotation axis between two unit vectors
# is undefined (the cross product vanishes there).
EPS_ANTIPARALLEL = 1e-9


class DegenerateProjection(ValueError):
    """Point is behind or grazing the image plane (z <= EPS_Z)."""


class AntiparallelInput(ValueError):
    """No defined rotation axis between (nearly) antiparallel vectors."""


def quat_identity() -> Array:
    return np.array([1.0, 0.0, 0.0, 0.0])


def quat_normalize(q: Array) -> Array:
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_conj(q: Array) -> Array:
    q = np.asarray(q, dtype=np.float64)
    out = q.copy()
    out[..., 1:] = -out[..., 1:]
    return out


def quat_prod(q1: Array, q2: Array) -> Array:
    """Raw Hamilton product, no normalization.

    Accepts arbitrary 4-vectors, e.g. pure quaternions ``[0, w]`` used in
    kinematic rates.
    """
    q1 = np.asarray(q1, dtype=np.float64)
    q2 = np.asarray(q2, dtype=np.float64)
    w1, x1, y1, z1 = (q1[..., i] for i in range(4))
    w2, x2, y2, z2 = (q2[..., i] for i in range(4))
    return np.stack(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ],
        axis=-1,
    )


def quat_mul(q1: Array, q2: Array) -> Array:
    """Rotation composition of two unit quaternions (renormalized)."""
    return quat_normalize(quat_prod(q1, q2))


def pure_quat(v: Array) -> Array:
    """Embed a 3-vector as a pure quaternion ``[0, v]``."""
    v = np.asarray(v, dtype=np.float64)
    out = np.zeros(v.shape[:-1] + (4,))
    out[..., 1:] = v
    return out


def _cross(a: Array, b: Array) -> Array:
    """Componentwise cross product; avoids np.cross axis bookkeeping."""
    ax, ay, az = a[..., 0], a[..., 1], a[..., 2]
    bx, by, bz = b[..., 0], b[..., 1], b[..., 2]
    return np.stack([ay * bz - az * by, az * bx - ax * bz, ax * by - ay * bx], axis=-1)


def quat_rotate(q: Array, v: Array) -> Array:
    """Rotate vector(s) ``v`` by unit quaternion(s) ``q``.

    Uses the two-cross-product form of the sandwich product, which is
    cheaper than building the rotation matrix.
    """
    q = np.asarray(q, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    qv = q[..., 1:]
    v_b = np.broadcast_to(v, np.broadcast_shapes(qv.shape, v.shape))
    t = 2.0 * _cross(qv, v_b)
    return v_b + q[..., :1] * t + _cross(qv, t)


def quat_to_rotmat(q: Array) -> Array:
    """3x3 rotation matrix of a unit quaternion (local frame -> parent)."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = (q[..., i] for i in range(4))
    row0 = np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], axis=-1)
    row1 = np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], axis=-1)
    row2 = np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], axis=-1)
    return np.stack([row0, row1, row2], axis=-2)


def quat_from_rotmat(r: Array) -> Array:
    """Unit quaternion of a 3x3 rotation matrix (Shepperd's method)."""
    r = np.asarray(r, dtype=np.float64)
    tr = np.trace(r)
    d = np.array([1.0 + tr, 1.0 + 2.0 * r[0, 0] - tr, 1.0 + 2.0 * r[1, 1] - tr, 1.0 + 2.0 * r[2, 2] - tr])
    i = int(np.argmax(d))
    if i == 0:
        w = 0.5 * np.sqrt(d[0])
        s = 0.25 / w
        q = np.array([w, (r[2, 1] - r[1, 2]) * s, (r[0, 2] - r[2, 0]) * s, (r[1, 0] - r[0, 1]) * s])
    elif i == 1:
        x = 0.5 * np.sqrt(d[1])
        s = 0.25 / x
        q = np.array([(r[2, 1] - r[1, 2]) * s, x, (r[0, 1] + r[1, 0]) * s, (r[0, 2] + r[2, 0]) * s])
    elif i == 2:
        y = 0.5 * np.sqrt(d[2])
        s = 0.25 / y
        q = np.array([(r[0, 2] - r[2, 0]) * s, (r[0, 1] + r[1, 0]) * s, y, (r[1, 2] + r[2, 1]) * s])
    else:
        z = 0.5 * np.sqrt(d[3])
        s = 0.25 / z
        q = np.array([(r[1, 0] - r[0, 1]) * s, (r[0, 2] + r[2, 0]) * s, (r[1, 2] + r[2, 1]) * s, z])
    return quat_normalize(q)


def quat_exp(r: Array) -> Array:
    """Unit quaternion of a rotation vector, small-angle safe.

    Below ``|r| < 1e-8`` the sinc factor is replaced by its series
    expansion to avoid 0/0.
    """
    r = np.asarray(r, dtype=np.float64)
    angle = np.linalg.norm(r, axis=-1, keepdims=True)
    small = angle < 1e-8
    safe = np.where(small, 1.0, angle)
    # sin(a/2)/a, with series 1/2 - a^2/48 near zero
    sinc_half = np.where(small, 0.5 - angle * angle / 48.0, np.sin(safe / 2.0) / safe)
    w = np.cos(angle / 2.0)
    return quat_normalize(np.concatenate([w, sinc_half * r], axis=-1))


def quat_yaw(psi: float) -> Array:
    """Yaw-only quaternion (rotation about the world z axis)."""
    return np.array([np.cos(psi / 2.0), 0.0, 0.0, np.sin(psi / 2.0)])


def rotations_close(q1: Array, q2: Array, tol: float = 1e-9):
    """Double-cover aware rotation equality: |<q1, q2>| >= 1 - tol."""
    dot = np.abs(np.sum(np.asarray(q1) * np.asarray(q2), axis=-1))
    return dot >= 1.0 - tol


def random_unit_quaternion(rng: np.random.Generator, size: int | None = None) -> Array:
    """Uniformly random rotation(s), Shoemake's subgroup method."""
    shape = () if size is None else (size,)
    u1, u2, u3 = rng.random((3,) + shape)
    a, b = np.sqrt(1.0 - u1), np.sqrt(u1)
    q = np.stack(
        [a * np.sin(2 * np.pi * u2), a * np.cos(2 * np.pi * u2), b * np.sin(2 * np.pi * u3), b * np.cos(2 * np.pi * u3)],
        axis=-1,
    )
    return quat_normalize(q)


def skew(v: Array) -> Array:
    """Cross-product matrix: skew(v) @ w == cross(v, w)."""
    v = np.asarray(v, dtype=np.float64)
    x, y, z = (v[..., i] for i in range(3))
    zero = np.zeros_like(x)
    return np.stack(
        [
            np.stack([zero, -z, y], axis=-1),
            np.stack([z, zero, -x], axis=-1),
            np.stack([-y, x, zero], axis=-1),
        ],
        axis=-2,
    )


def bearing_n(q: Array) -> Array:
    """Unit bearing vector of a bearing quaternion: q acting on e_z."""
    return quat_rotate(q, EZ)


def bearing_N(q: Array) -> Array:
    """3x2 tangent basis of a bearing: columns are q @ e_x and q @ e_y."""
    return np.stack([quat_rotate(q, EX), quat_rotate(q, EY)], axis=-1)


def project_guarded(v: Array):
    """Homogeneous projection with a validity mask instead of raising.

    Returns ``(s, ok)`` where ``s`` is ``(x/z, y/z)`` (zeros where
    invalid) and ``ok`` marks entries with ``z > EPS_Z``.  Used by batched
    code paths that handle degeneracy via penalties.
    """
    v = np.asarray(v, dtype=np.float64)
    z = v[..., 2]
    ok = z > EPS_Z
    z_safe = np.where(ok, z, 1.0)
    s = v[..., :2] / z_safe[..., None]
    return np.where(ok[..., None], s, 0.0), ok


def to_homogeneous(v: Array) -> Array:
    """Normalized image coordinates ``(x/z, y/z)`` of a 3D point.

    Raises :class:`DegenerateProjection` if any entry has ``z <= EPS_Z``.
    """
    s, ok = project_guarded(v)
    if not np.all(ok):
        raise DegenerateProjection("point behind or grazing the image plane")
    return s


def angle_axis_between(a: Array, b: Array) -> Array:
    """Rotation vector taking unit vector ``b`` onto unit vector ``a``.

    Magnitude ``arccos(b . a)``, direction ``(b x a) / |b x a|``; exactly
    zero when the vectors coincide.  Raises :class:`AntiparallelInput`
    when the axis is undefined.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    dot = float(np.clip(np.dot(b, a), -1.0, 1.0))
    if dot <= -1.0 + EPS_ANTIPARALLEL:
        raise AntiparallelInput("rotation axis undefined for antiparallel vectors")
    c = np.cross(b, a)
    s = float(np.linalg.norm(c))
    if s < 1e-16:
        return np.zeros(3)
    # angle/s -> 1 as the vectors align, so this stays well conditioned
    return c * (np.arccos(dot) / s)


def bearing_from_image(s: Array) -> Array:
    """Canonical bearing quaternion of an image coordinate.

    Normalizes ``(u, v, 1)``, takes the angle-axis vector from ``e_z`` to
    it, and exponentiates.  The result is the minimal-twist lift: no
    rotation about the bearing axis itself.
    """
    s = np.asarray(s, dtype=np.float64)
    v = np.array([s[0], s[1], 1.0])
    a = v / np.linalg.norm(v)
    return quat_exp(angle_axis_between(a, EZ))


def image_from_bearing(q: Array) -> Array:
    """Image coordinates of a bearing quaternion, ``[n(q)]_z``."""
    return to_homogeneous(bearing_n(q))
