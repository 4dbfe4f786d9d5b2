"""Quaternion and rotation algebra on SO(3).

Quaternions are stored as ``(..., 4)`` float arrays in ``(w, x, y, z)`` order
(Hamilton convention, ``R(a * b) = R(a) @ R(b)``).  Every function accepts
a single quaternion or a stack of them.

Conventions used throughout the package:

* Euler angles ``(psi, theta, phi)`` compose as ``Rz(psi) @ Ry(theta) @ Rz(phi)``.
* An orientation ``R`` images the volume rotated by ``R``, i.e. the density
  ``V(R^T r)``.  With this choice ``psi`` is the in-plane angle, ``(theta, phi)``
  the viewing direction, and a point-group symmetry ``S`` of the particle
  identifies ``R`` with ``R @ S`` (right action).
"""
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument

UNIT_TOL = 1e-6


def _as_quat(q):
    q = np.asarray(q, dtype=np.float64)
    if q.shape[-1] != 4:
        raise InvalidArgument(f"quaternion arrays need a trailing axis of 4, got {q.shape}")
    return q


def check_unit(q, tol=UNIT_TOL):
    q = _as_quat(q)
    dev = np.abs(np.linalg.norm(q, axis=-1) - 1.0)
    if np.any(~np.isfinite(dev)) or np.any(dev > tol):
        raise InvalidArgument(f"quaternion is not unit norm (max deviation {np.max(dev):.3g})")
    return q


def normalize(q):
    q = _as_quat(q)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n < 1e-12):
        raise InvalidArgument("cannot normalize a zero quaternion")
    return q / n


def conjugate(q):
    q = _as_quat(q)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def multiply(a, b):
    """Hamilton product ``a * b`` (broadcasts over leading axes)."""
    a, b = _as_quat(a), _as_quat(b)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def canonical_sign(q):
    """Flip sign so the first nonzero of ``(w, x, y, z)`` is positive."""
    q = _as_quat(q)
    nz = np.abs(q) > 0
    first = np.argmax(nz, axis=-1)
    lead = np.take_along_axis(q, first[..., None], axis=-1)
    return np.where(lead < 0, -q, q)


def geodesic_distance(a, b):
    """Rotation angle between orientations ``a`` and ``b``: ``2 arccos |<a, b>|``."""
    a, b = check_unit(a), check_unit(b)
    return _angle(a, b)


def _angle(a, b):
    # 2 arccos|<a,b>| evaluated as 4 atan2(|a - b|, |a + b|) on the closer of b, -b;
    # accurate near 0 and pi where arccos loses half the digits
    d = np.linalg.norm(a - b, axis=-1)
    s = np.linalg.norm(a + b, axis=-1)
    return 4.0 * np.arctan2(np.minimum(d, s), np.maximum(d, s))


def axis_rotation(axis, angle):
    """Quaternion for a rotation by ``angle`` about ``axis``."""
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis, axis=-1, keepdims=True)
    angle = np.asarray(angle, dtype=np.float64)[..., None]
    return np.concatenate([np.cos(angle / 2), np.sin(angle / 2) * axis], axis=-1)


def quat_to_rotmat(q):
    q = check_unit(q)
    w, x, y, z = np.moveaxis(q, -1, 0)
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
        np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
        np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
    ], axis=-2)


def rotmat_to_quat(R):
    """Shepperd's method; returns canonical-sign unit quaternions."""
    R = np.asarray(R, dtype=np.float64)
    batch = R.shape[:-2]
    R = R.reshape(-1, 3, 3)
    tr = np.trace(R, axis1=1, axis2=2)
    diag = np.stack([tr, R[:, 0, 0], R[:, 1, 1], R[:, 2, 2]], axis=1)
    pick = np.argmax(diag, axis=1)
    m = R
    # 4 * (largest quaternion component); branch 0 is w, branch k is the k-th axis
    s = 1.0 + 2.0 * diag - tr[:, None]
    s[:, 0] = 1.0 + tr
    s = 2.0 * np.sqrt(np.maximum(np.take_along_axis(s, pick[:, None], axis=1)[:, 0], 0.0))
    s = np.where(s == 0, 1.0, s)
    a = m[:, 2, 1] - m[:, 1, 2]
    b = m[:, 0, 2] - m[:, 2, 0]
    c = m[:, 1, 0] - m[:, 0, 1]
    d = m[:, 0, 1] + m[:, 1, 0]
    f = m[:, 0, 2] + m[:, 2, 0]
    g = m[:, 1, 2] + m[:, 2, 1]
    qs = s / 4
    branches = np.stack([
        np.stack([qs, a / s, b / s, c / s], -1),
        np.stack([a / s, qs, d / s, f / s], -1),
        np.stack([b / s, d / s, qs, g / s], -1),
        np.stack([c / s, f / s, g / s, qs], -1),
    ], axis=1)
    q = branches[np.arange(len(pick)), pick]
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return canonical_sign(q).reshape(batch + (4,))


def rotation_angle(R):
    """Angle of a rotation matrix, from its trace."""
    R = np.asarray(R, dtype=np.float64)
    c = (np.trace(R, axis1=-2, axis2=-1) - 1.0) / 2.0
    return np.arccos(np.clip(c, -1.0, 1.0))


# -- Euler angles ------------------------------------------------------------

def _rz(a):
    c, s = np.cos(a), np.sin(a)
    z, o = np.zeros_like(a), np.ones_like(a)
    return np.stack([np.stack([c, -s, z], -1), np.stack([s, c, z], -1), np.stack([z, z, o], -1)], -2)


def _ry(a):
    c, s = np.cos(a), np.sin(a)
    z, o = np.zeros_like(a), np.ones_like(a)
    return np.stack([np.stack([c, z, s], -1), np.stack([z, o, z], -1), np.stack([-s, z, c], -1)], -2)


def euler_zyz_to_rotmat(e):
    e = np.asarray(e, dtype=np.float64)
    psi, theta, phi = np.moveaxis(e, -1, 0)
    return _rz(psi) @ _ry(theta) @ _rz(phi)


def euler_zyz_to_quat(e):
    """``(psi, theta, phi)`` -> quaternion of ``Rz(psi) Ry(theta) Rz(phi)``.

    Built as a product of half-angle quaternions, so no matrix round trip is
    involved.
    """
    e = np.asarray(e, dtype=np.float64)
    if not np.all(np.isfinite(e)):
        raise InvalidArgument("Euler angles must be finite")
    psi, theta, phi = np.moveaxis(e, -1, 0)
    qz1 = axis_rotation([0.0, 0.0, 1.0], psi)
    qy = axis_rotation([0.0, 1.0, 0.0], theta)
    qz2 = axis_rotation([0.0, 0.0, 1.0], phi)
    return multiply(multiply(qz1, qy), qz2)


_GIMBAL_EPS = 1e-12


def quat_to_euler_zyz(q):
    """Inverse of :func:`euler_zyz_to_quat` with angles in ``[0,2pi) x [0,pi] x [0,2pi)``.

    At gimbal lock (``theta`` in ``{0, pi}``) ``phi`` is set to 0.
    """
    R = quat_to_rotmat(q)
    sin_t = np.hypot(R[..., 0, 2], R[..., 1, 2])
    theta = np.arctan2(sin_t, R[..., 2, 2])
    psi = np.arctan2(R[..., 1, 2], R[..., 0, 2])
    phi = np.arctan2(R[..., 2, 1], -R[..., 2, 0])
    lock = sin_t < _GIMBAL_EPS
    up = R[..., 2, 2] > 0
    psi = np.where(lock & up, np.arctan2(R[..., 1, 0], R[..., 0, 0]), psi)
    psi = np.where(lock & ~up, np.arctan2(-R[..., 0, 1], R[..., 1, 1]), psi)
    phi = np.where(lock, 0.0, phi)
    return np.stack([np.mod(psi, 2 * np.pi), theta, np.mod(phi, 2 * np.pi)], axis=-1)


# -- sampling ----------------------------------------------------------------

def sample_uniform(seed, n=None):
    """Haar-uniform unit quaternions via Marsaglia's disk pairs.

    Returns one quaternion when ``n`` is None, else an ``(n, 4)`` array.
    """
    rng = np.random.default_rng(seed)
    count = 1 if n is None else int(n)

    def disk(k):
        out = np.empty((0, 2))
        while len(out) < k:
            p = rng.uniform(-1.0, 1.0, size=(2 * (k - len(out)) + 8, 2))
            p = p[np.sum(p * p, axis=1) < 1.0]
            out = np.concatenate([out, p])
        return out[:k]

    a, b = disk(count), disk(count)
    s1 = np.sum(a * a, axis=1)
    s2 = np.sum(b * b, axis=1)
    f = np.sqrt((1.0 - s1) / s2)
    q = np.column_stack([a[:, 0], a[:, 1], b[:, 0] * f, b[:, 1] * f])
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return q[0] if n is None else q


# -- symmetry ----------------------------------------------------------------

@dataclass(frozen=True)
class SymmetryGroup:
    name: str
    elements: np.ndarray

    def __len__(self):
        return len(self.elements)


C1 = SymmetryGroup("C1", np.array([[1.0, 0.0, 0.0, 0.0]]))
# identity plus pi rotations about x, y, z
D2 = SymmetryGroup("D2", np.array([
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0],
    [0.0, 0.0, 1.0, 0.0],
    [0.0, 0.0, 0.0, 1.0],
]))


def symmetry_group(name):
    groups = {"C1": C1, "D2": D2}
    try:
        return groups[str(name).upper()]
    except KeyError:
        raise InvalidArgument(f"unsupported symmetry group {name!r}; expected C1 or D2") from None


def symmetric_distance(a, b, group=C1):
    """Smallest geodesic distance between ``a`` and any ``b * s`` for ``s`` in ``group``."""
    if group is None or len(group.elements) == 0:
        raise InvalidArgument("symmetry group has no elements")
    a, b = check_unit(a), check_unit(b)
    if len(group.elements) == 1:
        return geodesic_distance(a, b)
    dists = [_angle(a, multiply(b, s)) for s in group.elements]
    return np.min(np.stack(dists, axis=0), axis=0)


def canonicalize_d2(e):
    """Map Euler angles into the D2 fundamental cell ``[0,2pi) x [0,pi/2] x [0,pi)``.

    The right action of the D2 elements on ``(psi, theta, phi)`` is
    ``phi -> phi + pi`` (z) and ``(psi, theta, phi) -> (psi + pi, pi - theta, -phi)``
    (x); both together give the y element.  ``theta == pi/2`` stays in the
    lower cell.
    """
    e = quat_to_euler_zyz(euler_zyz_to_quat(e))
    psi, theta, phi = np.moveaxis(e, -1, 0)
    flip = theta > np.pi / 2
    psi = np.where(flip, psi + np.pi, psi)
    theta = np.where(flip, np.pi - theta, theta)
    phi = np.where(flip, -phi, phi)
    phi = np.mod(phi, 2 * np.pi)
    phi = np.where(phi >= np.pi, phi - np.pi, phi)
    # float round-off can land exactly on the open upper bound
    phi = np.where(phi >= np.pi, 0.0, phi)
    psi = np.mod(psi, 2 * np.pi)
    psi = np.where(psi >= 2 * np.pi, 0.0, psi)
    return np.stack([psi, theta, phi], axis=-1)
