"""Rotation-representation heads: unit quaternion, 6D Gram-Schmidt and the
10-parameter QCQP head.

The QCQP head maps ``theta`` (10 numbers) to a PSD matrix ``A = L L^T`` with
the upper-triangular layout::

    L = [[t1, t2, t3,  t4],
         [ 0, t6, t7,  t8],
         [ 0,  0, t10, t9],
         [ 0,  0,  0,  t5]]

(``t9``/``t10`` are intentionally not row-major) and returns the unit
eigenvector of the smallest eigenvalue of ``A``, the minimiser of ``q^T A q``
on the unit sphere.
"""
import warnings

import numpy as np

from .errors import DegenerateInput, DegenerateRepresentation, DegenerateRepresentationWarning, InvalidArgument
from .so3 import canonical_sign, rotmat_to_quat

# (row, col) of L for theta_1 .. theta_10
THETA_LAYOUT = ((0, 0), (0, 1), (0, 2), (0, 3), (3, 3), (1, 1), (1, 2), (1, 3), (2, 3), (2, 2))
_ROWS = np.array([r for r, _ in THETA_LAYOUT])
_COLS = np.array([c for _, c in THETA_LAYOUT])

GAP_RTOL = 1e-8


def sym_eig(A, tol=1e-12, max_sweeps=50):
    """Eigen-decomposition of stacked small symmetric matrices by cyclic Jacobi.

    Parameters
    ----------
    A : array (..., n, n)
        Symmetric matrices (only the symmetric part is used).
    tol : float
        Sweeps stop once the off-diagonal Frobenius norm is below
        ``tol * max(1, ||A||_F)`` for every matrix in the stack.

    Returns
    -------
    w : array (..., n)
        Eigenvalues in ascending order.
    V : array (..., n, n)
        Orthonormal eigenvectors as columns, matching ``w``.
    """
    A = np.asarray(A, dtype=np.float64)
    batch, n = A.shape[:-2], A.shape[-1]
    M = A.reshape(-1, n, n)
    M = 0.5 * (M + np.swapaxes(M, 1, 2))
    V = np.broadcast_to(np.eye(n), M.shape).copy()
    scale = np.maximum(1.0, np.linalg.norm(M, axis=(1, 2)))
    offmask = ~np.eye(n, dtype=bool)
    pairs = [(p, q) for p in range(n - 1) for q in range(p + 1, n)]
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(M[:, offmask] ** 2, axis=1))
        if np.all(off <= tol * scale):
            break
        for p, q in pairs:
            apq = M[:, p, q]
            d = M[:, q, q] - M[:, p, p]
            # tan of the smaller rotation angle, written without d / apq so it cannot overflow
            den = np.abs(d) + np.hypot(d, 2.0 * apq)
            t = np.where(d < 0, -2.0, 2.0) * apq / np.where(den == 0.0, 1.0, den)
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            c3, s3 = c[:, None], s[:, None]
            mp, mq = M[:, :, p].copy(), M[:, :, q].copy()
            M[:, :, p] = c3 * mp - s3 * mq
            M[:, :, q] = s3 * mp + c3 * mq
            mp, mq = M[:, p, :].copy(), M[:, q, :].copy()
            M[:, p, :] = c3 * mp - s3 * mq
            M[:, q, :] = s3 * mp + c3 * mq
            M[:, p, q] = 0.0
            M[:, q, p] = 0.0
            vp, vq = V[:, :, p].copy(), V[:, :, q].copy()
            V[:, :, p] = c3 * vp - s3 * vq
            V[:, :, q] = s3 * vp + c3 * vq
    w = np.diagonal(M, axis1=1, axis2=2)
    order = np.argsort(w, axis=1, kind="stable")
    w = np.take_along_axis(w, order, axis=1)
    V = np.take_along_axis(V, order[:, None, :], axis=2)
    return w.reshape(batch + (n,)), V.reshape(batch + (n, n))


# -- unit quaternion head ----------------------------------------------------

def head_quat(raw):
    raw = np.asarray(raw, dtype=np.float64)
    n = np.linalg.norm(raw, axis=-1, keepdims=True)
    if np.any(n <= 1e-12):
        raise DegenerateInput("quaternion head output has (near) zero norm")
    return raw / n


# -- 6D head -------------------------------------------------------------------

def gram_schmidt(raw):
    """Orthonormal frame ``[e1 e2 e3]`` (as columns) from the 6-vector ``(u, v)``."""
    raw = np.asarray(raw, dtype=np.float64)
    u, v = raw[..., :3], raw[..., 3:6]
    nu = np.linalg.norm(u, axis=-1, keepdims=True)
    if np.any(nu < 1e-10):
        raise DegenerateInput("6D head: first vector has (near) zero norm")
    e1 = u / nu
    r = v - np.sum(e1 * v, axis=-1, keepdims=True) * e1
    nr = np.linalg.norm(r, axis=-1, keepdims=True)
    if np.any(nr < 1e-10):
        raise DegenerateInput("6D head: vectors are (near) parallel")
    e2 = r / nr
    e3 = np.cross(e1, e2)
    return np.stack([e1, e2, e3], axis=-1)


def head_6d(raw):
    return rotmat_to_quat(gram_schmidt(raw))


def _rotation_quadratic_forms():
    # M[i, j] is the symmetric 4x4 form with q^T M[i, j] q == R(q)[i, j] for unit q
    def homogeneous(q):
        w, x, y, z = q
        return np.array([
            [w * w + x * x - y * y - z * z, 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), w * w - x * x + y * y - z * z, 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), w * w - x * x - y * y + z * z],
        ])

    E = np.eye(4)
    M = np.zeros((3, 3, 4, 4))
    for a in range(4):
        for b in range(4):
            if a == b:
                M[:, :, a, a] = homogeneous(E[a])
            else:
                M[:, :, a, b] = 0.5 * (homogeneous(E[a] + E[b]) - homogeneous(E[a]) - homogeneous(E[b]))
    return M


ROT_FORMS = _rotation_quadratic_forms()


def rotmat_profile_matrix(R):
    """``K(R) = sum_ij R_ij M_ij``; for a rotation ``R(q0)`` this equals ``4 q0 q0^T - I``."""
    return np.einsum("...ij,ijab->...ab", np.asarray(R, dtype=np.float64), ROT_FORMS)


def rotmat_to_quat_eig(R):
    """Quaternion as top eigenvector of ``K(R)``; smooth in ``R``, used by the 6D autodiff path."""
    w, V = sym_eig(-rotmat_profile_matrix(R))
    return canonical_sign(V[..., :, 0]), w, V


# -- QCQP head -----------------------------------------------------------------

def theta_to_L(theta):
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape[-1] != 10:
        raise InvalidArgument(f"QCQP head expects 10 parameters, got {theta.shape[-1]}")
    L = np.zeros(theta.shape[:-1] + (4, 4))
    L[..., _ROWS, _COLS] = theta
    return L


def qcqp_build_A(theta):
    L = theta_to_L(theta)
    return L @ np.swapaxes(L, -1, -2)


def eigengap_degenerate(w):
    """True where ``lambda_2 - lambda_1 < 1e-8 * max(1, lambda_4)`` (ascending ``w``)."""
    w = np.asarray(w)
    return (w[..., 1] - w[..., 0]) < GAP_RTOL * np.maximum(1.0, w[..., -1])


def qcqp_solve(theta):
    """Batched QCQP head: returns ``(q, A, w, V, degenerate)``."""
    theta = np.asarray(theta, dtype=np.float64)
    if not np.all(np.isfinite(theta)):
        raise InvalidArgument("QCQP parameters must be finite")
    A = qcqp_build_A(theta)
    w, V = sym_eig(A)
    q = V[..., :, 0]
    sign = np.where(np.all(canonical_sign(q) == q, axis=-1, keepdims=True), 1.0, -1.0)
    V = V.copy()
    V[..., :, 0] = q * sign
    return V[..., :, 0], A, w, V, eigengap_degenerate(w)


def qcqp_forward(theta):
    """Minimiser of ``q^T A(theta) q`` over unit ``q`` (canonical sign) and ``A``.

    A repeated smallest eigenvalue still yields a valid minimiser but emits a
    :class:`DegenerateRepresentationWarning`.
    """
    q, A, _, _, degenerate = qcqp_solve(theta)
    if np.any(degenerate):
        warnings.warn("QCQP matrix has a repeated smallest eigenvalue", DegenerateRepresentationWarning, stacklevel=2)
    return q, A


def min_eigvec_backward(w, V, grad_q):
    """Gradient w.r.t. a symmetric matrix of a loss on its smallest eigenvector.

    With ``dq = sum_{k>0} v_k v_k^T dA q / (w_0 - w_k)`` the (non-symmetrised)
    gradient is ``G = sum_{k>0} (v_k . g) / (w_0 - w_k) v_k q^T``.
    """
    q = V[..., :, 0]
    proj = np.einsum("...ik,...i->...k", V, grad_q)
    denom = w[..., :1] - w
    coef = np.zeros_like(proj)
    coef[..., 1:] = proj[..., 1:] / denom[..., 1:]
    u = np.einsum("...ik,...k->...i", V, coef)
    return u[..., :, None] * q[..., None, :]


def theta_grad_from_A_grad(L, G):
    # A = L L^T  =>  dL = (G + G^T) L, restricted to the free entries of L
    GL = (G + np.swapaxes(G, -1, -2)) @ L
    return GL[..., _ROWS, _COLS]


def qcqp_backward_batch(theta, grad_q, w=None, V=None):
    theta = np.asarray(theta, dtype=np.float64)
    if w is None or V is None:
        _, _, w, V, degenerate = qcqp_solve(theta)
    else:
        degenerate = eigengap_degenerate(w)
    if np.any(degenerate):
        raise DegenerateRepresentation("eigengap too small to differentiate the QCQP head")
    G = min_eigvec_backward(w, V, np.asarray(grad_q, dtype=np.float64))
    return theta_grad_from_A_grad(theta_to_L(theta), G)


def qcqp_backward(theta, grad_q):
    """d(loss)/d(theta) given d(loss)/d(q) for the QCQP head."""
    return qcqp_backward_batch(theta, grad_q)
