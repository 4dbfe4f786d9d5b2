"""Hypothesis strategies and small helpers shared across test modules."""
import numpy as np
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cryorient import rep_heads as rh

finite = st.floats(-10.0, 10.0, allow_nan=False, allow_infinity=False)


@st.composite
def unit_quats(draw):
    v = draw(arrays(np.float64, 4, elements=finite))
    n = np.linalg.norm(v)
    if n < 1e-3:
        v = np.array([1.0, 0.0, 0.0, 0.0])
        n = 1.0
    return v / n


thetas = arrays(np.float64, 10, elements=st.floats(-3.0, 3.0, allow_nan=False))


def random_quats(rng, n):
    q = rng.normal(size=(n, 4))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def well_separated_thetas(rng, n, min_gap=1e-2):
    out = []
    while len(out) < n:
        t = rng.normal(size=10)
        w = np.linalg.eigvalsh(rh.qcqp_build_A(t))
        if np.min(np.diff(w)) > min_gap:
            out.append(t)
    return np.array(out)


def theta_for(A):
    # upper-triangular factor with A = U U^T: flip, Cholesky, flip back
    J = np.eye(4)[::-1]
    U = J @ np.linalg.cholesky(J @ A @ J) @ J
    return U[rh._ROWS, rh._COLS]


def fd_grad(theta, g, h=1e-5):
    def loss(t):
        q, _ = rh.qcqp_forward(t)
        q0, _ = rh.qcqp_forward(theta)
        return np.sign(q @ q0) * q @ g   # keep the sign fixed across the stencil
    out = np.zeros(10)
    for k in range(10):
        e = np.zeros(10)
        e[k] = h
        out[k] = (loss(theta + e) - loss(theta - e)) / (2 * h)
    return out
