"""Differentiable layer ops on NHWC tensors."""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .. import rep_heads
from ..errors import InvalidArgument
from ..so3 import canonical_sign
from .tensor import NonFiniteError, constant, make

GEM_FLOOR = 1e-6
BN_EPS = 1e-7


# -- convolution / dense -------------------------------------------------------

def _im2col(xp, k):
    # (N, H, W, C, kh, kw) -> (N*H*W, kh*kw*C) with (kh, kw, C) ordering
    win = sliding_window_view(xp, (k, k), axis=(1, 2))
    N, H, W, C = win.shape[:4]
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(N * H * W, k * k * C)


def conv2d(x, w, b):
    """Same-padded stride-1 convolution; ``w`` has shape ``(k, k, C_in, C_out)``."""
    x, w, b = constant(x), constant(w), constant(b)
    if x.value.ndim != 4:
        raise InvalidArgument(f"conv2d expects NHWC input, got shape {x.shape}")
    k, k2, cin, cout = w.shape
    if k != k2 or k % 2 == 0:
        raise InvalidArgument("conv2d needs square odd kernels")
    if x.shape[3] != cin:
        raise InvalidArgument(f"conv2d: input has {x.shape[3]} channels, kernel expects {cin}")
    N, H, W, _ = x.shape
    p = k // 2
    xp = np.pad(x.value, ((0, 0), (p, p), (p, p), (0, 0)))
    cols = _im2col(xp, k)
    wm = w.value.reshape(k * k * cin, cout)
    y = (cols @ wm + b.value).reshape(N, H, W, cout)

    def backward(g):
        gm = g.reshape(-1, cout)
        gw = (cols.T @ gm).reshape(w.shape) if w.requires_grad else None
        gb = gm.sum(axis=0) if b.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (gm @ wm.T).reshape(N, H, W, k, k, cin)
            gxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    gxp[:, i:i + H, j:j + W, :] += gcols[:, :, :, i, j, :]
            gx = gxp[:, p:p + H, p:p + W, :]
        return gx, gw, gb

    return make(y, (x, w, b), backward, "conv2d")


def dense(x, w, b):
    x, w, b = constant(x), constant(w), constant(b)
    if x.value.ndim != 2 or x.shape[1] != w.shape[0]:
        raise InvalidArgument(f"dense: input {x.shape} does not match weights {w.shape}")
    y = x.value @ w.value + b.value

    def backward(g):
        return g @ w.value.T, x.value.T @ g, g.sum(axis=0)

    return make(y, (x, w, b), backward, "dense")


# -- normalisation / activation ------------------------------------------------

def batch_norm(x, gamma, beta, state, training, momentum=0.9, eps=BN_EPS):
    """Batch norm over every axis but the last.

    ``state`` holds ``mean``/``var`` running statistics, updated in place when
    ``training``.
    """
    x, gamma, beta = constant(x), constant(gamma), constant(beta)
    C = x.shape[-1]
    flat = x.value.reshape(-1, C)
    m = flat.shape[0]
    if training:
        mu = flat.mean(axis=0)
        var = flat.var(axis=0)
        state["mean"] = momentum * state["mean"] + (1 - momentum) * mu
        state["var"] = momentum * state["var"] + (1 - momentum) * var
    else:
        mu, var = state["mean"], state["var"]
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (flat - mu) * inv
    y = (gamma.value * xhat + beta.value).reshape(x.shape)

    def backward(g):
        g2 = g.reshape(-1, C)
        gg = np.einsum("ij,ij->j", g2, xhat)
        gb = g2.sum(axis=0)
        if training:
            gx = (gamma.value * inv / m) * (m * g2 - gb - xhat * gg)
        else:
            gx = g2 * (gamma.value * inv)
        return gx.reshape(x.shape), gg, gb

    return make(y, (x, gamma, beta), backward, "batch_norm")


def prelu(x, alpha):
    """``x`` where positive, ``alpha * x`` otherwise; ``alpha`` is per channel (last axis)."""
    x, alpha = constant(x), constant(alpha)
    slope = np.where(x.value < 0, alpha.value, np.ones_like(alpha.value))
    y = x.value * slope
    C = x.shape[-1]

    def backward(g):
        gx = g * slope
        neg = np.minimum(x.value, 0).reshape(-1, C)
        ga = np.einsum("ij,ij->j", neg, g.reshape(-1, C))
        return gx, ga

    return make(y, (x, alpha), backward, "prelu")


def relu(x):
    x = constant(x)
    pos = x.value > 0
    return make(np.where(pos, x.value, 0.0), (x,), lambda g: (g * pos,), "relu")


# -- pooling / dropout -----------------------------------------------------------

def maxpool2(x):
    """2x2 stride-2 max pooling; the gradient goes to the first maximal element."""
    x = constant(x)
    N, H, W, C = x.shape
    if H % 2 or W % 2:
        raise InvalidArgument(f"maxpool2 needs even spatial size, got {H}x{W}")
    xv = x.value
    corners = [(0, 0), (0, 1), (1, 0), (1, 1)]
    parts = [xv[:, i::2, j::2, :] for i, j in corners]
    y = np.maximum(np.maximum(parts[0], parts[1]), np.maximum(parts[2], parts[3]))

    def backward(g):
        gx = np.zeros_like(xv)
        taken = np.zeros(y.shape, dtype=bool)
        for (i, j), part in zip(corners, parts):
            hit = (part == y) & ~taken
            taken |= hit
            gx[:, i::2, j::2, :] = g * hit
        return (gx,)

    return make(y, (x,), backward, "maxpool2")


def dropout(x, mask):
    """Multiply by a precomputed inverted-dropout mask (already scaled by ``1/(1-rate)``)."""
    x = constant(x)
    return make(x.value * mask, (x,), lambda g: (g * mask,), "dropout")


def dropout_mask(shape, rate, rng, dtype=np.float64, tiles=1):
    """Inverted-dropout mask; ``tiles > 1`` repeats the first-axis block so paired branches share it."""
    base = (rng.random((shape[0] // tiles,) + tuple(shape[1:])) >= rate).astype(dtype) / (1.0 - rate)
    return np.concatenate([base] * tiles, axis=0) if tiles > 1 else base


def gem_pool(x, p):
    """Generalised mean over H and W: ``(mean x^p)^(1/p)`` per channel.

    Inputs are floored at ``1e-6``; ``p`` is a learnable scalar tensor.
    """
    x, p = constant(x), constant(p)
    pv = float(np.asarray(p.value).reshape(-1)[0])
    if not pv > 0:
        raise InvalidArgument(f"GeM exponent must be positive, got {pv}")
    N, H, W, C = x.shape
    xc = np.maximum(x.value, GEM_FLOOR)
    # scale by the channel max so x^p never overflows
    s = xc.max(axis=(1, 2), keepdims=True)
    r = xc / s
    rp = r ** pv
    m = rp.mean(axis=(1, 2), keepdims=True)
    f = s * m ** (1.0 / pv)
    y = f[:, 0, 0, :]

    def backward(g):
        g4 = g[:, None, None, :]
        gx = None
        if x.requires_grad:
            # df/dx = f / (p m) * r^(p-1) / s / |X| * p  =  f r^(p-1) / (m s |X|)
            gx = g4 * f * rp / (r * m * s) / (H * W) * (x.value >= GEM_FLOOR)
        gp = None
        if p.requires_grad:
            lnx = np.log(xc)
            mean_term = (rp * lnx).mean(axis=(1, 2), keepdims=True) / m
            df = f * (mean_term - np.log(f)) / pv
            gp = np.asarray((g4 * df).sum()).reshape(p.shape)
        return gx, gp

    return make(y, (x, p), backward, "gem_pool")


def global_max(x):
    x = constant(x)
    N, H, W, C = x.shape
    flat = x.value.reshape(N, H * W, C)
    arg = flat.argmax(axis=1)
    y = np.take_along_axis(flat, arg[:, None, :], axis=1)[:, 0, :]

    def backward(g):
        gf = np.zeros_like(flat)
        np.put_along_axis(gf, arg[:, None, :], g[:, None, :], axis=1)
        return (gf.reshape(x.shape),)

    return make(y, (x,), backward, "global_max")


def global_avg(x):
    x = constant(x)
    N, H, W, C = x.shape
    y = x.value.mean(axis=(1, 2))
    return make(y, (x,), lambda g: (np.broadcast_to(g[:, None, None, :] / (H * W), x.shape).copy(),), "global_avg")


# -- representation heads ----------------------------------------------------------

def quat_head(raw):
    """Normalise a 4-vector to a unit quaternion (canonical sign)."""
    raw = constant(raw)
    v = raw.value.astype(np.float64)
    q = rep_heads.head_quat(v)
    sign = np.where(np.all(canonical_sign(q) == q, axis=-1, keepdims=True), 1.0, -1.0)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    q = q * sign

    def backward(g):
        gs = g * sign
        qs = q * sign
        gr = (gs - qs * np.sum(qs * gs, axis=-1, keepdims=True)) / n
        return (gr.astype(raw.value.dtype),)

    return make(q, (raw,), backward, "quat_head")


def _cross(a, b):
    return np.cross(a, b)


def _gram_schmidt_backward(u, v, e1, e2, nu, nr, g1, g2, g3):
    # e3 = e1 x e2
    g1 = g1 + _cross(e2, g3)
    g2 = g2 + _cross(g3, e1)
    # e2 = r / |r|, r = v - (e1.v) e1
    gr = (g2 - e2 * np.sum(e2 * g2, axis=-1, keepdims=True)) / nr
    c = np.sum(e1 * v, axis=-1, keepdims=True)
    gv = gr - e1 * np.sum(e1 * gr, axis=-1, keepdims=True)
    g1 = g1 - c * gr - v * np.sum(e1 * gr, axis=-1, keepdims=True)
    # e1 = u / |u|
    gu = (g1 - e1 * np.sum(e1 * g1, axis=-1, keepdims=True)) / nu
    return np.concatenate([gu, gv], axis=-1)


def sixd_head(raw):
    """Gram-Schmidt frame from 6 numbers, then the quaternion as the top eigenvector of ``K(R)``."""
    raw = constant(raw)
    v6 = raw.value.astype(np.float64)
    R = rep_heads.gram_schmidt(v6)
    q, w, V = rep_heads.rotmat_to_quat_eig(R)
    u, v = v6[..., :3], v6[..., 3:]
    e1, e2, e3 = R[..., 0], R[..., 1], R[..., 2]
    nu = np.linalg.norm(u, axis=-1, keepdims=True)
    nr = np.linalg.norm(v - np.sum(e1 * v, axis=-1, keepdims=True) * e1, axis=-1, keepdims=True)
    sign = np.where(np.all(q == V[..., :, 0], axis=-1, keepdims=True), 1.0, -1.0)

    def backward(g):
        # q = top eigenvector of K = bottom eigenvector of -K
        GK = -rep_heads.min_eigvec_backward(w, V, g * sign)
        GK = 0.5 * (GK + np.swapaxes(GK, -1, -2))
        GR = np.einsum("...ab,ijab->...ij", GK, rep_heads.ROT_FORMS)
        gr = _gram_schmidt_backward(u, v, e1, e2, nu, nr, GR[..., 0], GR[..., 1], GR[..., 2])
        return (gr.astype(raw.value.dtype),)

    return make(q, (raw,), backward, "sixd_head")


def qcqp_head(theta, info=None):
    """Smallest eigenvector of ``A = L L^T``; degenerate rows get zero gradient.

    When ``info`` is a dict it receives ``A`` and the per-row ``degenerate`` flags.
    """
    theta = constant(theta)
    th = theta.value.astype(np.float64)
    with np.errstate(over="ignore", invalid="ignore"):
        A = rep_heads.qcqp_build_A(th)
    if not np.all(np.isfinite(A)):
        raise NonFiniteError("qcqp_head")
    q, A, w, V, degenerate = rep_heads.qcqp_solve(th)
    if info is not None:
        info["A"] = A
        info["degenerate"] = degenerate

    def backward(g):
        G = rep_heads.min_eigvec_backward(w, V, g)
        gt = rep_heads.theta_grad_from_A_grad(rep_heads.theta_to_L(th), G)
        gt[degenerate] = 0.0
        return (gt.astype(theta.value.dtype),)

    return make(q, (theta,), backward, "qcqp_head")


# -- loss ---------------------------------------------------------------------------

def geodesic(a, b):
    """Per-row rotation angle between unit quaternions, ``4 atan2(|a - b|, |a + b|)`` on the near sign."""
    a, b = constant(a), constant(b)
    av, bv = a.value, b.value
    s = np.where(np.sum(av * bv, axis=-1, keepdims=True) < 0, -1.0, 1.0)
    bs = bv * s
    u, v = av - bs, av + bs
    nu = np.linalg.norm(u, axis=-1, keepdims=True)
    nv = np.linalg.norm(v, axis=-1, keepdims=True)
    d = 4.0 * np.arctan2(nu, nv)[..., 0]

    def backward(g):
        den = nu ** 2 + nv ** 2
        uh = np.divide(u, nu, out=np.zeros_like(u), where=nu > 1e-15)
        vh = np.divide(v, nv, out=np.zeros_like(v), where=nv > 1e-15)
        gg = 4.0 * g[..., None] / den
        ga = gg * (nv * uh - nu * vh)
        gb = gg * (-nv * uh - nu * vh) * s
        return ga, gb

    return make(d, (a, b), backward, "geodesic")
