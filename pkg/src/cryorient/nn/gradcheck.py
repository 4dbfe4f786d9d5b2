"""Central finite-difference checks for the layer ops and whole networks."""
import numpy as np

from .. import so3
from . import functional as F
from .model import EncoderConfig, build_encoder
from .tensor import Tensor, absolute, add, mean, parameter, rows, scale, sub

LAYER_TOL = 1e-4
NETWORK_TOL = 1e-3


def relative_error(a, b, floor=1e-8):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), floor))


def check_op(fn, inputs, seed=0, eps=1e-6):
    """Max relative error between analytic and numerical gradients of ``sum(w * fn(*inputs))``.

    ``inputs`` is a list of arrays; every one is differentiated.
    """
    rng = np.random.default_rng([seed, 7919])
    xs = [parameter(np.array(x, dtype=np.float64)) for x in inputs]
    out = fn(*xs)
    w = rng.normal(size=out.shape)
    out.backward(w)
    worst = 0.0
    for t in xs:
        num = np.zeros_like(t.value)
        it = np.nditer(t.value, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = t.value[i]
            t.value[i] = old + eps
            fp = np.sum(w * fn(*xs).value)
            t.value[i] = old - eps
            fm = np.sum(w * fn(*xs).value)
            t.value[i] = old
            num[i] = (fp - fm) / (2 * eps)
        worst = max(worst, relative_error(t.grad, num))
    return worst


def layer_report(seed=0):
    """``{layer: max relative error}`` for every differentiable op."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, 6, 6, 3))
    state = {"mean": np.zeros(3), "var": np.ones(3)}
    # well separated values keep max-based ops away from ties
    xpool = rng.permutation(2 * 6 * 6 * 3).reshape(2, 6, 6, 3) * 0.1 + 0.05
    mask = F.dropout_mask((2, 6, 6, 3), 0.3, rng)
    truth = so3.sample_uniform(seed + 1, 3)
    raw4 = rng.normal(size=(3, 4))
    raw6 = rng.normal(size=(3, 6))
    theta = rng.normal(size=(3, 10))
    return {
        "conv2d": check_op(lambda a, w, b: F.conv2d(a, w, b), [x, rng.normal(size=(3, 3, 3, 4)), rng.normal(size=4)], seed),
        "dense": check_op(lambda a, w, b: F.dense(a, w, b), [rng.normal(size=(3, 5)), rng.normal(size=(5, 4)),
                                                            rng.normal(size=4)], seed),
        "batch_norm": check_op(lambda a, g, b: F.batch_norm(a, g, b, dict(state), True),
                               [x, rng.uniform(0.5, 1.5, 3), rng.normal(size=3)], seed),
        "prelu": check_op(lambda a, al: F.prelu(a, al), [x + np.sign(x) * 0.01, rng.uniform(0, 0.5, 3)], seed),
        "maxpool2": check_op(lambda a: F.maxpool2(a), [xpool], seed),
        "dropout": check_op(lambda a: F.dropout(a, mask), [x], seed),
        "gem_pool": check_op(lambda a, p: F.gem_pool(a, p), [np.abs(x) + 0.1, np.array([2.5])], seed),
        "global_max": check_op(lambda a: F.global_max(a), [xpool], seed),
        "quat_head": check_op(lambda r: F.quat_head(r), [raw4], seed),
        "sixd_head": check_op(lambda r: F.sixd_head(r), [raw6], seed),
        "qcqp_head": check_op(lambda t: F.qcqp_head(t), [theta], seed),
        "geodesic": check_op(lambda a, b: F.geodesic(a, b), [so3.sample_uniform(seed, 3), truth], seed),
    }


def pair_objective(q, truth_i, truth_j, beta1=0.3, beta2=0.4):
    n = len(truth_i)
    qi, qj = rows(q, 0, n), rows(q, n, 2 * n)
    reg = scale(add(F.geodesic(qi, truth_i), F.geodesic(qj, truth_j)), beta1)
    target = so3.geodesic_distance(truth_i, truth_j)
    dist = scale(absolute(sub(F.geodesic(qi, qj), target)), beta2)
    return mean(add(reg, dist))


def network_report(n_probes=10, seed=0, eps=1e-6):
    """Relative errors of the full pair loss gradient at random parameter entries.

    Uses a two-convolution QCQP encoder on 16-pixel inputs, batch-norm in
    training mode and no dropout.
    """
    cfg = EncoderConfig(input_side=16, n_filters=1, kernels=(3, 3), channels=(4, 6), pool_after=(1, 2),
                        head="qcqp", dropout=0.0)
    model = build_encoder(cfg, seed)
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(4, 16, 16, 2))
    ti, tj = so3.sample_uniform(seed + 1, 2), so3.sample_uniform(seed + 2, 2)

    def loss():
        state = {k: dict(v) for k, v in model.state.items()}
        q = model.forward(Tensor(x), training=True)
        model.state.update(state)   # keep running statistics fixed across probes
        return pair_objective(q, ti, tj)

    model.zero_grad()
    loss().backward()
    names = list(model.params)
    errors = []
    for k in range(n_probes):
        name = names[rng.integers(len(names))]
        p = model.params[name]
        idx = tuple(rng.integers(s) for s in p.value.shape)
        old = p.value[idx]
        p.value[idx] = old + eps
        fp = float(loss().value)
        p.value[idx] = old - eps
        fm = float(loss().value)
        p.value[idx] = old
        num = (fp - fm) / (2 * eps)
        ana = float(p.grad[idx])
        errors.append((name, idx, ana, num, abs(ana - num) / max(abs(ana), abs(num), 1e-6)))
    return errors
