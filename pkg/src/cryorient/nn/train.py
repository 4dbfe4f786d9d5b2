"""Adam + one-cycle training for the three training styles, and inference."""
import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .. import so3
from ..errors import InvalidArgument, TrainingDiverged
from ..losses import OneCycleConfig, curriculum_weights, one_cycle
from ..simulator import rotate_inplane
from ..sampling import PairIndexSet, random_pairs, stratified_pairs
from ..uncertainty import dispersion_arrays
from . import functional as F
from .tensor import NonFiniteError, absolute, add, mean, rows, scale, sub

STYLES = ("single", "siamese", "siamese_aux")
HISTORY_FIELDS = ("epoch", "train_loss", "val_loss", "train_med_err", "val_med_err", "lr")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    lr_max: float = 1e-3
    seed: int = 0
    pair_scheme: str = "stratified"     # "random" | "stratified"
    pair_candidates: int = 100_000      # stratified: candidate pairs before equalisation
    pair_fraction: float = 0.01         # random: fraction of all train pairs
    pair_bins: int = 8
    curriculum: bool = True
    style: str = "siamese_aux"          # "single" | "siamese" | "siamese_aux"
    adam_beta2: float = 0.999
    adam_eps: float = 1e-7
    monitor_size: int = 256             # train images scored per epoch
    augment_inplane: bool = False       # random in-plane rotation of every training image

    def __post_init__(self):
        if self.style not in STYLES:
            raise InvalidArgument(f"unknown training style {self.style!r}")
        if self.pair_scheme not in ("random", "stratified"):
            raise InvalidArgument(f"unknown pair scheme {self.pair_scheme!r}")
        if self.epochs < 0:
            raise InvalidArgument("epochs must be >= 0")
        if self.batch_size < (2 if self.style != "single" else 1):
            raise InvalidArgument("pair-based styles need batch_size >= 2")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise InvalidArgument(f"unknown training settings: {sorted(unknown)}")
        return cls(**d)


@dataclass
class History:
    rows: list = field(default_factory=list)   # dicts keyed by HISTORY_FIELDS
    initial_train_med_err: float = float("nan")
    degenerate_steps: int = 0

    def __len__(self):
        return len(self.rows)

    def column(self, name):
        return np.array([r[name] for r in self.rows])


class Adam:
    """Adam whose first-moment decay follows the schedule's momentum."""

    def __init__(self, params, beta2=0.999, eps=1e-7):
        self.params = params
        self.beta2 = beta2
        self.eps = eps
        self.m = {k: np.zeros_like(p.value) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.value) for k, p in params.items()}
        self.b1_prod = 1.0
        self.t = 0

    def step(self, grads, lr, beta1):
        self.t += 1
        self.b1_prod *= beta1
        c2 = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            g = grads.get(k)
            if g is None:
                continue
            m = self.m[k] = beta1 * self.m[k] + (1 - beta1) * g
            v = self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            mhat = m / (1.0 - self.b1_prod)
            vhat = v / c2
            p.value = (p.value - lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.value.dtype)


def build_pairs(stack, tcfg, train_idx=None):
    """Training pairs over the train split, as global stack indices."""
    train_idx = stack.indices("train") if train_idx is None else np.asarray(train_idx)
    if len(train_idx) < 2:
        raise InvalidArgument("need at least two training images for pairs")
    n = len(train_idx)
    if tcfg.pair_scheme == "random":
        local = random_pairs(n, tcfg.pair_fraction, tcfg.seed)
    else:
        cand = min(tcfg.pair_candidates, n * (n - 1) // 2)
        local = stratified_pairs(stack.quats[train_idx], cand, tcfg.pair_bins, tcfg.seed)
    return PairIndexSet(train_idx[local.pairs], local.seed, local.scheme, local.bins)


def _augment(x, quats, rng, enabled):
    if not enabled:
        return x, quats
    angles = rng.uniform(0.0, 2.0 * np.pi, len(x))
    rz = np.zeros((len(x), 4))
    rz[:, 0], rz[:, 3] = np.cos(angles / 2), np.sin(angles / 2)
    return rotate_inplane(x, angles).astype(x.dtype), so3.multiply(rz, quats)


def _grads_with_l2(model, l2):
    grads = {}
    for k, p in model.params.items():
        if p.grad is None:
            continue
        g = p.grad
        if l2 and k.endswith(".w"):
            g = g + 2.0 * l2 * p.value
        grads[k] = g
    return grads


def _pair_loss(q, truth_i, truth_j, n, beta1, beta2):
    qi, qj = rows(q, 0, n), rows(q, n, 2 * n)
    terms = []
    if beta1:
        reg = add(F.geodesic(qi, truth_i), F.geodesic(qj, truth_j))
        terms.append(scale(reg, beta1))
    if beta2:
        target = so3.geodesic_distance(truth_i, truth_j)
        terms.append(scale(absolute(sub(F.geodesic(qi, qj), target)), beta2))
    total = terms[0]
    for t in terms[1:]:
        total = add(total, t)
    return mean(total)


def _style_weights(tcfg, epoch):
    if tcfg.style == "siamese":
        return 0.0, 1.0
    w = curriculum_weights(epoch, max(tcfg.epochs, 1), tcfg.curriculum)
    return w.beta1, w.beta2


def _eval_loss(model, x, quats, tcfg, epoch, rng_seed):
    """Loss of the current model on a fixed set (regression for Single, pair loss otherwise)."""
    q = predict(model, x)
    if tcfg.style == "single":
        return float(np.mean(so3.geodesic_distance(q, quats)))
    perm = np.random.default_rng(rng_seed).permutation(len(q))
    b1, b2 = _style_weights(tcfg, epoch)
    di = so3.geodesic_distance(q, quats) + so3.geodesic_distance(q[perm], quats[perm])
    dd = np.abs(so3.geodesic_distance(q, q[perm]) - so3.geodesic_distance(quats, quats[perm]))
    return float(np.mean(b1 * di + b2 * dd))


def _median_error(model, x, quats):
    if len(x) == 0:
        return float("nan")
    return float(np.median(so3.geodesic_distance(predict(model, x), quats)))


def train(model, stack, pairs, tcfg, inputs=None, log=None):
    """Optimise ``model`` in place on the train split of ``stack``.

    ``inputs`` are the preprocessed encoder inputs for every image of the
    stack (computed by the caller so blur settings stay in one place).
    ``pairs`` index the stack and are required for the pair-based styles;
    ``None`` builds them from ``tcfg``.
    """
    history = History()
    if tcfg.epochs == 0:
        return model, history
    if inputs is None:
        raise InvalidArgument("train needs the encoder inputs for the stack")
    x_all = np.asarray(inputs, dtype=model.dtype)
    train_idx = stack.indices("train")
    val_idx = stack.indices("val")
    if len(train_idx) == 0:
        raise InvalidArgument("stack has no training images")
    pair_style = tcfg.style != "single"
    if pair_style and pairs is None:
        pairs = build_pairs(stack, tcfg, train_idx)
    if pair_style:
        allowed = np.zeros(len(stack), dtype=bool)
        allowed[train_idx] = True
        if not np.all(allowed[pairs.pairs]):
            raise InvalidArgument("training pairs must only use train-split images")

    rng = np.random.default_rng(np.random.SeedSequence([tcfg.seed, 1]))
    monitor = train_idx if len(train_idx) <= tcfg.monitor_size else np.sort(
        np.random.default_rng(tcfg.seed).choice(train_idx, tcfg.monitor_size, replace=False))
    steps_per_epoch = max(1, math.ceil(len(train_idx) / tcfg.batch_size))
    sched = OneCycleConfig(total_steps=tcfg.epochs * steps_per_epoch, lr_max=tcfg.lr_max)
    opt = Adam(model.params, tcfg.adam_beta2, tcfg.adam_eps)
    history.initial_train_med_err = _median_error(model, x_all[monitor], stack.quats[monitor])

    half = max(1, tcfg.batch_size // 2)
    pair_order = np.empty((0, 2), dtype=np.int64)
    step = 0
    for epoch in range(tcfg.epochs):
        b1, b2 = _style_weights(tcfg, epoch)
        if tcfg.style == "single":
            order = rng.permutation(train_idx)
        losses = []
        for s in range(steps_per_epoch):
            lr, mom = one_cycle(step, sched)
            info = {}
            try:
                # overflow shows up as NonFiniteError from the op that produced it
                with np.errstate(over="ignore", invalid="ignore"):
                    model.zero_grad()
                    if tcfg.style == "single":
                        idx = order[s * tcfg.batch_size:(s + 1) * tcfg.batch_size]
                        xb, tb = _augment(x_all[idx], stack.quats[idx], rng, tcfg.augment_inplane)
                        q = model.forward(xb, True, rng, info=info)
                        loss = mean(F.geodesic(q, tb))
                    else:
                        if len(pair_order) < half:
                            pair_order = np.concatenate([pair_order, pairs.pairs[rng.permutation(len(pairs.pairs))]])
                        batch, pair_order = pair_order[:half], pair_order[half:]
                        i, j = batch[:, 0], batch[:, 1]
                        xb, tb = _augment(np.concatenate([x_all[i], x_all[j]]),
                                          np.concatenate([stack.quats[i], stack.quats[j]]), rng, tcfg.augment_inplane)
                        q = model.forward(xb, True, rng, tiles=2, info=info)
                        loss = _pair_loss(q, tb[:len(i)], tb[len(i):], len(i), b1, b2)
                    loss.backward()
            except NonFiniteError as exc:
                raise TrainingDiverged(
                    f"non-finite values in {exc.op} at epoch {epoch}, step {step}",
                    snapshot=_snapshot(model, epoch, step, lr)) from exc
            if np.any(info.get("degenerate", False)):
                history.degenerate_steps += 1
            opt.step(_grads_with_l2(model, model.config.l2), lr, mom)
            if "gem.p" in model.params:
                p = model.params["gem.p"]
                p.value = np.maximum(p.value, 1.0).astype(p.value.dtype)
            losses.append(float(loss.value))
            step += 1
        row = {
            "epoch": epoch + 1,
            "train_loss": float(np.mean(losses)),
            "val_loss": _eval_loss(model, x_all[val_idx], stack.quats[val_idx], tcfg, epoch, tcfg.seed)
            if len(val_idx) >= 2 else float("nan"),
            "train_med_err": _median_error(model, x_all[monitor], stack.quats[monitor]),
            "val_med_err": _median_error(model, x_all[val_idx], stack.quats[val_idx]),
            "lr": one_cycle(step, sched)[0],
        }
        history.rows.append(row)
        if log is not None:
            log(row)
    return model, history


def _snapshot(model, epoch, step, lr):
    return {
        "epoch": epoch,
        "step": step,
        "lr": lr,
        "param_norms": {k: float(np.linalg.norm(p.value)) for k, p in model.params.items()},
        "nonfinite_params": [k for k, p in model.params.items() if not np.all(np.isfinite(p.value))],
    }


def _forward_eval(model, x, batch=256):
    qs, As = [], []
    for s in range(0, len(x), batch):
        info = {}
        q = model.forward(np.asarray(x[s:s + batch], dtype=model.dtype), False, info=info)
        qs.append(q.value)
        if "A" in info:
            As.append(info["A"])
    q = np.concatenate(qs) if qs else np.zeros((0, 4))
    A = np.concatenate(As) if As else None
    return q, A


def predict(model, x, batch=256):
    return _forward_eval(model, x, batch)[0]


def infer(model, images, batch=256):
    """Quaternions for preprocessed inputs plus dispersion statistics.

    Returns ``(quats, stats)``; ``stats`` is a dict of arrays from
    :func:`cryorient.uncertainty.dispersion_arrays` for the QCQP head and
    ``None`` for the other heads.  Each image is processed independently
    (batch norm uses running statistics and dropout is off).
    """
    q, A = _forward_eval(model, images, batch)
    if model.config.head != "qcqp" or A is None:
        return q, None
    return q, dispersion_arrays(A)
