"""Encoder configuration, construction and forward pass."""
import dataclasses
from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidArgument
from . import functional as F
from .tensor import Tensor, add, parameter

HEAD_ARITY = {"quat": 4, "sixd": 6, "qcqp": 10}
POOLINGS = ("gem", "max", "maxavg")
ACTIVATIONS = ("prelu", "relu")


@dataclass(frozen=True)
class EncoderConfig:
    input_side: int = 48
    blur_mode: str = "lowpass"          # "none" | "gaussian" | "lowpass"
    n_filters: int = 3
    kernels: tuple = (5, 3, 3, 3)
    channels: tuple = (16, 32, 64, 128)
    pool_after: tuple = (1, 2, 3, 4)    # 1-based conv indices followed by max-pool + dropout
    pooling: str = "gem"
    gem_p: float = 3.0
    activation: str = "prelu"
    prelu_alpha: float = 0.25
    head: str = "qcqp"
    dropout: float = 0.3
    l2: float = 0.001
    dtype: str = "float64"

    def __post_init__(self):
        object.__setattr__(self, "kernels", tuple(int(k) for k in self.kernels))
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "pool_after", tuple(int(p) for p in self.pool_after))
        object.__setattr__(self, "blur_mode", str(self.blur_mode).lower())
        self.validate()

    @property
    def in_channels(self):
        return 1 if self.blur_mode == "none" else 1 + self.n_filters

    @property
    def head_arity(self):
        return HEAD_ARITY[self.head]

    def validate(self):
        if len(self.kernels) != len(self.channels) or not self.channels:
            raise InvalidArgument("kernels and channels must have the same non-zero length")
        if any(k < 1 or k % 2 == 0 for k in self.kernels):
            raise InvalidArgument("kernel sizes must be odd and positive")
        if self.head not in HEAD_ARITY:
            raise InvalidArgument(f"unknown head {self.head!r}")
        if self.pooling not in POOLINGS:
            raise InvalidArgument(f"unknown pooling {self.pooling!r}")
        if self.activation not in ACTIVATIONS:
            raise InvalidArgument(f"unknown activation {self.activation!r}")
        if self.blur_mode not in ("none", "gaussian", "lowpass"):
            raise InvalidArgument(f"unknown blur mode {self.blur_mode!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidArgument("dropout rate must lie in [0, 1)")
        if self.gem_p <= 0:
            raise InvalidArgument("GeM exponent must be positive")
        if self.dtype not in ("float64", "float32"):
            raise InvalidArgument("dtype must be float64 or float32")
        side = self.input_side
        for i in range(1, len(self.channels) + 1):
            if i in self.pool_after:
                if side % 2:
                    raise InvalidArgument(f"spatial size {side} before pool {i} is odd")
                side //= 2
        if any(p < 1 or p > len(self.channels) for p in self.pool_after):
            raise InvalidArgument("pool_after refers to a missing conv layer")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise InvalidArgument(f"unknown encoder settings: {sorted(unknown)}")
        return cls(**d)


def desk_preset(**overrides):
    return dataclasses.replace(EncoderConfig(), **overrides)


def full_preset(**overrides):
    """128-pixel, ten-convolution network with six pooling stages (output 2x2x1024)."""
    base = EncoderConfig(
        input_side=128, blur_mode="lowpass", n_filters=5,
        kernels=(7, 5) + (3,) * 8,
        channels=(32, 64, 128, 128, 256, 256, 512, 512, 1024, 1024),
        pool_after=(1, 2, 4, 6, 8, 10),
    )
    return dataclasses.replace(base, **overrides)


@dataclass
class Model:
    config: EncoderConfig
    params: dict                        # name -> Tensor (insertion order is the canonical order)
    state: dict = field(default_factory=dict)   # batch-norm running statistics
    seed: int = 0

    @property
    def dtype(self):
        return np.dtype(self.config.dtype)

    def parameter_count(self):
        return int(sum(p.value.size for p in self.params.values()))

    def kernel_names(self):
        return [n for n in self.params if n.endswith(".w")]

    def copy(self):
        params = {k: parameter(v.value.copy()) for k, v in self.params.items()}
        state = {k: {s: a.copy() for s, a in v.items()} for k, v in self.state.items()}
        return Model(self.config, params, state, self.seed)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def layer_shapes(self, batch=1):
        """Output shape (without batch axis) after every layer, as ``(name, shape)``."""
        cfg = self.config
        side, shapes = cfg.input_side, []
        for i, c in enumerate(cfg.channels, 1):
            shapes.append((f"conv{i}", (side, side, c)))
            if i in cfg.pool_after:
                side //= 2
                shapes.append((f"maxpool{sum(1 for p in cfg.pool_after if p <= i)}", (side, side, c)))
        width = cfg.channels[-1]
        shapes.append((cfg.pooling, (width,)))
        shapes.append(("dense", (cfg.head_arity,)))
        shapes.append((cfg.head, (4,)))
        return shapes

    def forward(self, x, training=False, rng=None, tiles=1, info=None, return_trace=False):
        """Map a ``(N, D, D, C)`` batch to unit quaternions.

        ``training`` uses batch statistics and dropout (masks from ``rng``,
        shared across ``tiles`` stacked branches).  ``info`` receives head
        diagnostics (``A`` and ``degenerate`` for the QCQP head).
        """
        cfg = self.config
        h = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=self.dtype))
        if h.value.ndim != 4 or h.shape[1:] != (cfg.input_side, cfg.input_side, cfg.in_channels):
            raise InvalidArgument(
                f"expected input (N, {cfg.input_side}, {cfg.input_side}, {cfg.in_channels}), got {h.shape}")
        trace = []
        P = self.params
        for i in range(1, len(cfg.channels) + 1):
            h = F.conv2d(h, P[f"conv{i}.w"], P[f"conv{i}.b"])
            h = F.batch_norm(h, P[f"bn{i}.gamma"], P[f"bn{i}.beta"], self.state[f"bn{i}"], training)
            h = F.prelu(h, P[f"act{i}.alpha"]) if cfg.activation == "prelu" else F.relu(h)
            trace.append((f"conv{i}", h.shape[1:]))
            if i in cfg.pool_after:
                h = F.maxpool2(h)
                if training and cfg.dropout > 0:
                    h = F.dropout(h, F.dropout_mask(h.shape, cfg.dropout, rng, h.value.dtype, tiles))
                trace.append((f"maxpool{len([t for t in trace if t[0].startswith('maxpool')]) + 1}", h.shape[1:]))
        if cfg.pooling == "gem":
            h = F.gem_pool(h, P["gem.p"])
        elif cfg.pooling == "max":
            h = F.global_max(h)
        else:
            h = add(F.global_max(h), F.global_avg(h))
        trace.append((cfg.pooling, h.shape[1:]))
        h = F.dense(h, P["dense.w"], P["dense.b"])
        trace.append(("dense", h.shape[1:]))
        if cfg.head == "quat":
            q = F.quat_head(h)
        elif cfg.head == "sixd":
            q = F.sixd_head(h)
        else:
            q = F.qcqp_head(h, info)
        trace.append((cfg.head, q.shape[1:]))
        return (q, trace) if return_trace else q


def build_encoder(cfg, seed=0):
    """HE-initialised encoder for ``cfg``; identical seeds give identical weights."""
    if not isinstance(cfg, EncoderConfig):
        raise InvalidArgument("build_encoder expects an EncoderConfig")
    cfg.validate()
    rng = np.random.default_rng(seed)
    dt = np.dtype(cfg.dtype)
    params, state = {}, {}
    cin = cfg.in_channels
    for i, (k, c) in enumerate(zip(cfg.kernels, cfg.channels), 1):
        fan_in = k * k * cin
        params[f"conv{i}.w"] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(k, k, cin, c)).astype(dt)
        params[f"conv{i}.b"] = np.zeros(c, dt)
        params[f"bn{i}.gamma"] = np.ones(c, dt)
        params[f"bn{i}.beta"] = np.zeros(c, dt)
        if cfg.activation == "prelu":
            params[f"act{i}.alpha"] = np.full(c, cfg.prelu_alpha, dt)
        state[f"bn{i}"] = {"mean": np.zeros(c, dt), "var": np.ones(c, dt)}
        cin = c
    if cfg.pooling == "gem":
        params["gem.p"] = np.array([cfg.gem_p], dt)
    params["dense.w"] = rng.normal(0.0, np.sqrt(2.0 / cin), size=(cin, cfg.head_arity)).astype(dt)
    params["dense.b"] = np.zeros(cfg.head_arity, dt)
    return Model(cfg, {k: parameter(v) for k, v in params.items()}, state, seed)
