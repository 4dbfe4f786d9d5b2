"""End-to-end experiment: simulate, train, infer, score."""
import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import so3
from .nn.model import EncoderConfig, build_encoder, desk_preset
from .nn.train import TrainConfig, infer, train
from .recon import fit_alignment
from .simulator import encoder_inputs, generate_dataset, make_phantom

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class SimConfig:
    side: int = 48
    n_images: int = 2000
    snr: float = 0.1                   # math.inf (or None) for clean data
    shift_max: float = None            # pixels; None means 3% of the side
    defocus_min: float = 5000.0
    defocus_max: float = 25000.0
    ctf: bool = True
    group: str = "C1"
    phantom_seed: int = 0
    seed: int = 1

    def to_dict(self):
        return dataclasses.asdict(self)


def simulate(cfg, threads=1):
    volume = make_phantom(cfg.side, seed=cfg.phantom_seed)
    snr = np.inf if cfg.snr is None else cfg.snr
    stack = generate_dataset(
        volume, cfg.n_images, snr=snr, shift_max=cfg.shift_max,
        defocus_range=(cfg.defocus_min, cfg.defocus_max), seed=cfg.seed,
        group=so3.symmetry_group(cfg.group), ctf=None if cfg.ctf else False, threads=threads)
    return volume, stack


@dataclass
class ExperimentResult:
    model: object
    history: object
    stack: object
    quats: np.ndarray                 # predictions for every image (aligned for distance-only training)
    stats: dict = None                # dispersion arrays (QCQP head only)
    errors: np.ndarray = None         # per-image angular error
    median: dict = field(default_factory=dict)   # split -> median error


def score(stack, quats, group=so3.C1):
    errors = so3.symmetric_distance(quats, stack.quats, group)
    return errors, {s: float(np.median(errors[stack.indices(s)])) for s in SPLITS if len(stack.indices(s))}


def run_experiment(stack, enc_cfg, train_cfg, model_seed=None, inputs=None, log=None):
    """Train an encoder on ``stack`` and score every split."""
    if inputs is None:
        inputs = encoder_inputs(stack.images, enc_cfg.blur_mode, enc_cfg.n_filters, np.dtype(enc_cfg.dtype))
    model = build_encoder(enc_cfg, train_cfg.seed if model_seed is None else model_seed)
    model, history = train(model, stack, None, train_cfg, inputs, log)
    quats, stats = infer(model, inputs)
    if train_cfg.style == "siamese":
        tr = stack.indices("train")
        quats = fit_alignment(quats[tr], stack.quats[tr]).apply(quats)
    errors, med = score(stack, quats)
    return ExperimentResult(model, history, stack, quats, stats, errors, med)


def variant(axis, name, enc_cfg, train_cfg):
    """Encoder / training configs for one setting of an ablation axis."""
    if axis == "head":
        return dataclasses.replace(enc_cfg, head=name), train_cfg
    if axis == "style":
        return enc_cfg, dataclasses.replace(train_cfg, style=name)
    if axis == "blur":
        return dataclasses.replace(enc_cfg, blur_mode=name), train_cfg
    if axis == "pool":
        return dataclasses.replace(enc_cfg, pooling=name), train_cfg
    raise ValueError(f"unknown ablation axis {axis!r}")


ABLATION_AXES = {
    "head": ("quat", "sixd", "qcqp"),
    "style": ("single", "siamese", "siamese_aux"),
    "blur": ("none", "gaussian", "lowpass"),
    "pool": ("max", "maxavg", "gem"),
}


def desk_configs():
    """Settings for the one-core desk protocol (48-pixel phantom, 2000 images, SNR 0.1, 30 epochs).

    Compared with the full-size network this drops dropout and trains in float32
    with batches of 16.
    """
    enc = desk_preset(dtype="float32", dropout=0.0)
    tr = TrainConfig(epochs=30, batch_size=16)
    return SimConfig(), enc, tr
