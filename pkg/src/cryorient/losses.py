"""Regression / distance losses, the curriculum weighting and the one-cycle schedule."""
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument
from .so3 import geodesic_distance


@dataclass(frozen=True)
class CurriculumWeights:
    beta1: float
    beta2: float
    iteration: int
    total: int


def curriculum_weights(iteration, total, enabled=True):
    """``beta1 = sqrt(i/l) / 2``, ``beta2 = 1 - sqrt(i/l)``.

    With ``enabled=False`` both terms get a constant weight of 0.5.
    """
    if total < 1 or iteration < 0 or iteration > total:
        raise InvalidArgument(f"need 0 <= iteration <= total and total >= 1, got {iteration}/{total}")
    if not enabled:
        return CurriculumWeights(beta1=0.5, beta2=0.5, iteration=iteration, total=total)
    r = math.sqrt(iteration / total)
    return CurriculumWeights(beta1=r / 2.0, beta2=1.0 - r, iteration=iteration, total=total)


def regression_loss(pred, truth):
    return geodesic_distance(pred, truth)


def distance_loss(pred_i, pred_j, truth_i, truth_j):
    return np.abs(geodesic_distance(pred_i, pred_j) - geodesic_distance(truth_i, truth_j))


def full_loss(pred_i, pred_j, truth_i, truth_j, weights):
    """Curriculum loss averaged over a batch of pairs.

    Each pair contributes ``beta1 * (d(p_i, t_i) + d(p_j, t_j)) + beta2 * |d(p_i, p_j) - d(t_i, t_j)|``.
    """
    pred_i = np.atleast_2d(pred_i)
    if pred_i.shape[0] == 0:
        raise InvalidArgument("empty batch")
    reg = regression_loss(pred_i, truth_i) + regression_loss(pred_j, truth_j)
    dist = distance_loss(pred_i, pred_j, truth_i, truth_j)
    return float(np.mean(weights.beta1 * reg + weights.beta2 * dist))


# -- one-cycle -------------------------------------------------------------------

@dataclass(frozen=True)
class OneCycleConfig:
    total_steps: int
    lr_max: float = 1e-3
    div_start: float = 25.0
    div_final: float = 1e4
    warmup_fraction: float = 0.3
    momentum_high: float = 0.95
    momentum_low: float = 0.85

    @property
    def lr_start(self):
        return self.lr_max / self.div_start

    @property
    def lr_final(self):
        return self.lr_max / self.div_final

    @property
    def peak_step(self):
        return self.warmup_fraction * self.total_steps


def _cos_interp(start, end, pct):
    return end + (start - end) * 0.5 * (1.0 + math.cos(math.pi * pct))


def one_cycle(step, cfg):
    """Learning rate and momentum at ``step`` (cosine warm-up then cosine anneal)."""
    if not (0 <= step <= cfg.total_steps):
        raise InvalidArgument(f"step {step} outside [0, {cfg.total_steps}]")
    peak = cfg.peak_step
    if step <= peak and peak > 0:
        pct = step / peak
        return (_cos_interp(cfg.lr_start, cfg.lr_max, pct),
                _cos_interp(cfg.momentum_high, cfg.momentum_low, pct))
    tail = cfg.total_steps - peak
    pct = (step - peak) / tail if tail > 0 else 1.0
    return (_cos_interp(cfg.lr_max, cfg.lr_final, pct),
            _cos_interp(cfg.momentum_low, cfg.momentum_high, pct))


def schedule_table(cfg, epochs=None, curriculum=True):
    """Rows ``(step, lr, momentum, beta1, beta2)`` for every step of the schedule.

    The curriculum is indexed by epoch; ``epochs`` defaults to one epoch per step.
    """
    epochs = epochs or cfg.total_steps
    steps_per_epoch = max(1, math.ceil(cfg.total_steps / epochs))
    rows = []
    for step in range(cfg.total_steps + 1):
        lr, mom = one_cycle(step, cfg)
        w = curriculum_weights(min(step // steps_per_epoch, epochs), epochs, curriculum)
        rows.append((step, lr, mom, w.beta1, w.beta2))
    return rows
