"""Training-pair selection for distance learning."""
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument
from .so3 import C1, symmetric_distance


@dataclass
class PairIndexSet:
    pairs: np.ndarray            # (M, 2) int, i < j
    seed: int
    scheme: str                  # "random" | "stratified"
    bins: np.ndarray = field(default=None)  # distance-bin label per pair, stratified only

    def __len__(self):
        return len(self.pairs)


def pair_from_linear(k, n):
    """Map linear indices over the strict upper triangle (row-major) to ``(i, j)``."""
    k = np.asarray(k, dtype=np.int64)
    # rows before i hold i*n - i*(i+1)/2 entries
    i = n - 2 - np.floor(np.sqrt(-8 * k + 4 * n * (n - 1) - 7) / 2.0 - 0.5).astype(np.int64)
    j = k + i + 1 - n * (n - 1) // 2 + (n - i) * ((n - i) - 1) // 2
    return np.column_stack([i, j])


def _sample_linear(n, count, rng):
    total = n * (n - 1) // 2
    if count > total:
        raise InvalidArgument(f"requested {count} pairs but only {total} exist")
    return np.sort(rng.choice(total, size=count, replace=False))


def random_pairs(n_images, fraction, seed):
    """``ceil(fraction * n(n-1)/2)`` distinct pairs drawn uniformly without replacement."""
    if n_images < 2:
        raise InvalidArgument("need at least two images to form pairs")
    if not (0.0 < fraction <= 1.0):
        raise InvalidArgument(f"fraction must lie in (0, 1], got {fraction}")
    total = n_images * (n_images - 1) // 2
    count = math.ceil(fraction * total - 1e-9)
    rng = np.random.default_rng(seed)
    lin = _sample_linear(n_images, count, rng)
    return PairIndexSet(pair_from_linear(lin, n_images), seed, "random")


def stratified_pairs(quats, n_candidates, n_bins=8, seed=0, group=C1):
    """Pairs equalised over a histogram of their orientation distances.

    ``n_candidates`` distinct pairs are drawn, binned into ``n_bins`` equal-width
    distance bins over ``[0, pi]`` (``[0, max observed]`` for symmetric groups),
    and every occupied bin is subsampled to the smallest occupied-bin count.
    """
    quats = np.asarray(quats, dtype=np.float64)
    n = len(quats)
    if n < 2:
        raise InvalidArgument("need at least two orientations to form pairs")
    if n_bins < 1:
        raise InvalidArgument("n_bins must be >= 1")
    rng = np.random.default_rng(seed)
    lin = _sample_linear(n, int(n_candidates), rng)
    cand = pair_from_linear(lin, n)
    dist = symmetric_distance(quats[cand[:, 0]], quats[cand[:, 1]], group)
    upper = np.pi if len(group) == 1 else max(float(dist.max()), 1e-12)
    edges = np.linspace(0.0, upper, n_bins + 1)
    label = np.clip(np.searchsorted(edges, dist, side="right") - 1, 0, n_bins - 1)
    counts = np.bincount(label, minlength=n_bins)
    occupied = np.flatnonzero(counts)
    inner_empty = [b for b in range(occupied.min(), occupied.max() + 1) if counts[b] == 0]
    if inner_empty:
        warnings.warn(f"distance bins {inner_empty} are empty and were left out of equalisation", RuntimeWarning,
                      stacklevel=2)
    m = counts[occupied].min()
    keep = []
    for b in occupied:
        members = np.flatnonzero(label == b)
        keep.append(rng.choice(members, size=m, replace=False))
    keep = np.sort(np.concatenate(keep))
    return PairIndexSet(cand[keep], seed, "stratified", bins=label[keep])


def distance_histogram(quats, pairs, n_bins=8, upper=np.pi, group=C1):
    quats = np.asarray(quats)
    pairs = np.asarray(pairs)
    d = symmetric_distance(quats[pairs[:, 0]], quats[pairs[:, 1]], group)
    edges = np.linspace(0.0, upper, n_bins + 1)
    label = np.clip(np.searchsorted(edges, d, side="right") - 1, 0, n_bins - 1)
    return np.bincount(label, minlength=n_bins)
