"""Bingham dispersion statistics from the QCQP matrix and quantile filtering.

For ascending eigenvalues ``a1 <= a2 <= a3 <= a4`` of ``A`` the Bingham
dispersions are the non-zero eigenvalues of ``-A + a1 I``::

    lambda1 = a1 - a4 <= lambda2 = a1 - a3 <= lambda3 = a1 - a2 <= 0

Two scalar summaries are reported: ``lambda_max = lambda3`` (the least
concentrated direction) and ``trace_stat = lambda1 + lambda2 + lambda3``.
Values closer to zero mean a flatter, less certain distribution.
"""
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument
from .rep_heads import eigengap_degenerate, sym_eig

PSD_TOL = 1e-6


@dataclass(frozen=True)
class DispersionStats:
    lambda1: float
    lambda2: float
    lambda3: float
    lambda_max: float
    trace_stat: float
    degenerate: bool


def dispersion_arrays(A):
    """Vectorised dispersions for a stack of ``(..., 4, 4)`` matrices.

    Returns a dict of arrays with keys ``lambda1``, ``lambda2``, ``lambda3``,
    ``lambda_max``, ``trace_stat`` and ``degenerate``.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.shape[-2:] != (4, 4):
        raise InvalidArgument(f"expected 4x4 matrices, got {A.shape}")
    if not np.allclose(A, np.swapaxes(A, -1, -2), rtol=0, atol=1e-9 * max(1.0, np.abs(A).max(initial=0))):
        raise InvalidArgument("matrix is not symmetric")
    w, _ = sym_eig(A)
    if np.any(w[..., 0] < -PSD_TOL):
        raise InvalidArgument(f"matrix is not PSD (min eigenvalue {w[..., 0].min():.3g})")
    lam1 = w[..., 0] - w[..., 3]
    lam2 = w[..., 0] - w[..., 2]
    lam3 = w[..., 0] - w[..., 1]
    return {
        "lambda1": lam1,
        "lambda2": lam2,
        "lambda3": lam3,
        "lambda_max": lam3,
        "trace_stat": 3.0 * w[..., 0] - w[..., 1] - w[..., 2] - w[..., 3],
        "degenerate": eigengap_degenerate(w),
    }


def dispersions(A):
    """Bingham dispersion triple and summary statistics of one PSD matrix."""
    A = np.asarray(A, dtype=np.float64)
    if A.shape != (4, 4):
        raise InvalidArgument(f"expected a single 4x4 matrix, got {A.shape}")
    d = dispersion_arrays(A)
    return DispersionStats(
        lambda1=float(d["lambda1"]),
        lambda2=float(d["lambda2"]),
        lambda3=float(d["lambda3"]),
        lambda_max=float(d["lambda_max"]),
        trace_stat=float(d["trace_stat"]),
        degenerate=bool(d["degenerate"]),
    )


def keep_count(n, keep_fraction):
    # guard against 0.7 * 10 == 7.000000000000001 rounding up
    return min(n, math.ceil(keep_fraction * n - 1e-9))


def quantile_filter(stats, keep_fraction, degenerate=None):
    """Boolean mask keeping the ``ceil(keep_fraction * N)`` lowest statistics.

    The highest values (closest to zero, i.e. most dispersed) are dropped.
    Entries flagged ``degenerate`` rank as maximally uncertain.  Ties are broken
    by index, lower index kept first.
    """
    stats = np.asarray(stats, dtype=np.float64).ravel()
    if stats.size == 0:
        raise InvalidArgument("no statistics to filter")
    if not np.all(np.isfinite(stats)):
        raise InvalidArgument("statistics must be finite")
    if not (0.0 < keep_fraction <= 1.0):
        raise InvalidArgument(f"keep_fraction must lie in (0, 1], got {keep_fraction}")
    rank_key = stats.copy()
    if degenerate is not None:
        rank_key[np.asarray(degenerate, dtype=bool).ravel()] = np.inf
    order = np.argsort(rank_key, kind="stable")
    mask = np.zeros(stats.size, dtype=bool)
    mask[order[:keep_count(stats.size, keep_fraction)]] = True
    return mask
