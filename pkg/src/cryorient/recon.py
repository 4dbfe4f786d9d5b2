"""Direct Fourier reconstruction, FSC, and error / uncertainty summaries."""
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata, spearmanr

from . import so3
from .errors import InvalidArgument
from .simulator import Volume

WEIGHT_FLOOR = 1e-6
FSC_THRESHOLD = 0.143


# -- reconstruction --------------------------------------------------------------

def _slice_coords(side_p, R):
    k = np.fft.fftfreq(side_p) * side_p
    ky, kx = np.meshgrid(k, k, indexing="ij")
    pts = np.stack([kx.ravel(), ky.ravel(), np.zeros(kx.size)], axis=1)
    inside = np.hypot(kx.ravel(), ky.ravel()) < side_p / 2 - 1
    # a central slice of orientation R samples the volume spectrum at R^T k
    return pts[inside] @ R, inside


def _unshift_phase(side_p, shift):
    k = np.fft.fftfreq(side_p)
    dx, dy = shift
    return np.exp(2j * np.pi * (k[None, :] * dx + k[:, None] * dy))


def _scatter_trilinear(acc, wgt, coords, values, side_p):
    c = coords + side_p / 2
    base = np.floor(c).astype(np.int64)
    frac = c - base
    n = side_p
    for oz in (0, 1):
        wz = frac[:, 2] if oz else 1 - frac[:, 2]
        for oy in (0, 1):
            wy = frac[:, 1] if oy else 1 - frac[:, 1]
            for ox in (0, 1):
                wx = frac[:, 0] if ox else 1 - frac[:, 0]
                w = wx * wy * wz
                flat = ((base[:, 2] + oz) * n + (base[:, 1] + oy)) * n + (base[:, 0] + ox)
                acc.real += np.bincount(flat, w * values.real, n ** 3)
                acc.imag += np.bincount(flat, w * values.imag, n ** 3)
                wgt += np.bincount(flat, w, n ** 3)


def insert_slices(images, quats, shifts=None, pad=2, chunk=64):
    """Grid every image spectrum as a central slice of a ``(pad*D)^3`` Fourier volume.

    Returns the normalised spectrum (unshifted FFT layout) and the accumulated
    trilinear weights.  Weights are floored at ``1e-6`` of the largest one,
    so duplicating every image leaves the result unchanged.
    """
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 2:
        images = images[None]
    quats = np.atleast_2d(np.asarray(quats, dtype=np.float64))
    if len(images) == 0:
        raise InvalidArgument("reconstruction needs at least one image")
    if len(quats) != len(images):
        raise InvalidArgument("one orientation per image is required")
    shifts = np.zeros((len(images), 2)) if shifts is None else np.asarray(shifts, dtype=np.float64)
    if shifts.shape != (len(images), 2):
        raise InvalidArgument("shifts must have shape (N, 2)")
    D = images.shape[-1]
    P = pad * D
    off = P // 2 - D // 2
    acc = np.zeros(P ** 3, dtype=np.complex128)
    wgt = np.zeros(P ** 3)
    Rs = so3.quat_to_rotmat(quats)
    for s in range(0, len(images), chunk):
        coords, values = [], []
        for i in range(s, min(s + chunk, len(images))):
            padded = np.zeros((P, P))
            padded[off:off + D, off:off + D] = images[i]
            spec = np.fft.fft2(np.fft.ifftshift(padded)) * _unshift_phase(P, shifts[i])
            c, inside = _slice_coords(P, Rs[i])
            coords.append(c)
            values.append(spec.ravel()[inside])
        _scatter_trilinear(acc, wgt, np.concatenate(coords), np.concatenate(values), P)
    grid = (acc / np.maximum(wgt, WEIGHT_FLOOR * wgt.max())).reshape(P, P, P)
    return np.fft.ifftshift(grid), np.fft.ifftshift(wgt.reshape(P, P, P))


def reconstruct(images, quats, shifts=None, pixel_size=1.0, pad=2, chunk=64):
    """Direct Fourier inversion of :func:`insert_slices`.

    Images are un-shifted by a Fourier phase ramp, zero padded by ``pad``,
    gridded trilinearly and the inverse transform is corrected for the
    interpolation kernel's apodisation.
    """
    images = np.asarray(images, dtype=np.float64)
    D = images.shape[-1]
    P = pad * D
    off = P // 2 - D // 2
    grid, _ = insert_slices(images, quats, shifts, pad, chunk)
    vol = np.fft.fftshift(np.fft.ifftn(grid).real)
    r = (np.arange(P) - P // 2) / P
    corr = np.sinc(r) ** 2
    vol = vol / (corr[:, None, None] * corr[None, :, None] * corr[None, None, :])
    return Volume(vol[off:off + D, off:off + D, off:off + D], pixel_size)


# -- FSC ------------------------------------------------------------------------------

@dataclass(frozen=True)
class FscCurve:
    radii: np.ndarray          # cycles / pixel
    values: np.ndarray


@dataclass(frozen=True)
class Resolution:
    angstrom: float
    frequency: float           # cycles / pixel at the crossing
    limit: bool                # True when the curve never drops below the threshold


def _data(v):
    return v.data if isinstance(v, Volume) else np.asarray(v, dtype=np.float64)


def fsc(v1, v2):
    a, b = _data(v1), _data(v2)
    if a.shape != b.shape or a.ndim != 3:
        raise InvalidArgument(f"FSC needs two volumes of the same shape, got {a.shape} and {b.shape}")
    D = a.shape[0]
    F1, F2 = np.fft.fftn(a), np.fft.fftn(b)
    k = np.fft.fftfreq(D) * D
    kz, ky, kx = np.meshgrid(k, k, k, indexing="ij")
    shell = np.rint(np.sqrt(kx ** 2 + ky ** 2 + kz ** 2)).astype(np.int64).ravel()
    n_shells = D // 2 + 1
    keep = shell < n_shells
    shell = shell[keep]
    f1, f2 = F1.ravel()[keep], F2.ravel()[keep]
    cross = np.bincount(shell, (f1.real * f2.real + f1.imag * f2.imag), n_shells)
    p1 = np.bincount(shell, np.abs(f1) ** 2, n_shells)
    p2 = np.bincount(shell, np.abs(f2) ** 2, n_shells)
    den = np.sqrt(p1 * p2)
    vals = np.divide(cross, den, out=np.zeros(n_shells), where=den > 0)
    return FscCurve(np.arange(n_shells) / D, vals)


def resolution_at(curve, threshold=FSC_THRESHOLD, pixel_size=1.0):
    r, v = np.asarray(curve.radii), np.asarray(curve.values)
    if len(r) == 0:
        raise InvalidArgument("empty FSC curve")
    below = np.flatnonzero(v[1:] < threshold) + 1
    if len(below) == 0:
        return Resolution(2.0 * pixel_size, 0.5, True)
    i = below[0]
    if v[i - 1] < threshold:
        # below threshold from the lowest shell on: no resolvable signal
        return Resolution(math.inf if r[i - 1] == 0 else pixel_size / r[i - 1], float(r[i - 1]), False)
    t = (v[i - 1] - threshold) / (v[i - 1] - v[i])
    f = r[i - 1] + t * (r[i] - r[i - 1])
    return Resolution(pixel_size / f, f, False)


# -- errors / uncertainty ---------------------------------------------------------------

def angular_errors(preds, truths, group=so3.C1):
    return so3.symmetric_distance(preds, truths, group)


def median_angular_error(preds, truths, group=so3.C1):
    preds, truths = np.atleast_2d(preds), np.atleast_2d(truths)
    if len(preds) == 0:
        raise InvalidArgument("no orientations to compare")
    if len(preds) != len(truths):
        raise InvalidArgument("predictions and truths differ in length")
    return float(np.median(angular_errors(preds, truths, group)))


@dataclass
class UncertaintyReport:
    spearman_lambda_max: float = None
    spearman_trace: float = None
    rows: np.ndarray = None    # (N, 4): error, lambda_max, trace_stat, error_quantile

    CSV_HEADER = ("error", "lambda_max", "trace_stat", "error_quantile")


def _spearman(x, y):
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return None
    return float(spearmanr(x, y)[0])


def uncertainty_report(errors, lambda_max, trace_stat):
    errors = np.asarray(errors, dtype=np.float64)
    lambda_max = np.asarray(lambda_max, dtype=np.float64)
    trace_stat = np.asarray(trace_stat, dtype=np.float64)
    if not (len(errors) == len(lambda_max) == len(trace_stat)):
        raise InvalidArgument("errors and statistics differ in length")
    if len(errors) < 10:
        raise InvalidArgument("need at least 10 samples for rank correlations")
    quant = rankdata(errors, method="average") / len(errors)
    return UncertaintyReport(
        _spearman(lambda_max, errors), _spearman(trace_stat, errors),
        np.column_stack([errors, lambda_max, trace_stat, quant]),
    )


# -- global alignment (for distance-only training) ------------------------------------------

@dataclass(frozen=True)
class Alignment:
    g: np.ndarray
    side: str          # "left" | "right"
    inverted: bool

    def apply(self, q):
        q = np.asarray(q, dtype=np.float64)
        if self.inverted:
            q = so3.conjugate(q)
        return so3.multiply(self.g, q) if self.side == "left" else so3.multiply(q, self.g)


def fit_alignment(preds, truths):
    """Best global isometry ``q -> g q``, ``q g`` (optionally of ``q^-1``) mapping preds onto truths.

    Distances alone fix orientations only up to such a transform.
    """
    preds, truths = np.atleast_2d(preds), np.atleast_2d(truths)
    best = None
    for inverted in (False, True):
        p = so3.conjugate(preds) if inverted else preds
        for side in ("left", "right"):
            m = so3.multiply(truths, so3.conjugate(p)) if side == "left" else so3.multiply(so3.conjugate(p), truths)
            w, V = np.linalg.eigh(m.T @ m)
            cand = Alignment(so3.canonical_sign(V[:, -1]), side, inverted)
            err = float(np.median(so3.geodesic_distance(cand.apply(preds), truths)))
            if best is None or err < best[0]:
                best = (err, cand)
    return best[1]
