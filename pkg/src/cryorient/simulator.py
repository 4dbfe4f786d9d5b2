"""Synthetic single-particle data: projection, shifts, CTF, noise, and the
image preprocessing used in front of the encoder.

Arrays are indexed ``volume[z, y, x]`` and ``image[y, x]``; the rotation
centre is voxel ``D // 2`` along every axis.
"""
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import ndimage

from . import so3
from .errors import InvalidArgument

SPLIT_FRACTIONS = (0.50, 0.17, 0.33)
LOWPASS_CUTOFFS = (0.05, 0.1, 0.2, 0.35, 0.5)  # cycles / pixel


@dataclass
class Volume:
    data: np.ndarray
    pixel_size: float = 1.0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        D = self.data.shape[0]
        if self.data.shape != (D, D, D) or D % 2:
            raise InvalidArgument(f"volume must be a cube with even side, got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise InvalidArgument("volume contains non-finite values")

    @property
    def side(self):
        return self.data.shape[0]


@dataclass(frozen=True)
class CtfParams:
    defocus: float = 15000.0            # Angstrom, underfocus positive
    spherical_aberration: float = 2.7   # mm
    voltage: float = 300.0              # kV
    amplitude_contrast: float = 0.1
    phase_flipped: bool = False         # apply |h| instead of h

    def __post_init__(self):
        if not self.defocus > 0 or not self.voltage > 0:
            raise InvalidArgument("defocus and voltage must be positive")
        if not 0.0 <= self.amplitude_contrast <= 1.0:
            raise InvalidArgument("amplitude contrast must lie in [0, 1]")


@dataclass
class ProjectionStack:
    images: np.ndarray            # (N, D, D) observed images
    quats: np.ndarray             # (N, 4) true orientations
    shifts: np.ndarray            # (N, 2) (dx, dy) pixels
    defocus: np.ndarray           # (N,) Angstrom
    split: np.ndarray             # (N,) "train" | "val" | "test"
    pixel_size: float = 1.0
    snr_target: float = math.inf
    realized_snr: np.ndarray = field(default=None)

    def __len__(self):
        return len(self.images)

    def indices(self, split):
        return np.flatnonzero(self.split == split)

    def subset(self, idx):
        idx = np.asarray(idx)
        return ProjectionStack(
            images=self.images[idx], quats=self.quats[idx], shifts=self.shifts[idx],
            defocus=self.defocus[idx], split=self.split[idx], pixel_size=self.pixel_size,
            snr_target=self.snr_target,
            realized_snr=None if self.realized_snr is None else self.realized_snr[idx],
        )


# -- phantom -----------------------------------------------------------------

def make_phantom(side=48, seed=0, pixel_size=None, n_blobs=12):
    """Smooth asymmetric test density: a sum of anisotropic Gaussian blobs."""
    rng = np.random.default_rng(seed)
    pixel_size = pixel_size if pixel_size is not None else 2.86 * 128 / side
    c = side // 2
    z, y, x = np.meshgrid(*(np.arange(side) - c,) * 3, indexing="ij")
    pts = np.stack([x, y, z], axis=-1).astype(np.float64)
    vol = np.zeros((side,) * 3)
    for k in range(n_blobs):
        centre = rng.normal(size=3)
        centre *= rng.uniform(0.05, 0.27) * side / np.linalg.norm(centre)
        sig = rng.uniform(0.035, 0.09, size=3) * side
        rot = so3.quat_to_rotmat(so3.sample_uniform(rng.integers(2**31)))
        d = (pts - centre) @ rot
        amp = rng.uniform(0.5, 1.5)
        vol += amp * np.exp(-0.5 * np.sum((d / sig) ** 2, axis=-1))
    return Volume(vol, pixel_size)


# -- orientations --------------------------------------------------------------

def _fibonacci(n):
    i = np.arange(n)
    z = 1.0 - (2.0 * i + 1.0) / n
    theta = np.arccos(z)
    phi = np.mod(i * math.pi * (3.0 - math.sqrt(5.0)), 2 * math.pi)
    return theta, phi


def _grid_once(n_target, order, in_domain):
    n_psi = max(1, round((math.pi * order * n_target) ** (1.0 / 3.0)))
    n_dirs = max(1, round(n_target / n_psi))
    theta, phi = _fibonacci(order * n_dirs)
    keep = in_domain(theta, phi)
    theta, phi = theta[keep], phi[keep]
    psi_grid = 2 * math.pi * np.arange(n_psi) / n_psi
    # offset the in-plane angle by -phi so neighbours near the north pole line up
    psi = np.mod(psi_grid[None, :] - phi[:, None], 2 * math.pi)
    e = np.stack([psi, np.broadcast_to(theta[:, None], psi.shape), np.broadcast_to(phi[:, None], psi.shape)], -1)
    return e.reshape(-1, 3)


def grid_orientations(n_target, group=so3.C1):
    """Deterministic quasi-uniform orientations (Fibonacci sphere x uniform in-plane angle).

    For D2 only the fundamental cell ``theta <= pi/2, phi < pi`` is covered.
    """
    if n_target < 1:
        raise InvalidArgument("n_target must be >= 1")
    if n_target == 1:
        return np.array([[1.0, 0.0, 0.0, 0.0]])
    if group.name == "D2":
        e = _grid_once(n_target, 4, lambda t, p: (t <= math.pi / 2) & (p < math.pi))
    else:
        e = _grid_once(n_target, 1, lambda t, p: np.ones_like(t, dtype=bool))
    return so3.euler_zyz_to_quat(e)


def exact_orientations(n, group=so3.C1):
    """``n`` grid orientations: the grid is grown until large enough, then thinned evenly."""
    target = n
    q = grid_orientations(target, group)
    while len(q) < n:
        target = int(target * 1.1) + 1
        q = grid_orientations(target, group)
    if len(q) > n:
        q = q[np.round(np.linspace(0, len(q) - 1, n)).astype(int)]
    return q


# -- projection ----------------------------------------------------------------

@lru_cache(maxsize=4)
def _grid_points(side):
    r = np.arange(side, dtype=np.float64) - side // 2
    z, y, x = np.meshgrid(r, r, r, indexing="ij")
    return np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1)


def project(volume, q, shift=(0.0, 0.0)):
    """Line integral along z of the volume rotated by ``q``, then shifted by ``(dx, dy)``.

    Trilinear sampling of ``V(R^T r)``; the shift uses linear interpolation.
    """
    vol = volume.data if isinstance(volume, Volume) else np.asarray(volume, dtype=np.float64)
    D = vol.shape[0]
    dx, dy = float(shift[0]), float(shift[1])
    if math.hypot(dx, dy) >= D / 8:
        raise InvalidArgument(f"shift ({dx}, {dy}) must be smaller than D/8 = {D / 8}")
    R = so3.quat_to_rotmat(q)
    src = _grid_points(D) @ R  # rows are R^T r
    c = D // 2
    coords = np.stack([src[:, 2] + c, src[:, 1] + c, src[:, 0] + c])
    rotated = ndimage.map_coordinates(vol, coords, order=1, mode="constant", cval=0.0)
    img = rotated.reshape(D, D, D).sum(axis=0)
    if dx or dy:
        img = ndimage.shift(img, (dy, dx), order=1, mode="constant", cval=0.0)
    return img


# -- CTF -------------------------------------------------------------------------

def electron_wavelength(voltage_kv):
    """Relativistic electron wavelength in Angstrom."""
    v = voltage_kv * 1e3
    return 12.2642598 / math.sqrt(v * (1.0 + 0.97848e-6 * v))


def ctf_phase(freq, ctf):
    """Phase argument ``pi lam dz f^2 - pi/2 lam^3 Cs f^4 + asin(w)`` for spatial frequency ``freq`` (1/A)."""
    lam = electron_wavelength(ctf.voltage)
    cs = ctf.spherical_aberration * 1e7
    f2 = np.asarray(freq, dtype=np.float64) ** 2
    return (math.pi * lam * ctf.defocus * f2 - 0.5 * math.pi * lam ** 3 * cs * f2 * f2
            + math.asin(ctf.amplitude_contrast))


def ctf_filter(shape, ctf, pixel_size):
    fy = np.fft.fftfreq(shape[0], d=pixel_size)
    fx = np.fft.fftfreq(shape[1], d=pixel_size)
    f = np.hypot(fy[:, None], fx[None, :])
    h = -np.sin(ctf_phase(f, ctf))
    return np.abs(h) if ctf.phase_flipped else h


def ctf_apply(img, ctf, pixel_size=1.0):
    img = np.asarray(img, dtype=np.float64)
    h = ctf_filter(img.shape[-2:], ctf, pixel_size)
    return np.fft.ifft2(np.fft.fft2(img) * h).real


# -- noise ------------------------------------------------------------------------

@lru_cache(maxsize=8)
def circular_mask(side, radius=None):
    radius = side / 2 if radius is None else radius
    r = np.arange(side) - side // 2
    return np.hypot(r[:, None], r[None, :]) < radius


def noise_variance_for(img, snr):
    var = float(np.var(np.asarray(img)[circular_mask(img.shape[-1])]))
    if var <= 0.0:
        raise InvalidArgument("signal has zero variance inside the mask")
    return var / snr


def add_noise_to_snr(img, snr, seed):
    """Add white Gaussian noise with variance ``var(signal in mask) / snr``.

    ``snr=math.inf`` returns an unchanged copy.
    """
    img = np.asarray(img, dtype=np.float64)
    if snr is None or math.isinf(snr):
        return img.copy()
    if not snr > 0:
        raise InvalidArgument(f"snr must be positive, got {snr}")
    sigma2 = noise_variance_for(img, snr)
    rng = np.random.default_rng(seed)
    return img + rng.normal(0.0, math.sqrt(sigma2), size=img.shape)


# -- preprocessing ------------------------------------------------------------------

def preprocess(img):
    """Circular mask of radius D/2, then standardise the pixels inside it."""
    img = np.asarray(img, dtype=np.float64)
    mask = circular_mask(img.shape[-1])
    inside = img[..., mask]
    mean = inside.mean(axis=-1, keepdims=True)
    std = inside.std(axis=-1, keepdims=True)
    if np.any(std <= 1e-12):
        raise InvalidArgument("image is constant inside the mask")
    out = np.zeros_like(img)
    out[..., mask] = (inside - mean) / std
    return out


def _spectral_filters(side, mode, cutoffs):
    f = np.hypot(np.fft.fftfreq(side)[:, None], np.fft.fftfreq(side)[None, :])
    filters = []
    for c in cutoffs:
        if mode == "lowpass":
            # a cutoff at (or past) Nyquist passes the whole square spectrum
            filters.append(np.ones_like(f) if c >= 0.5 else (f <= c).astype(np.float64))
        else:
            filters.append(np.exp(-0.5 * (f / c) ** 2))
    return filters


def default_cutoffs(n_filters):
    if n_filters <= len(LOWPASS_CUTOFFS):
        return LOWPASS_CUTOFFS[:n_filters]
    return tuple(np.linspace(0.05, 0.5, n_filters))


def blur_bank(img, mode="lowpass", n_filters=5, cutoffs=None):
    """Stack the image with low-pass filtered copies along a trailing channel axis.

    ``mode`` is None, ``"gaussian"`` or ``"lowpass"``.  Works on a single image
    ``(D, D)`` or a stack ``(N, D, D)``; output gains a last axis of length
    ``1 + n_filters`` (1 when ``mode`` is None).
    """
    img = np.asarray(img, dtype=np.float64)
    if mode is None or str(mode).lower() == "none" or n_filters == 0:
        return img[..., None].copy()
    mode = str(mode).lower()
    if mode not in ("gaussian", "lowpass"):
        raise InvalidArgument(f"unknown blur mode {mode!r}")
    if n_filters < 0:
        raise InvalidArgument("n_filters must be >= 0")
    cutoffs = default_cutoffs(n_filters) if cutoffs is None else tuple(cutoffs)
    spec = np.fft.fft2(img)
    chans = [img]
    for h in _spectral_filters(img.shape[-1], mode, cutoffs):
        chans.append(np.fft.ifft2(spec * h).real)
    return np.stack(chans, axis=-1)


# -- dataset -----------------------------------------------------------------------

def _split_labels(n, rng):
    n_train = round(SPLIT_FRACTIONS[0] * n)
    n_val = round(SPLIT_FRACTIONS[1] * n)
    labels = np.empty(n, dtype=object)
    perm = rng.permutation(n)
    labels[perm[:n_train]] = "train"
    labels[perm[n_train:n_train + n_val]] = "val"
    labels[perm[n_train + n_val:]] = "test"
    return labels.astype(str)


def image_seed(seed, index):
    return np.random.SeedSequence([int(seed), int(index)])


def generate_dataset(volume, n_images, snr=0.1, shift_max=None, defocus_range=(5000.0, 25000.0),
                     seed=0, group=so3.C1, ctf=None, threads=1):
    """Project, shift, CTF-modulate and corrupt ``n_images`` views of ``volume``.

    Each image draws its shift, defocus and noise from its own seed derived
    from ``(seed, index)``, so results do not depend on ``threads``.
    Pass ``ctf=False`` to skip the CTF entirely.
    """
    if n_images < 1:
        raise InvalidArgument("n_images must be >= 1")
    D = volume.side
    shift_max = 0.03 * D if shift_max is None else float(shift_max)
    base_ctf = CtfParams() if ctf is None else ctf
    quats = exact_orientations(n_images, group)
    snr = math.inf if snr is None else float(snr)

    def one(i):
        rng = np.random.default_rng(image_seed(seed, i))
        shift = rng.uniform(-shift_max, shift_max, size=2) if shift_max > 0 else np.zeros(2)
        dz = rng.uniform(*defocus_range)
        noise_seed = rng.integers(2**63)
        img = project(volume, quats[i], shift)
        if base_ctf is not False:
            params = CtfParams(dz, base_ctf.spherical_aberration, base_ctf.voltage,
                               base_ctf.amplitude_contrast, base_ctf.phase_flipped)
            img = ctf_apply(img, params, volume.pixel_size)
        noisy = add_noise_to_snr(img, snr, noise_seed)
        mask = circular_mask(D)
        noise_var = np.var((noisy - img)[mask])
        realized = math.inf if noise_var == 0 else float(np.var(img[mask]) / noise_var)
        return noisy, shift, (dz if base_ctf is not False else 0.0), realized

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(n_images)))
    else:
        results = [one(i) for i in range(n_images)]
    split = _split_labels(n_images, np.random.default_rng(np.random.SeedSequence([int(seed), n_images, 17])))
    return ProjectionStack(
        images=np.stack([r[0] for r in results]),
        quats=quats,
        shifts=np.array([r[1] for r in results]),
        defocus=np.array([r[2] for r in results]),
        split=split,
        pixel_size=volume.pixel_size,
        snr_target=snr,
        realized_snr=np.array([r[3] for r in results]),
    )


def encoder_inputs(images, blur_mode="lowpass", n_filters=3, dtype=np.float64):
    """Preprocess + blur bank for a stack, giving ``(N, D, D, C)`` network inputs."""
    x = preprocess(images)
    return blur_bank(x, blur_mode, n_filters).astype(dtype)


def rotate_inplane(x, angles):
    """Rotate images ``(N, D, D[, C])`` about pixel ``D // 2`` by ``angles`` (radians), bilinearly.

    The rotated image of orientation ``q`` is the image of ``r_z(angle) q``.
    Samples falling outside the frame are zero.
    """
    x = np.asarray(x)
    squeeze = x.ndim == 3
    if squeeze:
        x = x[..., None]
    N, D, _, C = x.shape
    angles = np.broadcast_to(np.asarray(angles, dtype=np.float64), (N,))
    c = D // 2
    yy, xx = np.mgrid[0:D, 0:D] - c
    ca, sa = np.cos(angles)[:, None, None], np.sin(angles)[:, None, None]
    xs = ca * xx + sa * yy + c
    ys = -sa * xx + ca * yy + c
    x0, y0 = np.floor(xs).astype(np.int64), np.floor(ys).astype(np.int64)
    fx, fy = (xs - x0)[..., None], (ys - y0)[..., None]
    n = np.arange(N)[:, None, None]
    out = np.zeros(x.shape, dtype=np.result_type(x.dtype, np.float32))
    for dy, wy in ((0, 1 - fy), (1, fy)):
        for dx, wx in ((0, 1 - fx), (1, fx)):
            xi, yi = x0 + dx, y0 + dy
            ok = ((xi >= 0) & (xi < D) & (yi >= 0) & (yi < D))[..., None]
            vals = x[n, np.clip(yi, 0, D - 1), np.clip(xi, 0, D - 1)]
            out += (wx * wy * ok * vals).astype(out.dtype)
    return out[..., 0] if squeeze else out
