"""Synthetic phantoms, coil profiles and undersampled multi-coil acquisitions.

All randomness is drawn from explicit seeds.  Noise for frame ``t`` uses the
stream ``default_rng([seed, t])`` so frames can be generated in any order.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import CoilDataset, ReconError, SenseGeometry
from .sense import EncodingOperator, sos

NOISE_SCAN_STREAM = 1_000_003


class RankDeficientGeometry(ReconError, RuntimeError):
    pass


@dataclass(frozen=True)
class Ellipsoid:
    """Ellipsoid in normalized coordinates, each axis spanning ``[-1, 1]``."""

    center: tuple = (0.0, 0.0, 0.0)
    axes: tuple = (1.0, 1.0, 1.0)
    intensity: float = 1.0
    phase: float = 0.0


@dataclass
class PhantomSpec:
    dims: tuple
    ellipsoids: list = field(default_factory=list)
    phase_amplitude: float = 0.0  # peak of an extra smooth random phase field
    seed: int = 0


@dataclass
class AcquisitionSpec:
    coils: int = 4
    R: int = 2
    frames: int = 1
    psi_true: np.ndarray | None = None  # None disables noise
    drift: float = 0.0  # relative signal change over the whole run
    drift_order: int = 1
    activation: float = 0.0  # relative amplitude of the block signal
    block_length: int = 4
    activation_region: Ellipsoid | None = None
    seed: int = 0


def grid(dims):
    """Normalized voxel-center coordinates, each in ``(-1, 1)``."""
    axes = [(np.arange(n) + 0.5) / n * 2 - 1 for n in dims]
    return np.meshgrid(*axes, indexing="ij")


def ellipsoid_mask(dims, ell: Ellipsoid):
    x, y, z = grid(dims)
    (cx, cy, cz), (ax, ay, az) = ell.center, ell.axes
    return ((x - cx) / ax) ** 2 + ((y - cy) / ay) ** 2 + ((z - cz) / az) ** 2 <= 1.0


def head_phantom(dims, seed=0, phase_amplitude=0.3, scale=1000.0) -> PhantomSpec:
    """A piecewise-constant head-like object.

    Nonzero magnitudes lie in ``[0.3, 0.9] * scale``; the default scale puts
    intensities in the range of scanner magnitude images.
    """
    ells = [
        Ellipsoid((0, 0, 0), (0.82, 0.9, 0.8), 1.0),
        Ellipsoid((0, 0, 0), (0.7, 0.8, 0.68), -0.4),
        Ellipsoid((-0.2, 0.1, 0.0), (0.12, 0.3, 0.25), -0.3),
        Ellipsoid((0.2, 0.1, 0.0), (0.12, 0.3, 0.25), -0.3),
        Ellipsoid((0.0, -0.45, 0.2), (0.18, 0.12, 0.2), 0.3),
        Ellipsoid((0.3, 0.5, -0.3), (0.1, 0.1, 0.15), 0.2),
    ]
    ells = [Ellipsoid(e.center, e.axes, e.intensity * scale, e.phase) for e in ells]
    return PhantomSpec(tuple(dims), ells, phase_amplitude, seed)


def make_phantom(spec: PhantomSpec) -> np.ndarray:
    """Sum of complex-weighted ellipsoid indicators times an optional smooth phase."""
    vol = np.zeros(spec.dims, dtype=np.complex128)
    for ell in spec.ellipsoids:
        vol[ellipsoid_mask(spec.dims, ell)] += ell.intensity * np.exp(1j * ell.phase)
    if spec.phase_amplitude:
        rng = np.random.default_rng(spec.seed)
        x, y, z = grid(spec.dims)
        k = rng.uniform(-1, 1, size=4)
        phase = k[0] * x + k[1] * y + k[2] * z + k[3] * x * y
        vol *= np.exp(1j * spec.phase_amplitude * phase / np.abs(k).sum())
    return vol


def _coil_profiles(dims, L, rng):
    x, y, z = grid(dims)
    prof = np.empty((L, *dims), dtype=np.complex128)
    offset = rng.uniform(0, 2 * np.pi)
    for ell in range(L):
        ang = offset + 2 * np.pi * ell / L + rng.uniform(-0.2, 0.2)
        cx, cy = 1.2 * np.cos(ang), 1.2 * np.sin(ang)
        cz = rng.uniform(-0.5, 0.5)
        width = rng.uniform(0.5, 0.7)
        mag = np.exp(-((x - cx) ** 2 + (y - cy) ** 2 + (z - cz) ** 2) / (2 * width**2))
        slope = rng.uniform(-1.5, 1.5, size=3)
        phase = rng.uniform(0, 2 * np.pi) + slope[0] * x + slope[1] * y + slope[2] * z
        prof[ell] = mag * np.exp(1j * phase)
    return prof / sos(prof)


def full_rank_fraction(sens, R, support=None, tol=1e-6):
    """Fraction of reduced-FOV voxels (touching ``support``) whose ``S(r)`` has rank R."""
    enc = EncodingOperator.from_sens(sens, R)
    sv = np.linalg.svd(enc.blocks(), compute_uv=False)
    ok = sv[..., -1] > tol * sv[..., 0]
    if support is None:
        return float(ok.mean())
    touch = enc._split(np.asarray(support, dtype=float)[None])[0].max(axis=1) > 0
    if not touch.any():
        return 1.0
    return float(ok[touch].mean())


def make_coils(dims, L, seed=0, R=None, support=None) -> np.ndarray:
    """Smooth complex surface-coil profiles ``(L, X, Y, Z)``, SOS-normalized.

    When ``R`` is given and ``L >= 2R``, profiles are redrawn (new seed
    stream) until ``S(r)`` has full rank on at least 99% of the support.
    """
    if L < 1:
        raise ValueError("need at least one coil")
    for attempt in range(10):
        rng = np.random.default_rng([seed, attempt])
        sens = _coil_profiles(tuple(dims), L, rng)
        if R is None or L < 2 * R or full_rank_fraction(sens, R, support) >= 0.99:
            return sens
    raise RankDeficientGeometry(f"no full-rank coil geometry for L={L}, R={R} after 10 draws")


def correlated_cov(L, sigma=1.0, corr=0.3) -> np.ndarray:
    """``sigma^2`` times a Hermitian Toeplitz matrix with entries ``(corr e^{i/2})^|l-m|``."""
    idx = np.arange(L)
    lag = idx[:, None] - idx[None, :]
    base = (corr * np.exp(0.5j)) ** np.abs(lag)
    base = np.where(lag < 0, base.conj(), base)
    return sigma**2 * base


def complex_noise(rng, psi, shape):
    """Circular complex Gaussian samples with coil covariance ``psi``: ``(L, *shape)``."""
    L = psi.shape[0]
    white = (rng.standard_normal((L, *shape)) + 1j * rng.standard_normal((L, *shape))) / np.sqrt(2)
    chol = np.linalg.cholesky(psi)
    return np.einsum("lm,m...->l...", chol, white)


def acquire(rho_series, coils, acq: AcquisitionSpec) -> CoilDataset:
    """Fold each frame with the coil profiles and add coil-correlated noise."""
    rho_series = np.asarray(rho_series)
    if rho_series.ndim == 3:
        rho_series = rho_series[None]
    enc = EncodingOperator.from_sens(coils, acq.R)
    data = enc.fold_array(rho_series)
    if acq.psi_true is not None:
        psi = np.asarray(acq.psi_true, dtype=np.complex128)
        for t in range(data.shape[1]):
            rng = np.random.default_rng([acq.seed, t])
            data[:, t] += complex_noise(rng, psi, data.shape[2:])
    return CoilDataset(data, enc.geometry)


def noise_scan(acq: AcquisitionSpec, n_samples: int) -> np.ndarray:
    """Noise-only samples ``(L, n_samples)`` as from a scan without RF excitation."""
    if acq.psi_true is None:
        raise ValueError("noise is disabled in this acquisition")
    rng = np.random.default_rng([acq.seed, NOISE_SCAN_STREAM])
    return complex_noise(rng, np.asarray(acq.psi_true, dtype=np.complex128), (n_samples,))


def reference_coil_images(base, coils, floor=0.1) -> np.ndarray:
    """Full-FOV calibration images: coil profiles times a positive reference object.

    The object is ``|base| + floor * max|base|`` so every voxel clears the
    SOS mask and the SOS-normalized maps equal the true profiles everywhere.
    """
    mag = np.abs(np.asarray(base))
    return np.asarray(coils) * (mag + floor * mag.max())[None]


def block_signal(n_frames, block_length):
    """Raised-cosine smoothed on/off block paradigm in ``[0, 1]``, starting off."""
    t = np.arange(n_frames)
    box = ((t // block_length) % 2).astype(float)
    if n_frames < 3:
        return box
    kernel = np.hanning(min(block_length, n_frames) + 2)[1:-1]
    kernel /= kernel.sum()
    padded = np.concatenate([np.full(len(kernel), box[0]), box])
    return np.convolve(padded, kernel, mode="full")[len(kernel) : len(kernel) + n_frames]


def make_series(base, acq: AcquisitionSpec) -> np.ndarray:
    """Frames ``base (1 + drift(t)) + activation(t) |base| region`` for t = 0..N-1."""
    base = np.asarray(base, dtype=np.complex128)
    n = acq.frames
    if n < 1:
        raise ValueError("need at least one frame")
    if n == 1:
        return base[None].copy()
    s = np.arange(n) / (n - 1)
    drift = acq.drift * s**acq.drift_order
    series = base[None] * (1 + drift)[:, None, None, None]
    if acq.activation and acq.activation_region is not None:
        region = ellipsoid_mask(base.shape, acq.activation_region)
        act = acq.activation * block_signal(n, acq.block_length)
        series += act[:, None, None, None] * (base * region)[None]
    return series
