"""Containers, small Hermitian solves and image-quality metrics.

Array conventions used throughout the package:

* a volume is a complex array indexed ``[x, y, z]``; flattened with
  ``order="F"`` it gives the x-fastest voxel order used on disk;
* a series of volumes is indexed ``[t, x, y, z]``;
* coil data is indexed ``[coil, t, x, y_reduced, z]``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ReconError(Exception):
    """Base class for all errors raised by the package."""


class NotPositiveDefinite(ReconError, np.linalg.LinAlgError):
    pass


class ZeroReference(ReconError, ValueError):
    pass


class GeometryMismatch(ReconError, ValueError):
    pass


class ShapeMismatch(ReconError, ValueError):
    pass


@dataclass(frozen=True)
class SenseGeometry:
    """Regular undersampling along y by an integer factor ``R``."""

    R: int
    Y: int

    def __post_init__(self):
        if self.R < 1:
            raise GeometryMismatch(f"R must be >= 1, got {self.R}")
        if self.Y % self.R:
            raise GeometryMismatch(f"R must divide Y (R={self.R}, Y={self.Y})")

    @property
    def delta_y(self) -> int:
        return self.Y // self.R


@dataclass
class CoilDataset:
    """Folded per-coil images, shape ``(L, T, X, Y/R, Z)``."""

    data: np.ndarray
    geometry: SenseGeometry

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.complex128)
        if self.data.ndim != 5:
            raise GeometryMismatch(f"coil data must be 5-D, got shape {self.data.shape}")
        if self.data.shape[3] != self.geometry.delta_y:
            raise GeometryMismatch(
                f"reduced y size {self.data.shape[3]} != Y/R = {self.geometry.delta_y}"
            )

    @property
    def coils(self) -> int:
        return self.data.shape[0]

    @property
    def frames(self) -> int:
        return self.data.shape[1]

    @property
    def full_dims(self) -> tuple[int, int, int]:
        _, _, X, _, Z = self.data.shape
        return (X, self.geometry.Y, Z)

    def frame(self, t: int) -> "CoilDataset":
        return CoilDataset(self.data[:, t : t + 1], self.geometry)


@dataclass
class NoiseCovariance:
    """Hermitian positive definite coil noise covariance."""

    psi: np.ndarray

    def __post_init__(self):
        psi = np.atleast_2d(np.asarray(self.psi, dtype=np.complex128))
        if psi.shape[0] != psi.shape[1]:
            raise ShapeMismatch(f"covariance must be square, got {psi.shape}")
        scale = max(np.abs(psi).max(), 1.0)
        if np.abs(psi - psi.conj().T).max() > 1e-12 * scale:
            raise NotPositiveDefinite("covariance is not Hermitian")
        psi = 0.5 * (psi + psi.conj().T)
        if np.linalg.eigvalsh(psi).min() <= 0:
            raise NotPositiveDefinite("covariance has a non-positive eigenvalue")
        self.psi = psi

    @property
    def coils(self) -> int:
        return self.psi.shape[0]

    def whitener(self) -> np.ndarray:
        """Return ``W`` with ``W^H W = psi^-1`` (inverse Cholesky factor)."""
        chol = np.linalg.cholesky(self.psi)
        return np.linalg.inv(chol)


def hermitian_solve(A, b):
    """Solve ``A x = b`` for Hermitian positive definite ``A``.

    Works on stacks: ``A`` of shape ``(..., n, n)`` and ``b`` of shape
    ``(..., n)``.
    """
    A = np.asarray(A, dtype=np.complex128)
    b = np.asarray(b, dtype=np.complex128)
    try:
        chol = np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None
    # forward then backward substitution with the triangular factor
    y = np.linalg.solve(chol, b[..., None])
    x = np.linalg.solve(np.conj(np.swapaxes(chol, -1, -2)), y)
    return x[..., 0]


def wls_unfolding_matrix(S, psi, rcond=1e-12):
    """Per-voxel matrix ``(S^H psi^-1 S)^# S^H psi^-1`` of shape ``(..., R, L)``."""
    if not isinstance(psi, NoiseCovariance):
        psi = NoiseCovariance(psi)
    W = psi.whitener()
    Sw = W @ np.asarray(S, dtype=np.complex128)
    SwH = np.conj(np.swapaxes(Sw, -1, -2))
    pinv = np.linalg.pinv(SwH @ Sw, rcond=rcond, hermitian=True)
    return pinv @ SwH @ W


def pseudo_inverse_solve(S, psi, d, rcond=1e-12):
    """Minimum-norm weighted least-squares unfolding.

    Computes ``(S^H psi^-1 S)^# S^H psi^-1 d``, where ``#`` is the
    Moore-Penrose pseudo-inverse with singular values below
    ``rcond * s_max`` discarded.

    Parameters
    ----------
    S : array_like, shape (..., L, R)
        Stacked sensitivity matrices.
    psi : NoiseCovariance or array_like, shape (L, L)
    d : array_like, shape (..., L)

    Returns
    -------
    ndarray, shape (..., R)
    """
    U = wls_unfolding_matrix(S, psi, rcond)
    return (U @ np.asarray(d, dtype=np.complex128)[..., None])[..., 0]


def nmse(estimate, reference) -> float:
    """Normalized squared error ``||estimate - reference||^2 / ||reference||^2``."""
    estimate = np.asarray(estimate)
    reference = np.asarray(reference)
    if estimate.shape != reference.shape:
        raise ShapeMismatch(f"{estimate.shape} vs {reference.shape}")
    ref_energy = np.vdot(reference, reference).real
    if ref_energy == 0:
        raise ZeroReference("reference is identically zero")
    diff = estimate - reference
    return float(np.vdot(diff, diff).real / ref_energy)


def psnr(estimate, reference) -> float:
    """Peak SNR in dB, peak taken as ``max |reference|``; ``inf`` on exact match."""
    estimate = np.asarray(estimate)
    reference = np.asarray(reference)
    if estimate.shape != reference.shape:
        raise ShapeMismatch(f"{estimate.shape} vs {reference.shape}")
    mse = np.mean(np.abs(estimate - reference) ** 2)
    if mse == 0:
        return float("inf")
    peak = np.abs(reference).max()
    return float(10 * np.log10(peak**2 / mse))
