"""SENSE acquisition model, calibration and closed-form unfolding."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    CoilDataset,
    GeometryMismatch,
    NoiseCovariance,
    ReconError,
    SenseGeometry,
    wls_unfolding_matrix,
)


class EmptyMask(ReconError, ValueError):
    pass


class TooFewSamples(ReconError, ValueError):
    pass


@dataclass
class EncodingOperator:
    """Coil sensitivities ``(L, X, Y, Z)`` together with the folding geometry."""

    sens: np.ndarray
    geometry: SenseGeometry

    def __post_init__(self):
        self.sens = np.asarray(self.sens, dtype=np.complex128)
        if self.sens.ndim != 4:
            raise GeometryMismatch(f"sensitivities must be (L, X, Y, Z), got {self.sens.shape}")
        if self.sens.shape[2] != self.geometry.Y:
            raise GeometryMismatch(
                f"sensitivity Y={self.sens.shape[2]} but geometry Y={self.geometry.Y}"
            )

    @classmethod
    def from_sens(cls, sens, R):
        sens = np.asarray(sens)
        return cls(sens, SenseGeometry(int(R), sens.shape[2]))

    @property
    def coils(self) -> int:
        return self.sens.shape[0]

    @property
    def dims(self):
        return self.sens.shape[1:]

    @property
    def R(self) -> int:
        return self.geometry.R

    def _split(self, arr):
        # (..., X, Y, Z) -> (..., X, R, dy, Z)
        *lead, X, Y, Z = arr.shape
        if Y != self.geometry.Y or (X, Z) != (self.dims[0], self.dims[2]):
            raise GeometryMismatch(f"volume shape {arr.shape[-3:]} does not match {self.dims}")
        return arr.reshape(*lead, X, self.R, self.geometry.delta_y, Z)

    def blocks(self) -> np.ndarray:
        """Per reduced-FOV voxel matrices ``S(r)``, shape ``(X, Y/R, Z, L, R)``."""
        return np.transpose(self._split(self.sens), (1, 3, 4, 0, 2))

    def fold_array(self, series):
        """``(T, X, Y, Z) -> (L, T, X, Y/R, Z)``."""
        rho = self._split(np.asarray(series))
        s = self._split(self.sens)
        return np.einsum("lxkyz,txkyz->ltxyz", s, rho)

    def adjoint_array(self, d, psi: NoiseCovariance | None = None):
        """``S^H psi^-1 d`` per voxel: ``(L, T, X, Y/R, Z) -> (T, X, Y, Z)``.

        With ``psi=None`` the plain adjoint ``S^H d`` is returned.
        """
        d = np.asarray(d)
        if psi is not None:
            d = np.einsum("lm,mtxyz->ltxyz", np.linalg.inv(psi.psi), d)
        s = self._split(self.sens)
        out = np.einsum("lxkyz,ltxyz->txkyz", s.conj(), d)
        T, X, _, dy, Z = out.shape
        return out.reshape(T, X, self.R * dy, Z)

    def normal_blocks(self, psi: NoiseCovariance) -> np.ndarray:
        """``S^H psi^-1 S`` per reduced voxel, shape ``(X, Y/R, Z, R, R)``."""
        Sw = psi.whitener() @ self.blocks()
        return np.conj(np.swapaxes(Sw, -1, -2)) @ Sw


def fold(rho, enc: EncodingOperator) -> CoilDataset:
    """Aliased per-coil images of one full-FOV volume (single-frame dataset)."""
    rho = np.asarray(rho)
    if rho.ndim != 3:
        raise GeometryMismatch(f"expected a volume, got shape {rho.shape}")
    return CoilDataset(enc.fold_array(rho[None]), enc.geometry)


def fold_adjoint(d: CoilDataset, enc: EncodingOperator, psi: NoiseCovariance):
    return enc.adjoint_array(d.data, psi)


def sos(coil_images) -> np.ndarray:
    """Root sum of squares over the leading (coil) axis."""
    c = np.asarray(coil_images)
    return np.sqrt(np.sum(np.abs(c) ** 2, axis=0))


def estimate_sensitivities(coil_images, threshold=0.05) -> np.ndarray:
    """Divide each coil image by the SOS image inside ``SOS > threshold * max(SOS)``."""
    c = np.asarray(coil_images, dtype=np.complex128)
    combined = sos(c)
    mask = combined > threshold * combined.max()
    if not mask.any():
        raise EmptyMask("no voxel above the SOS threshold")
    sens = np.zeros_like(c)
    sens[:, mask] = c[:, mask] / combined[mask]
    return sens


def estimate_noise_cov(noise_samples, loading=1e-8) -> NoiseCovariance:
    """Sample covariance of noise-only samples ``(L, n)`` with diagonal loading."""
    n = np.atleast_2d(np.asarray(noise_samples, dtype=np.complex128))
    L, count = n.shape[0], n[0].size
    n = n.reshape(L, count)
    if count < 10 * L:
        raise TooFewSamples(f"need at least {10 * L} samples per coil, got {count}")
    psi = n @ n.conj().T / count
    psi = 0.5 * (psi + psi.conj().T)
    eps = loading * np.trace(psi).real / L
    if eps <= 0:
        raise TooFewSamples("noise samples are identically zero")
    return NoiseCovariance(psi + eps * np.eye(L))


def sense_wls(d: CoilDataset, enc: EncodingOperator, psi: NoiseCovariance) -> np.ndarray:
    """Closed-form 1D-SENSE unfolding of every frame; returns ``(T, X, Y, Z)``."""
    if d.coils != enc.coils or d.geometry != enc.geometry:
        raise GeometryMismatch("dataset and encoding operator disagree")
    U = wls_unfolding_matrix(enc.blocks(), psi)  # (X, dy, Z, R, L)
    out = np.einsum("xyzkl,ltxyz->txkyz", U, d.data)
    T, X, R, dy, Z = out.shape
    return out.reshape(T, X, R * dy, Z)
