"""Proximity operators of the reconstruction criterion.

Every operator here returns ``argmin_v f(v) + |v - x|^2 / 2`` for its
function ``f``; ``weight`` multiplies ``f``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import CoilDataset, NoiseCovariance, ShapeMismatch, hermitian_solve
from .sense import EncodingOperator
from .wavelet3d import CoeffField, WaveletSpec, forward_array, inverse_array


@dataclass(frozen=True)
class GGLParams:
    """Gauss-Laplace penalty ``a|Re(x-mu)| + b/2 Re(x-mu)^2`` plus its imaginary twin."""

    mu: complex = 0.0
    alpha: tuple = (0.0, 0.0)
    beta: tuple = (0.0, 0.0)

    def __post_init__(self):
        if min(self.alpha) < 0 or min(self.beta) < 0:
            raise ValueError(f"alpha and beta must be nonnegative: {self}")

    def value(self, xi):
        u = np.asarray(xi) - self.mu
        re, im = np.abs(u.real), np.abs(u.imag)
        return (
            self.alpha[0] * re + 0.5 * self.beta[0] * re**2
            + self.alpha[1] * im + 0.5 * self.beta[1] * im**2
        )

    def to_dict(self):
        return {
            "mu": [float(np.real(self.mu)), float(np.imag(self.mu))],
            "alpha": [float(a) for a in self.alpha],
            "beta": [float(b) for b in self.beta],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(complex(*d["mu"]), tuple(d["alpha"]), tuple(d["beta"]))


@dataclass(frozen=True)
class TemporalParams:
    kappa: float = 0.0
    p: float = 2.0

    def __post_init__(self):
        if self.kappa < 0 or self.p < 1:
            raise ValueError(f"need kappa >= 0 and p >= 1: {self}")


def prox_complex_split(phi_re, phi_im, x):
    """Apply ``phi_re`` to the real part and ``phi_im`` to the imaginary part."""
    x = np.asarray(x)
    return phi_re(x.real) + 1j * phi_im(x.imag)


def soft_threshold(x, thresh):
    return np.sign(x) * np.maximum(np.abs(x) - thresh, 0.0)


def _shrink(u, alpha, beta):
    # sign(0) = +1 convention is irrelevant here: the magnitude is zero there
    return np.sign(u) * np.maximum(np.abs(u) - alpha, 0.0) / (beta + 1.0)


def ggl_prox_array(xi, mu, alpha_re, alpha_im, beta_re, beta_im, weight=1.0):
    """Vectorized Gauss-Laplace prox; parameters broadcast against ``xi``."""
    u = np.asarray(xi) - mu
    re = _shrink(u.real, weight * alpha_re, weight * beta_re)
    im = _shrink(u.imag, weight * alpha_im, weight * beta_im)
    return re + 1j * im + mu


def prox_ggl(xi, params: GGLParams, weight=1.0):
    return ggl_prox_array(
        xi, params.mu, params.alpha[0], params.alpha[1], params.beta[0], params.beta[1], weight
    )


def _lp_radius(r, c, p, tol=1e-13, max_iter=200):
    """Unique root ``t >= 0`` of ``t + c p t^(p-1) = r``.

    Newton steps kept inside a shrinking bracket ``[lo, hi]`` of ``[0, r]``;
    a step leaving the bracket falls back to bisection.
    """
    r, c, p = np.broadcast_arrays(r, c, p)
    lo = np.zeros(r.shape)
    hi = np.array(r, dtype=float)
    # p = 1 and r <= c: the subgradient condition puts the root at 0
    hi = np.where((p == 1) & (r <= c), 0.0, hi)
    t = hi.copy()
    # converged entries are frozen so each result depends only on its own
    # inputs, not on which other entries share the batch
    active = np.ones(r.shape, dtype=bool)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for _ in range(max_iter):
            f = t + c * p * t ** (p - 1) - r
            lo = np.where(f <= 0, t, lo)
            hi = np.where(f >= 0, t, hi)
            new = t - f / (1.0 + c * p * (p - 1) * t ** (p - 2))
            bad = ~((new > lo) & (new < hi))
            new = np.where(bad, 0.5 * (lo + hi), new)
            done = np.abs(new - t) <= tol * (1.0 + r)
            t = np.where(active, new, t)
            active &= ~done
            if not active.any():
                break
    return t


def prox_lp_scalar(v, kappa, p, weight=1.0):
    """Prox of ``weight * kappa * |v|^p`` on complex (or real) samples.

    The penalty depends on the modulus only, so the prox keeps the phase of
    ``v`` and shrinks its modulus.  ``kappa`` and ``p`` may be arrays that
    broadcast against ``v``.
    """
    v = np.asarray(v)
    c = weight * np.asarray(kappa, dtype=float)
    r = np.abs(v)
    if c.ndim == 0 and np.ndim(p) == 0:
        if c == 0:
            return v.copy()
        if p == 2:
            return v / (1.0 + 2.0 * c)
        if p == 1:
            scale = np.maximum(r - c, 0.0)
        else:
            scale = _lp_radius(r.astype(float), c, p)
    else:
        scale = _lp_radius(r.astype(float), c, np.asarray(p, dtype=float))
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(r > 0, v * (scale / np.where(r > 0, r, 1.0)), 0.0)
    return out if np.iscomplexobj(v) else out.real


def temporal_pair_prox_array(a, b, kappa, p, weight, spec: WaveletSpec):
    """Prox of ``weight * kappa * ||T*a - T*b||_p^p`` on coefficient arrays.

    Leading axes of ``a`` and ``b`` are batched pairs.  Uses
    ``prox_{f o H} = Id + H^*(prox_{2f} - Id)H / 2`` for ``H(a, b) = a - b``.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"{a.shape} vs {b.shape}")
    if kappa == 0:
        return a.copy(), b.copy()
    diff = a - b
    if p == 2:
        # linear shrink commutes with the orthonormal transform
        delta = prox_lp_scalar(diff, kappa, p, 2.0 * weight) - diff
    else:
        img = inverse_array(diff, spec)
        delta = forward_array(prox_lp_scalar(img, kappa, p, 2.0 * weight) - img, spec)
    return a + 0.5 * delta, b - 0.5 * delta


def prox_temporal_pair(zeta_a: CoeffField, zeta_b: CoeffField, params: TemporalParams,
                       weight=1.0, spec: WaveletSpec | None = None):
    if zeta_a.data.shape != zeta_b.data.shape or zeta_a.j_max != zeta_b.j_max:
        raise ShapeMismatch("coefficient fields differ in shape")
    spec = spec or WaveletSpec.symmlet8(zeta_a.j_max)
    a, b = temporal_pair_prox_array(zeta_a.data, zeta_b.data, params.kappa, params.p, weight, spec)
    return CoeffField(a, zeta_a.j_max), CoeffField(b, zeta_b.j_max)


class DataFidelityProx:
    """Prox of ``weight * sum_r ||d(r) - S(r) T*z (r)||^2_{psi^-1}`` for a fixed weight.

    Per reduced voxel this solves
    ``(I + 2w S^H psi^-1 S) u = T*z + 2w S^H psi^-1 d``.
    The system matrices are factored once; calls only apply them.
    """

    def __init__(self, enc: EncodingOperator, psi: NoiseCovariance, weight: float,
                 spec: WaveletSpec):
        if weight <= 0:
            raise ValueError("weight must be positive")
        self.enc, self.psi, self.weight, self.spec = enc, psi, float(weight), spec
        R = enc.R
        system = np.eye(R) + 2.0 * self.weight * enc.normal_blocks(psi)
        cols = [hermitian_solve(system, np.broadcast_to(np.eye(R)[k], system.shape[:-1]))
                for k in range(R)]
        self._inv = np.stack(cols, axis=-1)  # (X, dy, Z, R, R)

    def rhs(self, d: np.ndarray) -> np.ndarray:
        """``2w S^H psi^-1 d`` for coil data ``(L, T, X, dy, Z)``, as ``(T, X, Y, Z)``."""
        return 2.0 * self.weight * self.enc.adjoint_array(d, self.psi)

    def apply_image(self, rho, rhs):
        """Voxelwise solve for image-domain input ``rho`` of shape ``(T, X, Y, Z)``."""
        rhs_split = self.enc._split(np.asarray(rho) + rhs)  # (T, X, R, dy, Z)
        u = np.einsum("xyzkm,txmyz->txkyz", self._inv, rhs_split)
        T, X, R, dy, Z = u.shape
        return u.reshape(T, X, R * dy, Z)

    def __call__(self, coeffs, rhs):
        """Coefficient-domain prox for arrays ``(T, X, Y, Z)``."""
        rho = inverse_array(coeffs, self.spec)
        return forward_array(self.apply_image(rho, rhs), self.spec)


def prox_data_fidelity(zeta_t: CoeffField, d_t: CoilDataset, enc: EncodingOperator,
                       psi: NoiseCovariance, weight: float, spec: WaveletSpec) -> CoeffField:
    if d_t.frames != 1:
        raise ShapeMismatch("expected a single-frame dataset")
    op = DataFidelityProx(enc, psi, weight, spec)
    out = op(zeta_t.data[None], op.rhs(d_t.data))
    return CoeffField(out[0], zeta_t.j_max)
