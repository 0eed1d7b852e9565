"""Maximum-likelihood estimation of the regularization parameters.

Spatial parameters come from a Gauss-Laplace fit to each wavelet subband of
a reference reconstruction (real and imaginary parts separately).  Temporal
parameters come from a generalized Gaussian fit to successive differences
at each voxel of the reference series.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import optimize, special

from .core import ReconError
from .prox import GGLParams, TemporalParams
from .wavelet3d import WaveletSpec, forward_array, key_to_str, str_to_key, subband_slices

log = logging.getLogger(__name__)


class DegenerateSamples(ReconError, ValueError):
    pass


@dataclass
class PowellConfig:
    xtol: float = 1e-8
    ftol: float = 1e-8
    max_sweeps: int = 200


class PowellResult(NamedTuple):
    x: np.ndarray
    fun: float
    converged: bool
    sweeps: int


def powell_minimize(f, x0, bounds=None, cfg: PowellConfig | None = None) -> PowellResult:
    """Derivative-free direction-set minimization.

    ``converged`` is False when the sweep budget ran out; the best point
    found so far is returned either way.
    """
    cfg = cfg or PowellConfig()
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    res = optimize.minimize(
        lambda x: float(f(x)), x0, method="Powell", bounds=bounds,
        options={"xtol": cfg.xtol, "ftol": cfg.ftol, "maxiter": cfg.max_sweeps,
                 "maxfev": 400 * cfg.max_sweeps * len(x0)},
    )
    x = np.atleast_1d(res.x)
    f0 = float(f(x0))
    if res.fun > f0:
        return PowellResult(x0, f0, bool(res.success), int(res.nit))
    return PowellResult(x, float(res.fun), bool(res.success), int(res.nit))


# ---------------------------------------------------------------- spatial


def ggl_logpdf(x, mu, alpha, beta):
    """Log density of the Gauss-Laplace law ``exp(-a|x-mu| - b/2 (x-mu)^2)`` (normalized)."""
    u = np.abs(np.asarray(x, dtype=float) - mu)
    z = alpha / np.sqrt(2 * beta)
    # a^2/(2b) + log erfc(z) == log erfcx(z), which stays finite for large z
    return (0.5 * np.log(beta / (2 * np.pi)) - alpha * u - 0.5 * beta * u**2
            - np.log(special.erfcx(z)))


def ggl_nll(samples, mu, alpha, beta) -> float:
    """Negative log-likelihood without the ``K/2 log 2pi`` constant."""
    x = np.asarray(samples, dtype=float)
    K = x.size
    u = np.abs(x - mu)
    z = alpha / np.sqrt(2 * beta)
    return float(alpha * u.sum() + 0.5 * beta * np.sum(u**2)
                 + K * np.log(special.erfcx(z)) - 0.5 * K * np.log(beta))


class GGLFit(NamedTuple):
    mu: float
    alpha: float
    beta: float


def fit_ggl(samples, cfg: PowellConfig | None = None) -> GGLFit:
    """ML fit of ``(mu, alpha, beta)`` to real samples.

    The search runs on standardized samples with ``beta`` on a log scale and
    ``alpha`` bounded below by zero, then maps back.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < MIN_FIT_SAMPLES:
        raise DegenerateSamples(f"need at least {MIN_FIT_SAMPLES} samples, got {x.size}")
    scale = x.std()
    if not scale > 0:
        log.warning("zero-variance samples; returning a near-degenerate fit")
        return GGLFit(float(x[0]), 0.0, 1.0 / np.finfo(float).tiny**0.5)
    center = np.median(x)
    y = (x - center) / scale

    def obj(v):
        mu, alpha, logb = v
        return ggl_nll(y, mu, max(alpha, 0.0), np.exp(logb))

    start = np.array([y.mean(), 0.0, 0.0])  # Gaussian start: alpha=0, beta=1/var
    bounds = [(-10.0, 10.0), (0.0, 1e4), (-30.0, 30.0)]
    best = powell_minimize(obj, start, bounds, cfg)
    # second start from the Laplace end of the family
    lap = powell_minimize(obj, np.array([0.0, 1.0 / np.abs(y).mean(), -6.0]), bounds, cfg)
    if lap.fun < best.fun:
        best = lap
    mu, alpha, logb = best.x
    return GGLFit(
        float(center + scale * mu), float(max(alpha, 0.0) / scale),
        float(np.exp(logb) / scale**2),
    )


# ---------------------------------------------------------------- temporal


def gg_kappa(abs_diffs, p, dim=1):
    """Closed-form ML ``kappa`` for fixed ``p``; ``abs_diffs`` along axis 0.

    ``dim=1`` is the real-line density ``p k^(1/p) / (2 Gamma(1/p)) exp(-k|e|^p)``;
    ``dim=2`` its rotation-invariant counterpart on the complex plane,
    ``p k^(2/p) / (2 pi Gamma(2/p)) exp(-k|e|^p)``.
    """
    n = abs_diffs.shape[0]
    return dim * n / (p * np.sum(abs_diffs**p, axis=0))


def _log_norm(kappa_log, p, dim):
    return (np.log(p) + dim * kappa_log / p - np.log(2.0) - (dim - 1) * np.log(np.pi)
            - special.gammaln(dim / p))


def gg_nll(abs_diffs, kappa, p, dim=1):
    """Generalized Gaussian negative log-likelihood over axis 0."""
    n = abs_diffs.shape[0]
    return kappa * np.sum(abs_diffs**p, axis=0) - n * _log_norm(np.log(kappa), p, dim)


def _profile_nll(logabs, p, dim):
    # NLL at the closed-form kappa, computed from log|e| for stability
    n = logabs.shape[0]
    log_sp = special.logsumexp(p * logabs, axis=0)
    log_kappa = np.log(dim * n) - np.log(p) - log_sp
    return dim * n / p - n * _log_norm(log_kappa, p, dim)


@dataclass
class TemporalFit:
    kappa: np.ndarray  # (X, Y, Z), zero off-mask
    p: np.ndarray
    mask: np.ndarray
    flagged: np.ndarray  # voxels whose differences were all zero
    domain: str = "real"


def fit_gg_temporal(reference, mask, p_bounds=(1.0, 8.0), kappa_cap=1e12,
                    grid_size=57, tol=1e-6, domain="auto") -> TemporalFit:
    """Per-voxel ML ``(kappa, p)`` from successive differences of a series.

    ``p`` is found by a grid scan followed by golden-section refinement in
    the bracketing cell, for all masked voxels at once.  ``domain`` selects
    the real-line (``"real"``) or complex-plane (``"complex"``) density;
    ``"auto"`` uses the complex one when the series has imaginary content.
    """
    ref = np.asarray(reference)
    if domain == "auto":
        domain = "complex" if np.iscomplexobj(ref) and np.any(ref.imag != 0) else "real"
    dim = {"real": 1, "complex": 2}[domain]
    if ref.shape[0] < 3:
        raise ValueError("need at least 3 frames")
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("mask is empty")
    diffs = np.abs(np.diff(ref, axis=0))[:, mask]  # (T-1, M)
    zero = np.all(diffs == 0, axis=0)
    with np.errstate(divide="ignore"):
        logabs = np.log(diffs)
    logabs[:, zero] = 0.0

    lo, hi = p_bounds
    grid = np.linspace(lo, hi, grid_size)
    vals = np.stack([_profile_nll(logabs, p, dim) for p in grid])
    best = np.argmin(vals, axis=0)
    a = grid[np.maximum(best - 1, 0)]
    b = grid[np.minimum(best + 1, grid_size - 1)]
    invphi = (np.sqrt(5) - 1) / 2
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = _profile_nll(logabs, c, dim), _profile_nll(logabs, d, dim)
    while np.max(b - a) > tol:
        left = fc < fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        c_new = b - invphi * (b - a)
        d_new = a + invphi * (b - a)
        c, d = c_new, d_new
        fc, fd = _profile_nll(logabs, c, dim), _profile_nll(logabs, d, dim)
    p_hat = 0.5 * (a + b)
    # keep an endpoint if it beats the refined interior point
    for edge in (lo, hi):
        better = _profile_nll(logabs, np.full_like(p_hat, edge), dim) < _profile_nll(logabs, p_hat, dim)
        p_hat = np.where(better, edge, p_hat)

    with np.errstate(divide="ignore"):
        k_hat = gg_kappa(diffs, p_hat, dim)
    p_hat = np.where(zero, 2.0, p_hat)
    k_hat = np.where(zero, kappa_cap, np.minimum(k_hat, kappa_cap))
    if zero.any():
        log.warning("%d voxels have identically zero temporal differences", int(zero.sum()))

    kappa = np.zeros(mask.shape)
    p = np.full(mask.shape, 2.0)
    flagged = np.zeros(mask.shape, dtype=bool)
    kappa[mask], p[mask], flagged[mask] = k_hat, p_hat, zero
    return TemporalFit(kappa, p, mask, flagged, domain)


# ---------------------------------------------------------------- all


def brain_mask(reference, threshold=0.1):
    """``|mean_t reference| > threshold * max``."""
    ref = np.asarray(reference)
    mean = np.abs(ref.mean(axis=0)) if ref.ndim == 4 else np.abs(ref)
    return mean > threshold * mean.max()


@dataclass
class HyperParams:
    spatial: dict
    temporal: TemporalParams | None = None
    wavelet: tuple = ("symmlet8", 3)
    mask_threshold: float = 0.1
    mask_fraction: float | None = None
    temporal_maps: TemporalFit | None = field(default=None, repr=False)

    def to_dict(self):
        out = {
            "wavelet": {"family": self.wavelet[0], "j_max": self.wavelet[1]},
            "spatial": {key_to_str(k): v.to_dict() for k, v in self.spatial.items()},
            "mask": {"rule": "abs(mean_t reference) > threshold * max",
                     "threshold": self.mask_threshold, "fraction": self.mask_fraction},
        }
        if self.temporal is not None:
            out["temporal"] = {"kappa": self.temporal.kappa, "p": self.temporal.p,
                               "aggregation": "median over mask"}
        return out

    @classmethod
    def from_dict(cls, d):
        spatial = {str_to_key(k): GGLParams.from_dict(v) for k, v in d["spatial"].items()}
        temporal = None
        if "temporal" in d:
            temporal = TemporalParams(float(d["temporal"]["kappa"]), float(d["temporal"]["p"]))
        mask = d.get("mask", {})
        return cls(spatial, temporal, (d["wavelet"]["family"], int(d["wavelet"]["j_max"])),
                   mask.get("threshold", 0.1), mask.get("fraction"))


MIN_FIT_SAMPLES = 32


def _fit_band(x, cfg):
    # small bands (the approximation of a small volume) cannot support a
    # three-parameter fit; use the alpha = 0 solution, i.e. Gaussian moments
    if x.size >= MIN_FIT_SAMPLES:
        return fit_ggl(x, cfg)
    var = x.var() if x.size > 1 else 0.0
    log.info("subband has %d samples; using a Gaussian moment fit", x.size)
    return GGLFit(float(x.mean()), 0.0, float(1.0 / var) if var > 0 else 0.0)


def estimate_spatial(reference, spec: WaveletSpec, cfg=None) -> dict:
    """GGL triples for every subband, pooled over all frames of the reference."""
    ref = np.asarray(reference)
    if ref.ndim == 3:
        ref = ref[None]
    coeffs = forward_array(ref, spec)
    out = {}
    for key, sl in subband_slices(ref.shape[1:], spec.j_max).items():
        band = coeffs[(slice(None),) + sl].ravel()
        re = _fit_band(band.real, cfg)
        im = _fit_band(band.imag, cfg)
        out[key] = GGLParams(complex(re.mu, im.mu), (re.alpha, im.alpha), (re.beta, im.beta))
    return out


def estimate_all(reference, spec: WaveletSpec, mask=None, mask_threshold=0.1,
                 cfg: PowellConfig | None = None) -> HyperParams:
    """Spatial and temporal parameters from a reference reconstruction ``(T, X, Y, Z)``.

    The temporal term uses one global pair: the medians of the per-voxel
    estimates over the mask.  Fewer than three frames gives no temporal term.
    """
    ref = np.asarray(reference)
    if ref.ndim == 3:
        ref = ref[None]
    spatial = estimate_spatial(ref, spec, cfg)
    if mask is None:
        mask = brain_mask(ref, mask_threshold)
    mask = np.asarray(mask, dtype=bool)
    hp = HyperParams(spatial, None, (spec.family, spec.j_max), mask_threshold, float(mask.mean()))
    if ref.shape[0] >= 3:
        fit = fit_gg_temporal(ref, mask)
        hp.temporal = TemporalParams(float(np.median(fit.kappa[mask])), float(np.median(fit.p[mask])))
        hp.temporal_maps = fit
    return hp
