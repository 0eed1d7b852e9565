"""Dyadic separable 3D orthonormal wavelet transform with periodic boundaries.

Coefficients are stored in the usual nested ("Mallat") layout: an array of
the same shape as the volume, where at level ``j`` the subband with
orientation ``o = (ox, oy, oz)`` occupies, along each axis, the low half
(``0``) or the high half (``1``) of the block of size ``N / 2**(j-1)``.
The approximation sits in the corner block of size ``N / 2**j_max``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .core import ReconError

# Least-asymmetric Daubechies filter with 4 vanishing moments (8 taps).
SYMMLET8_LOWPASS = (
    -0.07576571478927333,
    -0.02963552764599851,
    0.49761866763201545,
    0.8037387518059161,
    0.29785779560527736,
    -0.09921954357684722,
    -0.012603967262037833,
    0.0322231006040427,
)
HAAR_LOWPASS = (2**-0.5, 2**-0.5)

ORIENTATIONS = tuple(o for o in itertools.product((0, 1), repeat=3) if any(o))


class DimsNotDivisible(ReconError, ValueError):
    pass


class MalformedField(ReconError, ValueError):
    pass


@dataclass(frozen=True)
class WaveletSpec:
    family: str = "symmlet8"
    j_max: int = 3
    lowpass: tuple = field(default=SYMMLET8_LOWPASS, repr=False)

    @classmethod
    def symmlet8(cls, j_max=3):
        return cls("symmlet8", j_max, SYMMLET8_LOWPASS)

    @classmethod
    def haar(cls, j_max=1):
        return cls("haar", j_max, HAAR_LOWPASS)

    @classmethod
    def from_name(cls, name, j_max=3):
        if name == "symmlet8":
            return cls.symmlet8(j_max)
        if name == "haar":
            return cls.haar(j_max)
        raise ValueError(f"unknown wavelet family {name!r}")

    @property
    def filter_len(self) -> int:
        return len(self.lowpass)

    @property
    def analysis_lo(self) -> np.ndarray:
        return np.asarray(self.lowpass, dtype=float)

    @property
    def analysis_hi(self) -> np.ndarray:
        h = self.analysis_lo
        n = np.arange(len(h))
        return (-1.0) ** n * h[::-1]

    def check_dims(self, dims):
        block = 2**self.j_max
        if any(int(n) % block for n in dims):
            raise DimsNotDivisible(f"dims {tuple(dims)} not divisible by 2**j_max = {block}")


def _wrap(x, before, after):
    # periodic extension along axis 0 (may span several periods)
    n = x.shape[0]
    return x.take(np.arange(-before, n + after) % n, axis=0)


def _analysis_1d(x, h, g, axis):
    # polyphase form: a[k] = sum_m h[2m] x[2(k+m)] + h[2m+1] x[2(k+m)+1]
    x = np.moveaxis(x, axis, 0)
    half = x.shape[0] // 2
    taps = len(h) // 2
    even = _wrap(x[0::2], 0, taps - 1)
    odd = _wrap(x[1::2], 0, taps - 1)
    out = np.zeros((2 * half,) + x.shape[1:], dtype=np.result_type(x, h))
    lo, hi = out[:half], out[half:]
    for m in range(taps):
        e, o = even[m:m + half], odd[m:m + half]
        lo += h[2 * m] * e
        lo += h[2 * m + 1] * o
        hi += g[2 * m] * e
        hi += g[2 * m + 1] * o
    return np.moveaxis(out, 0, axis)


def _synthesis_1d(c, h, g, axis):
    c = np.moveaxis(c, axis, 0)
    half = c.shape[0] // 2
    taps = len(h) // 2
    # lo_m[j] = lo[j - m]
    lo = _wrap(c[:half], taps - 1, 0)
    hi = _wrap(c[half:], taps - 1, 0)
    out = np.zeros((half, 2) + c.shape[1:], dtype=np.result_type(c, h))
    even, odd = out[:, 0], out[:, 1]
    for m in range(taps):
        lo_m = lo[taps - 1 - m:taps - 1 - m + half]
        hi_m = hi[taps - 1 - m:taps - 1 - m + half]
        even += h[2 * m] * lo_m
        even += g[2 * m] * hi_m
        odd += h[2 * m + 1] * lo_m
        odd += g[2 * m + 1] * hi_m
    return np.moveaxis(out.reshape(c.shape), 0, axis)


def forward_array(x, spec: WaveletSpec, axes=(-3, -2, -1)):
    """Forward transform of the last three axes of ``x`` (leading axes batched)."""
    x = np.asarray(x)
    dims = [x.shape[a] for a in axes]
    spec.check_dims(dims)
    h, g = spec.analysis_lo, spec.analysis_hi
    out = np.array(x, dtype=np.result_type(x, float), copy=True)
    size = list(dims)
    for _ in range(spec.j_max):
        region = (Ellipsis,) + tuple(slice(0, s) for s in size)
        block = out[region]
        for ax in (-3, -2, -1):
            block = _analysis_1d(block, h, g, ax)
        out[region] = block
        size = [s // 2 for s in size]
    return out


def inverse_array(c, spec: WaveletSpec):
    c = np.asarray(c)
    dims = c.shape[-3:]
    spec.check_dims(dims)
    h, g = spec.analysis_lo, spec.analysis_hi
    out = np.array(c, dtype=np.result_type(c, float), copy=True)
    for j in range(spec.j_max, 0, -1):
        size = [s // 2 ** (j - 1) for s in dims]
        region = (Ellipsis,) + tuple(slice(0, s) for s in size)
        block = out[region]
        for ax in (-1, -2, -3):
            block = _synthesis_1d(block, h, g, ax)
        out[region] = block
    return out


def subband_slices(dims, j_max):
    """Map subband key to index slices into the nested coefficient layout.

    Keys are ``"a"`` for the approximation and ``(o, j)`` for details.
    """
    out = {}
    coarse = [n // 2**j_max for n in dims]
    out["a"] = tuple(slice(0, s) for s in coarse)
    for j in range(1, j_max + 1):
        half = [n // 2**j for n in dims]
        for o in ORIENTATIONS:
            out[(o, j)] = tuple(
                slice(oi * s, (oi + 1) * s) for oi, s in zip(o, half)
            )
    return out


def subband_keys(j_max):
    return ["a"] + [(o, j) for j in range(1, j_max + 1) for o in ORIENTATIONS]


def key_to_str(key) -> str:
    if key == "a":
        return "a"
    o, j = key
    return "o{}{}{}_j{}".format(*o, j)


def str_to_key(s: str):
    if s == "a":
        return "a"
    o, j = s.split("_")
    return (tuple(int(c) for c in o[1:]), int(j[1:]))


@dataclass
class CoeffField:
    """Wavelet coefficients of one volume in nested layout."""

    data: np.ndarray
    j_max: int

    @property
    def dims(self):
        return self.data.shape

    @property
    def approx(self) -> np.ndarray:
        return self.data[subband_slices(self.dims, self.j_max)["a"]].ravel(order="F")

    def detail(self, o, j) -> np.ndarray:
        return self.data[subband_slices(self.dims, self.j_max)[(tuple(o), j)]].ravel(order="F")

    def subbands(self) -> dict:
        return {
            key: self.data[sl].ravel(order="F")
            for key, sl in subband_slices(self.dims, self.j_max).items()
        }

    @classmethod
    def from_subbands(cls, bands: dict, dims, j_max):
        data = np.zeros(dims, dtype=np.complex128)
        slices = subband_slices(dims, j_max)
        if set(bands) != set(slices):
            raise MalformedField("subband keys do not match the decomposition")
        for key, sl in slices.items():
            shape = tuple(s.stop - s.start for s in sl)
            vec = np.asarray(bands[key])
            if vec.size != int(np.prod(shape)):
                raise MalformedField(
                    f"subband {key_to_str(key)} has {vec.size} coefficients, expected {np.prod(shape)}"
                )
            data[sl] = vec.reshape(shape, order="F")
        return cls(data, j_max)


def forward(volume, spec: WaveletSpec) -> CoeffField:
    volume = np.asarray(volume)
    if volume.ndim != 3:
        raise DimsNotDivisible(f"expected a 3-D volume, got shape {volume.shape}")
    return CoeffField(forward_array(volume.astype(np.complex128), spec), spec.j_max)


def inverse(coeffs: CoeffField, spec: WaveletSpec) -> np.ndarray:
    if coeffs.j_max != spec.j_max or coeffs.data.ndim != 3:
        raise MalformedField("coefficient field does not match the wavelet spec")
    return inverse_array(coeffs.data, spec)
