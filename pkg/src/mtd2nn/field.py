"""Complex scalar fields and Fresnel free-space propagation.

A field is a complex128 numpy array whose last two axes are (rows, cols);
leading axes are treated as a batch.  Propagation multiplies the 2-D FFT of
the field by the Fresnel transfer function

    H(fx, fy) = exp(j k d) * exp(-j pi lambda d (fx**2 + fy**2))

and transforms back.  :func:`propagate_direct` evaluates the same operator as
an explicit circular convolution with the impulse response ``h = IDFT(H)``
and exists only to check the FFT path.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.fft as sfft

__all__ = ["PropagationSpec", "as_field", "transfer_function", "impulse_response",
           "propagate", "propagate_adjoint", "propagate_direct", "DIRECT_MAX_PIXELS"]

# propagate_direct is O(N^4); refuse anything larger than this many pixels.
DIRECT_MAX_PIXELS = 64 * 64

_workers = 1


def set_fft_workers(n):
    """Set the thread count handed to scipy.fft (1 keeps results bit-stable)."""
    global _workers
    _workers = max(1, int(n))


@dataclass(frozen=True)
class PropagationSpec:
    """Geometry of one free-space hop.

    Lengths are in meters.  ``pad`` switches from periodic boundaries to a
    2x zero-padded linear convolution.
    """

    wavelength: float = 0.75e-3
    layer_distance: float = 30e-3
    pixel_pitch: float = 0.4e-3
    grid_rows: int = 200
    grid_cols: int = 200
    pad: bool = False

    def __post_init__(self):
        for name in ("wavelength", "layer_distance", "pixel_pitch"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be a positive finite length, got {value!r}")
        for name in ("grid_rows", "grid_cols"):
            value = getattr(self, name)
            if int(value) != value or value < 2 or value % 2:
                raise ValueError(f"{name} must be an even integer >= 2, got {value!r}")

    @property
    def wavenumber(self):
        return 2 * np.pi / self.wavelength

    @property
    def shape(self):
        return (self.grid_rows, self.grid_cols)

    def with_distance(self, distance):
        return PropagationSpec(self.wavelength, distance, self.pixel_pitch,
                               self.grid_rows, self.grid_cols, self.pad)


def as_field(data, shape=None):
    """Return ``data`` as a finite complex128 array, optionally checking its grid."""
    field = np.asarray(data, dtype=np.complex128)
    if field.ndim < 2:
        raise ValueError(f"a field needs at least 2 dimensions, got shape {field.shape}")
    if shape is not None and field.shape[-2:] != tuple(shape):
        raise ValueError(f"field grid {field.shape[-2:]} does not match spec grid {tuple(shape)}")
    if not np.all(np.isfinite(field)):
        raise ValueError("field contains NaN or Inf")
    return field


def _working_shape(spec):
    if spec.pad:
        return (2 * spec.grid_rows, 2 * spec.grid_cols)
    return spec.shape


@lru_cache(maxsize=32)
def _transfer(spec):
    rows, cols = _working_shape(spec)
    fy = sfft.fftfreq(rows, d=spec.pixel_pitch)
    fx = sfft.fftfreq(cols, d=spec.pixel_pitch)
    f2 = fy[:, None] ** 2 + fx[None, :] ** 2
    kd = np.mod(spec.wavenumber * spec.layer_distance, 2 * np.pi)
    H = np.exp(1j * (kd - np.pi * spec.wavelength * spec.layer_distance * f2))
    H.setflags(write=False)
    return H


def transfer_function(spec):
    """Sampled Fresnel transfer function on the FFT-ordered frequency grid.

    The constant phase ``k d`` is reduced mod 2 pi before exponentiation so the
    DC sample is exact even for large ``d / lambda``.
    """
    return _transfer(spec).copy()


def _idft_matrix(n):
    k = np.arange(n)
    return np.exp(2j * np.pi * np.outer(k, k) / n) / n


def impulse_response(spec):
    """Discrete impulse response whose DFT is :func:`transfer_function`.

    Evaluated as an explicit inverse-DFT sum rather than through the FFT, so
    the direct-convolution oracle shares no code with the fast path.
    """
    rows, cols = _working_shape(spec)
    return _idft_matrix(rows) @ _transfer(spec) @ _idft_matrix(cols).T


def _apply(field, spec, H):
    rows, cols = spec.shape
    if spec.pad:
        pad = [(0, 0)] * (field.ndim - 2) + [(0, rows), (0, cols)]
        work = np.pad(field, pad)
    else:
        work = field
    out = sfft.ifft2(sfft.fft2(work, workers=_workers) * H, workers=_workers)
    if spec.pad:
        out = out[..., :rows, :cols]
    return out


def propagate(field, spec):
    """Propagate ``field`` (shape ``(..., rows, cols)``) by ``spec.layer_distance``."""
    field = as_field(field, spec.shape)
    return _apply(field, spec, _transfer(spec))


def propagate_adjoint(field, spec):
    """Hermitian adjoint of :func:`propagate` (filter by ``conj(H)``).

    In periodic mode this is also the exact inverse.
    """
    field = as_field(field, spec.shape)
    return _apply(field, spec, np.conj(_transfer(spec)))


@lru_cache(maxsize=4)
def _convolution_matrix(spec):
    # K[(x, y), (r, c)] = h[(x - r) % N, (y - c) % M] over the unpadded grid
    rows, cols = _working_shape(spec)
    h = impulse_response(spec)
    x = np.arange(spec.grid_rows)
    y = np.arange(spec.grid_cols)
    dx = (x[:, None] - x[None, :]) % rows
    dy = (y[:, None] - y[None, :]) % cols
    K = h[dx[:, None, :, None], dy[None, :, None, :]]
    n = spec.grid_rows * spec.grid_cols
    return K.reshape(n, n)


def propagate_direct(field, spec):
    """Brute-force circular convolution with the sampled impulse response.

    Intended as an oracle for :func:`propagate` on small grids only.
    """
    field = as_field(field, spec.shape)
    rows, cols = _working_shape(spec)
    if rows * cols > DIRECT_MAX_PIXELS:
        raise ValueError(f"grid {rows}x{cols} exceeds the direct-convolution cap "
                         f"of {DIRECT_MAX_PIXELS} pixels")
    batch = field.reshape(-1, spec.grid_rows * spec.grid_cols)
    out = batch @ _convolution_matrix(spec).T
    return out.reshape(field.shape)
