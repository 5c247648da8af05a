"""FFT-based vector calculus on periodic boxes.

Coefficients are stored as real-to-complex half spectra (last axis holds the
non-negative ``xi_z``) and normalized so that they are mode amplitudes:
``f(x) = sum_xi c(xi) exp(i k . x)`` with ``k = 2 pi xi / L``.

Derivative operators act with the physical wavenumber and annihilate the
unpaired Nyquist modes of even-length axes, which keeps every output real.
Truncation, filtering and shell binning use the integer wavevector ``xi``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.fft as sfft

from .field_jet import MASKS, GridSpec, JetVectorField


def fft_workers() -> int:
    """Thread count for FFTs, capped by the ``CM_THREADS`` environment variable."""
    env = os.environ.get("CM_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def rfft3(a: np.ndarray) -> np.ndarray:
    """Forward transform over the last three axes, normalized to mode amplitudes."""
    return sfft.rfftn(a, axes=(-3, -2, -1), norm="forward", workers=fft_workers())


def irfft3(a: np.ndarray, dims) -> np.ndarray:
    """Inverse of :func:`rfft3` for real fields with spatial shape ``dims``."""
    return sfft.irfftn(a, s=tuple(dims), axes=(-3, -2, -1), norm="forward",
                       workers=fft_workers())


def integer_wavevectors(grid: GridSpec):
    """Broadcastable integer wavevector components ``(xi_x, xi_y, xi_z)``.

    The Nyquist entry of an even axis carries ``-N/2`` (``+N/2`` on the
    half-spectrum axis); its magnitude is what matters for truncation and
    filtering.
    """
    nx, ny, nz = grid.dims
    xi_x = sfft.fftfreq(nx, 1.0 / nx).reshape(-1, 1, 1)
    xi_y = sfft.fftfreq(ny, 1.0 / ny).reshape(1, -1, 1)
    xi_z = sfft.rfftfreq(nz, 1.0 / nz).reshape(1, 1, -1)
    return xi_x, xi_y, xi_z


def derivative_wavenumbers(grid: GridSpec):
    """Physical wavenumbers for differentiation, zero at Nyquist modes."""
    out = []
    for ax, xi in enumerate(integer_wavevectors(grid)):
        k = 2.0 * np.pi * xi / grid.lengths[ax]
        n = grid.dims[ax]
        if n % 2 == 0:
            k = np.where(np.abs(xi) == n // 2, 0.0, k)
        out.append(k)
    return out


def _half_weights(grid: GridSpec) -> np.ndarray:
    """Multiplicity of each half-spectrum column in the full spectrum."""
    nz = grid.dims[2]
    w = np.full(nz // 2 + 1, 2.0)
    w[0] = 1.0
    if nz % 2 == 0:
        w[-1] = 1.0
    return w.reshape(1, 1, -1)


@dataclass
class SpectralVectorField:
    """Fourier coefficients of a (multi-component) field on a periodic grid.

    Parameters
    ----------
    grid : GridSpec
    coeffs : ndarray of complex, shape (C, Nx, Ny, Nz // 2 + 1)
        Half-spectrum mode amplitudes per component.
    """

    grid: GridSpec
    coeffs: np.ndarray

    @property
    def n_components(self) -> int:
        return self.coeffs.shape[0]

    def copy(self) -> "SpectralVectorField":
        return SpectralVectorField(self.grid, self.coeffs.copy())

    def _new(self, coeffs) -> "SpectralVectorField":
        return SpectralVectorField(self.grid, coeffs)


def forward(phys: np.ndarray, grid: GridSpec) -> SpectralVectorField:
    """Transform a real field of shape ``(C, Nx, Ny, Nz)`` (or ``(Nx, Ny, Nz)``)."""
    arr = np.asarray(phys, dtype=float)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.shape[1:] != grid.dims:
        raise ValueError(f"array shape {arr.shape[1:]} does not match grid {grid.dims}")
    return SpectralVectorField(grid, rfft3(arr))


def inverse(f_hat: SpectralVectorField) -> np.ndarray:
    """Real physical-space field of shape ``(C, Nx, Ny, Nz)``."""
    return irfft3(f_hat.coeffs, f_hat.grid.dims)


def _cross(k, v):
    return np.stack([k[1] * v[2] - k[2] * v[1],
                     k[2] * v[0] - k[0] * v[2],
                     k[0] * v[1] - k[1] * v[0]])


def curl(f_hat: SpectralVectorField) -> SpectralVectorField:
    """``i k x f``."""
    k = derivative_wavenumbers(f_hat.grid)
    return f_hat._new(1j * _cross(k, f_hat.coeffs))


def divergence(f_hat: SpectralVectorField) -> np.ndarray:
    """``i k . f`` as a half-spectrum array of shape ``(Nx, Ny, Nz // 2 + 1)``."""
    k = derivative_wavenumbers(f_hat.grid)
    c = f_hat.coeffs
    return 1j * (k[0] * c[0] + k[1] * c[1] + k[2] * c[2])


def biot_savart(w_hat: SpectralVectorField) -> SpectralVectorField:
    """Velocity from vorticity, ``u = curl (-Laplacian)^-1 w``.

    In Fourier space ``u(xi) = i k x w(xi) / |k|^2`` and the mean mode is set
    to zero. Nyquist modes, where the derivative wavenumber vanishes, are
    dropped as well.
    """
    k = derivative_wavenumbers(w_hat.grid)
    k2 = k[0] ** 2 + k[1] ** 2 + k[2] ** 2
    inv = np.divide(1.0, k2, out=np.zeros_like(k2), where=k2 > 0)
    return w_hat._new(1j * _cross(k, w_hat.coeffs) * inv)


def leray_project(f_hat: SpectralVectorField) -> SpectralVectorField:
    """Remove the gradient part of a vector field, ``f - k (k . f) / |k|^2``."""
    k = derivative_wavenumbers(f_hat.grid)
    k2 = k[0] ** 2 + k[1] ** 2 + k[2] ** 2
    inv = np.divide(1.0, k2, out=np.zeros_like(k2), where=k2 > 0)
    c = f_hat.coeffs
    kd = (k[0] * c[0] + k[1] * c[1] + k[2] * c[2]) * inv
    return f_hat._new(np.stack([c[i] - k[i] * kd for i in range(3)]))


def wavevector_norm(grid: GridSpec) -> np.ndarray:
    """``|xi|`` on the half spectrum."""
    xi = integer_wavevectors(grid)
    return np.sqrt(xi[0] ** 2 + xi[1] ** 2 + xi[2] ** 2)


def truncate(f_hat: SpectralVectorField, radius: float) -> SpectralVectorField:
    """Zero every mode with ``|xi| > radius``."""
    if radius < 0:
        raise ValueError("truncation radius must be non-negative")
    keep = wavevector_norm(f_hat.grid) <= radius
    return f_hat._new(f_hat.coeffs * keep)


def quartic_filter_factor(grid: GridSpec, strength: float = 0.05) -> np.ndarray:
    """Filter multiplier ``exp(-strength (xi1^4 + xi2^4 + xi3^4))``."""
    xi = integer_wavevectors(grid)
    return np.exp(-strength * (xi[0] ** 4 + xi[1] ** 4 + xi[2] ** 4))


def quartic_filter(f_hat: SpectralVectorField, strength: float = 0.05) -> SpectralVectorField:
    """Apply the initial-condition smoothing filter to every mode."""
    return f_hat._new(f_hat.coeffs * quartic_filter_factor(f_hat.grid, strength))


def spectral_jets(f_hat: SpectralVectorField, masks=MASKS) -> JetVectorField:
    """Jets of a three-component field computed from its Fourier series.

    Masks not listed in ``masks`` are left as zeros.
    """
    if f_hat.n_components != 3:
        raise ValueError("spectral_jets needs a three-component field")
    grid = f_hat.grid
    k = derivative_wavenumbers(grid)
    data = np.zeros((*grid.dims, 3, 8))
    index = {m: i for i, m in enumerate(MASKS)}
    for m in masks:
        mult = 1.0 + 0.0j
        for ax in range(3):
            if m[ax]:
                mult = mult * (1j * k[ax])
        phys = irfft3(f_hat.coeffs * mult, grid.dims)
        data[..., index[tuple(m)]] = np.moveaxis(phys, 0, -1)
    return JetVectorField(grid, data)


def gradient(f_hat: SpectralVectorField) -> np.ndarray:
    """Physical-space gradient ``G[c, m] = d_m f^c``, shape ``(C, 3, Nx, Ny, Nz)``."""
    k = derivative_wavenumbers(f_hat.grid)
    return np.stack([irfft3(1j * k[m] * f_hat.coeffs, f_hat.grid.dims) for m in range(3)],
                    axis=1)


def isotropic_spectrum(f_hat: SpectralVectorField) -> np.ndarray:
    """Shell-binned spectrum ``S(k) = 1/2 sum_{|xi| in [k-1/2, k+1/2)} |f(xi)|^2``.

    Sums run over all components and over the full (Hermitian) spectrum.

    Returns
    -------
    ndarray
        ``S[k]`` for ``k = 0 .. k_max`` where ``k_max`` is the largest
        occupied shell.
    """
    grid = f_hat.grid
    shell = np.floor(wavevector_norm(grid) + 0.5).astype(np.int64)
    power = (np.abs(f_hat.coeffs) ** 2).sum(axis=0) * _half_weights(grid)
    shell_b = np.broadcast_to(shell, power.shape)
    return 0.5 * np.bincount(shell_b.ravel(), weights=power.ravel())


def l2_norm_sq(f_hat: SpectralVectorField) -> float:
    """Mean of ``|f|^2`` over the box by Parseval (multiply by volume for the integral)."""
    power = (np.abs(f_hat.coeffs) ** 2).sum(axis=0) * _half_weights(f_hat.grid)
    return float(power.sum())


def inner(f_hat: SpectralVectorField, g_hat: SpectralVectorField) -> float:
    """Mean of ``f . g`` over the box by Parseval."""
    prod = (np.conj(f_hat.coeffs) * g_hat.coeffs).real.sum(axis=0) * _half_weights(f_hat.grid)
    return float(prod.sum())


def write_spectrum(path: str | Path, spectrum: np.ndarray) -> None:
    """Write a two-column ``k  S(k)`` text file."""
    with open(path, "w") as fh:
        for k, s in enumerate(spectrum):
            fh.write(f"{k:d}  {s:.17g}\n")
