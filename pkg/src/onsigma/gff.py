"""Gaussian free field sampling and the exact Ornstein-Uhlenbeck update.

The stationary linear field has independent mode coefficients with
E|Zhat(k)|^2 = (2pi)^2 Chat(k), realized by filtering real white noise:
FFT2 of an M x M block of iid N(0,1) variates has exactly Hermitian
symmetry and per-mode second moment M^2, so scaling by
sqrt((2pi)^2 Chat(k)) / M gives the stationary law for every mode,
self-conjugate (Nyquist/zero) modes included.

The per-mode OU update is exact in law for any dt:

    Zhat'(k) = e^{-lambda_k dt} Zhat(k) + eta_k,
    E|eta_k|^2 = (2pi)^2 Chat(k) (1 - e^{-2 lambda_k dt}).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .grid import TWO_PI, Grid, SpectralField, covariance_table


@dataclass(frozen=True)
class Propagator:
    """Cached per-mode tables for one step size dt."""

    grid: Grid
    dt: float
    decay: np.ndarray      # e^{-lambda_k dt}
    noise_std: np.ndarray  # sqrt((2pi)^2 Chat (1 - decay^2))
    phi1: np.ndarray       # (1 - decay) / lambda_k  (ETD1 weight; -> dt as lambda -> 0)


@lru_cache(maxsize=64)
def _propagator_cached(grid_key, dt):
    grid = Grid(*grid_key)
    cov = covariance_table(grid)
    lam = grid.lam
    decay = np.exp(-lam * dt)
    noise_std = np.sqrt(TWO_PI**2 * cov.chat * (1.0 - decay**2))
    phi1 = np.where(lam > 0, -np.expm1(-lam * dt) / np.where(lam > 0, lam, 1.0), dt)
    if grid.project_zero_mode:
        noise_std = noise_std.copy()
        noise_std[0, 0] = 0.0
    for arr in (decay, noise_std, phi1):
        arr.setflags(write=False)
    return Propagator(grid, dt, decay, noise_std, phi1)


def propagator(grid: Grid, dt: float) -> Propagator:
    if dt < 0:
        raise ValueError(f"dt must be >= 0, got {dt}")
    return _propagator_cached(grid.key(), float(dt))


def white_coeffs(grid: Grid, normals):
    """Hermitian white noise: FFT2(normals)/M with E|.|^2 = 1 per mode."""
    return np.fft.fft2(normals) / grid.M


def sample_gff(grid: Grid, stream) -> SpectralField:
    """One stationary draw with covariance operator (1/2)(m - Lap)^{-1} on Lambda*."""
    cov = covariance_table(grid)
    w = stream.standard_normal((grid.M, grid.M))
    coeffs = cov.amplitude() * white_coeffs(grid, w)
    if grid.project_zero_mode:
        coeffs[0, 0] = 0.0
    return SpectralField(grid, coeffs)


def ou_update(coeffs, prop: Propagator, normals):
    """Exact OU step on raw coefficients (..., M, M); normals has the same shape."""
    out = prop.decay * coeffs + prop.noise_std * white_coeffs(prop.grid, normals)
    if prop.grid.project_zero_mode:
        out[..., 0, 0] = 0.0
    return out


@dataclass
class OUState:
    """Spectral field plus time, advanced by the exact OU law."""

    field: SpectralField
    t: float
    prop: Propagator | None = None


def ou_step(state: OUState, dt: float, stream) -> OUState:
    """Advance by dt; dt = 0 is the identity. Preserves stationarity exactly in law."""
    grid = state.field.grid
    prop = state.prop if state.prop is not None and state.prop.dt == dt else propagator(grid, dt)
    w = stream.standard_normal((grid.M, grid.M))
    coeffs = ou_update(state.field.coeffs, prop, w)
    return OUState(SpectralField(grid, coeffs), state.t + dt, prop)
