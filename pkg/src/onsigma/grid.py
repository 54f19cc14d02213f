"""Torus discretization, Fourier conventions, field containers and covariance algebra.

The domain is the 2-torus [0, 2pi)^2 sampled at the M x M collocation points
x_j = 2pi j / M.  Spectral fields live on the truncated mode set
Lambda* = {-M/2, ..., M/2 - 1}^2, stored in FFT layout (numpy ``fftfreq`` order).

Fourier convention (continuum):

    fhat(k) = int_{T^2} f(x) e^{-i k.x} dx,
    f(x)    = (2pi)^{-2} sum_k fhat(k) e^{i k.x}.

Discrete realization, with h = 2pi/M:

    fhat = h^2 * FFT2(f),          f = IFFT2(fhat) * M^2 / (2pi)^2,

so the round trip is exact and the discrete Parseval identity reads

    sum_x |f(x)|^2 h^2  =  (2pi)^{-2} sum_k |fhat(k)|^2,

both sides equal to the L^2(T^2) norm squared for band-limited f.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

TWO_PI = 2.0 * np.pi


class GridError(ValueError):
    """Invalid grid construction or mismatched grid operands."""


@dataclass(frozen=True)
class Grid:
    """Truncated Fourier grid with dispersion lambda_k = m + |k|^2.

    Attributes
    ----------
    M : even number of modes (and collocation points) per axis
    m : mass parameter, >= 0
    project_zero_mode : if True the k=0 mode is projected out after every
        update (required when m == 0, where lambda_0 vanishes)
    """

    M: int
    m: float
    project_zero_mode: bool = False

    def __post_init__(self):
        if self.M < 2 or self.M % 2 != 0:
            raise GridError(f"M must be even and >= 2, got {self.M}")
        if self.m < 0:
            raise GridError(f"mass m must be >= 0, got {self.m}")
        if self.m == 0 and not self.project_zero_mode:
            raise GridError("m == 0 requires project_zero_mode=True")
        k = np.fft.fftfreq(self.M, d=1.0 / self.M)  # integer modes, FFT layout
        kx, ky = np.meshgrid(k, k, indexing="ij")
        ksq = kx**2 + ky**2
        object.__setattr__(self, "kx", kx)
        object.__setattr__(self, "ky", ky)
        object.__setattr__(self, "ksq", ksq)
        object.__setattr__(self, "lam", self.m + ksq)
        object.__setattr__(self, "h", TWO_PI / self.M)
        for name in ("kx", "ky", "ksq", "lam"):
            getattr(self, name).setflags(write=False)

    # -- coordinates ------------------------------------------------------
    def x_coords(self):
        """Meshgrid (x1, x2) of the collocation points, 'ij' indexing."""
        x = TWO_PI * np.arange(self.M) / self.M
        return np.meshgrid(x, x, indexing="ij")

    def mode_index(self, k):
        """Array index of integer mode k = (k1, k2); raises if k not in Lambda*."""
        k1, k2 = int(k[0]), int(k[1])
        half = self.M // 2
        if not (-half <= k1 <= half - 1 and -half <= k2 <= half - 1):
            raise GridError(f"mode {k} outside Lambda* for M={self.M}")
        return (k1 % self.M, k2 % self.M)

    # -- transforms (batched over leading axes) ---------------------------
    def to_spectral(self, values):
        """Forward transform of real values (..., M, M) -> complex coeffs."""
        return np.fft.fft2(values) * self.h**2

    def to_real(self, coeffs):
        """Inverse transform; takes the real part (callers keep Hermitian symmetry)."""
        return np.fft.ifft2(coeffs).real * (self.M / TWO_PI) ** 2

    def lattice_kernel(self, chat):
        """Real-space kernel of a radial spectral table: (2pi)^{-2} sum chat(k) e^{ikx}."""
        return self.to_real(chat.astype(complex))

    def zero_the_mean(self, coeffs):
        """Project out the k=0 coefficient in place (..., M, M)."""
        coeffs[..., 0, 0] = 0.0
        return coeffs

    def key(self):
        return (self.M, self.m, self.project_zero_mode)


def make_grid(M, m, project_zero_mode=False):
    """Build a Grid; M must be even, and m > 0 unless the zero mode is projected."""
    return Grid(int(M), float(m), bool(project_zero_mode))


# -- field containers ------------------------------------------------------


def _check_same_grid(a, b):
    if a.grid.key() != b.grid.key():
        raise GridError("operands live on different grids")


@dataclass
class RealField:
    """Real values over the M x M collocation points."""

    grid: Grid
    values: np.ndarray

    def to_spectral(self):
        return SpectralField(self.grid, self.grid.to_spectral(self.values))

    def spatial_mean(self):
        return float(self.values.mean())


@dataclass
class SpectralField:
    """Complex coefficients over Lambda* (FFT layout), Hermitian-symmetric."""

    grid: Grid
    coeffs: np.ndarray

    def to_real(self):
        return RealField(self.grid, self.grid.to_real(self.coeffs))

    def hermitian_defect(self):
        """max |coeffs(-k) - conj(coeffs(k))| over the FFT index map."""
        c = self.coeffs
        flipped = np.conj(np.roll(np.flip(c, axis=(-2, -1)), 1, axis=(-2, -1)))
        return float(np.max(np.abs(c - flipped)))


def transform_forward(field: RealField) -> SpectralField:
    return field.to_spectral()


def transform_inverse(field: SpectralField) -> RealField:
    return field.to_real()


def _coeffs_of(field, grid=None):
    if isinstance(field, SpectralField):
        return field.coeffs, field.grid
    if isinstance(field, RealField):
        return field.grid.to_spectral(field.values), field.grid
    if grid is None:
        raise GridError("raw arrays need an explicit grid")
    if np.iscomplexobj(field):
        return field, grid
    return grid.to_spectral(field), grid


def sobolev_norm_sq(field, s, grid=None):
    """(2pi)^{-2} sum_k (1+|k|^2)^s |fhat(k)|^2; s=0 is the squared L^2 norm."""
    coeffs, g = _coeffs_of(field, grid)
    w = (1.0 + g.ksq) ** s if s != 0 else 1.0
    return float(np.sum(w * np.abs(coeffs) ** 2) / TWO_PI**2)


def grad_norm_sq(field, grid=None):
    """(2pi)^{-2} sum_k |k|^2 |fhat(k)|^2 = || grad f ||_{L^2}^2."""
    coeffs, g = _coeffs_of(field, grid)
    return float(np.sum(g.ksq * np.abs(coeffs) ** 2) / TWO_PI**2)


# -- covariance algebra ----------------------------------------------------


@dataclass(frozen=True)
class CovarianceTable:
    """Per-mode tables Chat(k) = 1/(2(m+|k|^2)) and (C^2)^(k) on Lambda*.

    With zero-mode projection, Chat(0) is set to 0 (that mode carries no noise).
    (C^2)^ is the exact Fourier coefficient table of the square of the
    Galerkin-truncated kernel C, i.e. the truncated convolution
    (2pi)^{-2} sum_{k1, k-k1 in Lambda*} Chat(k1) Chat(k-k1).
    """

    grid: Grid
    chat: np.ndarray
    chat_sq: np.ndarray

    def amplitude(self):
        """Per-mode noise amplitude sqrt((2pi)^2 Chat(k)) of the stationary field."""
        return np.sqrt(TWO_PI**2 * self.chat)


@lru_cache(maxsize=32)
def _covariance_table_cached(grid_key):
    grid = Grid(*grid_key)
    lam = grid.lam.copy()
    if grid.project_zero_mode:
        chat = np.zeros_like(lam)
        nz = lam > 0
        chat[nz] = 1.0 / (2.0 * lam[nz])
    else:
        chat = 1.0 / (2.0 * lam)
    csq = spectral_product_coeffs(grid, chat, chat)
    chat.setflags(write=False)
    csq.setflags(write=False)
    return CovarianceTable(grid, chat, csq)


def covariance_table(grid: Grid) -> CovarianceTable:
    return _covariance_table_cached(grid.key())


def chat(grid: Grid, k) -> float:
    """Covariance coefficient Chat(k) = 1/(2(m+|k|^2)) for k in Lambda*."""
    i, j = grid.mode_index(k)
    return float(covariance_table(grid).chat[i, j])


def chat_sq(grid: Grid):
    """Fourier coefficient table of C^2 over Lambda* (see CovarianceTable)."""
    return covariance_table(grid).chat_sq


def spectral_product_coeffs(grid: Grid, ahat, bhat):
    """Fourier coefficients, restricted to Lambda*, of the product a(x) b(x).

    a and b are given by coefficient tables on Lambda*.  Equals the truncated
    convolution (2pi)^{-2} sum_{k1 in Lambda*, k-k1 in Lambda*} ahat(k1) bhat(k-k1),
    symmetrized over k -> -k.  The product is formed on a 2M-point grid, so no
    pair wraps around; the symmetrization repairs the k/-k imbalance in which
    pairs the asymmetric mode set (no +M/2 partner for -M/2) drops, matching
    the exact symmetry of periodogram estimates.
    """
    M = grid.M
    big = 2 * M
    pa = _embed(ahat, M, big)
    pb = _embed(bhat, M, big) if bhat is not ahat else pa
    # complex interpolants on the fine grid: unpaired Nyquist modes make them
    # complex-valued, and FFT(product) = convolution holds regardless
    fa = np.fft.ifft2(pa) * (big / TWO_PI) ** 2
    fb = fa if pb is pa else np.fft.ifft2(pb) * (big / TWO_PI) ** 2
    phat = np.fft.fft2(fa * fb) * (TWO_PI / big) ** 2
    out = _extract(phat, M, big).real
    return 0.5 * (out + reflect_modes(out))


def reflect_modes(table):
    """table at -k (lattice reflection index map; Nyquist rows map to themselves)."""
    return np.roll(np.flip(table, axis=(-2, -1)), 1, axis=(-2, -1))


def _embed(table, M, big):
    out = np.zeros((big, big), dtype=complex)
    half = M // 2
    src = np.fft.fftshift(table)  # rows/cols ordered -M/2 .. M/2-1
    idx = (np.arange(-half, half)) % big
    out[np.ix_(idx, idx)] = src
    return out


def _extract(table, M, big):
    half = M // 2
    idx = (np.arange(-half, half)) % big
    shifted = table[np.ix_(idx, idx)]
    return np.fft.ifftshift(shifted)
