"""Rotation-invariant Wick observables, spectrum estimation and diagnostics.

The quadratic observable is the pointwise field

    O1 = N^{-1/2} sum_i (Y_i^2 + 2 Y_i Z_i + (Z_i^2 - a)) = N^{-1/2} (sum_i Phi_i^2 - N a),

whose two-point correlation is estimated per snapshot by the periodogram
|O1hat(k)|^2 / (2pi)^2 (translation invariance makes E|O1hat(k)|^2 equal
(2pi)^2 Ghat(k) under the package Fourier convention).

The quartic observable per snapshot is the spatial average of

    (1/N) (W^2 - 4 a W - 2 N a^2),       W = sum_i Phi_i^2 - N a,

which expands the six Wick-product term families with shared aggregates in
O(N M^2) (the literal pair-sum expansion is kept in the test suite as the
oracle).

When the run carries the linear field Z alongside Phi, both estimators
also accumulate the difference against the same functional of Z alone.
The Z functionals have exactly known means on the grid, so
"exact + averaged difference" is an unbiased estimator with the dominant
Gaussian fluctuations subtracted; error bars shrink by roughly sqrt(N).
Raw and difference-based estimates are both kept.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import (
    TWO_PI,
    Grid,
    RealField,
    SpectralField,
    covariance_table,
    spectral_product_coeffs,
)
from .stats import BatchMeans


# -- observable fields -----------------------------------------------------


def _stack(fields, grid=None):
    if isinstance(fields, np.ndarray):
        return fields, grid
    arrs = [f.values if isinstance(f, RealField) else f for f in fields]
    g = grid
    for f in fields:
        if isinstance(f, RealField):
            if g is not None and f.grid.key() != g.key():
                raise ValueError("fields live on different grids")
            g = f.grid
    return np.stack(arrs), g


def o1_stack(y, z, a):
    """O1 as an (M, M) array from stacked (N, M, M) inputs."""
    n = y.shape[0]
    phi = y + z
    w = np.add.reduce(phi * phi, axis=0) - n * a
    return w / np.sqrt(n)


def o1_field(y_fields, z_fields, a, grid=None) -> RealField:
    """Pointwise N^{-1/2} sum_i (Y_i^2 + 2 Y_i Z_i + :Z_i^2:)."""
    y, g = _stack(y_fields, grid)
    z, g = _stack(z_fields, g)
    if y.shape != z.shape:
        raise ValueError("Y and Z component counts differ")
    return RealField(g, o1_stack(y, z, a))


def o2_spatial(phi_stack, a):
    """Spatial average of (1/N)(W^2 - 4 a W - 2 N a^2), W = sum phi_i^2 - N a."""
    n = phi_stack.shape[0]
    w = np.add.reduce(phi_stack * phi_stack, axis=0) - n * a
    vals = w * w - 4.0 * a * w - 2.0 * n * a * a
    return float(vals.mean()) / n


def o2_mean(y_fields, z_fields, a, grid=None) -> float:
    """Spatial average of the quartic invariant observable (1/N) :(sum Phi^2)^2:."""
    y, g = _stack(y_fields, grid)
    z, _ = _stack(z_fields, g)
    return o2_spatial(y + z, a)


def energy_diagnostics(y_hat_stack, grid: Grid):
    """The three coercive aggregates of the remainder, from spectral Y.

    Returns ((1/N) sum ||Y_j||_{L2}^2, (1/N) sum ||grad Y_j||_{L2}^2,
    || (1/N) sum Y_j^2 ||_{L2}^2).
    """
    n = y_hat_stack.shape[0]
    sq = np.abs(y_hat_stack) ** 2
    e1 = float(sq.sum()) / TWO_PI**2 / n
    e2 = float((grid.ksq * sq).sum()) / TWO_PI**2 / n
    y = grid.to_real(y_hat_stack)
    s = np.add.reduce(y * y, axis=0) / n
    e3 = float((s * s).sum()) * grid.h**2
    return e1, e2, e3


# -- theory tables ---------------------------------------------------------


def free_spectrum_theory(grid: Grid):
    """2 (C^2)^(k): the baseline spectrum of the quadratic observable at lam=0."""
    return 2.0 * covariance_table(grid).chat_sq


def free_spectrum_lattice(grid: Grid):
    """Exact lattice expectation of the lam=0 periodogram, aliasing included.

    This is the discrete transform of 2 C_d(x)^2 with C_d the truncated
    covariance kernel sampled on the grid; it differs from
    free_spectrum_theory by folded-back modes of C^2 beyond Lambda*.
    """
    cov = covariance_table(grid)
    kernel = grid.lattice_kernel(cov.chat)
    return grid.to_spectral(2.0 * kernel**2).real


def theory_limit_spectrum(grid: Grid):
    """Large-N spectrum 2 q / (1 + 2 q) with q = (C^2)^(k); below the free curve."""
    q = covariance_table(grid).chat_sq
    return 2.0 * q / (1.0 + 2.0 * q)


def theory_o2_limit(grid: Grid) -> float:
    """Large-N mean of the quartic observable.

    Equals -(2pi)^{-2} sum_k 4 q(k)^2/(1+2q(k)); the (2pi)^{-2} evaluates the
    correlation kernel with coefficients -4q^2/(1+2q) at x = 0, matching the
    convention in which the free spectrum is 2q.  Always <= 0.
    """
    q = covariance_table(grid).chat_sq
    return float(-4.0 * np.sum(q * q / (1.0 + 2.0 * q)) / TWO_PI**2)


# -- spectrum estimation ---------------------------------------------------


class SpectrumEstimate:
    """Per-mode accumulators for the observable spectrum and the component spectrum.

    Ghat(k) accumulates |O1hat(k)|^2/(2pi)^2; ChatN(k) accumulates the
    component average of |Phihat_i(k)|^2/(2pi)^2.  Snapshots carrying Z
    also feed difference accumulators against the same functionals of Z
    (see module docstring).  Error bars are batch means; batch_size counts
    snapshots per batch.
    """

    def __init__(self, grid: Grid, n_components, lam, batch_size=1):
        self.grid = grid
        self.N = int(n_components)
        self.lam = float(lam)
        self.count = 0
        self._g_raw = BatchMeans(batch_size)
        self._c_raw = BatchMeans(batch_size)
        self._g_diff = BatchMeans(batch_size)
        self._c_diff = BatchMeans(batch_size)
        self.has_diff = False

    # low-level entry point
    def add_o1_periodogram(self, o1_hat):
        self._g_raw.add(np.abs(o1_hat) ** 2 / TWO_PI**2)
        self.count += 1

    def add_snapshot(self, snap):
        a = snap.a
        if snap.mode == "ddd":
            o1 = o1_stack(snap.y_real, snap.z_real, a)
            o1_hat = self.grid.to_spectral(o1)
            pg = np.abs(o1_hat) ** 2 / TWO_PI**2
            o1z = o1_stack(np.zeros_like(snap.y_real), snap.z_real, a)
            pg_z = np.abs(self.grid.to_spectral(o1z)) ** 2 / TWO_PI**2
            self._g_raw.add(pg)
            self._g_diff.add(pg - pg_z)
            comp = np.add.reduce(np.abs(snap.phi_hat) ** 2, axis=0) / self.N / TWO_PI**2
            comp_z = np.add.reduce(np.abs(snap.zhat) ** 2, axis=0) / self.N / TWO_PI**2
            self._c_raw.add(comp)
            self._c_diff.add(comp - comp_z)
            self.has_diff = True
        else:
            phi = snap.phi_real
            n = phi.shape[0]
            w = np.add.reduce(phi * phi, axis=0) - n * a
            o1_hat = self.grid.to_spectral(w / np.sqrt(n))
            self._g_raw.add(np.abs(o1_hat) ** 2 / TWO_PI**2)
            comp = np.add.reduce(np.abs(snap.phi_hat) ** 2, axis=0) / n / TWO_PI**2
            self._c_raw.add(comp)
        self.count += 1

    __call__ = add_snapshot

    def _kind(self, kind):
        if kind == "auto":
            return "diff" if self.has_diff else "raw"
        return kind

    def ghat(self, kind="auto"):
        if self._kind(kind) == "diff":
            return free_spectrum_lattice(self.grid) + self._g_diff.mean()
        return self._g_raw.mean()

    def ghat_stderr(self, kind="auto"):
        acc = self._g_diff if self._kind(kind) == "diff" else self._g_raw
        return acc.stderr()

    def chat_n(self, kind="auto"):
        if self.count == 0:
            raise ValueError("no component-spectrum data accumulated")
        if self._kind(kind) == "diff":
            return covariance_table(self.grid).chat + self._c_diff.mean()
        return self._c_raw.mean()

    def chat_n_stderr(self, kind="auto"):
        acc = self._c_diff if self._kind(kind) == "diff" else self._c_raw
        return acc.stderr()


def accumulate_spectrum(o1_snapshot: SpectralField, estimate: SpectrumEstimate):
    """Add one |O1hat(k)|^2/(2pi)^2 periodogram to the Ghat accumulator."""
    if o1_snapshot.grid.key() != estimate.grid.key():
        raise ValueError("snapshot grid does not match the estimate grid")
    estimate.add_o1_periodogram(o1_snapshot.coeffs)
    return estimate


def ds_residual(estimate, n_components=None, kind="auto", convolution="truncated"):
    """Residual of the integration-by-parts spectral identity, per mode.

    residual(k) = (1/2 + ((N+2)/N) q(k)) Ghat_N(k) - (C C_N)^(k).

    convolution="truncated" uses the no-alias pair-dropped tables (q is the
    (C^2)^ table, (C C_N)^ the truncated convolution).  convolution="lattice"
    instead forms both as transforms of pointwise kernel products on the
    grid, which is the exact identity satisfied by the simulated measure
    (fold-back included); with it the residual estimates the N^{-1/2}
    correction term with no aliasing floor.
    """
    if isinstance(estimate, SpectrumEstimate):
        grid = estimate.grid
        n = estimate.N if n_components is None else n_components
        ghat = estimate.ghat(kind)
        chat_n = estimate.chat_n(kind)
    else:
        ghat, chat_n, grid = estimate
        if n_components is None:
            raise ValueError("n_components required with raw tables")
        n = n_components
    return ds_residual_tables(ghat, chat_n, grid, n, convolution)


def ds_residual_tables(ghat, chat_n, grid: Grid, n_components, convolution="truncated"):
    cov = covariance_table(grid)
    chat_n = np.asarray(chat_n, dtype=float)
    if convolution == "truncated":
        q = cov.chat_sq
        cc_n = spectral_product_coeffs(grid, cov.chat, chat_n)
    elif convolution == "lattice":
        c_kernel = grid.lattice_kernel(cov.chat)
        q = grid.to_spectral(c_kernel**2).real
        cc_n = grid.to_spectral(c_kernel * grid.lattice_kernel(chat_n)).real
    else:
        raise ValueError(f"unknown convolution {convolution!r}")
    return (0.5 + (n_components + 2) / n_components * q) * ghat - cc_n


# -- shells ------------------------------------------------------------------


def shell_index(grid: Grid, n_shells):
    """The n_shells smallest |k|^2 values and boolean masks for each."""
    values = np.unique(grid.ksq)[:n_shells]
    masks = [grid.ksq == v for v in values]
    return values, masks


def shell_average(table, masks):
    return np.array([float(np.mean(table[m])) for m in masks])


# -- scalar series over a run ------------------------------------------------


def h1_gap(n_components, series, batch_size=1):
    """Stationary estimate of E||Y_i||_{H^1}^2 from the component-averaged series.

    Returns (N, mean, stderr); the series holds (1/N) sum_j ||Y_j||_{H^1}^2
    per snapshot, so exchangeability makes its time average an estimator of
    the per-component expectation.
    """
    series = np.asarray(series, dtype=float)
    if series.size == 0:
        raise ValueError("empty sample set")
    acc = BatchMeans(batch_size)
    for v in series:
        acc.add(v)
    return n_components, float(acc.mean()), float(acc.stderr())


def chaos_metric(projections, kind="square"):
    """Pooled cross-component correlation of smeared fields over a run.

    ``projections`` is (T, N) with rows <Phi_i, phi>.  kind="square"
    correlates the squared projections, the smallest statistic even under
    single-component sign flips (whose linear correlation vanishes
    identically by symmetry); kind="linear" correlates the projections
    themselves.  Pooling over all ordered pairs uses exchangeability:
    rho = [Var(sum_i v_i) - sum_i Var(v_i)] / [(N-1) sum_i Var(v_i)].
    """
    a = np.asarray(projections, dtype=float)
    if a.ndim != 2 or a.shape[1] < 2:
        raise ValueError("need a (T, N) series with N >= 2")
    if a.shape[0] < 4:
        raise ValueError("need at least 4 samples")
    v = a * a if kind == "square" else a
    v = v - v.mean(axis=0, keepdims=True)
    total_var = float(np.var(v.sum(axis=1), ddof=1))
    comp_var = float(np.sum(np.var(v, axis=0, ddof=1)))
    if comp_var == 0:
        raise ValueError("degenerate projections (zero variance)")
    n = a.shape[1]
    return (total_var - comp_var) / ((n - 1) * comp_var)


def project_components(phi_real_stack, phi_vals, h):
    """<Phi_i, phi> for each component by grid quadrature."""
    return np.tensordot(phi_real_stack, phi_vals, axes=([-2, -1], [0, 1])) * h**2


# -- observers ----------------------------------------------------------------


@dataclass
class DiagnosticsRecord:
    """Time series of the energy aggregates and the quartic running means."""

    t: list = field(default_factory=list)
    e_l2: list = field(default_factory=list)
    e_grad: list = field(default_factory=list)
    e_sumsq: list = field(default_factory=list)
    o2_raw: list = field(default_factory=list)
    o2_diff: list = field(default_factory=list)
    o2_running: list = field(default_factory=list)

    def o2_running_mean(self, use_diff=True):
        vals = self.o2_diff if (use_diff and self.o2_diff) else self.o2_raw
        return float(np.mean(vals))


class DiagnosticsObserver:
    """Records energy diagnostics and quartic observable traces per snapshot."""

    def __init__(self, grid: Grid):
        self.grid = grid
        self.record = DiagnosticsRecord()
        self._o2_sum = 0.0

    def __call__(self, snap):
        rec = self.record
        rec.t.append(snap.t)
        if snap.mode == "ddd":
            e = energy_diagnostics(snap.yhat, self.grid)
            raw = o2_spatial(snap.y_real + snap.z_real, snap.a)
            free = o2_spatial(snap.z_real, snap.a)
            rec.o2_diff.append(raw - free)
        else:
            e = (np.nan, np.nan, np.nan)
            raw = o2_spatial(snap.phi_real, snap.a)
        rec.e_l2.append(e[0])
        rec.e_grad.append(e[1])
        rec.e_sumsq.append(e[2])
        rec.o2_raw.append(raw)
        use = rec.o2_diff[-1] if rec.o2_diff else raw
        self._o2_sum += use
        rec.o2_running.append(self._o2_sum / len(rec.o2_raw))


class H1GapObserver:
    """Accumulates (1/N) sum_j ||Y_j||_{H^1}^2 per snapshot (ddd runs)."""

    def __init__(self, grid: Grid):
        self.grid = grid
        self.series = []

    def __call__(self, snap):
        sq = np.abs(snap.yhat) ** 2
        val = float(((1.0 + self.grid.ksq) * sq).sum()) / TWO_PI**2 / snap.N
        self.series.append(val)


class ChaosObserver:
    """Records <Phi_i, phi> rows; phi must not be identically zero."""

    def __init__(self, grid: Grid, phi: RealField):
        vals = phi.values if isinstance(phi, RealField) else np.asarray(phi)
        if not np.any(vals):
            raise ValueError("degenerate test function (phi == 0)")
        self.grid = grid
        self.phi_vals = vals
        self.rows = []

    def __call__(self, snap):
        self.rows.append(project_components(snap.phi_real, self.phi_vals, self.grid.h))

    def projections(self):
        return np.stack(self.rows)
