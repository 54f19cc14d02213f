"""Self-consistent ensemble solver for the mean-field SPDE.

The law-dependent drift coefficient

    mu(x) = E[X^2](x) + 2 E[X Z](x)

(the E[:Z^2:] contribution vanishes identically for stationary Z starts)
is approximated by the empirical mean over M_ens independent copies
(Z^(m), X^(m)).  Each Z copy follows the exact OU update; each X copy an
ETD1 step with drift -lam * mu * (X + Z), with mu refreshed once per step
before the drift evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gff import propagator, sample_gff, white_coeffs
from .grid import Grid, RealField
from .streams import Purpose, StackedNoise, StreamKey, derive_stream


def mu_from_stacks(x, z, ordered=False):
    """Plain-flavor mu = mean_m (x_m^2 + 2 x_m z_m) over the copy axis.

    With ordered=False the addends are sorted pointwise before summation,
    which makes the result independent of how the copies are permuted,
    bitwise.  The hot paths use ordered=True (ascending copy index).
    """
    terms = x * x + 2.0 * x * z
    if not ordered:
        terms = np.sort(terms, axis=0)
    return np.add.reduce(terms, axis=0) / terms.shape[0]


class MeanFieldEnsemble:
    """M_ens coupled copies (Z^(m), X^(m)) of spectral fields."""

    def __init__(self, grid: Grid, m_ens, lam=1.0, dt=1e-3, master_seed=0,
                 replica=0, flavor="plain", x_init_scale=0.0, noise_chunk=64):
        if m_ens < 1:
            raise ValueError("m_ens must be >= 1")
        if flavor not in ("plain", "leave-one-out"):
            raise ValueError(f"unknown estimator flavor {flavor!r}")
        if flavor == "leave-one-out" and m_ens < 2:
            raise ValueError("leave-one-out needs m_ens >= 2")
        self.grid = grid
        self.m_ens = int(m_ens)
        self.lam = float(lam)
        self.flavor = flavor
        self.t = 0.0
        self.prop = propagator(grid, dt)
        z_streams = [
            derive_stream(StreamKey(master_seed, i, replica, Purpose.Z_INIT))
            for i in range(self.m_ens)
        ]
        self.zhat = np.stack([sample_gff(grid, s).coeffs for s in z_streams])
        if x_init_scale != 0.0:
            x_streams = [
                derive_stream(StreamKey(master_seed, i, replica, Purpose.MEANFIELD))
                for i in range(self.m_ens)
            ]
            self.xhat = x_init_scale * np.stack(
                [sample_gff(grid, s).coeffs for s in x_streams]
            )
        else:
            self.xhat = np.zeros_like(self.zhat)
        self._noise = StackedNoise(
            [
                derive_stream(StreamKey(master_seed, i, replica, Purpose.Z_NOISE))
                for i in range(self.m_ens)
            ],
            (grid.M, grid.M),
            noise_chunk,
        )

    def real_stacks(self):
        return self.grid.to_real(self.xhat), self.grid.to_real(self.zhat)

    def x_l2_mean(self):
        """Copy-averaged ||X||_{L^2}^2, a Parseval sum over modes."""
        return float(np.sum(np.abs(self.xhat) ** 2) / (2 * np.pi) ** 2) / self.m_ens


def estimate_mu(ensemble: MeanFieldEnsemble, flavor=None):
    """Empirical drift field; 'plain' gives one RealField, 'leave-one-out' a stack.

    mu^(-m) excludes copy m and divides by M_ens - 1.
    """
    flavor = ensemble.flavor if flavor is None else flavor
    x, z = ensemble.real_stacks()
    if flavor == "plain":
        return RealField(ensemble.grid, mu_from_stacks(x, z))
    if flavor != "leave-one-out":
        raise ValueError(f"unknown estimator flavor {flavor!r}")
    if ensemble.m_ens < 2:
        raise ValueError("leave-one-out needs m_ens >= 2")
    terms = x * x + 2.0 * x * z
    total = np.add.reduce(terms, axis=0)
    return (total[None] - terms) / (ensemble.m_ens - 1)


def step_meanfield(ensemble: MeanFieldEnsemble, dt, refresh_prop=True):
    """One step: exact OU on Z, ETD1 with drift -lam * mu * (X + Z) on X."""
    if dt < 0:
        raise ValueError("dt must be >= 0")
    grid = ensemble.grid
    prop = ensemble.prop
    if prop.dt != dt:
        if not refresh_prop:
            raise ValueError("dt does not match the cached propagator")
        prop = propagator(grid, dt)
        ensemble.prop = prop
    x, z = ensemble.real_stacks()
    if ensemble.flavor == "plain":
        mu = mu_from_stacks(x, z, ordered=True)
    else:
        terms = x * x + 2.0 * x * z
        total = np.add.reduce(terms, axis=0)
        mu = (total[None] - terms) / max(ensemble.m_ens - 1, 1)
    fx = -ensemble.lam * mu * (x + z)
    ensemble.xhat = prop.decay * ensemble.xhat + prop.phi1 * grid.to_spectral(fx)
    w = ensemble._noise.next_block()
    ensemble.zhat = prop.decay * ensemble.zhat + prop.noise_std * white_coeffs(grid, w)
    if grid.project_zero_mode:
        grid.zero_the_mean(ensemble.xhat)
        grid.zero_the_mean(ensemble.zhat)
    ensemble.t += dt
    if not np.isfinite(ensemble.xhat).all():
        from .dynamics import NumericalAbort

        raise NumericalAbort(ensemble.t, float(np.max(np.abs(x))))
    return ensemble
