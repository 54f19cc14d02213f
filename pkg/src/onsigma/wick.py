"""Lattice Wick calculus: the renormalization constant and Wick products.

On the truncated grid the stationary linear field has finite pointwise
variance

    a = E[Z(x)^2] = (2pi)^{-2} sum_{k in Lambda*} Chat(k),

log-divergent as M grows.  Wick powers subtract the self-contractions
built from this exact mode sum (never a Monte Carlo estimate), so all
Wick products of stationary fields are centered by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import TWO_PI, Grid, RealField, _check_same_grid, covariance_table


def wick_constant(grid: Grid, mask=None) -> float:
    """a = (2pi)^{-2} sum_{k} Chat(k), optionally over a retained-mode mask."""
    chat = covariance_table(grid).chat
    if mask is not None:
        chat = chat * mask
    return float(chat.sum() / TWO_PI**2)


@dataclass(frozen=True)
class WickTable:
    """Renormalization constants for one grid (and optional dealias mask)."""

    grid: Grid
    a: float

    def counterterm(self, n_components: int) -> float:
        """Coefficient (N+2) a multiplying the mass counterterm."""
        return (n_components + 2) * self.a


def wick_table(grid: Grid, mask=None) -> WickTable:
    return WickTable(grid, wick_constant(grid, mask))


def _values(f):
    return f.values if isinstance(f, RealField) else f


def _wrap_like(f, values):
    return RealField(f.grid, values) if isinstance(f, RealField) else values


def _check_pair(zi, zj):
    if isinstance(zi, RealField) and isinstance(zj, RealField):
        _check_same_grid(zi, zj)


def wick_pair(zi, zj, same, a):
    """:Z_i Z_j: = Z_i^2 - a when i = j, else the plain pointwise product."""
    _check_pair(zi, zj)
    vi, vj = _values(zi), _values(zj)
    out = vi * vi - a if same else vi * vj
    return _wrap_like(zi, out)


def wick_cubic(zi, zj, same, a):
    """:Z_i Z_j^2: = Z^3 - 3 a Z when i = j, else Z_i Z_j^2 - a Z_i."""
    _check_pair(zi, zj)
    vi, vj = _values(zi), _values(zj)
    out = vi**3 - 3.0 * a * vi if same else vi * vj**2 - a * vi
    return _wrap_like(zi, out)


def wick_quartic(zi, zj, same, a):
    """:Z_i^2 Z_j^2: = Z^4 - 6 a Z^2 + 3 a^2 when i = j, else (Z_i^2-a)(Z_j^2-a)."""
    _check_pair(zi, zj)
    vi, vj = _values(zi), _values(zj)
    if same:
        sq = vi * vi
        out = sq * sq - 6.0 * a * sq + 3.0 * a * a
    else:
        out = (vi * vi - a) * (vj * vj - a)
    return _wrap_like(zi, out)


def counterterm_drift(phis, a, lam):
    """Direct-mode drift -(lam/N) (sum_j Phi_j^2 - (N+2) a) Phi_i for each i.

    Equals -(lam/N) sum_j :Phi_j^2 Phi_i: whenever Phi is Gaussian with
    pointwise variance a; as an algebraic identity it matches the
    Wick-expanded pair sum on arbitrary inputs.
    """
    arrs = [_values(p) for p in phis]
    stack = np.stack(arrs) if not isinstance(phis, np.ndarray) else phis
    n = stack.shape[0]
    factor = stack2_sum(stack) - (n + 2) * a
    out = -(lam / n) * factor * stack
    if isinstance(phis, np.ndarray):
        return out
    return [_wrap_like(p, o) for p, o in zip(phis, out)]


def stack2_sum(stack):
    """sum_j f_j^2 over the leading axis, accumulated in ascending order."""
    return np.add.reduce(stack * stack, axis=0)
