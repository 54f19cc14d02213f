"""Pseudo-spectral Monte Carlo for the O(N) linear sigma model on the 2-torus."""

from .grid import (
    CovarianceTable,
    Grid,
    GridError,
    RealField,
    SpectralField,
    chat,
    chat_sq,
    covariance_table,
    grad_norm_sq,
    make_grid,
    sobolev_norm_sq,
    spectral_product_coeffs,
    transform_forward,
    transform_inverse,
)
from .streams import Purpose, StreamKey, derive_stream
from .gff import OUState, Propagator, ou_step, propagator, sample_gff
from .wick import (
    WickTable,
    counterterm_drift,
    wick_constant,
    wick_cubic,
    wick_pair,
    wick_quartic,
    wick_table,
)
from .dynamics import (
    ComponentSystem,
    NumericalAbort,
    SimParams,
    Snapshot,
    drift_ddd,
    run_coupled_pair,
    simulate,
    step,
)
from .meanfield import MeanFieldEnsemble, estimate_mu, step_meanfield
from .observables import (
    ChaosObserver,
    DiagnosticsObserver,
    DiagnosticsRecord,
    H1GapObserver,
    SpectrumEstimate,
    accumulate_spectrum,
    chaos_metric,
    ds_residual,
    energy_diagnostics,
    free_spectrum_lattice,
    free_spectrum_theory,
    h1_gap,
    o1_field,
    o2_mean,
    theory_limit_spectrum,
    theory_o2_limit,
)

__version__ = "0.1.0"
