"""Experiment dispatch, sweeps, persistence and reproducibility metadata.

Each experiment kind maps a RunConfig onto simulations and emits CSV files
plus a ``metadata.json`` carrying the resolved config, versions, timings,
stability flags and a sha256 manifest of every emitted file.  Sweeps run
their independent units on a thread pool; units never share mutable state
and results merge in index order, so all numeric outputs are byte-identical
for a fixed (config, seed) regardless of the thread count.
"""

from __future__ import annotations

import os
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig
from .dynamics import NumericalAbort, SimParams, run_coupled_pair, simulate
from .gff import propagator
from .grid import TWO_PI, Grid, RealField, covariance_table, make_grid
from .io import fmt, sha256_file, write_csv, write_metadata, write_snapshot
from .meanfield import MeanFieldEnsemble, step_meanfield
from .observables import (
    ChaosObserver,
    DiagnosticsObserver,
    H1GapObserver,
    SpectrumEstimate,
    chaos_metric,
    ds_residual,
    free_spectrum_theory,
    h1_gap,
    shell_average,
    shell_index,
    theory_limit_spectrum,
    theory_o2_limit,
)
from .stats import BatchMeans, fit_exp_rate, fit_loglog_slope
from .streams import STREAM_SCHEME_VERSION


def default_out_dir():
    return os.environ.get("ONSIGMA_OUT", "runs")


class RunAborted(RuntimeError):
    """Numerical abort surfaced after the abort record was written."""

    def __init__(self, cause: NumericalAbort, out_dir):
        super().__init__(str(cause))
        self.cause = cause
        self.out_dir = out_dir


def run(cfg: RunConfig, out_dir=None):
    """Dispatch an experiment; returns the metadata record as a dict."""
    t0 = time.perf_counter()
    out = Path(out_dir or cfg.out or default_out_dir())
    out.mkdir(parents=True, exist_ok=True)
    resolved = cfg.resolved()
    chash = cfg.sha256()
    record = {
        "config": resolved,
        "config_sha256": chash,
        "experiment": cfg.experiment,
        "versions": {
            "onsigma": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
            "stream_scheme": STREAM_SCHEME_VERSION,
        },
        "stable": True,
        "timings": {},
        "files": {},
    }
    fn = _EXPERIMENTS[cfg.experiment]
    try:
        files, extra = fn(cfg, out, chash)
    except NumericalAbort as e:
        record["stable"] = False
        record["abort"] = {"t": e.t, "max_abs": e.max_abs, "error": str(e)}
        record["timings"]["wall"] = time.perf_counter() - t0
        record["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%S")
        write_metadata(out / "metadata.json", record)
        raise RunAborted(e, out) from e
    record.update(extra)
    record["timings"]["wall"] = time.perf_counter() - t0
    record["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%S")
    record["files"] = {str(p.relative_to(out)): sha256_file(p) for p in files}
    write_metadata(out / "metadata.json", record)
    return record


def _grid_of(cfg: RunConfig) -> Grid:
    g = cfg.grid
    return make_grid(g.M, g.m, g.project_zero_mode)


def _params(cfg: RunConfig, n, replica=0, lam=None, mode=None, t_sample=None) -> SimParams:
    d = cfg.resolved()["dynamics"]
    return SimParams(
        grid=_grid_of(cfg),
        N=int(n),
        lam=d["lam"] if lam is None else lam,
        dt=d["dt"],
        t_burn=d["t_burn"],
        t_sample=d["t_sample"] if t_sample is None else t_sample,
        mode=d["mode"] if mode is None else mode,
        dealias=d["dealias"],
        master_seed=cfg.seed,
        thin=d["thin"],
        replica=replica,
    )


def _batch_snapshots(cfg: RunConfig):
    """Snapshots per error-bar batch: at least 5/m time units of data."""
    d = cfg.resolved()["dynamics"]
    m = cfg.grid.m
    span = 5.0 / m if m > 0 else 5.0
    return max(2, int(round(span / d["thin"])))


def _pmap(threads, fn, units):
    """Deterministic ordered map over independent units."""
    if threads <= 1 or len(units) <= 1:
        return [fn(u) for u in units]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, units))


# -- experiments -------------------------------------------------------------


def _exp_gff_check(cfg, out, chash):
    grid = _grid_of(cfg)
    cov = covariance_table(grid)
    n = cfg.n_list()[0]
    params = _params(cfg, n, lam=0.0, mode="ddd")
    acc = BatchMeans(_batch_snapshots(cfg))

    def observe(snap):
        acc.add(np.add.reduce(np.abs(snap.zhat) ** 2, axis=0) / snap.N / TWO_PI**2)

    rec = simulate(params, observers=[observe])
    mean, se = acc.mean(), acc.stderr()
    rows = []
    worst = 0.0
    for i in range(grid.M):
        for j in range(grid.M):
            dev = abs(mean[i, j] - cov.chat[i, j]) / se[i, j] if se[i, j] > 0 else np.inf
            worst = max(worst, dev)
            rows.append(
                (grid.kx[i, j], grid.ky[i, j], grid.ksq[i, j],
                 mean[i, j], se[i, j], cov.chat[i, j])
            )
    rows.sort(key=lambda r: (r[2], r[0], r[1]))
    path = write_csv(
        out / "gff_variance.csv",
        ("kx", "ky", "ksq", "chat_measured", "chat_stderr", "chat_theory"),
        rows, chash,
    )
    extra = {
        "samples": acc.count,
        "batches": acc.n_batches,
        "worst_deviation_sigma": worst,
        "run": vars(rec),
    }
    return [path], extra


def _spectrum_columns(grid, est, kind):
    cov = covariance_table(grid)
    ghat, se = est.ghat(kind), est.ghat_stderr(kind)
    chat_n = est.chat_n(kind)
    free, limit = free_spectrum_theory(grid), theory_limit_spectrum(grid)
    rows = []
    for i in range(grid.M):
        for j in range(grid.M):
            rows.append(
                (grid.kx[i, j], grid.ky[i, j], grid.ksq[i, j],
                 ghat[i, j], se[i, j], chat_n[i, j], free[i, j], limit[i, j])
            )
    rows.sort(key=lambda r: (r[2], r[0], r[1]))
    return rows


SPECTRUM_HEADER = ("kx", "ky", "ksq", "ghat", "ghat_stderr", "chat_n",
                   "theory_free", "theory_limit")


def _run_spectrum_unit(cfg, n, replica=0, with_snapshots=None, out=None):
    grid = _grid_of(cfg)
    params = _params(cfg, n, replica=replica)
    est = SpectrumEstimate(grid, n, params.lam, batch_size=_batch_snapshots(cfg))
    diag = DiagnosticsObserver(grid)
    observers = [est, diag]
    snap_files = []
    if with_snapshots and cfg.snapshots.enabled:
        sdir = Path(out) / "snapshots"
        sdir.mkdir(exist_ok=True)
        every = max(1, int(round(cfg.snapshots.interval / params.thin)))
        counter = [0]

        def snapper(snap):
            if counter[0] % every == 0:
                p = sdir / f"fields_{counter[0]:06d}.bin"
                write_snapshot(p, snap.phi_real, grid.M, snap.N, grid.m,
                               params.lam, snap.t)
                snap_files.append(p)
            counter[0] += 1

        observers.append(snapper)
    rec = simulate(params, observers=observers)
    return est, diag, rec, snap_files


def _exp_spectrum(cfg, out, chash):
    n = cfg.n_list()[0]
    est, diag, rec, snap_files = _run_spectrum_unit(
        cfg, n, with_snapshots=True, out=out
    )
    kind = "diff" if est.has_diff else "raw"
    files = [
        write_csv(out / "spectrum.csv", SPECTRUM_HEADER,
                  _spectrum_columns(est.grid, est, kind), chash)
    ]
    r = diag.record
    diag_rows = list(zip(r.t, r.e_l2, r.e_grad, r.e_sumsq, r.o2_running))
    files.append(
        write_csv(out / "diagnostics.csv",
                  ("t", "e_l2", "e_grad", "e_sumsq", "o2_running_mean"),
                  diag_rows, chash)
    )
    files.extend(snap_files)
    grid = est.grid
    o2_raw = np.array(r.o2_raw)
    bs = _batch_snapshots(cfg)
    nb = max(1, len(o2_raw) // bs)
    extra = {
        "estimator": kind,
        "o2": {
            "running_mean": r.o2_running[-1] if r.o2_running else None,
            "raw_mean": float(o2_raw.mean()),
            "stderr": float(
                o2_raw[: nb * bs].reshape(nb, -1).mean(axis=1).std(ddof=1)
                / np.sqrt(nb)
            ) if nb > 1 else None,
            "theory_limit": theory_o2_limit(grid),
        },
        "run": vars(rec),
    }
    if r.o2_diff:
        o2d = np.array(r.o2_diff)
        extra["o2"]["diff_mean"] = float(o2d.mean())
        extra["o2"]["diff_stderr"] = float(
            o2d[: nb * bs].reshape(nb, -1).mean(axis=1).std(ddof=1) / np.sqrt(nb)
        ) if nb > 1 else None
    return files, extra


def _exp_simulate(cfg, out, chash):
    files, extra = _exp_spectrum(cfg, out, chash)
    # stability flags: running max of each energy series vs its value at t=5
    from .io import read_csv

    _, table, _ = read_csv(out / "diagnostics.csv")
    flags = {}
    t = table["t"]
    for col in ("e_l2", "e_grad", "e_sumsq"):
        series = table[col]
        if np.all(np.isnan(series)):
            continue
        i5 = int(np.argmin(np.abs(t - 5.0)))
        base = series[i5] if series[i5] > 0 else np.nan
        flags[col] = {
            "value_at_t5": float(series[i5]),
            "running_max": float(np.nanmax(series)),
            "ratio": float(np.nanmax(series) / base) if base == base else None,
        }
    extra["stability"] = flags
    return files, extra


def _exp_scaling(cfg, out, chash):
    ns = cfg.n_list()
    d = cfg.resolved()["dynamics"]

    def unit(n):
        grid = _grid_of(cfg)
        reps = []
        for rep in range(d["replicas"]):
            obs = H1GapObserver(grid)
            simulate(_params(cfg, n, replica=rep), observers=[obs])
            reps.append(obs.series)
        series = np.concatenate(reps)
        return h1_gap(n, series, batch_size=_batch_snapshots(cfg))

    results = _pmap(cfg.threads, unit, ns)
    rows = [(n, gap, se) for (n, gap, se) in results]
    files = [write_csv(out / "scaling.csv", ("n", "h1_gap", "stderr"), rows, chash)]
    slope, intercept = fit_loglog_slope([r[0] for r in rows], [r[1] for r in rows])
    extra = {"fit": {"slope": slope, "intercept": intercept}}
    return files, extra


def _exp_meanfield(cfg, out, chash):
    grid = _grid_of(cfg)
    d = cfg.resolved()["dynamics"]
    mf = cfg.meanfield
    dt = d["dt"]
    ens = MeanFieldEnsemble(
        grid, mf.m_ens, lam=d["lam"], dt=dt, master_seed=cfg.seed,
        flavor=mf.flavor, x_init_scale=mf.x_init_scale,
    )
    n_steps = int(round(d["t_sample"] / dt))
    every = max(1, int(round(d["thin"] / dt)))
    ts, xs = [0.0], [ens.x_l2_mean()]
    for i in range(1, n_steps + 1):
        step_meanfield(ens, dt)
        if i % every == 0:
            ts.append(ens.t)
            xs.append(ens.x_l2_mean())
    rows = list(zip(ts, xs))
    files = [write_csv(out / "meanfield.csv", ("t", "x_l2"), rows, chash)]
    ts_a, xs_a = np.array(ts), np.array(xs)
    x0 = xs_a[0] if xs_a[0] > 0 else 1.0
    window = (ts_a >= 0.25 / max(grid.m, 1.0)) & (xs_a > 1e-10 * x0)
    extra = {"relaxation": {}}
    if window.sum() >= 3:
        rate = fit_exp_rate(ts_a[window], xs_a[window])
        extra["relaxation"] = {
            "fitted_rate": rate,
            "reference_rate_half_m": grid.m / 2.0,
            "window": [float(ts_a[window][0]), float(ts_a[window][-1])],
        }
    return files, extra


def _exp_coupling(cfg, out, chash):
    ns = cfg.n_list()
    d = cfg.resolved()["dynamics"]
    horizon = d["t_sample"]
    units = [(n, rep) for n in ns for rep in range(d["replicas"])]

    def unit(nr):
        n, rep = nr
        params = _params(cfg, n, replica=rep, t_sample=horizon)
        _, gaps = run_coupled_pair(params, sample_times=[horizon])
        return gaps[-1]

    gaps = _pmap(cfg.threads, unit, units)
    rows = []
    for i, n in enumerate(ns):
        g = np.array(gaps[i * d["replicas"]:(i + 1) * d["replicas"]])
        se = g.std(ddof=1) / np.sqrt(len(g)) if len(g) > 1 else 0.0
        rows.append((n, float(g.mean()), float(se)))
    files = [write_csv(out / "coupling.csv", ("n", "gap", "stderr"), rows, chash)]
    ratios = [rows[i][1] / rows[i + 1][1] for i in range(len(rows) - 1)]
    return files, {"gap_ratios": ratios, "horizon": horizon}


def _exp_ds_check(cfg, out, chash):
    ns = cfg.n_list()

    def unit(i_n):
        i, n = i_n
        est, diag, rec, _ = _run_spectrum_unit(cfg, n, replica=0)
        return est

    ests = _pmap(cfg.threads, unit, list(enumerate(ns)))
    files, rows = [], []
    for n, est in zip(ns, ests):
        kind = "diff" if est.has_diff else "raw"
        files.append(
            write_csv(out / f"spectrum_N{n}.csv", SPECTRUM_HEADER,
                      _spectrum_columns(est.grid, est, kind), chash)
        )
        res = ds_residual(est, kind=kind, convolution="lattice")
        q = covariance_table(est.grid).chat_sq
        noise = (0.5 + (n + 2) / n * q) * est.ghat_stderr(kind)
        _, masks = shell_index(est.grid, 5)
        low = np.zeros_like(res, dtype=bool)
        for mk in masks:
            low |= mk
        rows.append(
            (n, float(np.max(np.abs(res[low]))), float(np.max(noise[low])))
        )
    files.insert(
        0,
        write_csv(out / "ds.csv", ("n", "residual_max", "residual_stderr"),
                  rows, chash),
    )
    ratios = [rows[i + 1][1] / rows[i][1] for i in range(len(rows) - 1)]
    return files, {"residual_ratios": ratios, "convolution": "lattice"}


def _exp_chaos(cfg, out, chash):
    ns = cfg.n_list()
    d = cfg.resolved()["dynamics"]

    def unit(n):
        grid = _grid_of(cfg)
        x1, _ = grid.x_coords()
        phi = RealField(grid, np.cos(x1))
        rows_sq, rows_lin = [], []
        for rep in range(d["replicas"]):
            obs = ChaosObserver(grid, phi)
            simulate(_params(cfg, n, replica=rep), observers=[obs])
            proj = obs.projections()
            rows_sq.append(chaos_metric(proj, kind="square"))
            rows_lin.append(chaos_metric(proj, kind="linear"))
        sq = np.array(rows_sq)
        se = sq.std(ddof=1) / np.sqrt(len(sq)) if len(sq) > 1 else 0.0
        return float(sq.mean()), float(se), float(np.mean(rows_lin))

    results = _pmap(cfg.threads, unit, ns)
    rows = [(n, c, se, lin) for n, (c, se, lin) in zip(ns, results)]
    files = [
        write_csv(out / "chaos.csv", ("n", "corr_sq", "stderr", "corr_linear"),
                  rows, chash)
    ]
    return files, {"n_corr_products": [n * r[1] for n, r in zip(ns, results)]}


_EXPERIMENTS = {
    "gff-check": _exp_gff_check,
    "simulate": _exp_simulate,
    "spectrum": _exp_spectrum,
    "o2": _exp_spectrum,
    "scaling": _exp_scaling,
    "meanfield": _exp_meanfield,
    "coupling": _exp_coupling,
    "ds-check": _exp_ds_check,
    "chaos": _exp_chaos,
}
