import numpy as np
import pytest
from numpy.testing import assert_allclose

from onsigma import (
    ComponentSystem,
    NumericalAbort,
    SimParams,
    SpectrumEstimate,
    covariance_table,
    drift_ddd,
    make_grid,
    run_coupled_pair,
    simulate,
    step,
    wick_constant,
    wick_cubic,
    wick_pair,
)
from onsigma.dynamics import Snapshot, dealias_mask, interaction_drift
from onsigma.gff import Propagator
from onsigma.grid import TWO_PI


def oracle_remainder_drift(y, z, a, lam):
    """Literal O(N^2) pair sum over the six Wick-product term families."""
    n = y.shape[0]
    out = np.empty_like(y)
    for i in range(n):
        acc = np.zeros_like(y[0])
        for j in range(n):
            same = i == j
            zz_ij = wick_pair(z[i], z[j], same, a)
            zjsq = wick_pair(z[j], z[j], True, a)
            ziz2j = wick_cubic(z[i], z[j], same, a)
            acc = acc + (
                y[j] ** 2 * y[i]
                + y[j] ** 2 * z[i]
                + 2.0 * y[j] * y[i] * z[j]
                + 2.0 * y[j] * zz_ij
                + zjsq * y[i]
                + ziz2j
            )
        out[i] = -(lam / n) * acc
    return out


class TestDriftDDD:
    def test_zero_fields_zero_drift(self):
        y = np.zeros((3, 8, 8))
        assert_allclose(interaction_drift(y, 0.2, 1.0), 0.0)

    def test_single_component_pure_cubic(self):
        # N=1, Z=0, constant Y=y: only the Y_j^2 Y_i family survives at a=0
        y = np.full((1, 8, 8), 1.7)
        got = interaction_drift(y, 0.0, 2.0)
        assert_allclose(got, -2.0 * 1.7**3, rtol=1e-14)

    def test_matches_double_loop_oracle(self, rng):
        n, M = 5, 8
        a, lam = 0.31, 1.4
        y = 0.2 * rng.normal(size=(n, M, M))
        z = 0.7 * rng.normal(size=(n, M, M))
        got = interaction_drift(y + z, a, lam)
        want = oracle_remainder_drift(y, z, a, lam)
        assert_allclose(got, want, rtol=1e-10, atol=1e-12)

    def test_public_wrapper_returns_fields(self):
        params = SimParams(make_grid(8, 1.0), N=3, t_sample=0.0, master_seed=5)
        system = ComponentSystem(params)
        fields = drift_ddd(system)
        assert len(fields) == 3
        y, z = system.real_fields()
        want = oracle_remainder_drift(y, z, system.a, params.lam)
        got = np.stack([f.values for f in fields])
        assert_allclose(got, want, rtol=1e-10, atol=1e-12)


class TestStep:
    def test_zero_noise_zero_init_stays_zero(self):
        params = SimParams(make_grid(8, 1.0), N=2, lam=1.0, master_seed=3)
        system = ComponentSystem(params)
        system.zhat[:] = 0.0
        p = system.prop
        system.prop = Propagator(p.grid, p.dt, p.decay, np.zeros_like(p.noise_std), p.phi1)
        for _ in range(50):
            step(system)
        assert np.all(system.zhat == 0.0) and np.all(system.yhat == 0.0)

    def test_free_direct_mode_matches_gff_variances(self):
        grid = make_grid(8, 1.0)
        params = SimParams(
            grid, N=8, lam=0.0, mode="direct", dt=0.05, t_burn=5.0,
            t_sample=400.0, thin=0.25, master_seed=17,
        )
        est = SpectrumEstimate(grid, params.N, params.lam, batch_size=40)
        comp_acc = []
        simulate(params, observers=[lambda s: comp_acc.append(
            np.add.reduce(np.abs(s.phi_hat) ** 2, axis=0) / s.N / TWO_PI**2)])
        comp = np.stack(comp_acc)
        got = comp.mean(axis=0)
        se = comp.std(axis=0, ddof=1) / np.sqrt(len(comp_acc) / 10.0)  # crude n_eff
        want = covariance_table(grid).chat
        frac_off = np.mean(np.abs(got - want) > 3 * se)
        assert frac_off < 0.05, frac_off

    def test_numerical_abort(self):
        grid = make_grid(8, 1.0)
        params = SimParams(grid, N=1, lam=50.0, dt=5.0, t_sample=1.0, master_seed=1)
        system = ComponentSystem(params)
        system.yhat[:] = grid.to_spectral(np.full((1, 8, 8), 50.0))
        with pytest.raises(NumericalAbort) as exc:
            for _ in range(100):
                step(system)
        assert exc.value.t > 0

    def test_interacting_pointwise_variance_near_free_value(self):
        # N=1, m=1, lam=1: the Wick counterterm cancels the first-order mass
        # shift, leaving |E[Phi^2] - a| below 1e-3 (measured -1.2e-4 +- 3.7e-4
        # over 3000 time units); a short run checks consistency with that
        grid = make_grid(16, 1.0)
        a = wick_constant(grid)
        params = SimParams(
            grid, N=1, lam=1.0, dt=4e-3, t_burn=10.0, t_sample=150.0,
            thin=0.1, master_seed=93,
        )
        vals = []
        simulate(params, observers=[lambda s: vals.append(float(np.mean(s.phi_real**2)))])
        vals = np.array(vals)
        n_eff = len(vals) / 10.0
        se = vals.std(ddof=1) / np.sqrt(n_eff)
        assert abs(vals.mean() - a) < 3 * se + 1.5e-3


class TestSimulate:
    def test_empty_sampling_is_valid(self):
        params = SimParams(make_grid(8, 1.0), N=2, t_burn=0.1, t_sample=0.0)
        rec = simulate(params, observers=[lambda s: (_ for _ in ()).throw(AssertionError)])
        assert rec.n_snapshots == 0 and rec.n_sample_steps == 0 and rec.stable

    def test_same_seed_reproduces_bitwise(self):
        grid = make_grid(8, 1.0)
        outs = []
        for _ in range(2):
            params = SimParams(grid, N=3, dt=0.01, t_burn=0.2, t_sample=1.0, master_seed=44)
            acc = []
            simulate(params, observers=[lambda s: acc.append(s.phi_hat.copy())])
            outs.append(np.stack(acc))
        assert np.array_equal(outs[0], outs[1])

    def test_mode_matched_initial_draws(self):
        grid = make_grid(8, 1.0)
        ddd = ComponentSystem(SimParams(grid, N=2, mode="ddd", master_seed=9))
        direct = ComponentSystem(SimParams(grid, N=2, mode="direct", master_seed=9))
        assert np.array_equal(ddd.zhat, direct.phihat)


class TestRotationInvariance:
    def test_o1_o2_functions_of_sum_of_squares(self, rng):
        from onsigma import o2_mean
        from onsigma.observables import o1_stack

        n, M = 6, 8
        y = 0.3 * rng.normal(size=(n, M, M))
        z = rng.normal(size=(n, M, M))
        q, _ = np.linalg.qr(rng.normal(size=(n, n)))
        phi = y + z
        phi_rot = np.einsum("ij,jxy->ixy", q, phi)
        z_rot = np.einsum("ij,jxy->ixy", q, z)
        y_rot = phi_rot - z_rot
        a = 0.21
        assert_allclose(
            o1_stack(y_rot, z_rot, a), o1_stack(y, z, a), rtol=1e-11, atol=1e-12
        )
        assert_allclose(
            o2_mean(y_rot, z_rot, a, grid=None), o2_mean(y, z, a, grid=None),
            rtol=1e-10, atol=1e-13,
        )

    def test_rotated_noise_reproduces_free_statistics(self):
        # rotating initial data and noises by a fixed O in O(N) leaves the
        # invariant observables statistically unchanged; at lam=0 the rotated
        # system is another exact GFF ensemble
        grid = make_grid(8, 1.0)
        rng = np.random.default_rng(3)
        n = 4
        q, _ = np.linalg.qr(rng.normal(size=(n, n)))
        params = SimParams(grid, N=n, lam=0.0, dt=0.1, t_burn=2.0, t_sample=150.0,
                           thin=0.5, master_seed=55)
        means = []
        for mix in (None, q):
            system = ComponentSystem(params)
            if mix is not None:
                system.zhat = np.einsum("ij,jxy->ixy", mix, system.zhat)
                system.noise_mixing = mix
            vals = []
            simulate(params, observers=[lambda s: vals.append(
                float(np.mean(o1_periodogram(s))))], system=system)
            means.append((np.mean(vals), np.std(vals, ddof=1) / np.sqrt(len(vals) / 5)))
        (m0, s0), (m1, s1) = means
        assert abs(m0 - m1) < 3 * np.hypot(s0, s1)


def o1_periodogram(snap):
    from onsigma.observables import o1_stack

    o1 = o1_stack(snap.y_real, snap.z_real, snap.a)
    return np.abs(snap.grid.to_spectral(o1)) ** 2 / TWO_PI**2


class TestDealias:
    def test_mask_shape(self):
        grid = make_grid(12, 1.0)
        mask = dealias_mask(grid)
        assert mask[grid.mode_index((4, 0))]
        assert not mask[grid.mode_index((5, 0))]

    def test_dealiased_run_stays_finite_and_consistent(self):
        grid = make_grid(8, 1.0)
        base = dict(N=4, lam=1.0, dt=0.02, t_burn=5.0, t_sample=120.0, thin=0.2)
        means = {}
        for dealias in (False, True):
            params = SimParams(grid, dealias=dealias, master_seed=71, **base)
            vals = []
            simulate(params, observers=[lambda s: vals.append(
                float(np.mean(s.phi_real**2)))])
            v = np.array(vals)
            means[dealias] = (v.mean(), v.std(ddof=1) / np.sqrt(len(v) / 10))
        (m0, s0), (m1, s1) = means[False], means[True]
        # aliasing effect is a small systematic; demand agreement at 5 combined sigma
        assert abs(m0 - m1) < 5 * np.hypot(s0, s1)


class TestCoupledPair:
    def test_lam_zero_gap_identically_zero(self):
        grid = make_grid(8, 1.0)
        params = SimParams(grid, N=4, lam=0.0, dt=0.02, master_seed=13)
        times, gaps = run_coupled_pair(params, sample_times=[0.5, 1.0])
        assert np.array_equal(gaps, np.zeros_like(gaps))

    def test_single_component_rejected(self):
        params = SimParams(make_grid(8, 1.0), N=1, master_seed=13)
        with pytest.raises(ValueError, match="N >= 2"):
            run_coupled_pair(params, sample_times=[1.0])

    def test_gap_decreases_with_n(self):
        grid = make_grid(8, 1.0)
        gaps = {}
        for n in (4, 16):
            acc = 0.0
            for rep in range(4):
                params = SimParams(
                    grid, N=n, lam=1.0, dt=0.02, master_seed=100 + rep, replica=rep
                )
                _, g = run_coupled_pair(params, sample_times=[1.0])
                acc += g[-1]
            gaps[n] = acc / 4
        assert gaps[16] < gaps[4]
