import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import stats

from onsigma import (
    OUState,
    StreamKey,
    covariance_table,
    derive_stream,
    make_grid,
    ou_step,
    propagator,
    sample_gff,
    sobolev_norm_sq,
)
from onsigma.grid import TWO_PI


def stream(seed=1, comp=0):
    return derive_stream(StreamKey(seed, comp, 0, "scratch"))


class TestSampleGFF:
    def test_zero_mode_variance(self, grid8):
        # Var(Re Zhat(0,0)) = (2pi)^2 Chat(0) = (2pi)^2 * 0.5 at m = 1
        s = stream(11)
        n = 20_000
        vals = np.empty(n)
        for i in range(n):
            vals[i] = sample_gff(grid8, s).coeffs[0, 0].real
        var = vals.var(ddof=1)
        want = TWO_PI**2 * 0.5
        se = want * np.sqrt(2.0 / n)
        assert abs(var - want) < 3 * se

    def test_inverse_is_real(self, grid16):
        z = sample_gff(grid16, stream(2))
        imag = np.max(np.abs(np.fft.ifft2(z.coeffs).imag)) * grid16.M**2 / TWO_PI**2
        real = np.max(np.abs(z.to_real().values))
        assert imag <= 1e-12 * max(real, 1.0)
        assert z.hermitian_defect() < 1e-12

    def test_l2_norm_matches_mode_sum(self, grid8):
        # E ||Z||_{L2}^2 = sum_k Chat(k); oracle by direct summation
        oracle = 0.0
        for a in np.fft.fftfreq(8, 1 / 8).astype(int):
            for b in np.fft.fftfreq(8, 1 / 8).astype(int):
                oracle += 1.0 / (2.0 * (1.0 + a * a + b * b))
        s = stream(3)
        n = 4000
        vals = np.empty(n)
        for i in range(n):
            vals[i] = sobolev_norm_sq(sample_gff(grid8, s), 0)
        se = vals.std(ddof=1) / np.sqrt(n)
        assert abs(vals.mean() - oracle) < 3 * se

    def test_projected_zero_mode_stays_zero(self):
        g = make_grid(8, 0.0, project_zero_mode=True)
        z = sample_gff(g, stream(4))
        assert z.coeffs[0, 0] == 0.0
        assert np.isfinite(z.coeffs).all()


class TestOUStep:
    def test_dt_zero_is_identity(self, grid8):
        z = sample_gff(grid8, stream(5))
        st0 = OUState(z, 0.0)
        st1 = ou_step(st0, 0.0, stream(6))
        assert np.array_equal(st1.field.coeffs, z.coeffs)

    def test_large_dt_refreshes(self, grid8):
        p = propagator(grid8, 50.0)
        cov = covariance_table(grid8)
        assert np.max(p.decay) < 1e-20
        assert_allclose(p.noise_std, cov.amplitude(), rtol=1e-12)

    def test_negative_dt_rejected(self, grid8):
        z = OUState(sample_gff(grid8, stream(7)), 0.0)
        with pytest.raises(ValueError):
            ou_step(z, -0.1, stream(7))

    def test_chi_square_marginal_variance(self, grid8):
        # decorrelated stationary chain; per-mode variance passes chi^2 at 1%
        s = stream(8)
        dt = 5.0  # decay e^{-5} at the slowest mode
        st = OUState(sample_gff(grid8, s), 0.0)
        n = 10_000
        vals0 = np.empty(n)
        vals1 = np.empty(n, dtype=complex)
        i10 = grid8.mode_index((1, 0))
        for i in range(n):
            st = ou_step(st, dt, s)
            vals0[i] = st.field.coeffs[0, 0].real
            vals1[i] = st.field.coeffs[i10]
        cov = covariance_table(grid8)
        # real self-conjugate mode: n s^2 / sigma^2 ~ chi^2_n
        sigma0 = TWO_PI**2 * cov.chat[0, 0]
        q = n * vals0.var() / sigma0
        lo, hi = stats.chi2.ppf([0.005, 0.995], df=n)
        assert lo < q < hi
        # complex mode: Re and Im each carry half the variance; 2n dof
        sigma1 = TWO_PI**2 * cov.chat[i10]
        q2 = (np.abs(vals1) ** 2).sum() / (sigma1 / 2)
        lo2, hi2 = stats.chi2.ppf([0.005, 0.995], df=2 * n)
        assert lo2 < q2 < hi2

    def test_composition_matches_single_step_in_law(self, grid8):
        # two half steps vs one full step: variances and lag-1 autocovariance
        dt = 0.35
        n = 60_000
        cov = covariance_table(grid8)
        modes = [(0, 0), (1, 0), (1, 1)]
        for scheme, seed in (("full", 21), ("half", 22)):
            s = stream(seed)
            st = OUState(sample_gff(grid8, s), 0.0)
            series = {k: np.empty(n, dtype=complex) for k in modes}
            for i in range(n):
                if scheme == "full":
                    st = ou_step(st, dt, s)
                else:
                    st = ou_step(ou_step(st, dt / 2, s), dt / 2, s)
                for k in modes:
                    series[k][i] = st.field.coeffs[grid8.mode_index(k)]
            for k in modes:
                v = series[k]
                lam = grid8.lam[grid8.mode_index(k)]
                var_want = TWO_PI**2 * cov.chat[grid8.mode_index(k)]
                var_got = np.mean(np.abs(v) ** 2)
                assert abs(var_got / var_want - 1) < 4 / np.sqrt(n / 10)
                rho = np.mean((v[1:] * np.conj(v[:-1])).real) / var_got
                assert abs(rho - np.exp(-lam * dt)) < 0.02

    def test_autocorrelation_rate_five_lowest_modes(self, grid8):
        s = stream(23)
        dt = 0.05
        n = 200_000
        shells = [(0, 0), (1, 0), (1, 1), (2, 0), (2, 1)]
        st = OUState(sample_gff(grid8, s), 0.0)
        series = {k: np.empty(n, dtype=complex) for k in shells}
        for i in range(n):
            st = ou_step(st, dt, s)
            for k in shells:
                series[k][i] = st.field.coeffs[grid8.mode_index(k)]
        for k in shells:
            v = series[k]
            lam = grid8.lam[grid8.mode_index(k)]
            var = np.mean(np.abs(v) ** 2)
            lags = np.arange(1, 6)
            rhos = np.array(
                [np.mean((v[l:] * np.conj(v[:-l])).real) / var for l in lags]
            )
            rate = -np.polyfit(lags * dt, np.log(rhos), 1)[0]
            assert abs(rate / lam - 1) < 0.05, (k, rate, lam)
