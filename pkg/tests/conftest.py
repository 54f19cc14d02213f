import numpy as np
import pytest

from onsigma import make_grid


@pytest.fixture(scope="session")
def grid16():
    return make_grid(16, 1.0)


@pytest.fixture(scope="session")
def grid8():
    return make_grid(8, 1.0)


@pytest.fixture()
def rng():
    return np.random.default_rng(20260809)


def brute_force_convolution(M, ta, tb):
    """O(M^4) truncated convolution of two tables, plain Python loops,
    symmetrized over k -> -k exactly as the production path."""
    k = np.fft.fftfreq(M, d=1.0 / M).astype(int)
    lo, hi = -M // 2, M // 2 - 1
    out = np.zeros((M, M))
    for a in k:
        for b in k:
            s = 0.0
            for a1 in k:
                for b1 in k:
                    a2, b2 = a - a1, b - b1
                    if lo <= a2 <= hi and lo <= b2 <= hi:
                        s += ta[a1 % M, b1 % M] * tb[a2 % M, b2 % M]
            out[a % M, b % M] = s / (2 * np.pi) ** 2
    sym = np.zeros_like(out)
    for a in k:
        for b in k:
            ra = -a if -a <= hi else a  # -(-M/2) is unrepresentable: maps to itself
            rb = -b if -b <= hi else b
            sym[a % M, b % M] = 0.5 * (out[a % M, b % M] + out[ra % M, rb % M])
    return sym


def brute_force_chat_sq(M, m):
    k = np.fft.fftfreq(M, d=1.0 / M).astype(int)
    ch = np.zeros((M, M))
    for a in k:
        for b in k:
            ch[a % M, b % M] = 1.0 / (2.0 * (m + a * a + b * b))
    return brute_force_convolution(M, ch, ch)


def brute_force_wick_constant(M, m):
    """Direct mode sum (2pi)^{-2} sum 1/(2(m+|k|^2)), plain loops."""
    k = np.fft.fftfreq(M, d=1.0 / M).astype(int)
    s = 0.0
    for a in k:
        for b in k:
            s += 1.0 / (2.0 * (m + a * a + b * b))
    return s / (2 * np.pi) ** 2
