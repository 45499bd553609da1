import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from dart.spectral import (
    NegativeRadianceError,
    SolverConfig,
    damped_forward_transform,
    damped_inverse_transform,
    delay_spectrum,
    irfft_adjoint,
    rfft_adjoint,
    series_adjoint,
    series_solve,
    to_time,
    to_time_adjoint,
)


def test_config_defaults_and_validation():
    cfg = SolverConfig()
    assert (cfg.T, cfg.gamma, cfg.n_order, cfg.dt) == (320, 1e-3, 40, 1e-3)
    for bad in (dict(T=7), dict(T=0), dict(gamma=0.0), dict(gamma=1.5), dict(n_order=-1)):
        with pytest.raises(ValueError):
            SolverConfig(**bad)


def test_impulse_at_zero_is_flat():
    x = np.zeros(32)
    x[0] = 1.0
    np.testing.assert_allclose(damped_forward_transform(x, 1e-3), np.ones(17), atol=1e-15)


def test_impulse_at_midpoint_magnitude():
    T = 32
    x = np.zeros(T)
    x[T // 2] = 1.0
    np.testing.assert_allclose(np.abs(damped_forward_transform(x, 1e-3)), np.sqrt(1e-3), rtol=1e-12)


@given(st.integers(1, 40), st.floats(1e-4, 1.0), st.integers(0, 2**31 - 1))
def test_transform_round_trip(half, gamma, seed):
    T = 2 * half
    x = np.random.default_rng(seed).random((3, T))
    back = damped_inverse_transform(damped_forward_transform(x, gamma), gamma, T)
    np.testing.assert_allclose(back, x, atol=1e-10, rtol=0)


def test_integer_delay_is_pure_phase():
    T, d = 16, 5
    D = delay_spectrum(np.array([float(d)]), 1.0, T)[0]
    f = np.arange(T // 2 + 1)
    np.testing.assert_allclose(D, np.exp(-2j * np.pi * f * d / T), atol=1e-14)
    np.testing.assert_allclose(np.abs(delay_spectrum(np.array([float(d)]), 1e-3, T)[0]),
                               1e-3 ** (d / T), rtol=1e-12)


def test_fractional_delay_matches_direct_dft():
    T, gamma = 12, 1e-2
    D = delay_spectrum(np.array([2.5]), gamma, T)[0]
    taps = np.zeros(T)
    taps[2] = taps[3] = 0.5
    n = np.arange(T)
    direct = np.array([np.sum(taps * gamma ** (n / T) * np.exp(-2j * np.pi * f * n / T))
                       for f in range(T // 2 + 1)])
    np.testing.assert_allclose(D, direct, atol=1e-14)


def test_delay_past_horizon_rejected():
    with pytest.raises(ValueError):
        delay_spectrum(np.array([15.5]), 1e-3, 16)


# --------------------------------------------------------------------------
# series


def random_problem(rng, n=6, T=16, alpha=0.6, density=0.5):
    V = sp.random(n, n, density=density, random_state=rng, data_rvs=rng.random).toarray()
    V /= np.maximum(V.sum(0), 1e-12)  # columns sum to one
    M = rng.random((n, n)) * (rng.random((n, n)) < 0.6)
    M = alpha * M / np.maximum(M.sum(0), 1e-12)
    delay = rng.uniform(1.0, T / 3, n)
    L0 = rng.random((n, T))
    return sp.csr_matrix(V), sp.csr_matrix(M), delay, L0


def test_zero_material_returns_initial(rng):
    V, M, delay, L0 = random_problem(rng)
    D = delay_spectrum(delay, 1e-3, 16)
    X = damped_forward_transform(L0, 1e-3)
    out = series_solve(X, D, V, sp.csr_matrix(M.shape), 40)
    np.testing.assert_array_equal(out, X)


def test_first_order_hand_expansion():
    # two radiances, one bounce: L0 + M V (D * L0) written out entry by entry
    gamma, T = 0.5, 8
    V = np.array([[0.0, 0.8], [1.0, 0.0]])
    M = np.array([[0.3, 0.0], [0.2, 0.5]])
    delay = np.array([1.0, 2.5])
    L0 = np.array([[1.0, 0, 0, 0, 0, 0, 0, 0], [0, 0.5, 0, 0, 0, 0, 0, 0]])
    X0 = damped_forward_transform(L0, gamma)
    D = delay_spectrum(delay, gamma, T)
    out = series_solve(X0, D, sp.csr_matrix(V), sp.csr_matrix(M), 1)
    Y0 = V[0, 1] * D[1] * X0[1]
    Y1 = V[1, 0] * D[0] * X0[0]
    expect = np.stack([X0[0] + M[0, 0] * Y0 + M[0, 1] * Y1, X0[1] + M[1, 0] * Y0 + M[1, 1] * Y1])
    np.testing.assert_allclose(out, expect, atol=1e-14)


@given(st.integers(0, 2**31 - 1), st.floats(0.1, 0.95))
def test_order_mass_bounded_geometrically(seed, alpha):
    rng = np.random.default_rng(seed)
    V, M, delay, L0 = random_problem(rng, alpha=alpha)
    # unit-circle DC bin carries total mass of nonnegative signals
    X0 = damped_forward_transform(L0, 1.0)[:, :1]
    D = np.ones((L0.shape[0], 1), complex)
    prev = series_solve(X0, D, V, M, 0)
    mass0 = L0.sum()
    for k in range(1, 6):
        cur = series_solve(X0, D, V, M, k)
        added = float(np.real(cur - prev).sum())
        assert added <= alpha ** k * mass0 * (1 + 1e-9)
        prev = cur


def test_series_is_linear(rng):
    V, M, delay, L0 = random_problem(rng)
    L1 = rng.random(L0.shape)
    D = delay_spectrum(delay, 1e-3, 16)
    f = lambda L: series_solve(damped_forward_transform(L, 1e-3), D, V, M, 12)
    a, b, ab = f(L0), f(L1), f(L0 + L1)
    assert np.max(np.abs(ab - a - b)) <= 1e-12 * np.max(np.abs(ab))


def test_frequency_bins_are_independent(rng):
    V, M, delay, L0 = random_problem(rng)
    D = delay_spectrum(delay, 1e-3, 16)
    X = damped_forward_transform(L0, 1e-3)
    perm = rng.permutation(X.shape[1])
    a = series_solve(X, D, V, M, 9)
    b = series_solve(X[:, perm], D[:, perm], V, M, 9)
    assert np.array_equal(a[:, perm], b)


def test_dimension_mismatch_rejected(rng):
    V, M, delay, L0 = random_problem(rng)
    X = damped_forward_transform(L0, 1e-3)
    with pytest.raises(ValueError):
        series_solve(X, delay_spectrum(delay[:-1], 1e-3, 16), V, M, 3)


# --------------------------------------------------------------------------
# time domain and adjoints


def test_impulse_spectrum_recovers_impulse():
    x, mask = to_time(np.ones((1, 9)), 1e-3, 16)
    expect = np.zeros(16)
    expect[0] = 1.0
    np.testing.assert_allclose(x[0], expect, atol=1e-12)
    assert np.all(x >= 0)


def test_clamp_and_violation():
    x = np.zeros((1, 8))
    x[0, 0] = 1.0
    x[0, 3] = -1e-9
    X = damped_forward_transform(x, 0.1)
    y, mask = to_time(X, 0.1, 8)
    assert y[0, 3] == 0.0 and not mask[0, 3]
    x[0, 3] = -1e-3
    with pytest.raises(NegativeRadianceError):
        to_time(damped_forward_transform(x, 0.1), 0.1, 8)


def _dot(a, b):
    return float(np.real(np.vdot(a, b)))


@pytest.mark.parametrize("T", [8, 10, 16])
def test_fft_adjoints_dot_product(rng, T):
    x = rng.standard_normal((2, T))
    Y = rng.standard_normal((2, T // 2 + 1)) + 1j * rng.standard_normal((2, T // 2 + 1))
    # real inner products <rfft x, Y> = <x, rfft* Y>
    assert _dot(Y, np.fft.rfft(x)) == pytest.approx(_dot(rfft_adjoint(Y, T), x), rel=1e-12)
    X = rng.standard_normal((2, T // 2 + 1)) + 1j * rng.standard_normal((2, T // 2 + 1))
    X[:, 0] = X[:, 0].real
    X[:, -1] = X[:, -1].real
    y = rng.standard_normal((2, T))
    assert _dot(y, np.fft.irfft(X, n=T)) == pytest.approx(_dot(irfft_adjoint(y, T), X), rel=1e-12)


def test_series_adjoint_dot_product(rng):
    V, M, delay, L0 = random_problem(rng, n=5, T=16)
    D = delay_spectrum(delay, 1e-2, 16)
    X0 = damped_forward_transform(L0, 1e-2)
    S, terms = series_solve(X0, D, V, M, 7, keep_terms=True)
    Sbar = rng.standard_normal(S.shape) + 1j * rng.standard_normal(S.shape)
    rows, cols = M.nonzero()
    G0, mgrad = series_adjoint(Sbar, D, V, M, terms, rows, cols)
    # perturb L0 and M in a random direction and compare directional derivatives
    dX = rng.standard_normal(X0.shape) + 1j * rng.standard_normal(X0.shape)
    dm = rng.standard_normal(rows.size)
    h = 1e-6
    Mp = sp.csr_matrix((M.toarray()[rows, cols] + h * dm, (rows, cols)), shape=M.shape)
    Mm = sp.csr_matrix((M.toarray()[rows, cols] - h * dm, (rows, cols)), shape=M.shape)
    fp = _dot(Sbar, series_solve(X0 + h * dX, D, V, Mp, 7))
    fm = _dot(Sbar, series_solve(X0 - h * dX, D, V, Mm, 7))
    assert (fp - fm) / (2 * h) == pytest.approx(_dot(G0, dX) + mgrad @ dm, rel=1e-7)


def test_to_time_adjoint_dot_product(rng):
    T, gamma = 16, 1e-2
    x = rng.random((3, T)) + 0.1
    X = damped_forward_transform(x, gamma)
    y, mask = to_time(X, gamma, T)
    ybar = rng.standard_normal(y.shape)
    dX = rng.standard_normal(X.shape) + 1j * rng.standard_normal(X.shape)
    dX[:, 0] = dX[:, 0].real
    dX[:, -1] = dX[:, -1].real
    lin = damped_inverse_transform(dX, gamma, T)
    assert _dot(ybar, lin) == pytest.approx(_dot(to_time_adjoint(ybar, mask, gamma, T), dX), rel=1e-10)
