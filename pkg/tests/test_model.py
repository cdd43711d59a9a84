from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fpou.errors import InvalidArgumentError, SingularMatrixError
from fpou.kernel import CoefficientTable
from fpou.model import ObservationPath, compute_TS, reconstruct_noise, simulate_ou, simulate_paths
from fpou.noise import NoisePath, NoiseSpec, fractional_path, sample_eta


def _noise(table, seed):
    return sample_eta(NoiseSpec(table.n, table.lam), seed)


def test_theta_zero_is_fractional_path(table_075):
    p = _noise(table_075, 1)
    x = simulate_ou(table_075, 0.0, p)
    np.testing.assert_array_equal(x.values, fractional_path(table_075, p))


def test_zero_noise_gives_zero_path(table_075):
    x = simulate_ou(table_075, 0.7, NoisePath(np.zeros(table_075.n), NoiseSpec(table_075.n, 1.0)))
    assert np.all(x.values == 0)


def test_first_step(table_075):
    p = _noise(table_075, 2)
    x = simulate_ou(table_075, 0.9, p)
    assert x.values[0] == 0.0
    assert x.values[1] == table_075.F[0] * p.values[0]
    assert x.provenance["kind"] == "simulated"


def test_recursion_with_explicit_f_sums(table_075):
    # X_(j+1) = (1 + theta/m) X_j + sum_i f_ij eta_i + F_j eta_(j+1), with f_ij read off the table
    t, theta = table_075, 0.4
    p = _noise(t, 3)
    X = simulate_ou(t, theta, p).values
    eta = p.values
    for j in range(0, t.n):
        past = sum(t.f(i, j) * eta[i - 1] for i in range(1, j + 1)) if j >= 1 else 0.0
        expect = (1 + theta / t.m) * X[j] + past + t.F[j] * eta[j]
        assert X[j + 1] == pytest.approx(expect, rel=1e-9, abs=1e-12)


def test_pure_noise_solution_recovers_eta(table_075):
    p = _noise(table_075, 4)
    x = simulate_ou(table_075, 0.0, p)
    ts = compute_TS(table_075, x)
    np.testing.assert_allclose(ts.u, p.values, rtol=0, atol=1e-12)
    dX = np.diff(x.values)
    np.testing.assert_allclose(ts.T, dX[1:] - table_075.F[1:] * p.values[1:], atol=1e-12)


def test_zero_path_gives_zero_functionals(table_075):
    ts = compute_TS(table_075, np.zeros(table_075.n + 1))
    assert np.all(ts.T == 0) and np.all(ts.S == 0)
    assert ts.T.shape == (table_075.n - 1,) and ts.S.shape == (table_075.n - 1,)


@settings(max_examples=15, deadline=None)
@given(theta=st.floats(-3.0, 3.0), seed=st.integers(0, 2**32))
def test_past_noise_identity(tables_small, theta, seed):
    t = tables_small[0.55]
    p = _noise(t, seed)
    x = simulate_ou(t, theta, p)
    ts = compute_TS(t, x)
    b, eta = t.b_scaled, p.values
    fsum = np.array([sum(t.f(i, j) * eta[i - 1] for i in range(1, j + 1)) for j in range(1, t.n)])
    lhs = ts.T - (theta / t.m) * ts.S
    scale = max(np.max(np.abs(ts.T)), np.max(np.abs(fsum)), 1e-300)
    assert np.max(np.abs(lhs - fsum)) <= 1e-9 * scale


@settings(max_examples=15, deadline=None)
@given(theta=st.floats(-1.0, 1.0), seed=st.integers(0, 2**32))
def test_reconstruction(tables_small, theta, seed):
    t = tables_small[0.9]
    p = _noise(t, seed)
    x = simulate_ou(t, theta, p)
    eta_hat = reconstruct_noise(t, x, theta)
    assert np.max(np.abs(eta_hat - p.values)) <= 1e-9 * max(1.0, t.kappa)


def test_reconstruction_theta_zero_is_plain_solve(table_075):
    p = _noise(table_075, 6)
    x = simulate_ou(table_075, 0.3, p)
    from scipy.linalg import solve_triangular

    np.testing.assert_array_equal(
        reconstruct_noise(table_075, x, 0.0), solve_triangular(table_075.b_scaled, x.values[1:], lower=True)
    )


def test_wrong_theta_breaks_reconstruction(table_075):
    p = _noise(table_075, 7)
    x = simulate_ou(table_075, 0.5, p)
    assert np.max(np.abs(reconstruct_noise(table_075, x, 0.6) - p.values)) > 1e-6


def test_model_forms_agree(table_075):
    t, theta = table_075, 0.9
    p = _noise(t, 8)
    X = simulate_ou(t, theta, p).values
    ts = compute_TS(t, X)
    rhs = (1 + theta / t.m) * X[1:-1] + ts.T - (theta / t.m) * ts.S + t.F[1:] * p.values[1:]
    np.testing.assert_allclose(X[2:], rhs, rtol=1e-9, atol=1e-9 * np.max(np.abs(X)))


def test_flip_changes_only_fresh_term(table_075):
    t, theta, j = table_075, 0.5, 37
    p = _noise(t, 9)
    eta2 = p.values.copy()
    k = t.kappa
    eta2[j - 1] = k - 1 if eta2[j - 1] == k else k
    Xa = simulate_paths(t, theta, p.values[:, None])[:, 0]
    Xb = simulate_paths(t, theta, eta2[:, None])[:, 0]
    ra = Xa[j] - compute_TS(t, Xa).S[j - 1] - t.F[j - 1] * p.values[j - 1]
    rb = Xb[j] - compute_TS(t, Xb).S[j - 1] - t.F[j - 1] * eta2[j - 1]
    assert ra == pytest.approx(rb, rel=1e-9, abs=1e-12)


def test_batched_matches_single(table_075):
    ps = [_noise(table_075, s) for s in range(4)]
    eta = np.stack([p.values for p in ps], axis=1)
    X = simulate_paths(table_075, 0.2, eta)
    for c, p in enumerate(ps):
        single = simulate_ou(table_075, 0.2, p).values
        np.testing.assert_allclose(X[:, c], single, rtol=1e-13, atol=1e-15)
        np.testing.assert_array_equal(simulate_paths(table_075, 0.2, p.values[:, None])[:, 0], single)


def test_ingest_shifts_start():
    with pytest.warns(UserWarning, match="subtracted"):
        x = ObservationPath.ingest([2.0, 3.0, 5.0], m=4)
    np.testing.assert_array_equal(x.values, [0.0, 1.0, 3.0])
    assert x.notes and x.provenance == {"kind": "ingested"}


def test_size_mismatch(table_075):
    with pytest.raises(InvalidArgumentError):
        compute_TS(table_075, np.zeros(10))
    with pytest.raises(InvalidArgumentError):
        simulate_ou(table_075, 0.1, NoisePath(np.zeros(5), NoiseSpec(5, 1.0)))


def test_zero_diagonal_is_singular(table_075):
    b = np.array(table_075.b_scaled)
    b[3, 3] = 0.0
    bad = CoefficientTable(table_075.m, table_075.n, table_075.H, table_075.lam, b)
    with pytest.raises(SingularMatrixError):
        compute_TS(bad, np.ones(table_075.n + 1))
