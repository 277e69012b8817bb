import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spectralrep import dist, oracle
from spectralrep.errors import RankDeficient, RankOutOfBounds

from conftest import joint_tables


@given(joint_tables(max_n=8, max_m=8))
def test_top_singular_pair(j):
    tm = dist.t_matrix(j)
    b = oracle.svd_truncated(tm, 1)
    assert abs(b.sigma[0] - 1) <= 1e-10
    np.testing.assert_allclose(np.abs(b.u[:, 0]), tm.sqrt_px, atol=1e-9)
    np.testing.assert_allclose(np.abs(b.v[:, 0]), tm.sqrt_py, atol=1e-9)
    s = oracle.singular_values(tm)
    assert np.all(s >= -1e-15) and np.all(s <= 1 + 1e-10)


@given(joint_tables(max_n=8, max_m=8))
def test_singular_values_match_gram_eigenvalues(j):
    t = dist.t_matrix(j).t
    ev = np.sort(np.linalg.eigvalsh(t.T @ t))[::-1][: min(t.shape)]
    np.testing.assert_allclose(oracle.singular_values(t) ** 2, np.clip(ev, 0, None), atol=1e-9)


@given(joint_tables(max_n=7, max_m=7), st.data())
def test_basis_invariants(j, data):
    tm = dist.t_matrix(j)
    d = data.draw(st.integers(1, min(j.shape)))
    b = oracle.svd_truncated(tm, d)
    np.testing.assert_allclose(b.u.T @ b.u, np.eye(d), atol=1e-10)
    np.testing.assert_allclose(b.v.T @ b.v, np.eye(d), atol=1e-10)
    assert np.all(np.diff(b.sigma) <= 1e-15)
    approx = b.u * b.sigma @ b.v.T
    resid = np.sum((tm.t - approx) ** 2)
    assert abs(resid - oracle.eckart_young_tail(tm, d)) <= 1e-9


def test_svd_examples():
    np.testing.assert_allclose(oracle.svd_truncated(dist.t_matrix(dist.JointTable(np.eye(4) / 4)), 4).sigma, 1.0)
    np.testing.assert_allclose(oracle.svd_truncated(dist.t_matrix(dist.block4()), 4).sigma, [1, 0.5, 0, 0], atol=1e-12)
    ind = dist.from_table(np.ones((3, 3)))
    np.testing.assert_allclose(oracle.svd_truncated(dist.t_matrix(ind), 2).sigma, [1, 0], atol=1e-12)
    with pytest.raises(RankOutOfBounds):
        oracle.svd_truncated(dist.t_matrix(ind), 4)
    with pytest.raises(RankOutOfBounds):
        oracle.eckart_young_tail(dist.t_matrix(ind), 0)


def test_sign_convention():
    b = oracle.svd_truncated(dist.t_matrix(dist.synth_random_lowrank(6, 5, 3, 1)), 3)
    for c in range(3):
        first = b.u[np.flatnonzero(np.abs(b.u[:, c]) > 1e-12)[0], c]
        assert first > 0


def test_eckart_young_examples(block4):
    tm = dist.t_matrix(block4)
    assert abs(oracle.eckart_young_tail(tm, 1) - 0.25) <= 1e-12
    assert abs(oracle.eckart_young_tail(tm, 2)) <= 1e-12
    assert abs(oracle.eckart_young_tail(dist.t_matrix(dist.JointTable(np.eye(4) / 4)), 4)) <= 1e-12


@given(joint_tables(max_n=7, max_m=7))
def test_eckart_young_monotone(j):
    tm = dist.t_matrix(j)
    tails = [oracle.eckart_young_tail(tm, d) for d in range(1, min(j.shape) + 1)]
    assert np.all(np.diff(tails) <= 1e-12)
    assert tails[-1] <= 1e-12
    r = oracle.numerical_rank(tm)
    assert oracle.eckart_young_tail(tm, r) <= 1e-12


def test_principal_angle_examples(rng):
    A = rng.standard_normal((5, 2))
    np.testing.assert_allclose(oracle.principal_angles(A, A).principal_angles, 0, atol=1e-7)
    E = np.eye(4)
    m = oracle.principal_angles(E[:, :2], E[:, 2:], np.ones(4))
    np.testing.assert_allclose(m.principal_angles, np.pi / 2, atol=1e-12)
    u = oracle.svd_truncated(dist.t_matrix(dist.block4()), 2).u
    M = rng.standard_normal((2, 2))
    np.testing.assert_allclose(oracle.principal_angles(u, u @ M).principal_angles, 0, atol=1e-12)
    with pytest.raises(RankDeficient):
        oracle.principal_angles(np.ones((4, 2)), E[:, :2])


def test_principal_angles_symmetric_and_invariant(rng):
    A = rng.standard_normal((6, 3))
    B = rng.standard_normal((6, 3))
    w = rng.random(6) + 0.1
    m1 = oracle.principal_angles(A, B, w)
    m2 = oracle.principal_angles(B, A, w)
    m3 = oracle.principal_angles(A @ rng.standard_normal((3, 3)), B * [2.0, -3.0, 0.5], w)
    np.testing.assert_allclose(m1.principal_angles, m2.principal_angles, atol=1e-12)
    np.testing.assert_allclose(m1.principal_angles, m3.principal_angles, atol=1e-10)
    assert abs(m1.chordal_distance**2 - np.sum(np.sin(m1.principal_angles) ** 2)) <= 1e-10


def test_fit_residual_examples(block4):
    phi, psi = oracle.oracle_factors(block4, 2)
    assert oracle.fit_residual(block4, phi, psi) <= 1e-10
    assert abs(oracle.fit_residual(block4, np.zeros((4, 2)), np.zeros((4, 2))) - 1.25) <= 1e-12
    ind = dist.from_table(np.outer([1, 2, 3], [4, 5]))
    assert oracle.fit_residual(ind, np.ones((3, 1)), np.ones((2, 1))) <= 1e-24


@given(joint_tables(max_n=6, max_m=6))
def test_oracle_factors_reconstruct_ratio(j):
    r = oracle.numerical_rank(dist.t_matrix(j))
    phi, psi = oracle.oracle_factors(j, r)
    np.testing.assert_allclose(phi @ psi.T, dist.ratio_matrix(j).r, atol=1e-7 * np.max(dist.ratio_matrix(j).r))


def test_oracle_angle_zero_for_oracle(block4):
    phi, psi = oracle.oracle_factors(block4, 2)
    assert oracle.oracle_angle(block4, phi @ np.array([[1.0, 2.0], [0.5, -1.0]])).max_angle <= 1e-12
    assert oracle.oracle_angle(block4, psi, side="y").max_angle <= 1e-12


def test_basis_json_round_trip():
    b = oracle.svd_truncated(dist.t_matrix(dist.synth_random_lowrank(5, 4, 2, 0)), 3)
    back = oracle.basis_from_json(oracle.basis_to_json(b))
    np.testing.assert_array_equal(back.sigma, b.sigma)
    np.testing.assert_array_equal(back.u, b.u)
    np.testing.assert_array_equal(back.v, b.v)
