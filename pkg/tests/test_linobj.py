import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spectralrep import dist, linobj, oracle
from spectralrep.errors import NonPositiveScore
from spectralrep.gradcheck import numerical_gradient, relative_error

from conftest import joint_tables

IDENT2 = dist.JointTable(np.eye(2) / 2)
INDEP = dist.from_table(np.ones((3, 3)))


def _flat_check(objective, j, params, **opts):
    n, d = params.phi.shape
    tied = params.tied

    def unpack(x):
        if tied:
            return linobj.ReprParams(x.reshape(n, d))
        return linobj.ReprParams(x[: n * d].reshape(n, d), x[n * d:].reshape(-1, d))

    x0 = params.phi.ravel() if tied else np.concatenate([params.phi.ravel(), params.psi.ravel()])
    rep = linobj.evaluate(objective, j, params, **opts)
    g = rep.grad_phi.ravel() if tied else np.concatenate([rep.grad_phi.ravel(), rep.grad_psi.ravel()])
    num = numerical_gradient(lambda x: linobj.evaluate(objective, j, unpack(x), **opts).value, x0)
    return relative_error(g, num)


@pytest.mark.parametrize("objective", linobj.OBJECTIVES)
@pytest.mark.parametrize("tied", [False, True])
def test_gradients_match_finite_differences(objective, tied):
    rng = np.random.default_rng(hash((objective, tied)) % 2**32)
    j = dist.synth_random_lowrank(5, 5, 3, 4)
    for _ in range(5):
        phi = rng.standard_normal((5, 2))
        params = linobj.ReprParams(phi) if tied else linobj.ReprParams(phi, rng.standard_normal((5, 2)))
        assert _flat_check(objective, j, params) <= 1e-6


@pytest.mark.parametrize("k", [None, 1, 4])
def test_ranking_gradient_all_modes(k, rng):
    j = dist.synth_random_lowrank(4, 6, 2, 1)
    params = linobj.ReprParams(rng.standard_normal((4, 3)), rng.standard_normal((6, 3)))
    assert _flat_check("nce_ranking", j, params, k=k) <= 1e-6


def test_ranking_gradient_sampled_mode(rng):
    j = dist.synth_random_lowrank(4, 6, 2, 1)
    batch = dist.sample_pairs(j, 30, 30 * 4, seed=5)
    params = linobj.ReprParams(rng.standard_normal((4, 2)), rng.standard_normal((6, 2)))
    assert _flat_check("nce_ranking", j, params, k=5, batch=batch) <= 1e-6


@pytest.mark.parametrize("objective", linobj.OBJECTIVES)
def test_sampled_gradients(objective, rng):
    j = dist.synth_random_lowrank(4, 4, 2, 3)
    batch = dist.sample_pairs(j, 40, 40 * 3, seed=2)
    params = linobj.ReprParams(rng.standard_normal((4, 2)), rng.standard_normal((4, 2)))
    opts = {"k": 4} if objective == "nce_ranking" else {}
    assert _flat_check(objective, j, params, batch=batch, **opts) <= 1e-6


def test_spectral_contrastive_examples(block4):
    ind = dist.from_table(np.outer([1, 2], [3, 1, 1]))
    assert abs(linobj.loss_spectral_contrastive(ind, linobj.ReprParams(np.ones((2, 1)), np.ones((3, 1)))).value) <= 1e-14
    phi, psi = oracle.oracle_factors(block4, 1)
    v = linobj.loss_spectral_contrastive(block4, linobj.ReprParams(phi, psi)).value
    assert abs(v - 0.25) <= 1e-12


@given(joint_tables(max_n=5, max_m=5), st.integers(1, 3), st.integers(0, 2**31))
def test_spectral_contrastive_is_frobenius_fit(j, d, seed):
    r = np.random.default_rng(seed)
    phi = r.standard_normal((j.shape[0], d))
    psi = r.standard_normal((j.shape[1], d))
    v = linobj.loss_spectral_contrastive(j, linobj.ReprParams(phi, psi)).value
    assert abs(v - oracle.fit_residual(j, phi, psi)) <= 1e-10 * max(1.0, v)


@given(joint_tables(max_n=5, max_m=5), st.integers(1, 3), st.integers(0, 2**31))
def test_chisq_plus_t_norm_equals_spectral_contrastive(j, d, seed):
    r = np.random.default_rng(seed)
    params = linobj.ReprParams(r.standard_normal((j.shape[0], d)), r.standard_normal((j.shape[1], d)))
    sc = linobj.loss_spectral_contrastive(j, params).value
    chi = linobj.loss_fdiv(j, params, "chisq").value
    assert abs(chi + linobj.t_norm_sq(j) - sc) <= 1e-12 * max(1.0, abs(sc))


@given(joint_tables(max_n=5, max_m=5), st.integers(0, 2**31))
def test_spectral_contrastive_lower_bounded_by_eckart_young(j, seed):
    r = np.random.default_rng(seed)
    d = min(j.shape)
    params = linobj.ReprParams(r.standard_normal((j.shape[0], d)), r.standard_normal((j.shape[1], d)))
    tail = oracle.eckart_young_tail(dist.t_matrix(j), d)
    assert linobj.loss_spectral_contrastive(j, params).value >= tail - 1e-12


def test_barlow_twins_examples():
    xi = np.sqrt(2) * np.eye(2)
    assert abs(linobj.loss_barlow_twins(IDENT2, linobj.ReprParams(xi)).value) <= 1e-14
    assert linobj.loss_barlow_twins(dist.block4(), linobj.ReprParams(np.zeros((4, 3)))).value == 3.0


def test_vicreg_square_examples():
    xi = np.sqrt(2) * np.eye(2)
    # E_p[xi(x)^T xi(x')] = sum_x (1/2) * 2 = 2 and E_px[xi xi^T] = I
    assert abs(linobj.loss_vicreg(IDENT2, linobj.ReprParams(xi), form="square").value + 4.0) <= 1e-14
    v = linobj.loss_vicreg(dist.block4(), linobj.ReprParams(np.zeros((4, 3))), lambda_=2.5, form="square").value
    assert abs(v - 2.5 * 3) <= 1e-14


def test_vicreg_hinge_value_by_hand(rng):
    j = dist.synth_random_lowrank(4, 4, 2, 0)
    phi = rng.standard_normal((4, 2))
    v = linobj.loss_vicreg(j, linobj.ReprParams(phi), lambda_=0.7, eta=1.3, form="hinge").value
    # independent evaluation of invariance, covariance and variance terms
    inv = sum(j.p[a, b] * np.sum((phi[a] - phi[b]) ** 2) for a in range(4) for b in range(4))
    total = inv
    for w in (j.px, j.py):
        mean = w @ phi
        cov = sum(w[a] * np.outer(phi[a] - mean, phi[a] - mean) for a in range(4))
        off = cov - np.diag(np.diag(cov))
        total += 1.3 / 2 * np.sum(off**2) + 0.7 / 2 * np.sum(np.maximum(0, 1 - np.sqrt(np.diag(cov) + 1e-4)))
    assert abs(v - total) <= 1e-12


def test_nce_binary_examples(block4):
    ones = linobj.ReprParams(np.ones((3, 1)), np.ones((3, 1)))
    v = linobj.loss_nce_binary(INDEP, ones, score="raw").value
    assert abs(v - 2 * np.log(2)) <= 1e-12
    with pytest.raises(NonPositiveScore):
        linobj.loss_nce_binary(INDEP, linobj.ReprParams(np.zeros((3, 1)), np.ones((3, 1))), score="raw")


def test_nce_binary_stationary_at_ratio(block4):
    phi, psi = oracle.oracle_factors(block4, 2)
    rep = linobj.loss_nce_binary(block4, linobj.ReprParams(phi, psi), score="raw")
    assert np.max(np.abs(rep.grad_phi)) <= 1e-12 and np.max(np.abs(rep.grad_psi)) <= 1e-12


def test_nce_ranking_examples():
    j = dist.synth_random_lowrank(4, 5, 2, 0)
    ones = linobj.ReprParams(np.ones((4, 1)), np.ones((5, 1)))
    assert abs(linobj.loss_nce_ranking(j, ones, k=8, score="raw").value - np.log(8)) <= 1e-12
    rng = np.random.default_rng(0)
    params = linobj.ReprParams(rng.standard_normal((4, 2)), rng.standard_normal((5, 2)))
    assert abs(linobj.loss_nce_ranking(j, params, k=1).value) <= 1e-12


def test_nce_ranking_population_limit_minimized_by_scaled_ratio(block4):
    r = dist.ratio_matrix(block4).r
    scale = np.array([1.0, 2.0, 0.5, 3.0])
    # a ratio factorization with a positive factor per row
    phi, psi = oracle.oracle_factors(block4, 2)
    params = linobj.ReprParams(phi * scale[:, None], psi)
    rep = linobj.loss_nce_ranking(block4, params, k=None, score="raw")
    assert np.allclose(phi * scale[:, None] @ psi.T, r * scale[:, None])
    assert np.max(np.abs(rep.grad_phi)) <= 1e-12 and np.max(np.abs(rep.grad_psi)) <= 1e-12


def test_fdiv_examples(block4):
    ones = linobj.ReprParams(np.ones((3, 1)), np.ones((3, 1)))
    assert abs(linobj.loss_fdiv(INDEP, ones, "kl", score="raw").value - 1.0) <= 1e-14
    assert abs(linobj.loss_fdiv(INDEP, ones, "chisq").value + 1.0) <= 1e-14
    with pytest.raises(NonPositiveScore):
        linobj.loss_fdiv(INDEP, linobj.ReprParams(-np.ones((3, 1)), np.ones((3, 1))), "kl", score="raw")
    phi, psi = oracle.oracle_factors(block4, 2)
    for kind in ("kl", "chisq"):
        rep = linobj.loss_fdiv(block4, linobj.ReprParams(phi, psi), kind, score="raw")
        assert np.max(np.abs(rep.grad_phi)) <= 1e-12


def test_evaluate_unknown_objective(block4):
    with pytest.raises(KeyError):
        linobj.evaluate("nope", block4, linobj.ReprParams(np.ones((4, 1))))


def test_bias_full_population_is_zero(block4, rng):
    params = linobj.ReprParams(rng.standard_normal((4, 2)), rng.standard_normal((4, 2)))
    for obj in ("spectral_contrastive", "barlow_twins", "vicreg_square"):
        rep = linobj.minibatch_gradient_bias(obj, block4, params, None, 10, 0)
        assert rep.norm == 0.0


def test_bias_probe_small_run(block4, rng):
    params = linobj.ReprParams(rng.standard_normal((4, 2)), rng.standard_normal((4, 2)))
    sc = linobj.minibatch_gradient_bias("spectral_contrastive", block4, params, 2, 20000, 1)
    bt = linobj.minibatch_gradient_bias("barlow_twins", block4, params, 2, 20000, 1)
    assert not sc.significant
    assert bt.significant
    again = linobj.minibatch_gradient_bias("spectral_contrastive", block4, params, 2, 20000, 1)
    np.testing.assert_array_equal(sc.bias, again.bias)
    with pytest.raises(ValueError):
        linobj.minibatch_gradient_bias("nce_binary", block4, params, 2, 10, 0)
