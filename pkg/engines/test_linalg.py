import numpy as np
import pytest

from engines.errors import NumericalBreakdown
from engines.linalg import (
    MACHINE_EPS,
    SMW_ERROR_BUDGET,
    InnerUpdate,
    direct_inner_inverse,
    is_well_conditioned,
    smw_inner_inverse_update_2sls,
    smw_inner_inverse_update_eff,
    smw_weight_block_update,
    smw_weight_update,
    sym_pinv,
)


def _spd(rng, d):
    A = rng.normal(size=(d, d))
    return A @ A.T + d * np.eye(d)


def _rel_err(A, B):
    return np.linalg.norm(A - B, 2) / np.linalg.norm(B, 2)


# --------------------------
# sym_pinv
# --------------------------
def test_sym_pinv_matches_inverse_for_spd():
    rng = np.random.default_rng(0)
    A = _spd(rng, 4)
    np.testing.assert_allclose(sym_pinv(A), np.linalg.inv(A), rtol=1e-10)


def test_sym_pinv_zeroes_tiny_eigenvalues():
    v = np.array([1.0, 0.0])
    A = np.outer(v, v) * 2.0 + 1e-14 * np.eye(2)
    np.testing.assert_allclose(sym_pinv(A), [[0.5, 0.0], [0.0, 0.0]], atol=1e-12)


def test_sym_pinv_of_zero_is_zero():
    np.testing.assert_array_equal(sym_pinv(np.zeros((3, 3))), np.zeros((3, 3)))


def test_is_well_conditioned():
    assert is_well_conditioned(np.eye(3))
    assert not is_well_conditioned(np.diag([1.0, 1e-14]))
    assert not is_well_conditioned(np.array([[np.nan]]))


# --------------------------
# smw_weight_update
# --------------------------
def test_weight_update_zero_vector_scales():
    W = np.array([[2.0, 0.5], [0.5, 1.0]])
    m, W_next = smw_weight_update(W, np.zeros(2), k=4)
    assert m == 4.0
    np.testing.assert_allclose(W_next, (5 / 4) * W)


def test_weight_update_scalar_example():
    m, W_next = smw_weight_update(np.array([[1.0]]), np.array([1.0]), k=1)
    assert m == 2.0
    np.testing.assert_allclose(W_next, [[1.0]])


def test_weight_update_anchor_scalar_example():
    m, W_next = smw_weight_update(np.array([[2.0]]), np.array([1.0]), k=3)
    assert m == pytest.approx(5.0)
    np.testing.assert_allclose(W_next, [[1.6]])


@pytest.mark.parametrize("d, k", [(3, 7), (5, 2), (8, 40)])
def test_weight_update_matches_direct_inverse(d, k):
    rng = np.random.default_rng(d * 100 + k)
    W = np.linalg.inv(_spd(rng, d))
    v = rng.normal(size=d)
    _, W_next = smw_weight_update(W, v, k)
    direct = np.linalg.inv((k * np.linalg.inv(W) + np.outer(v, v)) / (k + 1))
    assert _rel_err(W_next, direct) < 1e-10
    np.testing.assert_array_equal(W_next, W_next.T)


def test_weight_update_rejects_bad_counter():
    with pytest.raises(NumericalBreakdown):
        smw_weight_update(np.eye(2), np.ones(2), k=0)


def test_weight_update_rejects_indefinite_state():
    with pytest.raises(NumericalBreakdown):
        smw_weight_update(-np.eye(2), np.array([3.0, 0.0]), k=1)


def test_block_update_matches_direct_inverse():
    rng = np.random.default_rng(11)
    W = np.linalg.inv(_spd(rng, 6))
    V = rng.normal(size=(6, 3))
    k = 9
    direct = np.linalg.inv((k * np.linalg.inv(W) + V @ V.T) / (k + 1))
    assert _rel_err(smw_weight_block_update(W, V, k), direct) < 1e-10


def test_block_update_rank_one_uses_vector_form():
    rng = np.random.default_rng(12)
    W = np.linalg.inv(_spd(rng, 3))
    v = rng.normal(size=3)
    np.testing.assert_allclose(smw_weight_block_update(W, v[:, None], 5), smw_weight_update(W, v, 5)[1])


# --------------------------
# inner inverse fast paths
# --------------------------
def test_inner_update_2sls_zero_data_scales():
    rng = np.random.default_rng(2)
    d_g, d_beta, k = 4, 2, 6
    Phi = rng.normal(size=(d_g, d_beta))
    W = np.linalg.inv(_spd(rng, d_g))
    cache = direct_inner_inverse(Phi, W)
    m, _ = smw_weight_update(W, np.zeros(d_g), k)
    updated = smw_inner_inverse_update_2sls(cache, Phi, W, np.zeros(d_beta), np.zeros(d_g), m, k).inverse
    np.testing.assert_allclose(updated, ((k + 1) / k) * cache, rtol=1e-10)


def test_inner_update_2sls_scalar_example():
    cache = np.array([[1.0]])
    Phi, W = np.array([[1.0]]), np.array([[1.0]])
    m, _ = smw_weight_update(W, np.array([1.0]), k=1)
    updated = smw_inner_inverse_update_2sls(cache, Phi, W, np.array([1.0]), np.array([1.0]), m, k=1).inverse
    np.testing.assert_allclose(updated, [[1.0]])


@pytest.mark.parametrize("d_beta, d_g", [(4, 6), (1, 1), (3, 10)])
def test_inner_update_2sls_matches_direct_inverse(d_beta, d_g):
    rng = np.random.default_rng(d_beta * 10 + d_g)
    k = 12
    Phi = rng.normal(size=(d_g, d_beta))
    W = np.linalg.inv(_spd(rng, d_g))
    x, z = rng.normal(size=d_beta), rng.normal(size=d_g)
    cache = direct_inner_inverse(Phi, W)
    m, W_next = smw_weight_update(W, z, k)
    Phi_next = (k * Phi + np.outer(z, x)) / (k + 1)
    updated = smw_inner_inverse_update_2sls(cache, Phi, W, x, z, m, k).inverse
    direct = np.linalg.inv(Phi_next.T @ W_next @ Phi_next)
    assert _rel_err(updated, direct) < 1e-8


def test_inner_update_eff_zero_data_scales():
    rng = np.random.default_rng(4)
    d_g, d_beta, k = 5, 3, 8
    Phi = rng.normal(size=(d_g, d_beta))
    W = np.linalg.inv(_spd(rng, d_g))
    cache = direct_inner_inverse(Phi, W)
    m, _ = smw_weight_update(W, np.zeros(d_g), k)
    updated = smw_inner_inverse_update_eff(cache, Phi, W, np.zeros(d_beta), np.zeros(d_g), np.zeros(d_g), m, k).inverse
    np.testing.assert_allclose(updated, ((k + 1) / k) * cache, rtol=1e-10)


def test_inner_update_eff_scalar_hand_case():
    Phi, W, cache = np.array([[2.0]]), np.array([[0.5]]), np.array([[0.5]])
    x, z, g = np.array([1.0]), np.array([1.0]), np.array([0.3])
    k = 3
    m, W_next = smw_weight_update(W, g, k)
    Phi_next = (k * Phi + np.outer(z, x)) / (k + 1)
    expected = 1.0 / (Phi_next[0, 0] ** 2 * W_next[0, 0])
    updated = smw_inner_inverse_update_eff(cache, Phi, W, x, z, g, m, k).inverse
    np.testing.assert_allclose(updated, [[expected]], rtol=1e-12)


@pytest.mark.parametrize("d_beta, d_g", [(5, 10), (2, 2), (4, 7)])
def test_inner_update_eff_matches_direct_inverse(d_beta, d_g):
    rng = np.random.default_rng(100 + d_beta * 10 + d_g)
    k = 20
    Phi = rng.normal(size=(d_g, d_beta))
    W = np.linalg.inv(_spd(rng, d_g))
    x, z, g = rng.normal(size=d_beta), rng.normal(size=d_g), rng.normal(size=d_g)
    cache = direct_inner_inverse(Phi, W)
    m, W_next = smw_weight_update(W, g, k)
    Phi_next = (k * Phi + np.outer(z, x)) / (k + 1)
    updated = smw_inner_inverse_update_eff(cache, Phi, W, x, z, g, m, k).inverse
    direct = np.linalg.inv(Phi_next.T @ W_next @ Phi_next)
    assert _rel_err(updated, direct) < 1e-8


def test_inner_update_eff_zero_instrument_uses_reduced_core():
    rng = np.random.default_rng(5)
    d_beta, d_g, k = 2, 4, 6
    Phi = rng.normal(size=(d_g, d_beta))
    W = np.linalg.inv(_spd(rng, d_g))
    x, g = rng.normal(size=d_beta), rng.normal(size=d_g)
    cache = direct_inner_inverse(Phi, W)
    m, W_next = smw_weight_update(W, g, k)
    Phi_next = k * Phi / (k + 1)
    updated = smw_inner_inverse_update_eff(cache, Phi, W, x, np.zeros(d_g), g, m, k).inverse
    assert _rel_err(updated, np.linalg.inv(Phi_next.T @ W_next @ Phi_next)) < 1e-8


def test_direct_inner_inverse_returns_none_when_singular():
    assert direct_inner_inverse(np.zeros((3, 2)), np.eye(3)) is None


# --------------------------
# SMW error tracking
# --------------------------
def test_inner_update_drift_decays_and_accumulates():
    rng = np.random.default_rng(6)
    d_beta, d_g, k = 3, 5, 9
    Phi = rng.normal(size=(d_g, d_beta))
    W = np.linalg.inv(_spd(rng, d_g))
    x, z = rng.normal(size=d_beta), rng.normal(size=d_g)
    cache = direct_inner_inverse(Phi, W)
    m, _ = smw_weight_update(W, z, k)
    fresh = smw_inner_inverse_update_2sls(cache, Phi, W, x, z, m, k)
    carried = smw_inner_inverse_update_2sls(cache, Phi, W, x, z, m, k, drift=1e-12)
    assert fresh.drift >= MACHINE_EPS * (d_beta + d_g)
    np.testing.assert_allclose(carried.drift - fresh.drift, 1e-12 * k / (k + 1), rtol=1e-9)
    np.testing.assert_array_equal(carried.inverse, fresh.inverse)


def test_forward_error_scales_drift_by_condition_number():
    update = InnerUpdate(np.diag([4.0, 1.0, 2.0]), drift=1e-12)
    assert update.forward_error() == pytest.approx(4e-12)
    assert update.is_accurate()
    assert not InnerUpdate(np.diag([1.0, 1e-4]), drift=SMW_ERROR_BUDGET).is_accurate()


def test_forward_error_is_infinite_for_indefinite_cache():
    update = InnerUpdate(np.diag([1.0, -1.0]), drift=0.0)
    assert update.forward_error() == float("inf")
    assert not update.is_accurate()
