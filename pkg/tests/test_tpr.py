import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tprcap import tpr
from tprcap.vocab import random_init


def test_hadamard_base_cases():
    np.testing.assert_array_equal(tpr.sylvester_hadamard(0), [[1]])
    np.testing.assert_array_equal(tpr.sylvester_hadamard(1), [[1, 1], [1, -1]])


@pytest.mark.parametrize("k", range(8))
def test_hadamard_orthogonal_in_integers(k):
    H = tpr.sylvester_hadamard(k)
    assert H.dtype.kind == "i"
    assert set(np.unique(H)) <= {-1, 1}
    np.testing.assert_array_equal(H @ H.T, (2**k) * np.eye(2**k, dtype=np.int64))


def test_hadamard_k5_exhaustive_column_products():
    # direct pairwise products, independent of matrix multiplication
    H = tpr.sylvester_hadamard(5)
    for i, j in itertools.product(range(32), repeat=2):
        assert sum(int(H[r, i]) * int(H[r, j]) for r in range(32)) == (32 if i == j else 0)


class TestNormalize:
    def test_unit_columns_d2(self):
        U = tpr.normalize_basis(tpr.sylvester_hadamard(1)).U
        np.testing.assert_allclose(np.linalg.norm(U, axis=0), 1.0, rtol=1e-15)

    def test_orthonormal_d32(self):
        basis = tpr.normalize_basis(tpr.sylvester_hadamard(5))
        assert np.abs(basis.U.T @ basis.U - np.eye(32)).max() < 1e-12
        np.testing.assert_array_equal(np.round(np.sqrt(32) * basis.U), np.sign(basis.U))

    def test_perturbed_rejected(self):
        H = tpr.sylvester_hadamard(3).copy()
        H[2, 5] *= -1
        with pytest.raises(tpr.BasisError):
            tpr.normalize_basis(H)

    def test_non_power_of_two(self):
        with pytest.raises(tpr.BasisError):
            tpr.hadamard_basis(12)


class TestBindUnbind:
    def test_empty_is_zero(self):
        basis = tpr.hadamard_basis(8)
        S = tpr.bind([], basis, e=5)
        np.testing.assert_array_equal(S, np.zeros((5, 8)))
        np.testing.assert_array_equal(tpr.unbind(S, 3, basis), np.zeros(5))

    def test_single_filler(self, rng):
        basis = tpr.hadamard_basis(8)
        x = rng.normal(size=5)
        S = tpr.bind([x], basis)
        np.testing.assert_array_equal(S, np.outer(x, basis.U[:, 0]))
        np.testing.assert_allclose(tpr.unbind(S, 0, basis), x, atol=1e-15)

    def test_unassigned_role_is_zero(self, rng):
        basis = tpr.hadamard_basis(16)
        S = tpr.bind(rng.normal(size=(5, 7)), basis)
        assert np.abs(tpr.unbind(S, 9, basis)).max() < 1e-14

    def test_full_capacity_round_trip(self, rng):
        basis = tpr.hadamard_basis(32)
        F = rng.normal(size=(32, 50))
        S = tpr.bind(F, basis)
        assert np.abs(tpr.unbind_all(S, basis) - F).max() < 1e-10

    def test_capacity_error(self, rng):
        with pytest.raises(tpr.CapacityError):
            tpr.bind(rng.normal(size=(9, 3)), tpr.hadamard_basis(8))

    def test_role_index_range(self):
        with pytest.raises(IndexError):
            tpr.unbind(np.zeros((3, 4)), 4, tpr.hadamard_basis(4))

    def test_unbinding_is_linear(self, rng):
        basis = tpr.hadamard_basis(16)
        A, B = tpr.bind(rng.normal(size=(10, 6)), basis), tpr.bind(rng.normal(size=(16, 6)), basis)
        for j in range(16):
            lhs = tpr.unbind(2.5 * A - 0.75 * B, j, basis)
            rhs = 2.5 * tpr.unbind(A, j, basis) - 0.75 * tpr.unbind(B, j, basis)
            assert np.abs(lhs - rhs).max() < 1e-10


class TestAccumulate:
    def test_onto_zero_is_bind(self, rng):
        basis = tpr.hadamard_basis(8)
        x = rng.normal(size=4)
        np.testing.assert_array_equal(tpr.accumulate(tpr.empty_tpr(4, basis), x, 0, basis), tpr.bind([x], basis))

    def test_order_irrelevant_and_recoverable(self, rng):
        basis = tpr.hadamard_basis(8)
        xs = rng.normal(size=(6, 4))
        fwd = tpr.empty_tpr(4, basis)
        for t in range(6):
            fwd = tpr.accumulate(fwd, xs[t], t, basis)
        rev = tpr.empty_tpr(4, basis)
        for t in reversed(range(6)):
            rev = tpr.accumulate(rev, xs[t], t, basis)
        np.testing.assert_allclose(fwd, rev, atol=1e-15)
        np.testing.assert_allclose(tpr.unbind_all(fwd, basis, 6), xs, atol=1e-12)

    def test_capacity(self):
        basis = tpr.hadamard_basis(4)
        with pytest.raises(tpr.CapacityError):
            tpr.accumulate(tpr.empty_tpr(2, basis), np.ones(2), 4, basis)


class TestRetrieve:
    def test_exact_column(self, rng):
        E = rng.normal(size=(5, 20))
        assert tpr.retrieve_nearest(E[:, 7], E) == 7

    def test_noise_below_half_gap(self, rng):
        E = rng.normal(size=(6, 30))
        gap = min(np.linalg.norm(E[:, i] - E[:, j]) for i in range(30) for j in range(i + 1, 30))
        noise = rng.normal(size=6)
        noise *= 0.49 * gap / np.linalg.norm(noise)
        assert tpr.retrieve_nearest(E[:, 3] + noise, E) == 3

    def test_tie_breaks_low(self, rng):
        E = rng.normal(size=(4, 12))
        E[:, 9] = E[:, 2]
        assert tpr.retrieve_nearest(E[:, 2], E) == 2

    def test_empty_vocabulary(self):
        with pytest.raises(ValueError):
            tpr.retrieve_nearest(np.zeros(3), np.zeros((3, 0)))

    def test_vectorized_matches_scalar(self, rng):
        E = rng.normal(size=(8, 40))
        Q = rng.normal(size=(15, 8))
        assert list(tpr.retrieve_all(Q, E)) == [tpr.retrieve_nearest(q, E) for q in Q]


@settings(max_examples=25, deadline=None)
@given(st.sampled_from([8, 16, 32, 64]), st.integers(1, 64), st.integers(0, 2**32 - 1))
def test_retrieval_is_exact_for_any_sequence(d, n, seed):
    n = min(n, d)
    emb = random_init(200, 13, seed)
    rng = np.random.default_rng(seed)
    assert tpr.retrieval_accuracy(emb, d, 5, n=n, rng=rng) == 1.0
