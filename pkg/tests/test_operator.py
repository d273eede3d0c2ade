import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dofprop.numerics import DimensionError, SymMat
from dofprop.operator import (OperatorSpec, apply_to_hessian, decompose, identity_decomposition,
                              make_coefficients)

from conftest import sym


def rel_fro(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


class TestDecompose:
    def test_identity(self):
        dec = decompose(OperatorSpec(SymMat.identity(5)))
        np.testing.assert_array_equal(dec.l, np.eye(5))
        np.testing.assert_array_equal(dec.d, np.ones(5))
        assert dec.rank == 5 and dec.elliptic

    def test_signature(self):
        dec = decompose(OperatorSpec(SymMat.diag([1.0, -1.0])))
        np.testing.assert_array_equal(dec.l, np.eye(2))
        np.testing.assert_array_equal(dec.d, [1.0, -1.0])
        assert not dec.elliptic

    def test_swap_matrix(self):
        a = np.array([[0.0, 1.0], [1.0, 0.0]])
        dec = decompose(OperatorSpec(a))
        assert dec.rank == 2
        np.testing.assert_array_equal(dec.d, [1.0, -1.0])
        np.testing.assert_allclose(np.abs(dec.l), np.full((2, 2), 1 / np.sqrt(2)), atol=1e-15)
        np.testing.assert_allclose(dec.reconstruct(), a, atol=1e-15)

    @pytest.mark.parametrize("n, k", [(4, 1), (8, 3), (16, 8), (64, 20)])
    def test_rank_of_gram_matrix(self, n, k):
        alpha = np.random.default_rng(n + k).standard_normal((n, k))
        a = alpha @ alpha.T
        a = 0.5 * (a + a.T)
        dec = decompose(OperatorSpec(a))
        assert dec.rank == k
        assert np.all(dec.d == 1)
        assert rel_fro(dec.reconstruct(), a) < 1e-9
        # numpy's LAPACK solver as independent eigenvalue count
        assert np.count_nonzero(np.abs(np.linalg.eigvalsh(a)) > 1e-10 * np.max(np.abs(a).sum(1))) == k

    def test_explicit_rank_tol_drops_small_eigenvalues(self):
        dec = decompose(OperatorSpec(SymMat.diag([3.0, 1e-3, -2.0])), rank_tol=1e-2)
        np.testing.assert_array_equal(dec.d, [1.0, -1.0])
        with pytest.raises(ValueError):
            decompose(OperatorSpec(SymMat.identity(2)), rank_tol=-1.0)

    def test_zero_matrix_has_rank_zero(self):
        dec = decompose(OperatorSpec(np.zeros((3, 3))))
        assert dec.rank == 0

    @given(st.integers(1, 12), st.integers(0, 2**31))
    def test_reconstruction_and_elliptic_detection(self, n, seed):
        rng = np.random.default_rng(seed)
        a = sym(rng, n)
        dec = decompose(OperatorSpec(a))
        assert set(np.unique(dec.d)) <= {-1.0, 1.0}
        assert rel_fro(dec.reconstruct(), a) < 1e-9
        psd = a @ a.T + 1e-3 * np.eye(n)
        np.linalg.cholesky(psd)
        assert decompose(OperatorSpec(0.5 * (psd + psd.T))).elliptic
        if np.min(np.linalg.eigvalsh(a)) < -1e-6:
            assert not dec.elliptic

    def test_large_reconstruction(self):
        a = sym(np.random.default_rng(1), 64)
        assert rel_fro(decompose(OperatorSpec(a)).reconstruct(), a) < 1e-9

    def test_identity_shortcut_matches(self):
        ident = identity_decomposition(3)
        assert ident.fingerprint == OperatorSpec(SymMat.identity(3)).fingerprint


class TestMakeCoefficients:
    def test_general_dense(self):
        for seed in (0, 7):
            spec = make_coefficients("general", "dense", 4, seed)
            np.testing.assert_array_equal(spec.a.data, np.diag([-1.0, 1.0, 1.0, 1.0]))

    def test_low_rank_dense(self):
        spec = make_coefficients("low_rank", "dense", 8, 3)
        assert decompose(spec).rank == 4

    def test_elliptic_dense_full_rank(self):
        dec = decompose(make_coefficients("elliptic", "dense", 8, 3))
        assert dec.rank == 8 and dec.elliptic

    def test_elliptic_block_is_block_diagonal(self):
        a = make_coefficients("elliptic", "block", 8, 0, block_size=4).a.data
        assert not np.any(a[:4, 4:]) and not np.any(a[4:, :4])
        assert np.all(np.abs(a[:4, :4]) > 0)

    def test_block_factor_is_block_supported(self):
        dec = decompose(make_coefficients("low_rank", "block", 16, 2, block_size=4))
        assert dec.rank == 8
        for row in dec.l:
            blocks = {k // 4 for k in np.flatnonzero(row)}
            assert len(blocks) == 1

    def test_block_general(self):
        a = make_coefficients("general", "block", 8, 0, block_size=4).a.data
        np.testing.assert_array_equal(np.diag(a), [-1, 1, 1, 1, -1, 1, 1, 1])

    def test_seeded(self):
        a = make_coefficients("elliptic", "dense", 6, 11)
        assert a.fingerprint == make_coefficients("elliptic", "dense", 6, 11).fingerprint
        assert a.fingerprint != make_coefficients("elliptic", "dense", 6, 12).fingerprint

    @pytest.mark.parametrize("args", [("bogus", "dense", 4, 0), ("elliptic", "diag", 4, 0), ("elliptic", "block", 6, 0)])
    def test_rejects_invalid(self, args):
        with pytest.raises(ValueError):
            make_coefficients(*args)


class TestOperatorSpec:
    def test_zero_b_is_dropped(self):
        assert OperatorSpec(SymMat.identity(2), b=[0.0, 0.0]).b is None

    def test_b_length_checked(self):
        with pytest.raises(DimensionError):
            OperatorSpec(SymMat.identity(2), b=[1.0])

    def test_dict_roundtrip(self):
        spec = OperatorSpec(SymMat([[1, 2], [2, 1]]), b=[1.0, -1.0], c=0.5, kind="general")
        back = OperatorSpec.from_dict(spec.to_dict())
        assert back.fingerprint == spec.fingerprint and back.kind == "general"

    def test_generator_dict(self):
        spec = OperatorSpec.from_dict({"generator": {"kind": "low_rank", "structure": "dense", "n": 6, "seed": 1}})
        assert spec.fingerprint == make_coefficients("low_rank", "dense", 6, 1).fingerprint


class TestApplyToHessian:
    def test_trace(self):
        assert apply_to_hessian(OperatorSpec(SymMat.identity(2)), np.diag([2.0, 2.0])) == 4.0

    def test_elementwise(self):
        sw = [[0.0, 1.0], [1.0, 0.0]]
        assert apply_to_hessian(OperatorSpec(sw), sw) == 2.0

    def test_all_terms(self):
        spec = OperatorSpec(SymMat.diag([-1.0, 1.0]), b=[1.0, 1.0], c=2.0)
        assert apply_to_hessian(spec, np.diag([3.0, 5.0]), [2.0, 2.0], 1.0) == 8.0

    def test_missing_terms_rejected(self):
        spec = OperatorSpec(SymMat.identity(2), b=[1.0, 0.0], c=1.0)
        with pytest.raises(ValueError):
            apply_to_hessian(spec, np.eye(2), None, 1.0)
        with pytest.raises(DimensionError):
            apply_to_hessian(spec, np.eye(3), [1, 1], 1.0)

    @given(st.integers(1, 6), st.integers(0, 2**31))
    def test_linear_in_each_argument(self, n, seed):
        rng = np.random.default_rng(seed)
        spec = OperatorSpec(sym(rng, n), b=rng.standard_normal(n), c=float(rng.standard_normal()))
        h1, h2 = sym(rng, n), sym(rng, n)
        g1, g2 = rng.standard_normal(n), rng.standard_normal(n)
        v1, v2 = rng.standard_normal(2)
        lhs = apply_to_hessian(spec, h1 + h2, g1 + g2, v1 + v2)
        rhs = apply_to_hessian(spec, h1, g1, v1) + apply_to_hessian(spec, h2, g2, v2)
        assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)

    def test_batched(self, rng):
        spec = OperatorSpec(sym(rng, 3))
        hs = np.stack([sym(rng, 3) for _ in range(4)])
        out = apply_to_hessian(spec, hs)
        np.testing.assert_allclose(out, [apply_to_hessian(spec, h) for h in hs], rtol=1e-14)
