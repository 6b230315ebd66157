"""Tensor primitive tests.

Every identity is checked against an independent elementwise oracle built
from explicit index loops, never against the implementation under test.
"""

import numpy as np
import pytest

from rompca.tensor import (
    contracted_product,
    fold,
    frobenius_norm,
    hadamard,
    inner,
    kron_all,
    mode_product,
    multi_mode_product,
    pseudo_solve,
    unfold,
    unvec,
    vec,
)


def loop_mode_product(t, m, mode):
    """Elementwise oracle: b[.., k, ..] = sum_p t[.., p, ..] * m[p, k]."""
    out_shape = list(t.shape)
    out_shape[mode] = m.shape[1]
    out = np.zeros(out_shape)
    for idx in np.ndindex(*out_shape):
        acc = 0.0
        for p in range(t.shape[mode]):
            src = list(idx)
            src[mode] = p
            acc += t[tuple(src)] * m[p, idx[mode]]
        out[idx] = acc
    return out


def loop_contracted_product(a, b, n):
    """Elementwise oracle for contraction over the first n modes."""
    lead = a.shape[:n]
    rest_a = a.shape[n:]
    rest_b = b.shape[n:]
    out = np.zeros(rest_a + rest_b)
    for ja in np.ndindex(*rest_a) if rest_a else [()]:
        for jb in np.ndindex(*rest_b) if rest_b else [()]:
            acc = 0.0
            for p in np.ndindex(*lead):
                acc += a[p + ja] * b[p + jb]
            out[ja + jb] = acc
    return out


class TestUnfoldFold:
    def test_unfold_degenerate_shape(self):
        t = np.array([1.0, 2.0]).reshape(2, 1, 1)
        m = unfold(t, 0)
        assert m.shape == (2, 1)
        assert np.array_equal(m[:, 0], [1.0, 2.0])

    def test_round_trip_all_modes(self):
        rng = np.random.default_rng(0)
        t = rng.standard_normal((3, 4, 2))
        for mode in range(3):
            assert np.array_equal(fold(unfold(t, mode), mode, t.shape), t)

    def test_round_trip_random_shapes_up_to_order4(self):
        rng = np.random.default_rng(1)
        for _ in range(40):
            order = rng.integers(1, 5)
            shape = tuple(int(s) for s in rng.integers(1, 5, size=order))
            t = rng.standard_normal(shape)
            for mode in range(order):
                assert np.array_equal(fold(unfold(t, mode), mode, shape), t)

    def test_fold_scalar(self):
        t = fold(np.array([[7.0]]), 0, (1,))
        assert t.shape == (1,)
        assert t[0] == 7.0

    def test_mode_out_of_range(self):
        t = np.zeros((2, 2))
        with pytest.raises(ValueError):
            unfold(t, 2)
        with pytest.raises(ValueError):
            fold(np.zeros((2, 2)), -1, (2, 2))

    def test_fold_inconsistent_dims(self):
        with pytest.raises(ValueError):
            fold(np.zeros((2, 5)), 0, (2, 2, 2))

    def test_unfold_matches_matrix_identity(self):
        # unfold(B x {V}, mode) == V_m @ unfold(B, mode) @ kron(others, reversed ascending order).T
        rng = np.random.default_rng(2)
        B = rng.standard_normal((2, 2, 2))
        Vs = [rng.standard_normal((3, 2)) for _ in range(3)]
        full = multi_mode_product(B, Vs, transpose=True)
        for mode in range(3):
            others = [Vs[j] for j in range(3) if j != mode]
            K = kron_all(others)
            expected = Vs[mode] @ unfold(B, mode) @ K.T
            assert np.allclose(unfold(full, mode), expected, atol=1e-12)

    def test_fold_of_projected_matrix_matches_elementwise(self):
        rng = np.random.default_rng(3)
        B = rng.standard_normal((2, 2, 2))
        V = rng.standard_normal((3, 2))
        K = np.eye(4)
        m = V @ unfold(B, 0) @ K.T
        target = fold(m, 0, (3, 2, 2))
        oracle = loop_mode_product(B, V.T, 0)
        assert np.allclose(target, oracle, atol=1e-13)


class TestVec:
    def test_vec_of_vector_is_data(self):
        t = np.array([1.0, 2.0, 3.0])
        assert np.array_equal(vec(t), t)

    def test_vec_identity_kronecker(self):
        rng = np.random.default_rng(4)
        B = rng.standard_normal((2, 2, 2))
        Vs = [rng.standard_normal((3, 2)) for _ in range(3)]
        full = multi_mode_product(B, Vs, transpose=True)
        assert np.allclose(vec(full), kron_all(Vs) @ vec(B), atol=1e-12)

    def test_vec_after_round_trip(self):
        rng = np.random.default_rng(5)
        t = rng.standard_normal((3, 2, 4))
        assert np.array_equal(vec(fold(unfold(t, 0), 0, t.shape)), vec(t))

    def test_unvec_inverse(self):
        rng = np.random.default_rng(6)
        t = rng.standard_normal((2, 3, 2))
        assert np.array_equal(unvec(vec(t), t.shape), t)


class TestModeProduct:
    def test_identity_matrix(self):
        rng = np.random.default_rng(7)
        t = rng.standard_normal((3, 4, 2))
        for mode in range(3):
            assert np.allclose(mode_product(t, np.eye(t.shape[mode]), mode), t)

    def test_zero_matrix(self):
        t = np.ones((2, 3))
        out = mode_product(t, np.zeros((3, 5)), 1)
        assert out.shape == (2, 5)
        assert np.all(out == 0)

    def test_against_loop_oracle(self):
        rng = np.random.default_rng(8)
        t = rng.standard_normal((3, 3, 3))
        for mode in range(3):
            m = rng.standard_normal((3, 2))
            assert np.allclose(mode_product(t, m, mode), loop_mode_product(t, m, mode), atol=1e-13)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            mode_product(np.zeros((2, 3)), np.zeros((4, 2)), 0)


class TestMultiModeProduct:
    def test_all_identity(self):
        rng = np.random.default_rng(9)
        t = rng.standard_normal((2, 3, 4))
        eyes = [np.eye(s) for s in t.shape]
        assert np.allclose(multi_mode_product(t, eyes), t)

    def test_order_invariance(self):
        rng = np.random.default_rng(10)
        t = rng.standard_normal((3, 4, 2))
        ms = [rng.standard_normal((s, 2)) for s in t.shape]
        seq = multi_mode_product(t, ms)
        rev = t
        for mode in (2, 0, 1):
            rev = mode_product(rev, ms[mode], mode)
        assert np.allclose(seq, rev, atol=1e-12)

    def test_matches_kronecker_evaluation(self):
        rng = np.random.default_rng(11)
        t = rng.standard_normal((2, 3, 2))
        ms = [rng.standard_normal((s, 2)) for s in t.shape]
        out = multi_mode_product(t, ms)
        expected = kron_all([m.T for m in ms]) @ vec(t)
        assert np.allclose(vec(out), expected, atol=1e-12)

    def test_skip(self):
        rng = np.random.default_rng(12)
        t = rng.standard_normal((2, 3, 2))
        ms = [rng.standard_normal((s, 2)) for s in t.shape]
        out = multi_mode_product(t, ms, skip=1)
        expected = mode_product(mode_product(t, ms[0], 0), ms[2], 2)
        assert np.allclose(out, expected)


class TestContractedProduct:
    def test_full_self_contraction_is_squared_norm(self):
        rng = np.random.default_rng(13)
        t = rng.standard_normal((3, 2, 2))
        s = contracted_product(t, t, 3)
        assert np.allclose(float(s), frobenius_norm(t) ** 2)

    def test_zero_tensor(self):
        a = np.zeros((2, 3, 4))
        out = contracted_product(a, np.ones((2, 3, 5)), 2)
        assert out.shape == (4, 5)
        assert np.all(out == 0)

    def test_against_loop_oracle(self):
        rng = np.random.default_rng(14)
        a = rng.standard_normal((2, 3))
        b = rng.standard_normal((2, 4))
        out = contracted_product(a, b, 1)
        assert np.allclose(out, loop_contracted_product(a, b, 1), atol=1e-13)

    def test_mismatched_leading_modes(self):
        with pytest.raises(ValueError):
            contracted_product(np.zeros((2, 3)), np.zeros((3, 2)), 1)


class TestInnerNormHadamard:
    def test_zero_norm(self):
        assert frobenius_norm(np.zeros((3, 4))) == 0.0

    def test_inner_self_nonnegative(self):
        rng = np.random.default_rng(15)
        t = rng.standard_normal((4, 4))
        assert inner(t, t) >= 0
        assert np.isclose(inner(t, t), np.sum(t**2))

    def test_cauchy_schwarz(self):
        rng = np.random.default_rng(16)
        for _ in range(200):
            a = rng.standard_normal((3, 2, 2))
            b = rng.standard_normal((3, 2, 2))
            assert abs(inner(a, b)) <= frobenius_norm(a) * frobenius_norm(b) + 1e-12

    def test_hadamard(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        b = np.array([[2.0, 0.5], [1.0, 2.0]])
        assert np.array_equal(hadamard(a, b), a * b)
        with pytest.raises(ValueError):
            hadamard(a, np.zeros((3, 2)))


class TestKron:
    def test_kron_identities(self):
        assert np.array_equal(np.kron(np.eye(2), np.eye(3)), np.eye(6))

    def test_kron_scalars(self):
        a = np.array([[3.0]])
        b = np.array([[2.0]])
        assert np.kron(a, b)[0, 0] == 6.0

    def test_mixed_product_property(self):
        rng = np.random.default_rng(17)
        A, B, C, D = (rng.standard_normal((2, 2)) for _ in range(4))
        lhs = np.kron(A, B) @ np.kron(C, D)
        rhs = np.kron(A @ C, B @ D)
        assert np.allclose(lhs, rhs, atol=1e-13)

    def test_kron_all_ordering(self):
        rng = np.random.default_rng(18)
        ms = [rng.standard_normal((2, 2)) for _ in range(3)]
        expected = np.kron(ms[2], np.kron(ms[1], ms[0]))
        assert np.allclose(kron_all(ms), expected)


class TestPseudoSolve:
    def test_identity(self):
        rhs = np.array([1.0, -2.0, 3.0])
        assert np.allclose(pseudo_solve(np.eye(3), rhs), rhs)

    def test_zero_matrix(self):
        out = pseudo_solve(np.zeros((4, 4)), np.ones(4))
        assert np.array_equal(out, np.zeros(4))

    def test_rank_one_closed_form(self):
        rng = np.random.default_rng(19)
        u = rng.standard_normal(5)
        g = np.outer(u, u)
        # g^+ = u u^T / ||u||^4, so g^+ u = u / ||u||^2
        out = pseudo_solve(g, u)
        assert np.allclose(out, u / (u @ u), atol=1e-12)

    def test_normal_equation_residual(self):
        rng = np.random.default_rng(20)
        for _ in range(20):
            a = rng.standard_normal((6, 4))
            g = a.T @ a
            rhs = rng.standard_normal(4)
            x = pseudo_solve(g, rhs)
            lhs = g.T @ g @ x
            rhs2 = g.T @ rhs
            assert np.linalg.norm(lhs - rhs2) <= 1e-9 * max(1.0, np.linalg.norm(rhs2))

    def test_batched(self):
        rng = np.random.default_rng(21)
        gs = np.stack([np.eye(3), 2 * np.eye(3)])
        rhs = rng.standard_normal((2, 3))
        out = pseudo_solve(gs, rhs)
        assert np.allclose(out[0], rhs[0])
        assert np.allclose(out[1], rhs[1] / 2)

    def test_non_square(self):
        with pytest.raises(ValueError):
            pseudo_solve(np.zeros((2, 3)), np.zeros(3))


class TestRandomizedIdentitySuite:
    """Randomized sweep over the core multilinear identities."""

    def test_thousand_instances(self):
        rng = np.random.default_rng(22)
        for _ in range(1000):
            order = int(rng.integers(1, 5))
            shape = tuple(int(s) for s in rng.integers(1, 4, size=order))
            t = rng.standard_normal(shape)
            mode = int(rng.integers(0, order))
            # fold/unfold round trip
            assert np.array_equal(fold(unfold(t, mode), mode, shape), t)
            # vec identity on a random projection
            ks = [int(k) for k in rng.integers(1, 3, size=order)]
            ms = [rng.standard_normal((shape[j], ks[j])) for j in range(order)]
            out = multi_mode_product(t, ms)
            assert np.allclose(vec(out), kron_all([m.T for m in ms]) @ vec(t), atol=1e-12)
