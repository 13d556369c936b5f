import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bundletc import tensor_algebra as ta
from bundletc.errors import SingularMatrix, TagMismatch, UsageError

V = ta.vector_tag("V", 2)
W = ta.vector_tag("W", 2)
V3 = ta.vector_tag("V", 3)

seeds = st.integers(0, 2**32 - 1)


def rand(rng, *tags):
    return ta.TypedTensor(tags, rng.standard_normal(tuple(t.dim for t in tags)))


def perms(n):
    return st.permutations(list(range(n))).map(tuple)


# -- contract ------------------------------------------------------------------


def test_matrix_vector_contraction():
    A = ta.TypedTensor((V, V.dual()), [[1, 2], [3, 4]])
    v = ta.TypedTensor((V,), [5, 6])
    out = ta.contract(A, v, 1)
    assert out.tags == (V,)
    np.testing.assert_array_equal(out.data, [17, 39])


def test_dual_basis_pairing_is_zero():
    alpha = ta.TypedTensor((V.dual(),), [1, 0])
    v = ta.TypedTensor((V,), [0, 1])
    out = ta.contract(alpha, v, 1)
    assert out.rank == 0 and float(out) == 0.0


def test_valence_mismatch_is_reported_with_axis():
    A = ta.TypedTensor((V, W.dual()), np.eye(2))
    B = ta.TypedTensor((V, W), np.eye(2))
    with pytest.raises(TagMismatch) as info:
        ta.contract(A, B, 1)
    assert info.value.left == W.dual() and info.value.right == V


def test_contraction_needs_enough_factors():
    with pytest.raises((TagMismatch, UsageError)):
        ta.contract(ta.TypedTensor((V.dual(),), [1, 2]), ta.TypedTensor((V,), [1, 2]), 2)


def test_contract_against_brute_force(rng):
    A = rand(rng, W, V.dual(), V3.dual())
    B = rand(rng, V, V3, W)
    out = ta.contract(A, B, 2)
    ref = np.zeros((2, 2))
    for i in range(2):
        for k in range(2):
            for a in range(2):
                for b in range(3):
                    ref[i, k] += A.data[i, a, b] * B.data[a, b, k]
    assert out.tags == (W, W)
    np.testing.assert_allclose(out.data, ref, atol=1e-12)


@given(seeds)
def test_contract_bilinear(seed):
    rng = np.random.default_rng(seed)
    A, B = rand(rng, W, V.dual()), rand(rng, W, V.dual())
    x, y = rand(rng, V), rand(rng, V)
    a, b = rng.standard_normal(2)
    assert ta.contract(A, a * x + b * y, 1).max_abs_diff(a * ta.contract(A, x) + b * ta.contract(A, y)) < 1e-10
    assert ta.contract(a * A + b * B, x, 1).max_abs_diff(a * ta.contract(A, x) + b * ta.contract(B, x)) < 1e-10


@given(seeds)
def test_identity_contraction_is_identity(seed):
    rng = np.random.default_rng(seed)
    A = rand(rng, W, V.dual())
    assert ta.contract(A, ta.identity(V), 1).max_abs_diff(A) == 0
    assert ta.contract(ta.identity(W), A, 1).max_abs_diff(A) == 0


# -- trace -----------------------------------------------------------------------


def test_trace_examples():
    assert ta.trace(ta.identity(ta.vector_tag("U", 4))) == 4.0
    alpha = ta.TypedTensor((V.dual(),), [1, 2])
    v = ta.TypedTensor((V,), [3, 4])
    assert ta.trace(ta.tensor_product(alpha, v)) == 11.0


def test_trace_equals_contraction_with_identity(rng):
    A = rand(rng, V.dual(), V)
    # Id on V* read as an element of (V*⊗V)* = V⊗V*
    id_dual = ta.identity(V)
    assert abs(ta.trace(A) - float(ta.contract(id_dual, A, 2))) < 1e-12


def test_trace_rejects_unpaired_axes():
    with pytest.raises(TagMismatch):
        ta.trace(ta.TypedTensor((V, W.dual()), np.eye(2)))


@given(seeds)
def test_trace_cyclic(seed):
    rng = np.random.default_rng(seed)
    A = rand(rng, V3, W.dual())
    B = rand(rng, W, V3.dual())
    assert abs(ta.trace(ta.contract(A, B, 1)) - ta.trace(ta.contract(B, A, 1))) < 1e-10


# -- permutations -------------------------------------------------------------------


def test_cycle_moves_second_factor_to_third_position(rng):
    tags = [ta.vector_tag(f"V{i}", i + 1) for i in range(4)]
    A = rand(rng, *tags)
    sigma = ta.from_cycles([(2, 3, 4)], 4)
    out = ta.permute(A, sigma)
    assert out.tags == (tags[0], tags[3], tags[1], tags[2])
    np.testing.assert_array_equal(out.data, np.transpose(A.data, (0, 3, 1, 2)))


def test_permutations_read_left_to_right(rng):
    A = rand(rng, *(ta.vector_tag(f"V{i}", 2) for i in range(3)))
    s12, s23 = ta.from_cycles([(1, 2)], 3), ta.from_cycles([(2, 3)], 3)
    lhs = ta.permute(ta.permute(A, s12), s23)
    assert ta.compose(s12, s23) == ta.from_cycles([(1, 3, 2)], 3)
    assert lhs.max_abs_diff(ta.permute(A, ta.from_cycles([(1, 3, 2)], 3))) == 0


def test_identity_permutation(rng):
    A = rand(rng, V, W, V3)
    assert ta.permute(A, (0, 1, 2)).max_abs_diff(A) == 0


def test_cycles_roundtrip():
    p = ta.from_cycles([(1, 4), (2, 3, 5)], 5)
    assert ta.from_cycles(ta.to_cycles(p), 5) == p


def test_bad_permutation_rejected(rng):
    with pytest.raises(UsageError):
        ta.permute(rand(rng, V, W), (0, 0))


@given(seeds, perms(4), perms(4))
def test_right_action(seed, s, t):
    rng = np.random.default_rng(seed)
    A = rand(rng, *(ta.vector_tag(f"V{i}", 2 + i % 2) for i in range(4)))
    assert ta.permute(ta.permute(A, s), t).max_abs_diff(ta.permute(A, ta.compose(s, t))) == 0


@given(perms(5))
def test_inverse_permutation(s):
    e = tuple(range(5))
    assert ta.compose(s, ta.inverse(s)) == e and ta.compose(ta.inverse(s), s) == e


def test_permutation_tensor_acts_like_permute(rng):
    tags = (V, W, V3)
    A = rand(rng, *tags)
    sigma = (2, 0, 1)
    P = ta.permutation_tensor(tags, sigma)
    assert ta.contract(P, A, 3).max_abs_diff(ta.permute(A, sigma)) < 1e-12


# -- parallel product, adjoint ------------------------------------------------------


def test_parallel_product_of_simple_tensors(rng):
    U, X = ta.vector_tag("U", 3), ta.vector_tag("X", 2)
    u, a, w, b = rand(rng, U), rand(rng, V.dual()), rand(rng, W), rand(rng, X.dual())
    lhs = ta.parallel_product(ta.tensor_product(u, a), ta.tensor_product(w, b))
    rhs = ta.tensor_product(ta.tensor_product(u, w), ta.tensor_product(a, b))
    assert lhs.tags == rhs.tags and lhs.max_abs_diff(rhs) < 1e-12


def test_parallel_product_acts_in_parallel(rng):
    A, B = rand(rng, V, W.dual()), rand(rng, W, V.dual())
    alpha, beta = rand(rng, W), rand(rng, V)
    lhs = ta.contract(ta.parallel_product(A, B), ta.tensor_product(alpha, beta), 2)
    rhs = ta.tensor_product(ta.contract(A, alpha), ta.contract(B, beta))
    assert lhs.max_abs_diff(rhs) < 1e-12


def test_identity_parallel_identity_acts_trivially(rng):
    C = rand(rng, V, W)
    I = ta.parallel_product(ta.identity(V), ta.identity(W))
    assert ta.contract(I, C, 2).max_abs_diff(C) < 1e-15


def test_odd_rank_needs_split(rng):
    with pytest.raises(UsageError):
        ta.parallel_product(rand(rng, V, W, V3), rand(rng, V, W))


@given(seeds)
def test_parallel_product_associative(seed):
    rng = np.random.default_rng(seed)
    A, B, C = (rand(rng, ta.vector_tag(k, 2), ta.covector_tag(k, 3)) for k in "abc")
    left = ta.parallel_product(ta.parallel_product(A, B), C, 2, 1)
    right = ta.parallel_product(A, ta.parallel_product(B, C), 1, 2)
    assert left.tags == right.tags and left.max_abs_diff(right) < 1e-12


def test_adjoint_is_transpose():
    A = ta.TypedTensor((W, V.dual()), [[1, 2], [3, 4]])
    out = ta.adjoint(A)
    assert out.tags == (V.dual(), W)
    np.testing.assert_array_equal(out.data, [[1, 3], [2, 4]])
    assert ta.adjoint(out).max_abs_diff(A) == 0


def test_adjoint_via_star_tensor(rng):
    A = rand(rng, W, V3.dual())
    star = ta.star_tensor(W, V3.dual())
    assert ta.contract(star, A, 2).max_abs_diff(ta.adjoint(A)) < 1e-15


# -- induced inner product --------------------------------------------------------------


def spd(rng, n):
    a = rng.standard_normal((n, n))
    return a @ a.T + n * np.eye(n)


def test_induced_inner_product_identity_metrics(rng):
    h = ta.TypedTensor((W.dual(), W.dual()), np.eye(2))
    gi = ta.TypedTensor((V, V), np.eye(2))
    k = ta.induced_inner_product(h, gi)
    A = rand(rng, W, V.dual())
    assert abs(ta.inner(A, k, A) - np.sum(A.data**2)) < 1e-12


def test_induced_inner_product_block_symmetric(rng):
    h = ta.TypedTensor((W.dual(), W.dual()), spd(rng, 2))
    gi = ta.TypedTensor((V, V), spd(rng, 2))
    k = ta.induced_inner_product(h, gi)
    assert ta.permute(k, ta.from_cycles([(1, 3), (2, 4)], 4)).max_abs_diff(k) < 1e-12
    A, B = rand(rng, W, V.dual()), rand(rng, W, V.dual())
    assert abs(ta.inner(A, k, B) - ta.inner(B, k, A)) < 1e-12


def test_induced_inner_product_rejects_asymmetric(rng):
    h = ta.TypedTensor((W.dual(), W.dual()), [[1, 0.5], [0, 1]])
    gi = ta.TypedTensor((V, V), np.eye(2))
    with pytest.raises(UsageError):
        ta.induced_inner_product(h, gi)


@given(seeds, st.integers(1, 4), st.integers(1, 4))
def test_induced_inner_product_trace_formula(seed, n, m):
    rng = np.random.default_rng(seed)
    Wn, Vm = ta.vector_tag("W", n), ta.vector_tag("V", m)
    h = spd(rng, n)
    gi = np.linalg.inv(spd(rng, m))
    k = ta.induced_inner_product(ta.TypedTensor((Wn.dual(), Wn.dual()), h), ta.TypedTensor((Vm, Vm), gi))
    A, B = rand(rng, Wn, Vm.dual()), rand(rng, Wn, Vm.dual())
    direct = np.trace(gi @ A.data.T @ h @ B.data)
    assert abs(ta.inner(A, k, B) - direct) < 1e-12 * max(1.0, abs(direct))


# -- inversion derivative ------------------------------------------------------------------


def test_inversion_derivative_at_identity(rng):
    A = ta.identity(V)
    B = rand(rng, V, V.dual())
    assert ta.contract(ta.inversion_derivative(A), B, 2).max_abs_diff(-B) < 1e-15


def test_inversion_derivative_matrix_oracle(rng):
    for _ in range(20):
        a = rng.standard_normal((3, 3)) + 3 * np.eye(3)
        A = ta.TypedTensor((V3, V3.dual()), a)
        B = rand(rng, V3, V3.dual())
        ai = np.linalg.inv(a)
        out = ta.contract(ta.inversion_derivative(A), B, 2)
        assert out.tags == (V3, V3.dual())
        assert np.max(np.abs(out.data + ai @ B.data @ ai)) < 1e-10


def test_inversion_derivative_finite_difference(rng):
    a = rng.standard_normal((3, 3)) + 3 * np.eye(3)
    b = rng.standard_normal((3, 3))
    D = ta.contract(ta.inversion_derivative(ta.TypedTensor((V3, V3.dual()), a)),
                    ta.TypedTensor((V3, V3.dual()), b), 2).data
    errs = []
    for eps in (1e-3, 1e-4):
        fd = (np.linalg.inv(a + eps * b) - np.linalg.inv(a)) / eps
        errs.append(np.max(np.abs(fd - D)))
    # forward differences converge at first order
    assert errs[1] < errs[0] / 5 and errs[1] < 1e-3


def test_inversion_derivative_singular():
    A = ta.TypedTensor((V, V.dual()), [[1, 2], [2, 4]])
    with pytest.raises(SingularMatrix):
        ta.inversion_derivative(A)


# -- typed tensor basics ---------------------------------------------------------------------


def test_shape_must_match_tags():
    with pytest.raises(UsageError):
        ta.TypedTensor((V, W), np.zeros((2, 3)))


def test_tensors_are_immutable(rng):
    A = rand(rng, V)
    with pytest.raises(ValueError):
        A.data[0] = 1.0


def test_adding_different_types_fails(rng):
    with pytest.raises(TagMismatch):
        rand(rng, V) + rand(rng, W)
