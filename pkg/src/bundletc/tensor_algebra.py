"""Pointwise strongly typed multilinear algebra.

Every axis of a :class:`TypedTensor` carries an :class:`AxisTag` naming the
fiber space it lives in, its dimension and its variance.  All pairings are
tag-checked: a vector axis can only be contracted against a covector axis of
the same space.  Data is a dense row-major ``numpy`` array whose shape is the
tuple of axis dimensions.

Permutations act on the right and are stored as one-line tuples of 0-based
images, ``perm[i] = sigma(i)``: factor ``i`` of ``A`` ends up at position
``sigma(i)`` of ``A^sigma``.  Products of permutations are read left to right,
so ``compose(s, t)`` means "apply ``s`` first, then ``t``".
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import SingularMatrix, TagMismatch, UsageError

VECTOR = "vector"
COVECTOR = "covector"


@dataclass(frozen=True)
class AxisTag:
    """Identity of one tensor factor.

    ``space`` includes the base point for bundle fibers, so two fibers over
    different points never pair.
    """

    space: str
    dim: int
    variance: str = VECTOR

    def __post_init__(self):
        if self.variance not in (VECTOR, COVECTOR):
            raise UsageError(f"variance must be {VECTOR!r} or {COVECTOR!r}, got {self.variance!r}")
        if int(self.dim) < 1:
            raise UsageError(f"axis dimension must be positive, got {self.dim}")

    def dual(self) -> "AxisTag":
        return AxisTag(self.space, self.dim, COVECTOR if self.variance == VECTOR else VECTOR)

    def pairs_with(self, other: "AxisTag") -> bool:
        return self.space == other.space and self.dim == other.dim and self.variance != other.variance

    def __str__(self) -> str:
        return self.space + ("*" if self.variance == COVECTOR else "")


def vector_tag(space: str, dim: int) -> AxisTag:
    return AxisTag(space, dim, VECTOR)


def covector_tag(space: str, dim: int) -> AxisTag:
    return AxisTag(space, dim, COVECTOR)


@dataclass(frozen=True, eq=False)
class TypedTensor:
    tags: tuple
    data: np.ndarray

    def __post_init__(self):
        tags = tuple(self.tags)
        data = np.array(self.data, dtype=float)
        shape = tuple(t.dim for t in tags)
        if data.shape != shape:
            if data.size == int(np.prod(shape, dtype=int)) and data.ndim <= 1:
                data = data.reshape(shape)
            else:
                raise UsageError(f"data shape {data.shape} does not match tag dims {shape}")
        data.setflags(write=False)
        object.__setattr__(self, "tags", tags)
        object.__setattr__(self, "data", data)

    @property
    def rank(self) -> int:
        return len(self.tags)

    def __repr__(self) -> str:
        return f"TypedTensor({' ⊗ '.join(map(str, self.tags)) or 'ℝ'}, {self.data.tolist()})"

    def _check_same(self, other: "TypedTensor", op: str):
        if not isinstance(other, TypedTensor):
            return NotImplemented
        if self.tags != other.tags:
            raise TagMismatch(f"cannot {op} tensors of types {self.tags} and {other.tags}")
        return None

    def __add__(self, other):
        if self._check_same(other, "add") is NotImplemented:
            return NotImplemented
        return TypedTensor(self.tags, self.data + other.data)

    def __sub__(self, other):
        if self._check_same(other, "subtract") is NotImplemented:
            return NotImplemented
        return TypedTensor(self.tags, self.data - other.data)

    def __neg__(self):
        return TypedTensor(self.tags, -self.data)

    def __mul__(self, scalar):
        if isinstance(scalar, TypedTensor):
            return NotImplemented
        return TypedTensor(self.tags, float(scalar) * self.data)

    __rmul__ = __mul__

    def __float__(self) -> float:
        if self.rank != 0:
            raise UsageError("only rank-0 tensors convert to float")
        return float(self.data)

    def max_abs_diff(self, other: "TypedTensor") -> float:
        self._check_same(other, "compare")
        return float(np.max(np.abs(self.data - other.data), initial=0.0))


def scalar(value: float) -> TypedTensor:
    return TypedTensor((), np.asarray(float(value)))


def identity(tag: AxisTag) -> TypedTensor:
    """Identity map of ``tag``'s space as a tensor in ``V ⊗ V*``."""
    return TypedTensor((tag, tag.dual()), np.eye(tag.dim))


def tensor_product(a: TypedTensor, b: TypedTensor) -> TypedTensor:
    return TypedTensor(a.tags + b.tags, np.multiply.outer(a.data, b.data))


def _check_pairing(left: Sequence[AxisTag], right: Sequence[AxisTag], offset: int = 0):
    for k, (s, t) in enumerate(zip(left, right)):
        if not s.pairs_with(t):
            raise TagMismatch(
                f"cannot pair axis {s} with axis {t} (pair #{k + 1})", left=s, right=t, axis=offset + k
            )


def contract(a: TypedTensor, b: TypedTensor, n: int = 1) -> TypedTensor:
    """``a ·ⁿ b``: pair the last ``n`` factors of ``a`` with the first ``n`` of ``b``.

    The ``k``-th of ``a``'s trailing factors pairs with the ``k``-th of ``b``'s
    leading factors, so for rank-2 tensors ``n = 1`` is the matrix product.
    """
    n = int(n)
    if n < 0 or n > a.rank or n > b.rank:
        raise UsageError(f"cannot contract {n} factors of ranks {a.rank} and {b.rank}")
    _check_pairing(a.tags[a.rank - n:], b.tags[:n], offset=a.rank - n)
    axes = (list(range(a.rank - n, a.rank)), list(range(n)))
    data = np.tensordot(a.data, b.data, axes=axes)
    return TypedTensor(a.tags[: a.rank - n] + b.tags[n:], data)


def trace(a: TypedTensor) -> float:
    """Natural trace of a rank-2 tensor whose two factors are mutually dual."""
    if a.rank != 2:
        raise TagMismatch(f"trace needs a rank-2 tensor, got rank {a.rank}")
    _check_pairing(a.tags[:1], a.tags[1:])
    return float(np.trace(a.data))


# -- permutations -----------------------------------------------------------


def _validate_perm(perm: Sequence[int]) -> tuple:
    perm = tuple(int(p) for p in perm)
    if sorted(perm) != list(range(len(perm))):
        raise UsageError(f"{perm} is not a permutation of 0..{len(perm) - 1}")
    return perm


def from_cycles(cycles: Iterable[Sequence[int]], n: int) -> tuple:
    """One-line form of a product of 1-based cycles, multiplied left to right.

    ``from_cycles([(2, 3, 4)], 4) == (0, 2, 3, 1)``.
    """
    result = tuple(range(n))
    for cyc in cycles:
        cyc = [int(c) - 1 for c in cyc]
        if any(c < 0 or c >= n for c in cyc) or len(set(cyc)) != len(cyc):
            raise UsageError(f"cycle {tuple(c + 1 for c in cyc)} is invalid for {n} factors")
        step = list(range(n))
        for i, c in enumerate(cyc):
            step[c] = cyc[(i + 1) % len(cyc)]
        result = compose(result, step)
    return result


def to_cycles(perm: Sequence[int]) -> list:
    """Disjoint 1-based cycles of ``perm`` (fixed points omitted)."""
    perm = _validate_perm(perm)
    seen, cycles = set(), []
    for start in range(len(perm)):
        if start in seen or perm[start] == start:
            continue
        cyc, i = [], start
        while i not in seen:
            seen.add(i)
            cyc.append(i + 1)
            i = perm[i]
        cycles.append(tuple(cyc))
    return cycles


def compose(first: Sequence[int], then: Sequence[int]) -> tuple:
    """Product ``first·then`` read left to right (apply ``first``, then ``then``)."""
    first, then = _validate_perm(first), _validate_perm(then)
    if len(first) != len(then):
        raise UsageError("permutations act on different numbers of factors")
    return tuple(then[first[i]] for i in range(len(first)))


def inverse(perm: Sequence[int]) -> tuple:
    perm = _validate_perm(perm)
    inv = [0] * len(perm)
    for i, p in enumerate(perm):
        inv[p] = i
    return tuple(inv)


def permute(a: TypedTensor, perm: Sequence[int]) -> TypedTensor:
    """Right action ``a^perm``: factor ``i`` moves to position ``perm[i]``."""
    perm = _validate_perm(perm)
    if len(perm) != a.rank:
        raise UsageError(f"permutation of {len(perm)} factors applied to a rank-{a.rank} tensor")
    src = inverse(perm)
    return TypedTensor(tuple(a.tags[j] for j in src), np.transpose(a.data, src))


def permutation_tensor(tags: Sequence[AxisTag], perm: Sequence[int]) -> TypedTensor:
    """The permutation as a linear map, a 2n-tensor in ``V_{σ⁻¹(1)}⊗…⊗V_{σ⁻¹(n)}⊗V1*⊗…⊗Vn*``.

    ``contract(permutation_tensor(A.tags, σ), A, n) == permute(A, σ)``.
    """
    tags = tuple(tags)
    perm = _validate_perm(perm)
    src = inverse(perm)
    out_tags = tuple(tags[j] for j in src) + tuple(t.dual() for t in tags)
    data = np.zeros(tuple(t.dim for t in out_tags))
    for idx in np.ndindex(*(t.dim for t in tags)):
        data[tuple(idx[j] for j in src) + idx] = 1.0
    return TypedTensor(out_tags, data)


# -- derived constructions ------------------------------------------------


def _split(a: TypedTensor, split: int | None, name: str) -> int:
    if split is None:
        if a.rank % 2:
            raise UsageError(f"{name} has odd rank {a.rank}; declare its split explicitly")
        return a.rank // 2
    split = int(split)
    if not 0 < split < a.rank:
        raise UsageError(f"split {split} is invalid for rank-{a.rank} operand {name}")
    return split


def parallel_product(a: TypedTensor, b: TypedTensor, split_a: int | None = None,
                     split_b: int | None = None) -> TypedTensor:
    """``A ⊠ B``: ``(A ⊗ B)`` with the output factors of both moved to the front.

    For rank-2 operands this is ``(A⊗B)^(2 3)``.  Higher even ranks split in
    half by default; odd ranks need ``split_*`` (number of output factors).
    """
    p = _split(a, split_a, "left operand")
    r = _split(b, split_b, "right operand")
    q, s = a.rank - p, b.rank - r
    # (A_out, A_in, B_out, B_in) -> (A_out, B_out, A_in, B_in)
    order = list(range(p)) + list(range(p + q, p + q + r)) + list(range(p, p + q)) + list(
        range(p + q + r, p + q + r + s))
    perm = inverse(order)
    return permute(tensor_product(a, b), perm)


def adjoint(a: TypedTensor) -> TypedTensor:
    """Tensor transpose ``W⊗V* → V*⊗W``."""
    if a.rank != 2:
        raise UsageError(f"adjoint needs a rank-2 tensor, got rank {a.rank}")
    return permute(a, (1, 0))


def star_tensor(w: AxisTag, v_dual: AxisTag) -> TypedTensor:
    """The adjoint map ``*`` as a 4-tensor in ``V*⊗W⊗W*⊗V``; ``adjoint(A) = contract(star, A, 2)``."""
    return permutation_tensor((w, v_dual), (1, 0))


def _is_symmetric(t: TypedTensor, atol: float = 1e-12) -> bool:
    return t.rank == 2 and t.tags[0] == t.tags[1] and np.allclose(t.data, t.data.T, rtol=0, atol=atol)


def induced_inner_product(h: TypedTensor, g_inv: TypedTensor) -> TypedTensor:
    """Inner product ``k = h ⊠ g⁻¹`` on ``W⊗V*``, typed ``W*⊗V⊗W*⊗V``."""
    if not _is_symmetric(h) or h.tags[0].variance != "covector":
        raise UsageError("h must be a symmetric tensor in W*⊗W*")
    if not _is_symmetric(g_inv) or g_inv.tags[0].variance != "vector":
        raise UsageError("g_inv must be a symmetric tensor in V⊗V")
    for t in (h, g_inv):
        if np.min(np.linalg.eigvalsh(t.data)) <= 0:
            raise UsageError("metrics must be positive-definite")
    return parallel_product(h, g_inv)


def inner(a: TypedTensor, k: TypedTensor, b: TypedTensor) -> float:
    """``A : k : B``."""
    return float(contract(contract(a, k, a.rank), b, b.rank).data)


def inversion_derivative(a: TypedTensor, max_condition: float = 1e12) -> TypedTensor:
    """Derivative of ``A ↦ A⁻¹`` at ``A``: ``−(A⁻¹⊗A⁻¹)^(2 3 4)``.

    The result lives in ``V⊗V*⊗V*⊗V`` and ``contract(result, B, 2) == −A⁻¹BA⁻¹``.
    """
    if a.rank != 2 or not a.tags[0].pairs_with(a.tags[1]) or a.tags[0].variance != "vector":
        raise TagMismatch(f"inversion needs an endomorphism in V⊗V*, got {a.tags}")
    cond = np.linalg.cond(a.data)
    if not np.isfinite(cond) or cond > max_condition:
        raise SingularMatrix(f"matrix condition number {cond:.3g} exceeds {max_condition:.3g}")
    inv = TypedTensor(a.tags, np.linalg.inv(a.data))
    return -permute(tensor_product(inv, inv), from_cycles([(2, 3, 4)], 4))
