"""Tensor fields, sections along maps and their covariant derivatives.

A :class:`Field` is a callable on base coordinates whose value is a stack of
fiber components.  Each fiber axis is an :class:`Axis`: the manifold whose
(co)tangent space it belongs to, the variance, and an optional *anchor* map
``f: base → manifold``.  An anchored axis lives in ``f*T N`` (a section along
``f``); an unanchored axis lives over the base itself.  With this single
representation the covariant derivative of every field is

    (∇F)_{…a…, i} = ∂_i F_{…a…} ± Γ^N(f(x)) · F · ∂_i f,

with ``+`` for vector axes and ``−`` for covector axes, which is the induced
connection on tensor products of pullback bundles.  Sections along maps and
two-point tensors (the tangent map ``∇∘φ``) are just fields with anchored axes.

Curvature convention: :func:`curvature_operator` returns
``∇²σ : (X⊗Y − Y⊗X)`` where the last slot of ``∇²σ`` is the outer derivative.
This equals ``−R(X,Y)σ`` for the usual ``R(X,Y) = ∇_X∇_Y − ∇_Y∇_X − ∇_[X,Y]``
tensor returned by :meth:`RiemannianManifold.curvature_at`.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .bundle_types import Cotangent, LineBundle, Pullback, Tangent, TensorShared, point_key
from .errors import TagMismatch, TransportError, UsageError
from .manifolds import RiemannianManifold, SmoothMap, compose
from .tensor_algebra import COVECTOR, VECTOR, AxisTag, TypedTensor

FIELD_STEP = 1e-3
_LETTERS = [c for c in string.ascii_letters if c not in "zqij"]


def stencil5(f: Callable, x: np.ndarray, h: float = FIELD_STEP) -> np.ndarray:
    """Fourth-order central differences of ``f`` at a batch ``x`` of shape ``(N, d)``.

    The derivative axis is appended last.
    """
    d = x.shape[-1]
    cols = []
    for k in range(d):
        e = np.zeros(d)
        e[k] = h
        cols.append((8 * (f(x + e) - f(x - e)) - (f(x + 2 * e) - f(x - 2 * e))) / (12 * h))
    return np.stack(cols, axis=-1)


def _flat(x, d):
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (d,):
        raise UsageError(f"expected coordinates of length {d}, got shape {x.shape}")
    return x.reshape(-1, d), x.shape[:-1]


@dataclass(frozen=True, eq=False)
class Axis:
    manifold: RiemannianManifold
    variance: str
    anchor: Optional[SmoothMap] = None

    @property
    def dim(self) -> int:
        return self.manifold.dim

    def point(self, x):
        return x if self.anchor is None else self.anchor(x)

    def jacobian(self, x):
        """``∂_i f^c`` of the anchor (identity for unanchored axes), shape ``(N, n, d)``."""
        if self.anchor is None:
            return np.broadcast_to(np.eye(self.dim), x.shape[:-1] + (self.dim, self.dim))
        return self.anchor.jacobian_at(x)

    def tag(self, x) -> AxisTag:
        where = f"{self.anchor.name}{point_key(x)}" if self.anchor is not None else point_key(x)
        return AxisTag(f"T{self.manifold.name}@{where}", self.dim, self.variance)

    def btype(self):
        core = Tangent(self.manifold.id) if self.variance == VECTOR else Cotangent(self.manifold.id)
        return core if self.anchor is None else Pullback(self.anchor.id, core)


@dataclass(frozen=True, eq=False)
class Field:
    """Smooth section over ``base`` with fiber axes ``axes``.

    ``eval(x)`` maps coordinates ``(..., d)`` to ``(..., *dims)``;
    ``deriv(x)`` (optional) returns the coordinate partials with the
    derivative axis last.
    """

    base: RiemannianManifold
    axes: tuple
    eval: Callable
    deriv: Optional[Callable] = None
    fd_step: float = FIELD_STEP
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "axes", tuple(self.axes))
        for ax in self.axes:
            if ax.anchor is None and ax.manifold.name != self.base.name:
                raise UsageError(f"unanchored axis on {ax.manifold.name} cannot live over {self.base.name}")
            if ax.anchor is not None and ax.anchor.codomain.name != ax.manifold.name:
                raise UsageError(f"anchor {ax.anchor.name} does not map into {ax.manifold.name}")

    @property
    def dims(self) -> tuple:
        return tuple(ax.dim for ax in self.axes)

    @property
    def rank(self) -> int:
        return len(self.axes)

    def __call__(self, x) -> np.ndarray:
        xf, lead = _flat(x, self.base.dim)
        out = np.asarray(self.eval(xf), dtype=float)
        return out.reshape(lead + self.dims)

    def partial(self, x) -> np.ndarray:
        xf, lead = _flat(x, self.base.dim)
        if self.deriv is not None:
            out = np.asarray(self.deriv(xf), dtype=float)
        else:
            out = stencil5(lambda y: np.asarray(self.eval(y), dtype=float).reshape((len(y),) + self.dims),
                           xf, self.fd_step)
        return out.reshape(lead + self.dims + (self.base.dim,))

    def tags_at(self, x) -> tuple:
        x = np.asarray(x, dtype=float)
        return tuple(ax.tag(x) for ax in self.axes)

    def tensor_at(self, x) -> TypedTensor:
        """Value at a single point as a tagged tensor."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.base.dim,):
            raise UsageError("tensor_at takes a single point")
        return TypedTensor(self.tags_at(x), self(x))

    def btype(self):
        if not self.axes:
            return LineBundle(self.base.id)
        t = self.axes[-1].btype()
        for ax in reversed(self.axes[:-1]):
            t = TensorShared(ax.btype(), t)
        return t


# -- constructors ------------------------------------------------------------


def tensor_field(M: RiemannianManifold, variances: Sequence[str], fn: Callable,
                 deriv: Optional[Callable] = None, name: str = "") -> Field:
    """Field on ``M`` whose axes are (co)tangent spaces of ``M`` itself."""
    return Field(M, tuple(Axis(M, v) for v in variances), fn, deriv, name=name)


def scalar_field(M: RiemannianManifold, fn: Callable, deriv: Optional[Callable] = None, name: str = "") -> Field:
    return Field(M, (), fn, deriv, name=name)


def section_along(phi: SmoothMap, variances: Sequence[str], fn: Callable,
                  deriv: Optional[Callable] = None, name: str = "") -> Field:
    """Section of ``φ*(T^(…)S)``: ``fn(x)`` is a fiber tensor over ``φ(x)``."""
    return Field(phi.domain, tuple(Axis(phi.codomain, v, phi) for v in variances), fn, deriv, name=name)


def tangent_map(phi: SmoothMap) -> Field:
    """The two-point tensor ``∇∘φ ∈ Γ(φ*TS ⊗ T*M)`` (the Jacobian)."""
    M, S = phi.domain, phi.codomain
    return Field(M, (Axis(S, VECTOR, phi), Axis(M, COVECTOR)), phi.jacobian_at, phi.hessian_at,
                 name=f"d{phi.name}")


def cotangent_map(phi: SmoothMap) -> Field:
    """``(∇∘φ)^(1 2) ∈ Γ(T*M ⊗ φ*TS)``."""
    return permute_field(tangent_map(phi), (1, 0))


def pullback_field(phi: SmoothMap, e: Field) -> Field:
    """``φ*e``: evaluate ``e`` at ``φ(x)``; derivatives by the chain rule."""
    if e.base.name != phi.codomain.name:
        raise UsageError(f"cannot pull back a field on {e.base.name} along {phi.name}")
    axes = tuple(Axis(ax.manifold, ax.variance, phi if ax.anchor is None else compose(ax.anchor, phi))
                 for ax in e.axes)

    def ev(x):
        return e(phi(x))

    def dv(x):
        return np.einsum("n...c,nci->n...i", e.partial(phi(x)), phi.jacobian_at(x))

    return Field(phi.domain, axes, ev, dv, e.fd_step, name=f"{phi.name}*{e.name}")


def _permute_data(data: np.ndarray, perm: Sequence[int], lead: int) -> np.ndarray:
    """Apply the right action (factor i → position perm[i]) to the trailing axes."""
    r = len(perm)
    src = [0] * r
    for i, p in enumerate(perm):
        src[p] = i
    return np.transpose(data, tuple(range(lead)) + tuple(lead + s for s in src))


def permute_field(F: Field, perm: Sequence[int]) -> Field:
    perm = tuple(int(p) for p in perm)
    if sorted(perm) != list(range(F.rank)):
        raise UsageError(f"{perm} is not a permutation of {F.rank} factors")
    axes = [None] * F.rank
    for i, p in enumerate(perm):
        axes[p] = F.axes[i]

    def ev(x):
        return _permute_data(np.asarray(F.eval(x)).reshape((len(x),) + F.dims), perm, 1)

    def dv(x):
        d = F.partial(x)
        return _permute_data(d, perm + (F.rank,), 1)

    return Field(F.base, tuple(axes), ev, dv, F.fd_step, name=F.name)


# -- covariant derivative -------------------------------------------------------


def _connection_terms(F: Field, x: np.ndarray, T: np.ndarray) -> np.ndarray:
    """Christoffel corrections of ``∇F`` at a flat batch ``x`` with values ``T``."""
    r = F.rank
    idx = "".join(_LETTERS[:r])
    out = np.zeros(T.shape + (F.base.dim,))
    for p, ax in enumerate(F.axes):
        G = ax.manifold.christoffel_at(ax.point(x))
        C = np.einsum("nabc,nci->nabi", G, ax.jacobian(x))
        t_sub = "n" + idx[:p] + "q" + idx[p + 1:]
        if ax.variance == VECTOR:
            out += np.einsum(f"n{idx[p]}qi,{t_sub}->n{idx}i", C, T)
        else:
            out -= np.einsum(f"nq{idx[p]}i,{t_sub}->n{idx}i", C, T)
    return out


def covariant_derivative(F: Field) -> Field:
    """``∇F``, a field with one extra trailing ``T*base`` axis."""

    def ev(x):
        T = np.asarray(F.eval(x), dtype=float).reshape((len(x),) + F.dims)
        return F.partial(x) + _connection_terms(F, x, T)

    return Field(F.base, F.axes + (Axis(F.base, COVECTOR),), ev, None, F.fd_step,
                 name=f"∇{F.name}")


pullback_covariant_derivative = covariant_derivative


def covariant_hessian(phi: SmoothMap) -> Field:
    """``∇²φ ∈ Γ(φ*TS ⊗ T*M ⊗ T*M)``."""
    return covariant_derivative(tangent_map(phi))


def scalar_hessian(f: Field) -> Field:
    if f.rank != 0:
        raise UsageError("scalar_hessian expects a scalar field")
    return covariant_derivative(covariant_derivative(f))


def directional(F: Field, x, X) -> np.ndarray:
    """``∇_X F`` at ``x``."""
    return np.einsum("...i,...i->...", covariant_derivative(F)(x), np.asarray(X, dtype=float))


# -- curvature -------------------------------------------------------------------


def curvature_operator(F: Field, x, X, Y) -> np.ndarray:
    """``∇²F : (X⊗Y − Y⊗X)`` at ``x``; equals ``−R(X,Y)F`` in the usual convention."""
    xf, lead = _flat(x, F.base.dim)
    H = covariant_derivative(covariant_derivative(F))(xf)
    X = np.broadcast_to(np.asarray(X, dtype=float), xf.shape)
    Y = np.broadcast_to(np.asarray(Y, dtype=float), xf.shape)
    A = np.einsum("ni,nj->nij", X, Y)
    out = np.einsum("n...ij,nij->n...", H, A - np.swapaxes(A, -1, -2))
    return out.reshape(lead + F.dims)


def riemann_action(M: RiemannianManifold, x, V, X, Y) -> np.ndarray:
    """``R(X,Y)V = R^l_ijk V^i X^j Y^k`` with the usual sign convention."""
    up, _ = M.curvature_at(x)
    return np.einsum("...lijk,...i,...j,...k->...l", up, V, X, Y)


def pullback_curvature_check(sigma: Field, x, X, Y) -> tuple:
    """Both sides of the pullback curvature identity for ``σ ∈ Γ(φ*TS)``.

    Left: the curvature operator of the pullback connection applied to ``σ``.
    Right: ``φ*R^{TS}`` evaluated on ``(∇∘φ·X, ∇∘φ·Y)``, in the same sign
    convention as :func:`curvature_operator`.
    """
    if sigma.rank != 1 or sigma.axes[0].anchor is None or sigma.axes[0].variance != VECTOR:
        raise UsageError("expected a vector field along a map")
    phi = sigma.axes[0].anchor
    lhs = curvature_operator(sigma, x, X, Y)
    J = phi.jacobian_at(x)
    rhs = -riemann_action(phi.codomain, phi(x), sigma(x), J @ np.asarray(X, dtype=float),
                          J @ np.asarray(Y, dtype=float))
    return lhs, rhs


def hessian_chain_rule_check(phi: SmoothMap, e: Field, x) -> tuple:
    """Both sides of ``∇²(φ*e) = φ*∇²e : (∇∘φ ⊠ ∇∘φ) + φ*∇e · ∇∇∘φ``.

    The left side differentiates the composite ``e∘φ`` directly as a section
    along ``φ``; the right side is assembled from derivatives on ``S``.
    """
    if any(ax.anchor is not None for ax in e.axes):
        raise UsageError("e must be a field on the target with unanchored axes")
    composite = Field(phi.domain, tuple(Axis(ax.manifold, ax.variance, phi) for ax in e.axes),
                      lambda y: e(phi(y)), None, e.fd_step)
    xf, lead = _flat(x, phi.domain.dim)
    lhs = covariant_derivative(covariant_derivative(composite))(xf)
    y = phi(xf)
    J = phi.jacobian_at(xf)
    De = covariant_derivative(e)
    rhs = (np.einsum("n...bc,nbi,ncj->n...ij", covariant_derivative(De)(y), J, J)
           + np.einsum("n...b,nbij->n...ij", De(y), covariant_hessian(phi)(xf)))
    return lhs.reshape(lead + lhs.shape[1:]), rhs.reshape(lead + rhs.shape[1:])


def mixed_partials(psi: SmoothMap, m: int, x) -> tuple:
    """``(ψ_{,MI}, ψ_{,IM})`` for ``ψ: M×I → S`` where the first ``m`` coordinates are ``M``."""
    H = covariant_hessian(psi)(x)
    return H[..., :m, m:], H[..., m:, :m]


# -- divergence, tension, Laplacian --------------------------------------------


def divergence(F: Field) -> Field:
    """``tr ∇F`` over the trailing ``T base`` axis and the derivative axis."""
    if not F.axes:
        raise TagMismatch("divergence needs a trailing tangent factor")
    last = F.axes[-1]
    if last.anchor is not None or last.variance != VECTOR or last.manifold.name != F.base.name:
        raise TagMismatch(f"divergence needs a trailing T{F.base.name} factor",
                          left=last.variance, right=COVECTOR)
    D = covariant_derivative(F)

    def ev(x):
        return np.trace(D.eval(x), axis1=-2, axis2=-1)

    return Field(F.base, F.axes[:-1], ev, None, F.fd_step, name=f"div {F.name}")


def tension_field(phi: SmoothMap) -> Field:
    """``Δ_g φ = tr_g ∇²φ ∈ Γ(φ*TS)``."""
    M = phi.domain
    H = covariant_hessian(phi)

    def ev(x):
        return np.einsum("nij,naij->na", M.inverse_metric_at(x), H.eval(x))

    return Field(M, (Axis(phi.codomain, VECTOR, phi),), ev, None, name=f"τ({phi.name})")


def laplace_beltrami(M: RiemannianManifold, f: Callable, x, h: float = FIELD_STEP) -> np.ndarray:
    """``(1/√g) ∂_i(√g g^ij ∂_j f)`` by nested finite differences (an oracle)."""
    xf, lead = _flat(x, M.dim)

    def flux(y):
        grad = stencil5(lambda z: np.asarray(f(z), dtype=float), y, h)
        return np.sqrt(np.linalg.det(M.metric_at(y)))[:, None] * np.einsum("nij,nj->ni", M.inverse_metric_at(y), grad)

    dflux = stencil5(flux, xf, h)
    out = np.trace(dflux, axis1=-2, axis2=-1) / np.sqrt(np.linalg.det(M.metric_at(xf)))
    return out.reshape(lead)


# -- partial covariant derivatives on E = TS ⊗ T*M --------------------------------


@dataclass(frozen=True, eq=False)
class ConnectionMapData:
    """Connection map ``v`` of the induced connection on ``E = TS ⊗ T*M``.

    A curve ``(x(t), s(t), A(t))`` in ``E`` with velocity ``(ẋ, ṡ, Ȧ)`` has
    vertical part ``Ȧ^a_i + Γ^a_bc(s) A^b_i ṡ^c − Γ^k_ij(x) A^a_k ẋ^j``.
    Vertical vectors are identified with fiber elements (the vertical lift).
    """

    M: RiemannianManifold
    S: RiemannianManifold

    def v(self, x, s, A, xdot, sdot, Adot) -> np.ndarray:
        GS = self.S.christoffel_at(s)
        GM = self.M.christoffel_at(x)
        return (np.asarray(Adot, dtype=float)
                + np.einsum("...abc,...bi,...c->...ai", GS, A, sdot)
                - np.einsum("...kij,...ak,...j->...ai", GM, A, xdot))

    def vertical_lift(self, x, s, B) -> tuple:
        """Tangent vector of the fiber curve ``A + tB``: ``(0, 0, B)``."""
        return np.zeros(self.M.dim), np.zeros(self.S.dim), np.asarray(B, dtype=float)

    def transport_S(self, s, A, eps: float, b: int) -> np.ndarray:
        """First-order parallel transport of ``A`` along ``s + ε e_b``."""
        G = self.S.christoffel_at(s)
        return A - eps * np.einsum("ac,ci->ai", G[:, :, b], A)

    def transport_M(self, x, A, eps: float, k: int) -> np.ndarray:
        """First-order parallel transport of ``A`` along ``x + ε e_k``."""
        G = self.M.christoffel_at(x)
        return A + eps * np.einsum("ci,ac->ai", G[:, :, k], A)


def partial_covariant_derivatives(L: Callable, conn: ConnectionMapData, x, s, A,
                                  eps: float = 1e-4) -> tuple:
    """``(L_{,σ}, L_{,μ}, L_{,v})`` of ``L(x, s, A)`` at a point of ``E``.

    ``L_{,v}`` comes from fiber central differences; ``L_{,σ}`` and
    ``L_{,μ}`` from central differences along base curves with ``A``
    parallel transported to first order (its second-order error cancels in
    the central difference).
    """
    x = np.asarray(x, dtype=float)
    s = np.asarray(s, dtype=float)
    A = np.asarray(A, dtype=float)
    m, n = conn.M.dim, conn.S.dim
    if A.shape != (n, m):
        raise UsageError(f"fiber element must have shape {(n, m)}, got {A.shape}")

    def val(*args):
        v = float(L(*args))
        if not np.isfinite(v):
            raise TransportError("Lagrangian is not finite along a transport step")
        return v

    Ls = np.empty(n)
    for b in range(n):
        e = np.zeros(n)
        e[b] = eps
        Ls[b] = (val(x, s + e, conn.transport_S(s, A, eps, b))
                 - val(x, s - e, conn.transport_S(s, A, -eps, b))) / (2 * eps)
    Lm = np.empty(m)
    for k in range(m):
        e = np.zeros(m)
        e[k] = eps
        Lm[k] = (val(x + e, s, conn.transport_M(x, A, eps, k))
                 - val(x - e, s, conn.transport_M(x, A, -eps, k))) / (2 * eps)
    Lv = np.empty((n, m))
    for a in range(n):
        for i in range(m):
            E = np.zeros((n, m))
            E[a, i] = eps
            Lv[a, i] = (val(x, s, A + E) - val(x, s, A - E)) / (2 * eps)
    return Ls, Lm, Lv
