"""First-order variational problems for maps ``φ: M → S``.

The energy is ``𝓛(φ) = ∫_M L(x, φ(x), ∇∘φ(x)) dV_g`` with ``L`` a function
on ``E = TS ⊗ T*M``.  Fiber elements are arrays ``A[a, i]`` (``a`` indexes
``S``, ``i`` indexes ``M``) and ``L_{,v}`` is stored the same way with the
``S`` index down and the ``M`` index up.

Derivatives are evaluated pointwise when the configuration carries an
analytic map (fourth-order stencils from :mod:`covariant_calculus`) and by
second-order grid differences otherwise.  Quadrature is the trapezoid rule.

Euler-Lagrange residual sign: the residual is ``L_{,σ} − div L_{,v}``, which
for the kinetic Lagrangian equals ``−h(φ'' + Γ(φ', φ'))``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import optimize

from . import covariant_calculus as cc
from .errors import (ChartExit, DomainNotInterval, FlowDiverged, NonAutonomousLagrangian, NotCritical,
                     OutOfChart, UsageError)
from .manifolds import RiemannianManifold, SmoothMap, euclidean, integrate_geodesic
from .tensor_algebra import COVECTOR, VECTOR

log = logging.getLogger(__name__)


# -- domains -------------------------------------------------------------------


@dataclass(frozen=True)
class Interval:
    a: float
    b: float
    n: int

    def __post_init__(self):
        if self.n < 8:
            raise UsageError("grids need at least 8 points")
        if not self.b > self.a:
            raise UsageError("interval needs a < b")

    dim = 1

    @property
    def shape(self) -> tuple:
        return (self.n,)

    @property
    def spacing(self) -> tuple:
        return ((self.b - self.a) / (self.n - 1),)

    @property
    def axes(self) -> list:
        return [np.linspace(self.a, self.b, self.n)]

    def points(self) -> np.ndarray:
        return self.axes[0][:, None]

    def weights(self) -> np.ndarray:
        w = np.full(self.n, self.spacing[0])
        w[[0, -1]] *= 0.5
        return w

    def boundary_mask(self) -> np.ndarray:
        m = np.zeros(self.n, dtype=bool)
        m[[0, -1]] = True
        return m


@dataclass(frozen=True)
class Rectangle:
    lo: tuple
    hi: tuple
    n: tuple

    def __post_init__(self):
        if min(self.n) < 8:
            raise UsageError("grids need at least 8 points per axis")
        object.__setattr__(self, "lo", tuple(float(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(float(v) for v in self.hi))
        object.__setattr__(self, "n", tuple(int(v) for v in self.n))

    dim = 2

    @property
    def shape(self) -> tuple:
        return self.n

    @property
    def spacing(self) -> tuple:
        return tuple((h - l) / (k - 1) for l, h, k in zip(self.lo, self.hi, self.n))

    @property
    def axes(self) -> list:
        return [np.linspace(l, h, k) for l, h, k in zip(self.lo, self.hi, self.n)]

    def points(self) -> np.ndarray:
        X, Y = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([X, Y], axis=-1)

    def weights(self) -> np.ndarray:
        ws = []
        for h, k in zip(self.spacing, self.n):
            w = np.full(k, h)
            w[[0, -1]] *= 0.5
            ws.append(w)
        return np.outer(*ws)

    def boundary_mask(self) -> np.ndarray:
        m = np.zeros(self.n, dtype=bool)
        m[[0, -1], :] = True
        m[:, [0, -1]] = True
        return m


def _trapezoid(domain, values) -> float:
    return float(np.sum(domain.weights() * values))


# -- problem data ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Lagrangian:
    """``L(x, s, A)`` with optional exact covariant partials.

    All callables are batch-vectorized over leading axes.  ``L_vv`` returns
    ``W[a, i, b, j]`` so that ``∇A·L_vv·∇B = W[a,i,b,j] ∇A[a,i] ∇B[b,j]``;
    ``L_ss`` returns ``[a, b]`` and ``L_sv`` returns ``[a, b, j]``
    (``L_vs`` is its transpose).  ``flat_only`` marks Lagrangians whose
    closed forms assume flat ``M`` and ``S``.
    """

    name: str
    value: Callable
    L_sigma: Optional[Callable] = None
    L_mu: Optional[Callable] = None
    L_v: Optional[Callable] = None
    L_ss: Optional[Callable] = None
    L_sv: Optional[Callable] = None
    L_vv: Optional[Callable] = None
    flat_only: bool = False
    params: dict = field(default_factory=dict)

    @property
    def has_second_partials(self) -> bool:
        return self.L_vv is not None and self.L_ss is not None and self.L_sv is not None


def kinetic(M: RiemannianManifold, S: RiemannianManifold) -> Lagrangian:
    """``L(A) = ½ A:k:A = ½ h_ab g^ij A^a_i A^b_j``."""

    def value(x, s, A):
        return 0.5 * np.einsum("...ab,...ij,...ai,...bj->...", S.metric_at(s), M.inverse_metric_at(x), A, A)

    def L_v(x, s, A):
        return np.einsum("...ab,...bj,...ji->...ai", S.metric_at(s), A, M.inverse_metric_at(x))

    def L_vv(x, s, A):
        return np.einsum("...ab,...ij->...aibj", S.metric_at(s), M.inverse_metric_at(x))

    def zeros_s(x, s, A):
        return np.zeros(np.shape(s))

    def zeros_m(x, s, A):
        return np.zeros(np.shape(x))

    def zeros_ss(x, s, A):
        return np.zeros(np.shape(s) + (S.dim,))

    def zeros_sv(x, s, A):
        return np.zeros(np.shape(s) + (S.dim, M.dim))

    return Lagrangian("kinetic", value, zeros_s, zeros_m, L_v, zeros_ss, zeros_sv, L_vv)


def kinetic_potential(M: RiemannianManifold, S: RiemannianManifold, omega: float = 1.0,
                      center=None) -> Lagrangian:
    """``L = ½ A:k:A − V(s)`` with ``V(s) = ½ ω² |s − c|²`` in coordinates."""
    base = kinetic(M, S)
    c = np.zeros(S.dim) if center is None else np.asarray(center, dtype=float)
    w2 = float(omega) ** 2

    def V(s):
        return 0.5 * w2 * np.sum((s - c) ** 2, axis=-1)

    def value(x, s, A):
        return base.value(x, s, A) - V(s)

    def L_sigma(x, s, A):
        return -w2 * (s - c)

    def L_ss(x, s, A):
        # minus the covariant Hessian of V
        hess = w2 * np.broadcast_to(np.eye(S.dim), np.shape(s)[:-1] + (S.dim, S.dim))
        corr = np.einsum("...kab,...k->...ab", S.christoffel_at(s), w2 * (s - c))
        return -(hess - corr)

    return Lagrangian("kinetic_potential", value, L_sigma, base.L_mu, base.L_v, L_ss, base.L_sv, base.L_vv,
                      params={"omega": omega, "center": c.tolist()})


def anisotropic_quadratic(M: RiemannianManifold, S: RiemannianManifold, W) -> Lagrangian:
    """``L = ½ W[a,i,b,j] A^a_i A^b_j`` with constant symmetric ``W`` (flat ``M`` and ``S``)."""
    W = np.asarray(W, dtype=float).reshape(S.dim, M.dim, S.dim, M.dim)
    if not np.allclose(W, W.transpose(2, 3, 0, 1)):
        raise UsageError("W must be symmetric under (a,i) <-> (b,j)")
    base = kinetic(M, S)

    def value(x, s, A):
        return 0.5 * np.einsum("aibj,...ai,...bj->...", W, A, A)

    def L_v(x, s, A):
        return np.einsum("aibj,...bj->...ai", W, A)

    def L_vv(x, s, A):
        return np.broadcast_to(W, np.shape(A)[:-2] + W.shape)

    return Lagrangian("anisotropic", value, base.L_sigma, base.L_mu, L_v, base.L_ss, base.L_sv, L_vv,
                      flat_only=True, params={"W": W.tolist()})


LAGRANGIANS = {"kinetic": kinetic, "kinetic_potential": kinetic_potential, "anisotropic": anisotropic_quadratic}


def make_lagrangian(name: str, M, S, **params) -> Lagrangian:
    try:
        ctor = LAGRANGIANS[name]
    except KeyError:
        raise UsageError(f"unknown Lagrangian {name!r}; choose from {sorted(LAGRANGIANS)}") from None
    return ctor(M, S, **params)


@dataclass(frozen=True, eq=False)
class EnergyProblem:
    domain: object
    M: RiemannianManifold
    S: RiemannianManifold
    lagrangian: Lagrangian
    boundary: str = "fixed"

    def __post_init__(self):
        if self.boundary not in ("fixed", "free"):
            raise UsageError("boundary must be 'fixed' or 'free'")
        if self.M.dim != self.domain.dim:
            raise UsageError(f"domain dimension {self.domain.dim} does not match {self.M.name}")
        if self.lagrangian.flat_only:
            for mf in (self.M, self.S):
                x = np.zeros((1, mf.dim)) + 0.5
                if np.any(mf.christoffel_at(x) != 0):
                    raise UsageError(f"{self.lagrangian.name} Lagrangian needs flat manifolds")


@dataclass(frozen=True, eq=False)
class FieldConfiguration:
    """Grid values of ``φ`` in ``S`` coordinates, optionally with an analytic map."""

    domain: object
    values: np.ndarray
    map: Optional[SmoothMap] = None
    jacobian: Optional[np.ndarray] = None

    @classmethod
    def from_map(cls, domain, phi: SmoothMap) -> "FieldConfiguration":
        return cls(domain, phi(domain.points()), phi)


@dataclass(frozen=True, eq=False)
class VariationField:
    """Grid values of a vector field along ``φ``; ``fn`` gives it analytically."""

    values: np.ndarray
    fn: Optional[Callable] = None

    @classmethod
    def from_fn(cls, domain, fn: Callable) -> "VariationField":
        return cls(np.asarray(fn(domain.points()), dtype=float), fn)

    def __add__(self, other):
        fn = None
        if self.fn is not None and other.fn is not None:
            f, g = self.fn, other.fn
            fn = lambda x: f(x) + g(x)  # noqa: E731
        return VariationField(self.values + other.values, fn)

    def __mul__(self, c):
        fn = None if self.fn is None else (lambda x, f=self.fn: c * f(x))
        return VariationField(c * self.values, fn)

    __rmul__ = __mul__


@dataclass
class VariationReport:
    energy: float
    first_variation_formula: float
    first_variation_fd: float
    el_residual_grid: np.ndarray
    boundary_residual: np.ndarray
    hamiltonian_trace: Optional[np.ndarray] = None
    second_variation_formula: Optional[float] = None
    second_variation_fd: Optional[float] = None

    def to_dict(self) -> dict:
        def conv(v):
            return None if v is None else np.asarray(v).tolist()

        return {
            "energy": self.energy,
            "first_variation_formula": self.first_variation_formula,
            "first_variation_fd": self.first_variation_fd,
            "el_residual_max": float(np.max(np.abs(self.el_residual_grid), initial=0.0)),
            "el_residual_grid": conv(self.el_residual_grid),
            "boundary_residual": conv(self.boundary_residual),
            "hamiltonian_trace": conv(self.hamiltonian_trace),
            "second_variation_formula": self.second_variation_formula,
            "second_variation_fd": self.second_variation_fd,
        }


# -- pointwise data on the grid -------------------------------------------------------


def _analytic(phi: FieldConfiguration) -> bool:
    return phi.map is not None


def grid_gradient(domain, values: np.ndarray) -> np.ndarray:
    """Coordinate gradient of grid data; derivative axis appended last (O(h²) everywhere)."""
    g = [np.gradient(values, h, axis=k, edge_order=2) for k, h in enumerate(domain.spacing)]
    return np.stack(g, axis=-1)


def jacobian_grid(p: EnergyProblem, phi: FieldConfiguration) -> np.ndarray:
    """``∇∘φ`` on the grid, shape ``(*grid, dim S, dim M)``."""
    if phi.jacobian is not None:
        return np.asarray(phi.jacobian, dtype=float)
    if phi.map is not None:
        return phi.map.jacobian_at(p.domain.points())
    return grid_gradient(p.domain, phi.values)


def _state(p: EnergyProblem, phi: FieldConfiguration):
    x = p.domain.points()
    p.S.check_chart(phi.values)
    return x, np.asarray(phi.values, dtype=float), jacobian_grid(p, phi)


def _pointwise_partials(p: EnergyProblem, x, s, A):
    """``(L_σ, L_μ, L_v)`` on the grid, exact when the Lagrangian provides them."""
    L = p.lagrangian
    if L.L_sigma is not None and L.L_mu is not None and L.L_v is not None:
        return L.L_sigma(x, s, A), L.L_mu(x, s, A), L.L_v(x, s, A)
    conn = cc.ConnectionMapData(p.M, p.S)
    lead = s.shape[:-1]
    out_s, out_m, out_v = np.empty(s.shape), np.empty(x.shape), np.empty(A.shape)
    for idx in np.ndindex(*lead):
        out_s[idx], out_m[idx], out_v[idx] = cc.partial_covariant_derivatives(
            lambda *a: L.value(*a), conn, x[idx], s[idx], A[idx])
    return out_s, out_m, out_v


def _Lv_field(p: EnergyProblem, phi: FieldConfiguration) -> cc.Field:
    """``φ*_{,M}L_{,v}`` as a section of ``φ*T*S ⊗ TM``."""
    f = phi.map

    def ev(x):
        s = f(x)
        return _pointwise_partials(p, x, s, f.jacobian_at(x))[2]

    return cc.Field(p.M, (cc.Axis(p.S, COVECTOR, f), cc.Axis(p.M, VECTOR)), ev)


def divergence_grid(p: EnergyProblem, s, J, T) -> np.ndarray:
    """Grid divergence of a section ``T[a, i]`` of ``φ*T*S ⊗ TM``."""
    x = p.domain.points()
    dT = grid_gradient(p.domain, T)  # [..., a, i, k]
    out = np.trace(dT, axis1=-2, axis2=-1)
    GS = p.S.christoffel_at(s)
    GM = p.M.christoffel_at(x)
    out -= np.einsum("...cab,...ci,...bi->...a", GS, T, J)
    out += np.einsum("...iik,...ak->...a", GM, T)
    return out


def _div_Lv(p: EnergyProblem, phi: FieldConfiguration, x, s, J, Lv) -> np.ndarray:
    if _analytic(phi):
        return cc.divergence(_Lv_field(p, phi))(x)
    return divergence_grid(p, s, J, Lv)


def interval_conormal(p: EnergyProblem) -> np.ndarray:
    """Unit outward conormal ``±√g_tt`` at the two endpoints (zero elsewhere)."""
    x = p.domain.points()
    g = p.M.metric_at(x)[..., 0, 0]
    nu = np.zeros(x.shape)
    nu[0, 0] = -np.sqrt(g[0])
    nu[-1, 0] = np.sqrt(g[-1])
    return nu


def boundary_flux(p: EnergyProblem, T: np.ndarray) -> float:
    """``∮ T·ν dV̄`` for a grid field ``T[..., i]`` of ``TM`` vectors.

    On a rectangle ``ν`` is the outward coordinate covector normalized by
    ``g`` and ``dV̄`` the induced length element, trapezoid along each edge.
    """
    dom = p.domain
    if isinstance(dom, Interval):
        return float(np.sum(np.einsum("...i,...i->...", T, interval_conormal(p))))
    x = dom.points()
    ginv = p.M.inverse_metric_at(x)
    g = p.M.metric_at(x)
    (hx, hy), (nx, ny) = dom.spacing, dom.shape
    wx, wy = np.full(nx, hx), np.full(ny, hy)
    wx[[0, -1]] *= 0.5
    wy[[0, -1]] *= 0.5
    edges = [((0, slice(None)), 0, -1.0, wy), ((nx - 1, slice(None)), 0, 1.0, wy),
             ((slice(None), 0), 1, -1.0, wx), ((slice(None), ny - 1), 1, 1.0, wx)]
    total = 0.0
    for sl, k, sign, w in edges:
        n = np.zeros(2)
        n[k] = sign
        norm = np.sqrt(np.einsum("i,...ij,j->...", n, ginv[sl], n))
        ds = np.sqrt(g[sl][..., 1 - k, 1 - k])
        total += float(np.sum(w * (T[sl] @ n) / norm * ds))
    return total


# -- energy and first variation -----------------------------------------------------


def energy(p: EnergyProblem, phi: FieldConfiguration) -> float:
    """Trapezoid quadrature of ``L(x, φ, ∇∘φ) √det g``."""
    x, s, J = _state(p, phi)
    dens = p.M.volume_density_at(x)
    return _trapezoid(p.domain, p.lagrangian.value(x, s, J) * dens)


def _exp(S: RiemannianManifold, s, v) -> np.ndarray:
    """``exp_s(v)`` with enough RK4 steps that each moves at most 1e-3 in coordinates."""
    scale = float(np.max(np.abs(v), initial=0.0))
    steps = max(1, int(np.ceil(scale / 1e-3)))
    return integrate_geodesic(S, s, v, 1.0, 1.0 / steps, record=False)[1]


def varied(p: EnergyProblem, phi: FieldConfiguration, V: VariationField) -> FieldConfiguration:
    """The configuration ``exp_φ(V)`` (analytic when both ``φ`` and ``V`` are)."""
    try:
        if _analytic(phi) and V.fn is not None:
            f, vf = phi.map, V.fn

            def fwd(x):
                return _exp(p.S, f(x), vf(x))

            m = SmoothMap(f"exp({f.name})", p.M, p.S, fwd,
                          lambda x: cc.stencil5(fwd, np.atleast_2d(x)).reshape(np.shape(x)[:-1] + (p.S.dim, p.M.dim)))
            return FieldConfiguration(p.domain, fwd(p.domain.points()), m)
        return FieldConfiguration(p.domain, _exp(p.S, phi.values, V.values))
    except OutOfChart as exc:
        raise ChartExit(f"variation left the chart: {exc}", time=float("nan")) from exc


def covariant_grad_variation(p: EnergyProblem, phi: FieldConfiguration, V: VariationField) -> np.ndarray:
    """``∇^{φ*TS} V`` on the grid, shape ``(*grid, dim S, dim M)``."""
    x = p.domain.points()
    if _analytic(phi) and V.fn is not None:
        sec = cc.section_along(phi.map, [VECTOR], V.fn)
        return cc.covariant_derivative(sec)(x)
    s = np.asarray(phi.values, dtype=float)
    J = jacobian_grid(p, phi)
    dV = grid_gradient(p.domain, V.values)
    return dV + np.einsum("...abc,...b,...ci->...ai", p.S.christoffel_at(s), V.values, J)


def _check_boundary(p: EnergyProblem, *Vs):
    if p.boundary != "fixed":
        return
    mask = p.domain.boundary_mask()
    for V in Vs:
        if np.max(np.abs(V.values[mask]), initial=0.0) > 1e-12:
            raise UsageError("fixed-boundary problems need variations that vanish on the boundary")


def first_variation_formula(p: EnergyProblem, phi: FieldConfiguration, V: VariationField) -> float:
    """``∫ A·(L_σ − div L_v) dV + ∮ A·L_v·ν dV̄`` (boundary term only for free boundaries)."""
    _check_boundary(p, V)
    x, s, J = _state(p, phi)
    Ls, _, Lv = _pointwise_partials(p, x, s, J)
    div = _div_Lv(p, phi, x, s, J, Lv)
    dens = p.M.volume_density_at(x)
    A = V.values
    interior = _trapezoid(p.domain, np.einsum("...a,...a->...", A, Ls - div) * dens)
    if p.boundary == "fixed":
        return interior
    return interior + boundary_flux(p, np.einsum("...a,...ai->...i", A, Lv))


def first_variation_weak(p: EnergyProblem, phi: FieldConfiguration, V: VariationField) -> float:
    """``∫ (L_σ·A + L_v·∇A) dV``, the form before integration by parts."""
    x, s, J = _state(p, phi)
    Ls, _, Lv = _pointwise_partials(p, x, s, J)
    DA = covariant_grad_variation(p, phi, V)
    dens = p.M.volume_density_at(x)
    return _trapezoid(p.domain, (np.einsum("...a,...a->...", Ls, V.values)
                                 + np.einsum("...ai,...ai->...", Lv, DA)) * dens)


def first_variation_fd(p: EnergyProblem, phi: FieldConfiguration, V: VariationField, eps: float = 1e-4) -> float:
    """Central difference of the energy along ``i ↦ exp_φ(i V)``."""
    ep = energy(p, varied(p, phi, V * eps))
    em = energy(p, varied(p, phi, V * (-eps)))
    return (ep - em) / (2 * eps)


def first_variation(p: EnergyProblem, phi: FieldConfiguration, V: VariationField, eps: float = 1e-4) -> tuple:
    return first_variation_formula(p, phi, V), first_variation_fd(p, phi, V, eps)


def euler_lagrange_residual(p: EnergyProblem, phi: FieldConfiguration) -> tuple:
    """Interior residual ``L_σ − div L_v`` (``φ*T*S``-valued) and boundary values ``L_v·ν``."""
    x, s, J = _state(p, phi)
    Ls, _, Lv = _pointwise_partials(p, x, s, J)
    res = Ls - _div_Lv(p, phi, x, s, J, Lv)
    mask = p.domain.boundary_mask()
    if isinstance(p.domain, Interval):
        bnd = np.einsum("...ai,...i->...a", Lv, interval_conormal(p))[mask]
    else:
        bnd = Lv[mask]
    band = mask if _analytic(phi) else _band(p.domain, 2)
    interior = np.where(band[..., None], 0.0, res)
    return interior, bnd


def _band(domain, width: int) -> np.ndarray:
    """Nodes within ``width`` grid steps of the boundary.

    Nested grid differences are only first-order next to the boundary, so
    grid-mode residuals are reported on nodes at least two steps inside.
    """
    m = np.ones(domain.shape, dtype=bool)
    m[tuple(slice(width, n - width) for n in domain.shape)] = False
    return m


def check_critical(p: EnergyProblem, phi: FieldConfiguration, tol: float = 1e-5):
    res, _ = euler_lagrange_residual(p, phi)
    worst = float(np.max(np.abs(res), initial=0.0))
    if worst > tol:
        raise NotCritical(f"Euler-Lagrange residual {worst:.3g} exceeds {tol:g}")
    return worst


# -- Hamiltonian ----------------------------------------------------------------------


def hamiltonian(p: EnergyProblem, phi: FieldConfiguration, samples: int = 5, tol: float = 1e-6) -> np.ndarray:
    """``H = L_v : ∇∘φ − L`` at every grid point of an interval domain."""
    if not isinstance(p.domain, Interval):
        raise DomainNotInterval("the Hamiltonian is defined for interval domains")
    x, s, J = _state(p, phi)
    Ls, Lm, Lv = _pointwise_partials(p, x, s, J)
    idx = np.linspace(0, len(x) - 1, samples).astype(int)
    if p.lagrangian.L_mu is None:
        conn = cc.ConnectionMapData(p.M, p.S)
        Lm_s = np.array([cc.partial_covariant_derivatives(p.lagrangian.value, conn, x[k], s[k], J[k])[1]
                         for k in idx])
    else:
        Lm_s = Lm[idx]
    if np.max(np.abs(Lm_s), initial=0.0) > tol:
        raise NonAutonomousLagrangian(f"L_mu = {np.max(np.abs(Lm_s)):.3g} at sample points")
    return np.einsum("...ai,...ai->...", Lv, J) - p.lagrangian.value(x, s, J)


# -- geodesics ------------------------------------------------------------------------


def solve_geodesic(S: RiemannianManifold, x0, v0, T: float, h: float = 1e-3, stride: int = 1) -> FieldConfiguration:
    """RK4 geodesic on ``[0, T]``; velocities are stored as the configuration's jacobian."""
    t, xs, vs = integrate_geodesic(S, x0, v0, T, h)
    xs, vs = xs[::stride], vs[::stride]
    n = len(xs)
    if n < 8:
        raise UsageError("geodesic grid needs at least 8 samples; decrease h")
    dom = Interval(0.0, float(t[::stride][-1]), n)
    return FieldConfiguration(dom, xs, None, vs[..., None])


def shoot_geodesic(S: RiemannianManifold, x0, x1, T: float = 1.0, n: int = 41, substeps: int = 20,
                   tol: float = 1e-12) -> FieldConfiguration:
    """Geodesic from ``x0`` to ``x1`` on ``[0, T]`` by shooting on the initial velocity."""
    x0 = np.asarray(x0, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    h = T / ((n - 1) * substeps)

    def miss(v):
        return integrate_geodesic(S, x0, v, T, h, record=False)[1] - x1

    sol = optimize.root(miss, (x1 - x0) / T, tol=tol)
    if not sol.success or np.max(np.abs(miss(sol.x))) > 1e-9:
        raise NotCritical(f"shooting failed: {sol.message}")
    _, xs, vs = integrate_geodesic(S, x0, sol.x, T, h)
    return FieldConfiguration(Interval(0.0, T, n), xs[::substeps], None, vs[::substeps][..., None])


# -- harmonic map heat flow -------------------------------------------------------------


def discrete_tension(p: EnergyProblem, values: np.ndarray) -> np.ndarray:
    """``g^ij(∂_ijφ − Γ^k_ij ∂_kφ + Γ^S(∂_iφ, ∂_jφ))`` with compact central stencils.

    Boundary nodes are set to zero.
    """
    dom = p.domain
    u = np.asarray(values, dtype=float)
    m = dom.dim
    hs = dom.spacing
    inner = tuple(slice(1, n - 1) for n in u.shape[:m])
    core = u[inner]

    def shifted(**offsets):
        sl = [slice(1, n - 1) for n in u.shape[:m]]
        for k, d in offsets.items():
            k = int(k[1:])
            sl[k] = slice(1 + d, u.shape[k] - 1 + d)
        return u[tuple(sl)]

    def shift(k, d):
        return shifted(**{f"k{k}": d})

    def shift2(k, dk, l, dl):
        return shifted(**{f"k{k}": dk, f"k{l}": dl})

    first = np.stack([(shift(k, 1) - shift(k, -1)) / (2 * hs[k]) for k in range(m)], axis=-1)
    second = np.empty(core.shape + (m, m))
    for k in range(m):
        second[..., k, k] = (shift(k, 1) - 2 * core + shift(k, -1)) / hs[k] ** 2
        for l in range(k + 1, m):
            mixed = (shift2(k, 1, l, 1) - shift2(k, 1, l, -1) - shift2(k, -1, l, 1)
                     + shift2(k, -1, l, -1)) / (4 * hs[k] * hs[l])
            second[..., k, l] = second[..., l, k] = mixed
    x = dom.points()[inner]
    ginv = p.M.inverse_metric_at(x)
    hess = (second - np.einsum("...kij,...ak->...aij", p.M.christoffel_at(x), first)
            + np.einsum("...abc,...bi,...cj->...aij", p.S.christoffel_at(core), first, first))
    out = np.zeros_like(u)
    out[inner] = np.einsum("...ij,...aij->...a", ginv, hess)
    return out


def tension_norm(p: EnergyProblem, values: np.ndarray) -> float:
    """Sup over the grid of ``|τ|_h``."""
    tau = discrete_tension(p, values)
    return float(np.max(p.S.norm(values, tau), initial=0.0))


@dataclass
class FlowResult:
    config: FieldConfiguration
    tension_history: np.ndarray
    steps: int


def gradient_flow_harmonic(p: EnergyProblem, phi0: FieldConfiguration, steps: int, dt: float,
                           tol: float = 0.0, record_every: int = 1) -> FlowResult:
    """Forward-Euler heat flow ``φ ← exp_φ(dt·τ(φ))`` with a fixed boundary.

    Stops early once the sup tension drops below ``tol``; aborts with
    :class:`FlowDiverged` if it grows to ten times its initial value.
    """
    if p.boundary != "fixed":
        raise UsageError("the harmonic flow needs a fixed boundary")
    u = np.array(phi0.values, dtype=float)
    p.S.check_chart(u)
    hist = [tension_norm(p, u)]
    k = 0
    for k in range(1, steps + 1):
        tau = discrete_tension(p, u)
        u = _exp(p.S, u, dt * tau)
        t = tension_norm(p, u)
        if not np.isfinite(t) or t > 10 * hist[0] + 1e-300:
            raise FlowDiverged(f"tension grew from {hist[0]:.3g} to {t:.3g} at step {k}")
        if k % record_every == 0 or t < tol:
            hist.append(t)
        if t < tol:
            break
    log.debug("harmonic flow finished after %d steps, tension %.3g", k, hist[-1])
    return FlowResult(FieldConfiguration(p.domain, u), np.array(hist), k)


# -- second variation -------------------------------------------------------------------


def second_variation_formula(p: EnergyProblem, phi: FieldConfiguration, A: VariationField,
                             B: VariationField, check: bool = True, tol: float = 1e-5) -> float:
    """Assembled second variation at a critical ``φ``.

    Integrand ``A·L_σσ·B + A·L_σv·∇B + ∇A·L_vσ·B + ∇A·L_vv·∇B
    + L_v[a,k] (R(B, ∂_kφ)A)^a`` with the usual curvature sign convention;
    for the kinetic Lagrangian the last term is ``−⟨R(A, φ')φ', B⟩``.
    """
    L = p.lagrangian
    if not L.has_second_partials:
        raise UsageError(f"{L.name} Lagrangian has no exact second partials")
    _check_boundary(p, A, B)
    if check:
        check_critical(p, phi, tol)
    x, s, J = _state(p, phi)
    _, _, Lv = _pointwise_partials(p, x, s, J)
    DA = covariant_grad_variation(p, phi, A)
    DB = covariant_grad_variation(p, phi, B)
    a, b = A.values, B.values
    Lsv = L.L_sv(x, s, J)
    R, _ = p.S.curvature_at(s)
    integrand = (np.einsum("...a,...ab,...b->...", a, L.L_ss(x, s, J), b)
                 + np.einsum("...a,...abj,...bj->...", a, Lsv, DB)
                 + np.einsum("...bj,...abj,...a->...", DA, Lsv, b)
                 + np.einsum("...ai,...aibj,...bj->...", DA, L.L_vv(x, s, J), DB)
                 + np.einsum("...ak,...alij,...l,...i,...jk->...", Lv, R, a, b, J))
    return _trapezoid(p.domain, integrand * p.M.volume_density_at(x))


def second_variation_fd(p: EnergyProblem, phi: FieldConfiguration, A: VariationField, B: VariationField,
                        step: float = 1e-3) -> float:
    """Mixed central difference of ``(i, j) ↦ 𝓛(exp_φ(iA + jB))`` at the origin."""
    def E(i, j):
        return energy(p, varied(p, phi, A * i + B * j))

    return (E(step, step) - E(step, -step) - E(-step, step) + E(-step, -step)) / (4 * step * step)


def second_variation(p: EnergyProblem, phi: FieldConfiguration, A: VariationField, B: VariationField,
                     step: float = 1e-3) -> tuple:
    return second_variation_formula(p, phi, A, B), second_variation_fd(p, phi, A, B, step)


def equator_geodesic(length: float, n: int = 401) -> tuple:
    """Unit-speed equator ``θ = π/2, φ = t`` of the round sphere on ``[0, length]``."""
    from .manifolds import sphere2

    S = sphere2()
    M = euclidean(1)

    def fwd(t):
        return np.stack([np.full(t.shape[:-1], np.pi / 2), t[..., 0]], axis=-1)

    def jac(t):
        out = np.zeros(t.shape[:-1] + (2, 1))
        out[..., 1, 0] = 1.0
        return out

    def hess(t):
        return np.zeros(t.shape[:-1] + (2, 1, 1))

    phi = SmoothMap("equator", M, S, fwd, jac, hess)
    dom = Interval(0.0, float(length), n)
    p = EnergyProblem(dom, M, S, kinetic(M, S), "fixed")
    return p, FieldConfiguration.from_map(dom, phi)


def normal_sine(length: float, m: int, normal=(1.0, 0.0)) -> Callable:
    """``t ↦ sin(mπt/ℓ)·N`` for a constant coordinate normal ``N``."""
    N = np.asarray(normal, dtype=float)

    def fn(t):
        return np.sin(m * np.pi * t[..., 0] / length)[..., None] * N

    return fn


def index_form_spectrum(p: EnergyProblem, geodesic: FieldConfiguration, k: int,
                        normal: Callable | None = None) -> np.ndarray:
    """Eigenvalues of the second-variation form on ``sin(mπt/ℓ)·N``, ``m = 1..k``.

    ``normal(t)`` returns the unit normal field along the geodesic (default
    the constant coordinate field ``∂θ``, correct along the sphere's equator).
    """
    if not isinstance(p.domain, Interval):
        raise DomainNotInterval("index forms are computed along curves")
    check_critical(p, geodesic)
    ell = p.domain.b - p.domain.a
    a = p.domain.a
    if normal is None:
        def normal(t):
            return np.broadcast_to(np.array([1.0, 0.0]), t.shape[:-1] + (2,))
    basis = []
    for m in range(1, k + 1):
        fn = (lambda t, m=m: np.sin(m * np.pi * (t[..., 0] - a) / ell)[..., None] * normal(t))
        basis.append(VariationField.from_fn(p.domain, fn))
    G = np.empty((k, k))
    for i in range(k):
        for j in range(i, k):
            G[i, j] = G[j, i] = second_variation_formula(p, geodesic, basis[i], basis[j], check=False)
    return np.linalg.eigvalsh(G)


def variation_report(p: EnergyProblem, phi: FieldConfiguration, A: VariationField,
                     B: VariationField | None = None) -> VariationReport:
    e = energy(p, phi)
    f_formula, f_fd = first_variation(p, phi, A)
    res, bnd = euler_lagrange_residual(p, phi)
    H = None
    if isinstance(p.domain, Interval):
        try:
            H = hamiltonian(p, phi)
        except NonAutonomousLagrangian:
            H = None
    s_formula = s_fd = None
    if B is not None:
        s_formula, s_fd = second_variation(p, phi, A, B)
    return VariationReport(e, f_formula, f_fd, res, bnd, H, s_formula, s_fd)
