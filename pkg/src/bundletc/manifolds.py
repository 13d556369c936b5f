"""Single-chart Riemannian manifolds, smooth maps and the geodesic flow.

Every evaluator is batch-vectorized: coordinates have shape ``(..., d)`` and
results carry the same leading axes.  Index layout conventions:

* ``metric_at(x)[..., i, j] = g_ij``
* ``metric_derivs_at(x)[..., i, j, k] = ∂_k g_ij``
* ``christoffel_at(x)[..., k, i, j] = Γ^k_ij``
* ``christoffel_derivs_at(x)[..., k, i, j, l] = ∂_l Γ^k_ij``
* ``curvature_at(x)`` returns ``R^l_ijk`` and ``R_lijk = g_lm R^m_ijk`` with
  ``R(∂_j, ∂_k)∂_i = R^l_ijk ∂_l`` and ``R(X,Y) = ∇_X∇_Y − ∇_Y∇_X − ∇_[X,Y]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .bundle_types import ManifoldId, MapId
from .errors import ChartExit, OutOfChart, UsageError

FD_STEP = 1e-5
FD_STEP2 = 1e-4


def central_diff(f: Callable, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Jacobian of ``f`` at ``x`` by central differences; derivative axis last."""
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    cols = []
    for k in range(d):
        e = np.zeros(d)
        e[k] = h
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * h))
    return np.stack(cols, axis=-1)


def _everywhere(x):
    return np.ones(np.shape(x)[:-1], dtype=bool)


@dataclass(frozen=True, eq=False)
class RiemannianManifold:
    name: str
    dim: int
    metric: Callable
    chart_domain: Callable = _everywhere
    metric_derivs: Optional[Callable] = None
    christoffel: Optional[Callable] = None
    christoffel_derivs: Optional[Callable] = None
    curvature: Optional[Callable] = None
    params: dict = field(default_factory=dict)

    @property
    def id(self) -> ManifoldId:
        return ManifoldId(self.name, self.dim)

    def __repr__(self):
        return f"RiemannianManifold({self.name!r}, dim={self.dim})"

    # -- chart ---------------------------------------------------------------

    def in_chart(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.asarray(self.chart_domain(x)) & np.all(np.isfinite(x), axis=-1)

    def check_chart(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1:] != (self.dim,):
            raise UsageError(f"{self.name}: expected coordinates of length {self.dim}, got shape {x.shape}")
        ok = self.in_chart(x)
        if not np.all(ok):
            bad = x[~ok] if x.ndim > 1 else x
            raise OutOfChart(f"{self.name}: point {np.atleast_2d(bad)[0]} is outside the chart", point=bad)
        return x

    # -- metric --------------------------------------------------------------

    def metric_at(self, x) -> np.ndarray:
        return np.asarray(self.metric(self.check_chart(x)), dtype=float)

    def inverse_metric_at(self, x) -> np.ndarray:
        return np.linalg.inv(self.metric_at(x))

    def volume_density_at(self, x) -> np.ndarray:
        return np.sqrt(np.linalg.det(self.metric_at(x)))

    def metric_derivs_at(self, x) -> np.ndarray:
        x = self.check_chart(x)
        if self.metric_derivs is not None:
            return np.asarray(self.metric_derivs(x), dtype=float)
        return central_diff(self.metric, x, FD_STEP)

    def christoffel_at(self, x) -> np.ndarray:
        x = self.check_chart(x)
        if self.christoffel is not None:
            return np.asarray(self.christoffel(x), dtype=float)
        dg = self.metric_derivs_at(x)
        ginv = self.inverse_metric_at(x)
        # lowered Γ_lij = ½(∂_i g_jl + ∂_j g_il − ∂_l g_ij)
        low = 0.5 * (np.einsum("...jli->...lij", dg) + np.einsum("...ilj->...lij", dg)
                     - np.einsum("...ijl->...lij", dg))
        return np.einsum("...kl,...lij->...kij", ginv, low)

    def christoffel_derivs_at(self, x) -> np.ndarray:
        x = self.check_chart(x)
        if self.christoffel_derivs is not None:
            return np.asarray(self.christoffel_derivs(x), dtype=float)
        h = FD_STEP if self.christoffel is not None else FD_STEP2
        return central_diff(self.christoffel_at, x, h)

    def curvature_at(self, x) -> tuple:
        """``(R^l_ijk, R_lijk)`` from Γ and ∂Γ (or the exact curvature if supplied)."""
        x = self.check_chart(x)
        if self.curvature is not None:
            up = np.asarray(self.curvature(x), dtype=float)
        else:
            G = self.christoffel_at(x)
            dG = self.christoffel_derivs_at(x)
            up = (np.einsum("...lkij->...lijk", dG) - np.einsum("...ljik->...lijk", dG)
                  + np.einsum("...ljm,...mki->...lijk", G, G)
                  - np.einsum("...lkm,...mji->...lijk", G, G))
        low = np.einsum("...lm,...mijk->...lijk", self.metric_at(x), up)
        return up, low

    def sectional_curvature_at(self, x) -> np.ndarray:
        """Gaussian curvature of a surface (dim 2 only)."""
        if self.dim != 2:
            raise UsageError("sectional_curvature_at is implemented for surfaces")
        _, low = self.curvature_at(x)
        return low[..., 0, 1, 0, 1] / np.linalg.det(self.metric_at(x))

    def norm(self, x, v) -> np.ndarray:
        return np.sqrt(np.einsum("...i,...ij,...j->...", v, self.metric_at(x), v))

    def geodesic_acceleration(self, x, v) -> np.ndarray:
        return -np.einsum("...kij,...i,...j->...k", self.christoffel_at(x), v, v)

    def exp(self, x, v, t=1.0, h=1e-3):
        return exp_map(self, x, v, t, h)


# -- the geodesic flow ---------------------------------------------------------


def _rk4_step(M: RiemannianManifold, x, v, dt):
    def f(x, v):
        return v, M.geodesic_acceleration(x, v)

    k1x, k1v = f(x, v)
    k2x, k2v = f(x + 0.5 * dt * k1x, v + 0.5 * dt * k1v)
    k3x, k3v = f(x + 0.5 * dt * k2x, v + 0.5 * dt * k2v)
    k4x, k4v = f(x + dt * k3x, v + dt * k3v)
    return (x + dt / 6 * (k1x + 2 * k2x + 2 * k3x + k4x),
            v + dt / 6 * (k1v + 2 * k2v + 2 * k3v + k4v))


def integrate_geodesic(M: RiemannianManifold, x0, v0, T: float, h: float = 1e-3, record: bool = True):
    """Fixed-step RK4 for ``ẍ^k = −Γ^k_ij ẋ^i ẋ^j`` on ``[0, T]`` (``T`` may be negative).

    The last step is shortened to land on ``T``.  Returns ``(t, x, v)``; with
    ``record`` the arrays hold every step, otherwise only the endpoint.
    Raises :class:`ChartExit` with the first time found outside the chart.
    """
    if h <= 0:
        raise UsageError("step must be positive")
    x = np.array(M.check_chart(x0), dtype=float)
    v = np.array(v0, dtype=float) * np.ones_like(x)
    n = int(np.ceil(abs(T) / h - 1e-9)) if T != 0 else 0
    ts, xs, vs = [0.0], [x], [v]
    t = 0.0
    for i in range(n):
        dt = np.sign(T) * min(h, abs(T) - i * h)
        try:
            x, v = _rk4_step(M, x, v, dt)
        except OutOfChart:
            raise ChartExit(f"geodesic left the chart of {M.name} near t={t + dt:.6g}", time=t + dt) from None
        t += dt
        if not np.all(M.in_chart(x)):
            raise ChartExit(f"geodesic left the chart of {M.name} at t={t:.6g}", time=t)
        if record:
            ts.append(t)
            xs.append(x)
            vs.append(v)
    if not record:
        return t, x, v
    return np.array(ts), np.stack(xs), np.stack(vs)


def exp_map(M: RiemannianManifold, x, v, t: float = 1.0, h: float = 1e-3) -> np.ndarray:
    """Position at time ``t`` of the geodesic with initial point ``x`` and velocity ``v``."""
    return integrate_geodesic(M, x, v, t, h, record=False)[1]


# -- the zoo ---------------------------------------------------------------------


def _diag(*entries):
    entries = np.broadcast_arrays(*entries)
    out = np.zeros(entries[0].shape + (len(entries), len(entries)))
    for i, e in enumerate(entries):
        out[..., i, i] = e
    return out


def euclidean(n: int = 2) -> RiemannianManifold:
    def metric(x):
        return np.broadcast_to(np.eye(n), np.shape(x)[:-1] + (n, n)).copy()

    def zeros3(x):
        return np.zeros(np.shape(x)[:-1] + (n, n, n))

    def zeros4(x):
        return np.zeros(np.shape(x)[:-1] + (n, n, n, n))

    return RiemannianManifold(f"Euclidean{n}", n, metric, metric_derivs=zeros3, christoffel=zeros3,
                              christoffel_derivs=zeros4, params={"n": n})


def flat_torus2() -> RiemannianManifold:
    """Identity metric on the periodic chart; wrapping is left to the maps."""
    e = euclidean(2)
    return RiemannianManifold("FlatTorus2", 2, e.metric, metric_derivs=e.metric_derivs,
                              christoffel=e.christoffel, christoffel_derivs=e.christoffel_derivs)


def sphere2(radius: float = 1.0) -> RiemannianManifold:
    """Round sphere in spherical coordinates ``(θ, φ)`` with chart ``0 < θ < π``."""
    r2 = float(radius) ** 2

    def metric(x):
        return r2 * _diag(np.ones(x.shape[:-1]), np.sin(x[..., 0]) ** 2)

    def metric_derivs(x):
        out = np.zeros(x.shape[:-1] + (2, 2, 2))
        out[..., 1, 1, 0] = r2 * np.sin(2 * x[..., 0])
        return out

    def christoffel(x):
        th = x[..., 0]
        out = np.zeros(x.shape[:-1] + (2, 2, 2))
        out[..., 0, 1, 1] = -np.sin(th) * np.cos(th)
        out[..., 1, 0, 1] = out[..., 1, 1, 0] = np.cos(th) / np.sin(th)
        return out

    def christoffel_derivs(x):
        th = x[..., 0]
        out = np.zeros(x.shape[:-1] + (2, 2, 2, 2))
        out[..., 0, 1, 1, 0] = -np.cos(2 * th)
        out[..., 1, 0, 1, 0] = out[..., 1, 1, 0, 0] = -1.0 / np.sin(th) ** 2
        return out

    def domain(x):
        return (x[..., 0] > 0) & (x[..., 0] < np.pi)

    return RiemannianManifold("Sphere2", 2, metric, domain, metric_derivs, christoffel,
                              christoffel_derivs, params={"radius": radius})


def half_plane() -> RiemannianManifold:
    """Hyperbolic upper half-plane ``g = (dx² + dy²)/y²``."""

    def metric(x):
        w = 1.0 / x[..., 1] ** 2
        return _diag(w, w)

    def metric_derivs(x):
        out = np.zeros(x.shape[:-1] + (2, 2, 2))
        d = -2.0 / x[..., 1] ** 3
        out[..., 0, 0, 1] = d
        out[..., 1, 1, 1] = d
        return out

    def christoffel(x):
        iy = 1.0 / x[..., 1]
        out = np.zeros(x.shape[:-1] + (2, 2, 2))
        out[..., 0, 0, 1] = out[..., 0, 1, 0] = -iy
        out[..., 1, 0, 0] = iy
        out[..., 1, 1, 1] = -iy
        return out

    def christoffel_derivs(x):
        iy2 = 1.0 / x[..., 1] ** 2
        out = np.zeros(x.shape[:-1] + (2, 2, 2, 2))
        out[..., 0, 0, 1, 1] = out[..., 0, 1, 0, 1] = iy2
        out[..., 1, 0, 0, 1] = -iy2
        out[..., 1, 1, 1, 1] = iy2
        return out

    def domain(x):
        return x[..., 1] > 0

    return RiemannianManifold("HalfPlane", 2, metric, domain, metric_derivs, christoffel,
                              christoffel_derivs)


def from_metric(name: str, dim: int, metric: Callable, chart_domain: Callable = _everywhere) -> RiemannianManifold:
    """Manifold whose Levi-Civita data all come from finite differences of ``metric``."""
    return RiemannianManifold(name, dim, metric, chart_domain)


def product(M: RiemannianManifold, N: RiemannianManifold) -> RiemannianManifold:
    """Riemannian product with block-diagonal metric and Christoffel symbols."""
    m, n = M.dim, N.dim
    d = m + n

    def split(x):
        return x[..., :m], x[..., m:]

    def metric(x):
        a, b = split(x)
        out = np.zeros(x.shape[:-1] + (d, d))
        out[..., :m, :m] = M.metric(a)
        out[..., m:, m:] = N.metric(b)
        return out

    def christoffel(x):
        a, b = split(x)
        out = np.zeros(x.shape[:-1] + (d, d, d))
        out[..., :m, :m, :m] = M.christoffel_at(a)
        out[..., m:, m:, m:] = N.christoffel_at(b)
        return out

    def christoffel_derivs(x):
        a, b = split(x)
        out = np.zeros(x.shape[:-1] + (d, d, d, d))
        out[..., :m, :m, :m, :m] = M.christoffel_derivs_at(a)
        out[..., m:, m:, m:, m:] = N.christoffel_derivs_at(b)
        return out

    def domain(x):
        a, b = split(x)
        return M.in_chart(a) & N.in_chart(b)

    return RiemannianManifold(f"{M.name}x{N.name}", d, metric, domain, None, christoffel, christoffel_derivs)


ZOO = {
    "Euclidean": euclidean,
    "Sphere2": sphere2,
    "HalfPlane": half_plane,
    "FlatTorus2": flat_torus2,
}


def zoo(name: str, **params) -> RiemannianManifold:
    try:
        ctor = ZOO[name]
    except KeyError:
        raise UsageError(f"unknown manifold {name!r}; choose from {sorted(ZOO)}") from None
    return ctor(**params)


# -- smooth maps ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SmoothMap:
    """Coordinate realization of ``φ: M → S``.

    ``jacobian(x)[..., a, i] = ∂φ^a/∂x^i`` and
    ``hessian(x)[..., a, i, j] = ∂²φ^a/∂x^i∂x^j``; both optional.
    """

    name: str
    domain: RiemannianManifold
    codomain: RiemannianManifold
    forward: Callable
    jacobian: Optional[Callable] = None
    hessian: Optional[Callable] = None

    @property
    def id(self) -> MapId:
        return MapId(self.name, self.domain.id, self.codomain.id)

    def __call__(self, x) -> np.ndarray:
        return np.asarray(self.forward(np.asarray(x, dtype=float)), dtype=float)

    def at(self, x) -> np.ndarray:
        """``φ(x)`` with chart checks on both ends."""
        y = self(self.domain.check_chart(x))
        self.codomain.check_chart(y)
        return y

    def jacobian_at(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.jacobian is not None:
            return np.asarray(self.jacobian(x), dtype=float)
        return central_diff(self, x, FD_STEP)

    def hessian_at(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.hessian is not None:
            return np.asarray(self.hessian(x), dtype=float)
        if self.jacobian is not None:
            return central_diff(self.jacobian_at, x, FD_STEP)
        return central_diff(self.jacobian_at, x, FD_STEP2)


def identity_map(M: RiemannianManifold) -> SmoothMap:
    d = M.dim

    def jac(x):
        return np.broadcast_to(np.eye(d), np.shape(x)[:-1] + (d, d)).copy()

    def hess(x):
        return np.zeros(np.shape(x)[:-1] + (d, d, d))

    return SmoothMap(f"id_{M.name}", M, M, lambda x: np.array(x, dtype=float), jac, hess)


def compose(outer: SmoothMap, inner: SmoothMap, name: str | None = None) -> SmoothMap:
    """``outer ∘ inner`` with chain-rule jacobian and hessian."""
    if inner.codomain is not outer.domain and inner.codomain.name != outer.domain.name:
        raise UsageError(f"cannot compose {outer.name} after {inner.name}")

    def fwd(x):
        return outer(inner(x))

    def jac(x):
        return np.einsum("...ab,...bi->...ai", outer.jacobian_at(inner(x)), inner.jacobian_at(x))

    def hess(x):
        y = inner(x)
        Ji = inner.jacobian_at(x)
        return (np.einsum("...abc,...bi,...cj->...aij", outer.hessian_at(y), Ji, Ji)
                + np.einsum("...ab,...bij->...aij", outer.jacobian_at(y), inner.hessian_at(x)))

    return SmoothMap(name or f"{outer.name}o{inner.name}", inner.domain, outer.codomain, fwd, jac, hess)


def projections(M: RiemannianManifold, N: RiemannianManifold, P: RiemannianManifold | None = None):
    """The two projections out of ``P = product(M, N)``."""
    P = P or product(M, N)
    m, n = M.dim, N.dim

    def pr(lo, hi, k):
        def jac(x):
            out = np.zeros(np.shape(x)[:-1] + (k, m + n))
            out[..., :, lo:hi] = np.eye(k)
            return out

        def hess(x):
            return np.zeros(np.shape(x)[:-1] + (k, m + n, m + n))

        return jac, hess

    j1, h1 = pr(0, m, m)
    j2, h2 = pr(m, m + n, n)
    return (SmoothMap(f"pr_{M.name}", P, M, lambda x: x[..., :m], j1, h1),
            SmoothMap(f"pr_{N.name}", P, N, lambda x: x[..., m:], j2, h2))
