"""Algebra of vector-bundle types.

A :class:`BundleType` is an immutable expression tree built from tangent,
cotangent and trivial line bundles with pullbacks, duals, tensor products and
direct sums.  ``Shared`` products require both operands to live over the same
base; ``Full`` products join the bases as a formal product ``S×M`` (used for
``E = TS ⊗ T*M`` and its duals).

:func:`normalize` applies the canonical identifications silently (each
rewrite is logged at DEBUG level):

* ``Dual(Dual(F)) → F``, ``Dual(T M) → T*M``, ``Dual(T*M) → T M``,
  ``Dual(ℝ) → ℝ``; ``Dual`` distributes over products, sums and pullbacks;
* ``Pullback(id, F) → F``; ``Pullback(ψ, Pullback(φ, F)) → Pullback(φ∘ψ, F)``
  when the composition is declared in the :class:`Environment`;
* pullback distributes over shared products and sums, and ``f*ℝ → ℝ``;
* tensor products are right-associated and trivial line factors dropped.

Type equality is structural equality of normalized forms.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .errors import BaseMismatch, MalformedType, SpaceMismatch, UsageError, ValenceError
from .tensor_algebra import COVECTOR, VECTOR, AxisTag

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ManifoldId:
    name: str
    dim: int

    def __post_init__(self):
        if not isinstance(self.dim, (int, np.integer)) or self.dim < 1:
            raise MalformedType(f"manifold {self.name!r} needs a positive dimension, got {self.dim!r}")

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class ProductBase:
    """Formal product of manifolds, the base of a ``Full`` construction."""

    factors: tuple

    @property
    def dim(self) -> int:
        return sum(f.dim for f in self.factors)

    def __str__(self):
        return "×".join(str(f) for f in self.factors)


@dataclass(frozen=True)
class MapId:
    name: str
    domain: ManifoldId
    codomain: ManifoldId

    @property
    def is_identity(self) -> bool:
        return self.name == f"id_{self.domain.name}" and self.domain == self.codomain

    def __str__(self):
        return self.name


def identity_map(m: ManifoldId) -> MapId:
    return MapId(f"id_{m.name}", m, m)


def _flatten_base(b) -> tuple:
    return b.factors if isinstance(b, ProductBase) else (b,)


def join_bases(left, right) -> ProductBase:
    return ProductBase(_flatten_base(left) + _flatten_base(right))


class BundleType:
    """Base class of bundle-type expression nodes."""

    @property
    def base(self):
        return base_space(self)

    @property
    def rank(self) -> int:
        return rank(self)

    def __str__(self):
        return render_type(self, "mid")


@dataclass(frozen=True)
class Tangent(BundleType):
    manifold: ManifoldId


@dataclass(frozen=True)
class Cotangent(BundleType):
    manifold: ManifoldId


@dataclass(frozen=True)
class LineBundle(BundleType):
    manifold: object  # ManifoldId or ProductBase


@dataclass(frozen=True)
class Pullback(BundleType):
    map: MapId
    fiber: BundleType

    def __post_init__(self):
        base_space(self)


@dataclass(frozen=True)
class Dual(BundleType):
    inner: BundleType

    def __post_init__(self):
        base_space(self)


@dataclass(frozen=True)
class _Binary(BundleType):
    left: BundleType
    right: BundleType

    def __post_init__(self):
        base_space(self)


@dataclass(frozen=True)
class TensorShared(_Binary):
    pass


@dataclass(frozen=True)
class TensorFull(_Binary):
    pass


@dataclass(frozen=True)
class SumShared(_Binary):
    pass


@dataclass(frozen=True)
class SumFull(_Binary):
    pass


def hom(src: BundleType, dst: BundleType) -> BundleType:
    """``Hom(src, dst) ≅ dst ⊗ src*``.

    Shared product when both live over the same base, full product otherwise
    (linear maps between the tangent spaces of two different vector spaces).
    """
    if base_space(src) == base_space(dst):
        return TensorShared(dst, Dual(src))
    return TensorFull(dst, Dual(src))


# -- structural queries -------------------------------------------------------


def base_space(b, _path: str = ""):
    """Base manifold of ``b`` (a :class:`ProductBase` for ``Full`` constructors)."""
    here = f"{_path}.{type(b).__name__}" if _path else type(b).__name__
    if isinstance(b, (Tangent, Cotangent)):
        if not isinstance(b.manifold, ManifoldId):
            raise MalformedType("expected a ManifoldId", here + ".manifold")
        return b.manifold
    if isinstance(b, LineBundle):
        if not isinstance(b.manifold, (ManifoldId, ProductBase)):
            raise MalformedType("expected a ManifoldId", here + ".manifold")
        return b.manifold
    if isinstance(b, Pullback):
        if not isinstance(b.map, MapId):
            raise MalformedType("expected a MapId", here + ".map")
        fb = base_space(b.fiber, here + ".fiber")
        if fb != b.map.codomain:
            raise MalformedType(
                f"map {b.map.name} has codomain {b.map.codomain} but the pulled-back bundle lives over {fb}",
                here)
        return b.map.domain
    if isinstance(b, Dual):
        return base_space(b.inner, here + ".inner")
    if isinstance(b, _Binary):
        lb = base_space(b.left, here + ".left")
        rb = base_space(b.right, here + ".right")
        if isinstance(b, (TensorShared, SumShared)):
            if isinstance(lb, ProductBase) or isinstance(rb, ProductBase):
                raise MalformedType("full products cannot be nested under shared ones", here)
            if lb != rb:
                raise BaseMismatch(
                    f"{type(b).__name__} needs equal bases, got {lb} and {rb}", expected=lb, found=rb)
            return lb
        return join_bases(lb, rb)
    raise MalformedType(f"not a bundle type: {b!r}", _path or "<root>")


def rank(b: BundleType) -> int:
    """Fiber dimension."""
    base_space(b)
    if isinstance(b, (Tangent, Cotangent)):
        return b.manifold.dim
    if isinstance(b, LineBundle):
        return 1
    if isinstance(b, Pullback):
        return rank(b.fiber)
    if isinstance(b, Dual):
        return rank(b.inner)
    if isinstance(b, (TensorShared, TensorFull)):
        return rank(b.left) * rank(b.right)
    return rank(b.left) + rank(b.right)


# -- environment ----------------------------------------------------------------


@dataclass
class Environment:
    """Declared manifolds, maps and map compositions.

    Compositions are facts: ``compose(phi, psi)`` is only known after
    :meth:`declare_composition` registered it.
    """

    manifolds: dict = field(default_factory=dict)
    maps: dict = field(default_factory=dict)
    compositions: dict = field(default_factory=dict)

    def declare_manifold(self, name: str, dim: int) -> ManifoldId:
        if name in self.manifolds:
            raise UsageError(f"manifold {name!r} is already declared")
        m = ManifoldId(name, int(dim))
        self.manifolds[name] = m
        return m

    def declare_map(self, name: str, domain: str | ManifoldId, codomain: str | ManifoldId) -> MapId:
        dom = self.manifold(domain)
        cod = self.manifold(codomain)
        if name in self.maps:
            raise UsageError(f"map {name!r} is already declared")
        f = MapId(name, dom, cod)
        self.maps[name] = f
        return f

    def declare_composition(self, name: str, outer: str | MapId, inner: str | MapId) -> MapId:
        """Register ``name = outer ∘ inner``."""
        outer, inner = self.map(outer), self.map(inner)
        if inner.codomain != outer.domain:
            raise BaseMismatch(f"cannot compose {outer} after {inner}: {inner.codomain} != {outer.domain}",
                               expected=outer.domain, found=inner.codomain)
        f = self.declare_map(name, inner.domain, outer.codomain)
        self.compositions[(outer, inner)] = f
        return f

    def manifold(self, m: str | ManifoldId) -> ManifoldId:
        if isinstance(m, ManifoldId):
            return m
        try:
            return self.manifolds[m]
        except KeyError:
            raise UsageError(f"unknown manifold {m!r}") from None

    def map(self, f: str | MapId) -> MapId:
        if isinstance(f, MapId):
            return f
        if f in self.maps:
            return self.maps[f]
        if f.startswith("id_") and f[3:] in self.manifolds:
            return identity_map(self.manifolds[f[3:]])
        raise UsageError(f"unknown map {f!r}")

    def composition(self, outer: MapId, inner: MapId) -> MapId | None:
        if inner.is_identity:
            return outer
        if outer.is_identity:
            return inner
        return self.compositions.get((outer, inner))


# -- normalization ------------------------------------------------------------


def _dual_of(b: BundleType) -> BundleType:
    if isinstance(b, Dual):
        return b.inner
    if isinstance(b, Tangent):
        return Cotangent(b.manifold)
    if isinstance(b, Cotangent):
        return Tangent(b.manifold)
    if isinstance(b, LineBundle):
        return b
    if isinstance(b, Pullback):
        return Pullback(b.map, _dual_of(b.fiber))
    if isinstance(b, _Binary):
        return type(b)(_dual_of(b.left), _dual_of(b.right))
    raise MalformedType(f"not a bundle type: {b!r}")


def _pullback_of(f: MapId, b: BundleType, env: Environment | None) -> BundleType:
    """Pullback of an already normalized bundle ``b``."""
    if f.is_identity:
        log.debug("rewrite Pullback(id, F) -> F")
        return b
    if isinstance(b, LineBundle) and isinstance(b.manifold, ManifoldId):
        log.debug("rewrite f*R -> R")
        return LineBundle(f.domain)
    if isinstance(b, (TensorShared, SumShared)):
        log.debug("rewrite pullback through %s", type(b).__name__)
        return _simplify(type(b)(_pullback_of(f, b.left, env), _pullback_of(f, b.right, env)), env)
    if isinstance(b, Pullback) and env is not None:
        composed = env.composition(b.map, f)
        if composed is not None:
            log.debug("rewrite Pullback(%s, Pullback(%s, F)) -> Pullback(%s, F)", f, b.map, composed)
            return _pullback_of(composed, b.fiber, env)
    return Pullback(f, b)


def _simplify(b: BundleType, env: Environment | None) -> BundleType:
    """Apply root rewrites to a node whose children are already normalized."""
    if isinstance(b, Dual):
        log.debug("rewrite Dual(%s)", type(b.inner).__name__)
        inner = b.inner
        if isinstance(inner, _Binary):
            return _simplify(type(inner)(_simplify(Dual(inner.left), env),
                                         _simplify(Dual(inner.right), env)), env)
        if isinstance(inner, Pullback):
            return _pullback_of(inner.map, _simplify(Dual(inner.fiber), env), env)
        return _dual_of(inner)
    if isinstance(b, Pullback):
        return _pullback_of(b.map, b.fiber, env)
    if isinstance(b, TensorShared):
        left, right = b.left, b.right
        if isinstance(right, LineBundle):
            return left
        if isinstance(left, LineBundle):
            return right
        if isinstance(left, TensorShared):
            log.debug("re-associate tensor product to the right")
            return TensorShared(left.left, _simplify(TensorShared(left.right, right), env))
        return b
    if isinstance(b, TensorFull) and isinstance(b.left, TensorFull):
        return TensorFull(b.left.left, _simplify(TensorFull(b.left.right, b.right), env))
    return b


def normalize(b: BundleType, env: Environment | None = None) -> BundleType:
    """Canonical form of ``b`` under the confluent rewrite system (idempotent)."""
    base_space(b)
    if isinstance(b, (Tangent, Cotangent, LineBundle)):
        return b
    if isinstance(b, Dual):
        return _simplify(Dual(normalize(b.inner, env)), env)
    if isinstance(b, Pullback):
        return _simplify(Pullback(b.map, normalize(b.fiber, env)), env)
    return _simplify(type(b)(normalize(b.left, env), normalize(b.right, env)), env)


def types_equal(a: BundleType, b: BundleType, env: Environment | None = None) -> bool:
    return normalize(a, env) == normalize(b, env)


# -- factor analysis ----------------------------------------------------------


@dataclass(frozen=True)
class Factor:
    """One tensor factor of a normalized bundle type.

    ``leaf`` is the factor as a bundle type over its own base ``own_base``;
    ``space`` is the manifold (or sum type) the fiber comes from and
    ``anchor`` the map it is pulled back along (``None`` for none).
    """

    leaf: BundleType
    own_base: object

    @property
    def anchor(self):
        return self.leaf.map if isinstance(self.leaf, Pullback) else None

    @property
    def core(self) -> BundleType:
        return self.leaf.fiber if isinstance(self.leaf, Pullback) else self.leaf

    @property
    def space(self):
        c = self.core
        return c.manifold if isinstance(c, (Tangent, Cotangent)) else _space_key(c)

    @property
    def variance(self):
        c = self.core
        if isinstance(c, Tangent):
            return VECTOR
        if isinstance(c, Cotangent):
            return COVECTOR
        return None

    @property
    def dim(self) -> int:
        return rank(self.leaf)

    def dual(self) -> "Factor":
        return Factor(normalize(Dual(self.leaf)), self.own_base)


def _space_key(b: BundleType):
    """Variance-free identity of a composite (sum) factor."""
    if isinstance(b, (Tangent, Cotangent)):
        return ("T", b.manifold)
    if isinstance(b, Pullback):
        return ("pb", b.map, _space_key(b.fiber))
    if isinstance(b, _Binary):
        return (type(b).__name__, _space_key(b.left), _space_key(b.right))
    return ("R",)


def factors(b: BundleType, env: Environment | None = None) -> list:
    """Flattened tensor factors of ``normalize(b)``; trivial line factors vanish."""
    out: list = []

    def walk(t):
        if isinstance(t, (TensorShared, TensorFull)):
            walk(t.left)
            walk(t.right)
        elif isinstance(t, LineBundle):
            return
        else:
            out.append(Factor(t, base_space(t)))

    walk(normalize(b, env))
    return out


def from_factors(fs: Iterable[Factor], base=None) -> BundleType:
    """Rebuild a bundle type from a factor sequence.

    Consecutive factors over the same base are joined by shared tensor
    products; runs over different bases are joined by full products.  An empty
    sequence yields the trivial line bundle over ``base``.
    """
    fs = list(fs)
    if not fs:
        if base is None:
            raise UsageError("an empty factor list needs an explicit base")
        return LineBundle(base)
    runs: list = []
    for f in fs:
        if runs and runs[-1][0].own_base == f.own_base:
            runs[-1].append(f)
        else:
            runs.append([f])
    built = []
    for run in runs:
        t = run[-1].leaf
        for f in reversed(run[:-1]):
            t = TensorShared(f.leaf, t)
        built.append(t)
    t = built[-1]
    for p in reversed(built[:-1]):
        t = TensorFull(p, t)
    return normalize(t)


def _classify(left: Factor, right: Factor, k: int):
    """Raise the appropriate type error when ``left`` cannot pair with ``right``."""
    if left.space != right.space:
        raise SpaceMismatch(
            f"pairing #{k}: fiber of {render_type(left.leaf)} cannot pair with fiber of "
            f"{render_type(right.leaf)}", expected=left.dual().leaf, found=right.leaf)
    if left.variance is not None and left.variance == right.variance:
        raise ValenceError(
            f"pairing #{k}: both factors are {left.variance}s of {left.space}; incompatible valence",
            expected=left.dual().leaf, found=right.leaf)
    raise BaseMismatch(
        f"pairing #{k}: {render_type(left.leaf)} and {render_type(right.leaf)} live over different base points",
        expected=left.dual().leaf, found=right.leaf)


def contract_type(left: BundleType, right: BundleType, n: int, env: Environment | None = None) -> BundleType:
    """Type of ``left ·ⁿ right``: the last ``n`` factors of ``left`` pair with the first ``n`` of ``right``."""
    lf, rf = factors(left, env), factors(right, env)
    if n < 0 or len(lf) < n or len(rf) < n:
        raise ValenceError(
            f"cannot contract {n} factors: left has {len(lf)}, right has {len(rf)}",
            expected=n, found=(len(lf), len(rf)))
    for k in range(n):
        a, b = lf[len(lf) - n + k], rf[k]
        if a.dual().leaf != b.leaf or a.own_base != b.own_base:
            _classify(a, b, k + 1)
    rest = lf[: len(lf) - n] + rf[n:]
    return from_factors(rest, base_space(left))


# -- runtime tags -------------------------------------------------------------


def point_key(p) -> str:
    return "(" + ",".join(repr(float(x)) for x in np.atleast_1d(p)) + ")"


def fiber_tags(b: BundleType, points: Mapping[str, object] | None = None,
               env: Environment | None = None) -> tuple:
    """Axis tags of a tensor of type ``b``.

    ``points`` maps manifold names to base-point coordinates; when given, the
    base point (and the pullback map, for pulled-back factors) becomes part of
    each tag's space so fibers over different points never pair.
    """
    tags = []
    for f in factors(b, env):
        if f.variance is None:
            space = "⊕" + render_type(normalize(f.core), "mid") if f.core.base == f.own_base else render_type(f.core)
            variance = VECTOR
        else:
            space = f"T{f.space.name}"
            variance = f.variance
        if points is not None:
            own = _flatten_base(f.own_base)[0]
            where = points.get(own.name) if isinstance(own, ManifoldId) else None
            if where is not None:
                space += f"@{f.anchor.name}{point_key(where)}" if f.anchor else f"@{point_key(where)}"
        elif f.anchor is not None:
            space += f"@{f.anchor.name}"
        tags.append(AxisTag(space, f.dim, variance))
    return tuple(tags)


# -- rendering ------------------------------------------------------------------


def render_type(b: BundleType, level: str = "mid") -> str:
    """Human-readable type at a telescoping verbosity: ``high``, ``mid`` or ``low``."""
    if level == "low":
        fs = factors(b)
        up = sum(1 for f in fs if f.variance == VECTOR)
        down = sum(1 for f in fs if f.variance == COVECTOR)
        if not fs:
            return "scalar"
        return f"({up},{down})-tensor" + (f" +{len(fs) - up - down} sum factors" if len(fs) > up + down else "")
    hi = level == "high"
    if isinstance(b, Tangent):
        return f"T{b.manifold}"
    if isinstance(b, Cotangent):
        return f"T*{b.manifold}"
    if isinstance(b, LineBundle):
        return f"ℝ_{b.manifold}" if hi else "ℝ"
    if isinstance(b, Pullback):
        inner = render_type(b.fiber, level)
        if isinstance(b.fiber, _Binary):
            inner = f"({inner})"
        return f"{b.map}*{inner}" if not hi else f"({b.map}: {b.map.domain}→{b.map.codomain})*{inner}"
    if isinstance(b, Dual):
        return f"({render_type(b.inner, level)})*"
    sym = {TensorShared: "⊗", TensorFull: "⊗", SumShared: "⊕", SumFull: "⊕"}[type(b)]
    if hi:
        sym += f"_{base_space(b)}"
    elif isinstance(b, (TensorFull, SumFull)):
        sym += "_full"
    parts = []
    for child in (b.left, b.right):
        s = render_type(child, level)
        if isinstance(child, _Binary) and type(child) is not type(b):
            s = f"({s})"
        parts.append(s)
    return f"{parts[0]} {sym} {parts[1]}"
