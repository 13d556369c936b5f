"""A small prefix-call language for typed tensor expressions.

Grammar (``#`` starts a comment; one form per top-level call)::

    form   := IDENT '(' [arg (',' arg)*] ')'
    arg    := form | IDENT | INT | cycles
    cycles := '(' INT+ ')' ('(' INT+ ')')*  |  '(' ')'

Declarations::

    manifold(V, 3)          map(phi, M, S)          compose(psi, phi, chi)
    metric(g, M)            field(A, <type>)

Types: ``T(M)``, ``Tstar(M)``, ``R(M)``, ``otimes``, ``oplus`` (shared base),
``fotimes``, ``foplus`` (full, bases joined), ``pullback(f, t)``, ``dual(t)``
and ``hom(src, dst)``.

Expressions: ``pair(e, e, n)``, ``trace(e)``, ``permute(e, (2 3))``,
``otimes(e, e)``, ``boxtimes(e, e)``, ``pullback(f, e)``, ``cov(e)``,
``dmap(f)``, ``dual(e)`` (the adjoint of a two-factor tensor), a declared
name, or ``id_X`` (the identity of ``T X``).
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from . import bundle_types as bt
from . import covariant_calculus as cc
from . import tensor_algebra as ta
from .errors import (BaseMismatch, BundleTypeError, ParseError, TagMismatch, UnknownSymbol,
                     UsageError, ValenceError)
from .manifolds import SmoothMap

log = logging.getLogger(__name__)

TELESCOPE_LEVELS = ("high", "mid", "low")


# -- AST ------------------------------------------------------------------------


@dataclass(frozen=True)
class Span:
    line: int
    col: int
    end_line: int
    end_col: int

    def __str__(self):
        return f"{self.line}:{self.col}"


def _span():
    return field(default=None, compare=False, repr=False)


class Node:
    pass


@dataclass(frozen=True)
class Var(Node):
    name: str
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class Pair(Node):
    left: Node
    right: Node
    n: int
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class Trace(Node):
    arg: Node
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class Permute(Node):
    arg: Node
    cycles: tuple
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class TensorProduct(Node):
    left: Node
    right: Node
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class ParallelProduct(Node):
    left: Node
    right: Node
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class PullbackOf(Node):
    map: str
    arg: Node
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class CovDeriv(Node):
    arg: Node
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class TangentMap(Node):
    map: str
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class DualOf(Node):
    arg: Node
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class TypeExpr(Node):
    """Unresolved type syntax: ``head(args…)`` where args are names or types."""

    head: str
    args: tuple
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class Declare(Node):
    kind: str
    name: str
    args: tuple
    span: Optional[Span] = _span()


DECLARATIONS = ("manifold", "map", "metric", "field", "compose")
TYPE_HEADS = ("T", "Tstar", "R", "otimes", "oplus", "fotimes", "foplus", "pullback", "dual", "hom")


@dataclass(frozen=True)
class SourceExpr:
    text: str = field(compare=False)
    forms: tuple = ()

    @property
    def root(self) -> Optional[Node]:
        for f in reversed(self.forms):
            if not isinstance(f, Declare):
                return f
        return None

    @property
    def expressions(self) -> list:
        return [f for f in self.forms if not isinstance(f, Declare)]


# -- lexer / parser ----------------------------------------------------------------


_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_INT = re.compile(r"[0-9]+")


@dataclass(frozen=True)
class Token:
    kind: str  # 'ident' | 'int' | '(' | ')' | ',' | 'eof'
    text: str
    line: int
    col: int

    @property
    def end_col(self) -> int:
        return self.col + len(self.text)


def tokenize(text: str) -> list:
    toks = []
    line, line_start, pos = 1, 0, 0
    while pos < len(text):
        ch = text[pos]
        col = pos - line_start + 1
        if ch == "\n":
            line, line_start = line + 1, pos + 1
            pos += 1
        elif ch.isspace():
            pos += 1
        elif ch == "#":
            end = text.find("\n", pos)
            pos = len(text) if end < 0 else end
        elif ch in "(),":
            toks.append(Token(ch, ch, line, col))
            pos += 1
        elif m := _IDENT.match(text, pos):
            toks.append(Token("ident", m.group(), line, col))
            pos = m.end()
        elif m := _INT.match(text, pos):
            toks.append(Token("int", m.group(), line, col))
            pos = m.end()
        else:
            raise ParseError(f"unexpected character {ch!r}", line, col, {"identifier", "(", ")", ","})
    toks.append(Token("eof", "", line, len(text) - line_start + 1))
    return toks


class _Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def peek(self, k: int = 1) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def fail(self, expected, what: str | None = None):
        t = self.tok
        found = "end of input" if t.kind == "eof" else repr(t.text)
        exp = " or ".join(f"'{e}'" if e in "()," else e for e in sorted(expected))
        raise ParseError(what or f"expected {exp}, found {found}", t.line, t.col, expected)

    def take(self, kind: str) -> Token:
        if self.tok.kind != kind:
            self.fail({kind if kind != "ident" else "identifier"})
        t = self.tok
        self.i += 1
        return t

    def span_from(self, start: Token) -> Span:
        prev = self.toks[self.i - 1]
        return Span(start.line, start.col, prev.line, prev.end_col)

    # -- grammar -----------------------------------------------------------

    def program(self) -> tuple:
        forms = []
        while self.tok.kind != "eof":
            if self.tok.kind != "ident":
                self.fail({"identifier"})
            forms.append(self.form())
        return tuple(forms)

    def _args(self) -> list:
        """Raw argument list after '(' up to and including ')'."""
        args = []
        if self.tok.kind == ")":
            self.i += 1
            return args
        while True:
            args.append(self.arg())
            if self.tok.kind == ",":
                self.i += 1
                continue
            if self.tok.kind == ")":
                self.i += 1
                return args
            self.fail({",", ")"})

    def arg(self):
        t = self.tok
        if t.kind == "int":
            self.i += 1
            return int(t.text)
        if t.kind == "(":
            return self.cycles()
        if t.kind == "ident":
            if self.peek().kind == "(":
                return self.form()
            self.i += 1
            return Var(t.text, Span(t.line, t.col, t.line, t.end_col))
        self.fail({"identifier", "integer", "("})

    def cycles(self) -> tuple:
        cyc = []
        start = self.tok
        while self.tok.kind == "(":
            self.i += 1
            c = []
            while self.tok.kind == "int":
                c.append(int(self.tok.text))
                self.i += 1
            if self.tok.kind != ")":
                self.fail({"integer", ")"})
            self.i += 1
            if c:
                cyc.append(tuple(c))
            elif cyc:
                raise ParseError("empty cycle", start.line, start.col, {"integer"})
        return ("cycles", tuple(cyc))

    def form(self) -> Node:
        head = self.take("ident")
        self.take("(")
        args = self._args()
        span = self.span_from(head)
        return _build(head, args, span)


def _name(a, head: Token, what: str) -> str:
    if isinstance(a, Var):
        return a.name
    raise ParseError(f"{head.text}: {what} must be a name", head.line, head.col, {"identifier"})


def _expect_arity(head: Token, args, n: int):
    if len(args) != n:
        raise ParseError(f"{head.text} takes {n} argument(s), got {len(args)}", head.line, head.col, {","})


def _expr(a, head: Token):
    if isinstance(a, Node) and not isinstance(a, (Declare, TypeExpr)):
        return a
    raise ParseError(f"{head.text}: expected an expression argument", head.line, head.col, {"identifier"})


def _build(head: Token, args: list, span: Span) -> Node:
    h = head.text
    if h in DECLARATIONS:
        if h == "manifold":
            _expect_arity(head, args, 2)
            if not isinstance(args[1], int):
                raise ParseError("manifold dimension must be an integer", head.line, head.col, {"integer"})
            return Declare(h, _name(args[0], head, "name"), (args[1],), span)
        if h == "map":
            _expect_arity(head, args, 3)
            return Declare(h, _name(args[0], head, "name"),
                           (_name(args[1], head, "domain"), _name(args[2], head, "codomain")), span)
        if h == "metric":
            _expect_arity(head, args, 2)
            return Declare(h, _name(args[0], head, "name"), (_name(args[1], head, "manifold"),), span)
        if h == "compose":
            _expect_arity(head, args, 3)
            return Declare(h, _name(args[0], head, "name"),
                           (_name(args[1], head, "outer map"), _name(args[2], head, "inner map")), span)
        _expect_arity(head, args, 2)
        return Declare(h, _name(args[0], head, "name"), (_as_type(args[1], head),), span)
    if h in ("T", "Tstar", "R", "oplus", "fotimes", "foplus", "hom"):
        return TypeExpr(h, tuple(args), span)
    if h == "pair":
        if len(args) not in (2, 3):
            raise ParseError("pair takes 2 or 3 arguments", head.line, head.col, {","})
        n = args[2] if len(args) == 3 else 1
        if not isinstance(n, int):
            raise ParseError("pair: contraction count must be an integer", head.line, head.col, {"integer"})
        return Pair(_expr(args[0], head), _expr(args[1], head), n, span)
    if h == "trace":
        _expect_arity(head, args, 1)
        return Trace(_expr(args[0], head), span)
    if h == "permute":
        _expect_arity(head, args, 2)
        if not (isinstance(args[1], tuple) and args[1][:1] == ("cycles",)):
            raise ParseError("permute: expected cycle notation like (2 3)", head.line, head.col, {"("})
        return Permute(_expr(args[0], head), args[1][1], span)
    if h == "otimes":
        _expect_arity(head, args, 2)
        return TensorProduct(args[0], args[1], span)
    if h == "boxtimes":
        _expect_arity(head, args, 2)
        return ParallelProduct(_expr(args[0], head), _expr(args[1], head), span)
    if h == "pullback":
        _expect_arity(head, args, 2)
        return PullbackOf(_name(args[0], head, "map"), args[1], span)
    if h == "cov":
        _expect_arity(head, args, 1)
        return CovDeriv(_expr(args[0], head), span)
    if h == "dmap":
        _expect_arity(head, args, 1)
        return TangentMap(_name(args[0], head, "map"), span)
    if h == "dual":
        _expect_arity(head, args, 1)
        return DualOf(args[0], span)
    raise ParseError(f"unknown operator {h!r}", head.line, head.col,
                     set(DECLARATIONS) | {"pair", "trace", "permute", "otimes", "boxtimes", "pullback", "cov",
                                          "dmap", "dual"})


def _as_type(a, head: Token) -> Node:
    """Convert overloaded expression syntax (otimes/pullback/dual) into :class:`TypeExpr`."""
    if isinstance(a, TypeExpr):
        return TypeExpr(a.head, tuple(_as_type(x, head) if isinstance(x, Node) else x for x in a.args), a.span)
    if isinstance(a, Var):
        return a
    if isinstance(a, TensorProduct):
        return TypeExpr("otimes", (_as_type(a.left, head), _as_type(a.right, head)), a.span)
    if isinstance(a, PullbackOf):
        return TypeExpr("pullback", (Var(a.map), _as_type(a.arg, head)), a.span)
    if isinstance(a, DualOf):
        return TypeExpr("dual", (_as_type(a.arg, head),), a.span)
    raise ParseError(f"{head.text}: expected a type", head.line, head.col, set(TYPE_HEADS))


def parse(text: str) -> SourceExpr:
    """Parse source text into span-annotated forms."""
    return SourceExpr(text, _Parser(text).program())


# -- rendering -----------------------------------------------------------------


def render(node) -> str:
    """Source text for a node or a whole :class:`SourceExpr` (``parse∘render`` is the identity)."""
    if isinstance(node, SourceExpr):
        return "\n".join(render(f) for f in node.forms)
    if isinstance(node, int):
        return str(node)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Pair):
        return f"pair({render(node.left)}, {render(node.right)}, {node.n})"
    if isinstance(node, Trace):
        return f"trace({render(node.arg)})"
    if isinstance(node, Permute):
        cyc = "".join("(" + " ".join(map(str, c)) + ")" for c in node.cycles) or "()"
        return f"permute({render(node.arg)}, {cyc})"
    if isinstance(node, TensorProduct):
        return f"otimes({render(node.left)}, {render(node.right)})"
    if isinstance(node, ParallelProduct):
        return f"boxtimes({render(node.left)}, {render(node.right)})"
    if isinstance(node, PullbackOf):
        return f"pullback({node.map}, {render(node.arg)})"
    if isinstance(node, CovDeriv):
        return f"cov({render(node.arg)})"
    if isinstance(node, TangentMap):
        return f"dmap({node.map})"
    if isinstance(node, DualOf):
        return f"dual({render(node.arg)})"
    if isinstance(node, TypeExpr):
        return f"{node.head}({', '.join(render(a) for a in node.args)})"
    if isinstance(node, Declare):
        return f"{node.kind}({', '.join([node.name] + [render(a) if not isinstance(a, str) else a for a in node.args])})"
    raise UsageError(f"cannot render {node!r}")


# -- type checking ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TypedExpr:
    node: Node
    btype: bt.BundleType
    children: tuple = ()

    def __str__(self):
        return bt.render_type(self.btype)


@dataclass
class Scope:
    """Declarations seen so far: the bundle environment plus typed symbols."""

    env: bt.Environment = field(default_factory=bt.Environment)
    symbols: dict = field(default_factory=dict)
    metrics: set = field(default_factory=set)


def _err(cls, node: Node, message: str, expected=None, found=None):
    return cls(message, expected=expected, found=found, span=node.span)


def _with_span(exc: BundleTypeError, node: Node) -> BundleTypeError:
    if exc.span is None:
        exc.span = node.span
    return exc


def resolve_type(t: Node, scope: Scope) -> bt.BundleType:
    env = scope.env
    if isinstance(t, Var):
        raise _err(UnknownSymbol, t, f"{t.name!r} is not a type")
    h, args = t.head, t.args

    def man(a):
        if not isinstance(a, Var) or a.name not in env.manifolds:
            raise _err(UnknownSymbol, a if isinstance(a, Node) else t, f"unknown manifold {render(a)!r}")
        return env.manifolds[a.name]

    def sub(a):
        if not isinstance(a, TypeExpr):
            raise _err(UnknownSymbol, a if isinstance(a, Node) else t, f"expected a type, found {render(a)!r}")
        return resolve_type(a, scope)

    arity = {"T": 1, "Tstar": 1, "R": 1, "dual": 1}.get(h, 2)
    if len(args) != arity:
        raise _err(ValenceError, t, f"{h} takes {arity} argument(s)")
    try:
        if h == "T":
            return bt.Tangent(man(args[0]))
        if h == "Tstar":
            return bt.Cotangent(man(args[0]))
        if h == "R":
            return bt.LineBundle(man(args[0]))
        if h == "dual":
            return bt.Dual(sub(args[0]))
        if h == "pullback":
            f = args[0]
            if not isinstance(f, Var) or f.name not in env.maps and not _is_identity(f.name, env):
                raise _err(UnknownSymbol, f if isinstance(f, Node) else t, f"unknown map {render(f)!r}")
            F = sub(args[1])
            fmap = env.map(f.name)
            if bt.base_space(F) != fmap.codomain:
                raise _err(BaseMismatch, t, f"cannot pull back a bundle over {bt.base_space(F)} along "
                           f"{fmap.name}: {fmap.domain}→{fmap.codomain}", fmap.codomain, bt.base_space(F))
            return bt.Pullback(fmap, F)
        ctor = {"otimes": bt.TensorShared, "oplus": bt.SumShared, "fotimes": bt.TensorFull,
                "foplus": bt.SumFull}.get(h)
        if ctor is not None:
            return ctor(sub(args[0]), sub(args[1]))
        if h == "hom":
            return bt.hom(sub(args[0]), sub(args[1]))
    except BundleTypeError as exc:
        raise _with_span(exc, t)
    raise _err(UnknownSymbol, t, f"unknown type constructor {h!r}")


def _is_identity(name: str, env: bt.Environment) -> bool:
    return name.startswith("id_") and name[3:] in env.manifolds


def declare(d: Declare, scope: Scope):
    env = scope.env
    try:
        if d.kind == "manifold":
            env.declare_manifold(d.name, d.args[0])
        elif d.kind == "map":
            for m in d.args:
                if m not in env.manifolds:
                    raise _err(UnknownSymbol, d, f"unknown manifold {m!r}")
            env.declare_map(d.name, d.args[0], d.args[1])
        elif d.kind == "compose":
            for m in d.args:
                if m not in env.maps and not _is_identity(m, env):
                    raise _err(UnknownSymbol, d, f"unknown map {m!r}")
            env.declare_composition(d.name, d.args[0], d.args[1])
        elif d.kind == "metric":
            if d.args[0] not in env.manifolds:
                raise _err(UnknownSymbol, d, f"unknown manifold {d.args[0]!r}")
            M = env.manifolds[d.args[0]]
            scope.symbols[d.name] = bt.TensorShared(bt.Cotangent(M), bt.Cotangent(M))
            scope.metrics.add(d.name)
        else:
            scope.symbols[d.name] = resolve_type(d.args[0], scope)
    except UsageError as exc:
        raise _err(UnknownSymbol, d, str(exc)) from None
    except BundleTypeError as exc:
        raise _with_span(exc, d)


def _single_base(b: bt.BundleType, node: Node):
    base = bt.base_space(b)
    if isinstance(base, bt.ProductBase):
        raise _err(BaseMismatch, node, f"{render(node)} lives over the product {base}; a single base is needed")
    return base


def check(node: Node, scope: Scope) -> TypedExpr:
    """Infer the bundle type of an expression node."""
    env = scope.env
    try:
        if isinstance(node, Var):
            if node.name in scope.symbols:
                return TypedExpr(node, bt.normalize(scope.symbols[node.name], env))
            if _is_identity(node.name, env):
                X = env.manifolds[node.name[3:]]
                return TypedExpr(node, bt.TensorShared(bt.Tangent(X), bt.Cotangent(X)))
            raise _err(UnknownSymbol, node, f"unknown symbol {node.name!r}")
        if isinstance(node, Pair):
            l, r = check(node.left, scope), check(node.right, scope)
            return TypedExpr(node, bt.contract_type(l.btype, r.btype, node.n, env), (l, r))
        if isinstance(node, Trace):
            a = check(node.arg, scope)
            fs = bt.factors(a.btype, env)
            if len(fs) != 2:
                raise _err(ValenceError, node, f"trace needs exactly 2 factors, found {len(fs)}",
                           expected=2, found=len(fs))
            if fs[1].leaf != fs[0].dual().leaf or fs[0].own_base != fs[1].own_base:
                bt._classify(fs[0], fs[1], 1)
            return TypedExpr(node, bt.LineBundle(fs[0].own_base), (a,))
        if isinstance(node, Permute):
            a = check(node.arg, scope)
            fs = bt.factors(a.btype, env)
            if any(k < 1 or k > len(fs) for c in node.cycles for k in c):
                raise _err(ValenceError, node, f"permutation {node.cycles} does not act on {len(fs)} factors",
                           expected=len(fs))
            perm = ta.from_cycles(node.cycles, len(fs))
            out = [None] * len(fs)
            for i, p in enumerate(perm):
                out[p] = fs[i]
            return TypedExpr(node, bt.from_factors(out, bt.base_space(a.btype)), (a,))
        if isinstance(node, TensorProduct):
            l, r = check(node.left, scope), check(node.right, scope)
            fs = bt.factors(l.btype, env) + bt.factors(r.btype, env)
            lb, rb = bt.base_space(l.btype), bt.base_space(r.btype)
            base = lb if lb == rb else bt.join_bases(lb, rb)
            return TypedExpr(node, bt.from_factors(fs, base), (l, r))
        if isinstance(node, ParallelProduct):
            l, r = check(node.left, scope), check(node.right, scope)
            lf, rf = bt.factors(l.btype, env), bt.factors(r.btype, env)
            for side, fs in (("left", lf), ("right", rf)):
                if len(fs) % 2 or not fs:
                    raise _err(ValenceError, node, f"boxtimes needs an even number of factors on the {side}, "
                               f"found {len(fs)}", expected="even", found=len(fs))
            a, b = len(lf) // 2, len(rf) // 2
            fs = lf[:a] + rf[:b] + lf[a:] + rf[b:]
            return TypedExpr(node, bt.from_factors(fs), (l, r))
        if isinstance(node, PullbackOf):
            if node.map not in env.maps and not _is_identity(node.map, env):
                raise _err(UnknownSymbol, node, f"unknown map {node.map!r}")
            f = env.map(node.map)
            a = check(node.arg, scope)
            base = bt.base_space(a.btype)
            if base != f.codomain:
                raise _err(BaseMismatch, node, f"cannot pull back a field over {base} along {f.name}: "
                           f"{f.domain}→{f.codomain}", expected=f.codomain, found=base)
            return TypedExpr(node, bt.normalize(bt.Pullback(f, a.btype), env), (a,))
        if isinstance(node, CovDeriv):
            a = check(node.arg, scope)
            base = _single_base(a.btype, node)
            return TypedExpr(node, bt.from_factors(bt.factors(a.btype, env) + bt.factors(bt.Cotangent(base)),
                                                   base), (a,))
        if isinstance(node, TangentMap):
            if node.map not in env.maps and not _is_identity(node.map, env):
                raise _err(UnknownSymbol, node, f"unknown map {node.map!r}")
            f = env.map(node.map)
            return TypedExpr(node, bt.normalize(bt.TensorShared(bt.Pullback(f, bt.Tangent(f.codomain)),
                                                                bt.Cotangent(f.domain)), env))
        if isinstance(node, DualOf):
            a = check(node.arg, scope)
            fs = bt.factors(a.btype, env)
            if len(fs) != 2:
                raise _err(ValenceError, node, f"dual (adjoint) needs 2 factors, found {len(fs)}",
                           expected=2, found=len(fs))
            return TypedExpr(node, bt.from_factors([fs[1], fs[0]]), (a,))
    except BundleTypeError as exc:
        raise _with_span(exc, node)
    raise _err(UnknownSymbol, node, f"cannot typecheck {type(node).__name__}")


@dataclass
class CheckedProgram:
    source: SourceExpr
    scope: Scope
    typed: list
    errors: list

    @property
    def ok(self) -> bool:
        return not self.errors


def typecheck_program(src: SourceExpr | str, scope: Scope | None = None) -> CheckedProgram:
    """Check every form, collecting all type errors instead of stopping at the first."""
    if isinstance(src, str):
        src = parse(src)
    scope = scope or Scope()
    typed, errors = [], []
    for f in src.forms:
        try:
            if isinstance(f, Declare):
                declare(f, scope)
            else:
                typed.append(check(f, scope))
        except BundleTypeError as exc:
            errors.append(exc)
    return CheckedProgram(src, scope, typed, errors)


def typecheck(src: SourceExpr | str, env: Scope | None = None) -> TypedExpr:
    """Type of the root (last) expression; raises the first type error."""
    prog = typecheck_program(src, env)
    if prog.errors:
        raise prog.errors[0]
    if not prog.typed:
        raise UsageError("source contains no expression")
    return prog.typed[-1]


def format_diagnostic(exc: Exception, filename: str = "<input>", level: str = "mid") -> str:
    """``file:line:col: kind: message`` with type decoration at the chosen telescope level."""
    if isinstance(exc, ParseError):
        return f"{filename}:{exc.line}:{exc.col}: ParseError: {exc.message}"
    span = getattr(exc, "span", None)
    where = f"{span.line}:{span.col}" if span else "1:1"
    kind = getattr(exc, "kind", type(exc).__name__)
    msg = getattr(exc, "message", str(exc))
    extra = ""
    if level != "low" and isinstance(exc, BundleTypeError):
        exp, found = exc.expected, exc.found
        if isinstance(exp, bt.BundleType) and isinstance(found, bt.BundleType):
            extra = f" [expected {bt.render_type(exp, level)}, found {bt.render_type(found, level)}]"
    return f"{filename}:{where}: {kind}: {msg}{extra}"


# -- evaluation ---------------------------------------------------------------------


def _points_for(point, scope: Scope) -> Optional[dict]:
    if point is None:
        return None
    if isinstance(point, Mapping):
        return {k: np.asarray(v, dtype=float) for k, v in point.items()}
    raise UsageError("point must be a mapping from manifold names to coordinates")


def _retag(t: ta.TypedTensor, old_suffix: str, new_suffix: str, space_prefix: str) -> ta.TypedTensor:
    tags = []
    for tag in t.tags:
        s = tag.space
        if s.startswith(space_prefix) and s.endswith(old_suffix):
            s = s[: len(s) - len(old_suffix)] + new_suffix
        tags.append(ta.AxisTag(s, tag.dim, tag.variance))
    return ta.TypedTensor(tuple(tags), t.data)


def evaluate(typed: TypedExpr, bindings: Mapping[str, object], point=None, scope: Scope | None = None):
    """Numeric value of a typed expression.

    ``bindings`` maps symbols to :class:`TypedTensor` values, to
    :class:`covariant_calculus.Field` objects (evaluated at ``point``) and
    maps to :class:`SmoothMap` objects.  ``point`` maps manifold names to
    coordinates; without it tags carry no base point.  A binding whose tags
    disagree with its declared type raises :class:`TagMismatch`.
    """
    scope = scope or Scope()
    pts = _points_for(point, scope)
    return _eval(typed, bindings, pts, scope)


def _expected_tags(b: bt.BundleType, pts, scope) -> tuple:
    return bt.fiber_tags(b, pts, scope.env)


def _as_field(node: Node, bindings, scope) -> cc.Field:
    if isinstance(node, Var):
        v = bindings.get(node.name)
        if isinstance(v, cc.Field):
            return v
        raise UsageError(f"{node.name!r} must be bound to a Field to be differentiated")
    if isinstance(node, CovDeriv):
        return cc.covariant_derivative(_as_field(node.arg, bindings, scope))
    if isinstance(node, TangentMap):
        return cc.tangent_map(_smooth_map(node.map, bindings))
    if isinstance(node, PullbackOf):
        return cc.pullback_field(_smooth_map(node.map, bindings), _as_field(node.arg, bindings, scope))
    if isinstance(node, Permute):
        F = _as_field(node.arg, bindings, scope)
        return cc.permute_field(F, ta.from_cycles(node.cycles, F.rank))
    raise UsageError(f"cannot differentiate {render(node)}; only fields, maps, pullbacks and permutations")


def _smooth_map(name: str, bindings) -> SmoothMap:
    f = bindings.get(name)
    if not isinstance(f, SmoothMap):
        raise UsageError(f"map {name!r} must be bound to a SmoothMap")
    return f


def _field_point(F: cc.Field, pts) -> np.ndarray:
    if pts is None or F.base.name not in pts:
        raise UsageError(f"evaluating a field on {F.base.name} needs a point on it")
    return pts[F.base.name]


def _eval(t: TypedExpr, bindings, pts, scope) -> ta.TypedTensor:
    node = t.node
    if isinstance(node, Var):
        if node.name not in bindings and node.name.startswith("id_"):
            tag = _expected_tags(bt.Tangent(scope.env.manifolds[node.name[3:]]), pts, scope)[0]
            return ta.identity(tag)
        v = bindings.get(node.name)
        if v is None:
            raise UsageError(f"no binding for {node.name!r}")
        if isinstance(v, cc.Field):
            v = v.tensor_at(_field_point(v, pts))
        if not isinstance(v, ta.TypedTensor):
            raise UsageError(f"binding for {node.name!r} is not a tensor")
        want = _expected_tags(t.btype, pts, scope)
        if v.tags != want:
            bad = next((i for i, (a, b) in enumerate(zip(v.tags, want)) if a != b), min(len(v.tags), len(want)))
            raise TagMismatch(f"binding {node.name!r} has tags {v.tags}, its declared type needs {want}",
                              left=v.tags[bad] if bad < len(v.tags) else None,
                              right=want[bad] if bad < len(want) else None, axis=bad)
        return v
    if isinstance(node, (CovDeriv, TangentMap)):
        F = _as_field(node, bindings, scope)
        return F.tensor_at(_field_point(F, pts))
    kids = [_eval(c, bindings, pts, scope) for c in t.children if not isinstance(node, PullbackOf)]
    if isinstance(node, Pair):
        return ta.contract(kids[0], kids[1], node.n)
    if isinstance(node, Trace):
        return ta.scalar(ta.trace(kids[0]))
    if isinstance(node, Permute):
        return ta.permute(kids[0], ta.from_cycles(node.cycles, kids[0].rank))
    if isinstance(node, TensorProduct):
        return ta.tensor_product(kids[0], kids[1])
    if isinstance(node, ParallelProduct):
        return ta.parallel_product(kids[0], kids[1], kids[0].rank // 2, kids[1].rank // 2)
    if isinstance(node, DualOf):
        return ta.adjoint(kids[0])
    if isinstance(node, PullbackOf):
        f = _smooth_map(node.map, bindings)
        if pts is None or f.domain.name not in pts:
            raise UsageError("pullback evaluation needs a point on the map's domain")
        x = pts[f.domain.name]
        y = f(x)
        inner = _eval(t.children[0], bindings, {**pts, f.codomain.name: y}, scope)
        return _retag(inner, bt.point_key(y), f"{f.name}{bt.point_key(x)}", f"T{f.codomain.name}@")
    raise UsageError(f"cannot evaluate {type(node).__name__}")


def run(text: str, bindings: Mapping[str, object], point=None):
    """Parse, typecheck and evaluate the last expression of ``text``."""
    prog = typecheck_program(parse(text))
    if prog.errors:
        raise prog.errors[0]
    return evaluate(prog.typed[-1], bindings, point, prog.scope)
