"""Exception hierarchy shared by every layer of the package."""

from __future__ import annotations


class BundleTCError(Exception):
    """Base class for all errors raised by bundletc."""


class UsageError(BundleTCError, ValueError):
    """An operation was called with arguments outside its contract."""


class TagMismatch(BundleTCError):
    """Two tensor axes were paired although their tags are not dual.

    ``left`` and ``right`` hold the first offending pair of axis tags.
    """

    def __init__(self, message: str, left=None, right=None, axis: int | None = None):
        super().__init__(message)
        self.left = left
        self.right = right
        self.axis = axis


class SingularMatrix(BundleTCError, ArithmeticError):
    """A matrix that must be inverted is singular or badly conditioned."""


# -- static typing errors -------------------------------------------------


class MalformedType(BundleTCError):
    """A bundle-type expression is structurally invalid.

    ``path`` locates the offending node, e.g. ``TensorShared.right.Pullback.fiber``.
    """

    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
        self.reason = message


class BundleTypeError(BundleTCError):
    """Base class for the static type errors of the expression language."""

    kind = "TypeError"

    def __init__(self, message: str, expected=None, found=None, span=None):
        super().__init__(message)
        self.message = message
        self.expected = expected
        self.found = found
        self.span = span


class ValenceError(BundleTypeError):
    kind = "ValenceError"


class SpaceMismatch(BundleTypeError):
    kind = "SpaceMismatch"


class BaseMismatch(BundleTypeError):
    kind = "BaseMismatch"


class UnknownSymbol(BundleTypeError):
    kind = "UnknownSymbol"


class ParseError(BundleTCError):
    """Syntax error with 1-based line/column and the set of expected tokens."""

    def __init__(self, message: str, line: int, col: int, expected=()):
        self.line = line
        self.col = col
        self.expected = frozenset(expected)
        self.message = message
        super().__init__(f"{line}:{col}: {message}")


# -- numerical errors -----------------------------------------------------


class OutOfChart(BundleTCError):
    """A point lies outside the chart domain of a manifold."""

    def __init__(self, message: str, point=None):
        super().__init__(message)
        self.point = point


class ChartExit(BundleTCError):
    """An integrated curve left the chart domain; ``time`` is the exit time."""

    def __init__(self, message: str, time: float):
        super().__init__(message)
        self.time = time


class TransportError(BundleTCError):
    """Parallel transport step needed by a horizontal derivative failed."""


class NotCritical(BundleTCError):
    """A configuration expected to be critical has a large Euler-Lagrange residual."""


class DomainNotInterval(BundleTCError):
    """An interval-only quantity was requested on a higher-dimensional domain."""


class NonAutonomousLagrangian(BundleTCError):
    """The Lagrangian depends explicitly on the domain point (L_mu != 0)."""


class FlowDiverged(BundleTCError):
    """A gradient flow's tension norm grew beyond the abort threshold."""
