"""Exception types shared across the package.

Every failure mode that callers are expected to branch on gets its own
class; the CLI maps these onto exit codes and single-line diagnostics.
"""

from __future__ import annotations


class BracketOptError(Exception):
    """Base class for all package-specific errors."""


class ParseError(BracketOptError):
    """Malformed s-expression, graph file, or problem file."""


class DomainError(BracketOptError):
    """Evaluation hit a singularity (sec pole, log of a nonpositive value).

    component is the smallest state index appearing in the offending
    argument, or None for a constant argument; value is the argument that
    triggered the failure.
    """

    def __init__(self, message: str, component: int | None = None,
                 value: float | None = None):
        super().__init__(message)
        self.component = component
        self.value = value


class NotClosedForm(BracketOptError):
    """No antiderivative exists within the expression basis."""


class PathTooShort(BracketOptError):
    """A chain synthesis needs at least two nodes."""


class NotSeparable(BracketOptError):
    """Target does not factor into the required local/foreign form."""


class NoPath(BracketOptError):
    """No simple path connects the agents a rewrite needs."""


class FactorOnOwnNode(BracketOptError):
    """A product factor sits on the written component itself."""


class NotStronglyConnected(BracketOptError):
    """Series expansion requires a strongly connected graph."""


class Unrewritable(BracketOptError):
    """A term is neither admissible nor reachable through any path."""


class Divergence(BracketOptError):
    """Trajectory left the |z| <= 1e8 box during integration."""

    def __init__(self, message: str, t: float | None = None):
        super().__init__(message)
        self.t = t


class UnsupportedDepth(BracketOptError):
    """Oscillatory approximation only handles bracket depth <= 2."""


class NoKKTPoint(BracketOptError):
    """Active-set enumeration found no point satisfying the KKT system."""


class MalformedProblem(BracketOptError):
    """Problem description violates a structural precondition."""
