"""Exception hierarchy shared by all etconsensus modules."""


class ConsensusError(Exception):
    """Base class for every error raised by this package."""


class InvalidGraphError(ConsensusError, ValueError):
    """Adjacency or Laplacian data violates the weighted digraph invariants."""


class GraphStructureError(ConsensusError):
    """The graph lacks the connectivity an operation requires."""

    def __init__(self, message, components=()):
        super().__init__(message)
        self.components = tuple(tuple(c) for c in components)


class NumericError(ConsensusError, ArithmeticError):
    """A numerical procedure failed to reach its tolerance."""

    def __init__(self, message, residual=None, interval=None):
        super().__init__(message)
        self.residual = residual
        self.interval = interval


class ZenoSuspected(NumericError):
    """An agent exceeded the per-agent event budget.

    ``stats`` carries the agent index, its event count, the time reached
    and the most recent inter-event intervals.
    """

    def __init__(self, message, stats):
        super().__init__(message)
        self.stats = stats


class ScenarioError(ConsensusError, ValueError):
    """A scenario is malformed or dimensionally inconsistent."""

    def __init__(self, message, field=None, line=None):
        self.message = message
        where = []
        if field is not None:
            where.append(f"field '{field}'")
        if line is not None:
            where.append(f"line {line}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.field = field
        self.line = line


class UnsupportedDepthError(ConsensusError):
    """Lyapunov diagnostics requested for a condensation deeper than supported."""
