"""Shared exception types."""


class InfeasibleError(RuntimeError):
    """The requested operating point admits no feasible allocation."""
