"""Linear-iterative distributed averaging with local invariant checks."""

__version__ = "0.1.0"
