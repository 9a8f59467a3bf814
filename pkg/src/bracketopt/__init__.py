"""Nested Lie-bracket synthesis for graph-constrained vector fields.

The package builds interaction-respecting vector fields on multi-agent
state spaces, rewrites non-admissible target fields as nested brackets of
admissible ones, realizes those brackets with oscillatory inputs, and runs
distributed saddle-point flows assembled from the pieces.
"""

__version__ = "0.1.0"

from . import errors  # noqa: F401
