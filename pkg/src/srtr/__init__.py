"""One-stage scene-graph generation with a self-reasoning triplet decoder."""

__version__ = "0.1.0"
