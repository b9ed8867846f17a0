"""Skeleton-to-mesh regression: a graph-aware transformer encoder lifts 2D
joints to 3D, and a base-motion decoder turns them into mesh offsets."""

__version__ = "0.1.0"
