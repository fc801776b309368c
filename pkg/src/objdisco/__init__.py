"""Self-supervised object discovery.

This module exposes the pipeline graph: proposals are associated across posed
RGB-D frames, an embedding is learned from the associations, and instances are
discovered by clustering and detected by nearest-neighbor lookup.
"""

from objdisco.graph import graph

__all__ = ["graph"]
