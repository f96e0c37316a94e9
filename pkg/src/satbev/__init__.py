"""Satellite/street BEV fusion toolkit.

Subpackages cover the full checkable pipeline: georeferenced satellite slice
curation from ego poses, occupancy-grid label projections, forward/backward
BEV view transforms, dynamic-decoupling fusion operators with verified
gradients, and the loss/metric stack.  A FastAPI service wraps the library;
the ``satbev`` CLI is a thin client over it.
"""

__version__ = "0.1.0"
