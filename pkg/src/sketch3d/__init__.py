"""Synthetic 3D sketches from curve networks and sketch-to-shape retrieval.

Modules, in pipeline order: ``geomcore`` (types and file formats),
``chain_ops`` (network consolidation), ``abstraction`` (sketch generation),
``sampling``, ``depth_render``, ``metric_learning``, ``toy_encoder``, and the
orchestration layer ``procgen``, ``config``, ``dataset``, ``pipeline``, ``cli``.
"""

__version__ = "0.1.0"
