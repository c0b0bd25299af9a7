"""Venous-tree synthesis engine, dataset factory, and vessel segmentation metrics."""

from .graph import (
    CostBreakdown,
    Edge,
    GcoConfig,
    Node,
    VesselTree,
    Violation,
    load_tree,
    propagate_flows,
    save_tree,
    total_cost,
    update_radii_murray,
    validate_tree,
)

__version__ = "0.1.0"

__all__ = [
    "CostBreakdown",
    "Edge",
    "GcoConfig",
    "Node",
    "VesselTree",
    "Violation",
    "load_tree",
    "propagate_flows",
    "save_tree",
    "total_cost",
    "update_radii_murray",
    "validate_tree",
    "__version__",
]
