"""Quick order-fair atomic broadcast: library and deterministic simulation harness."""

from qof.core import (
    Config,
    ConfigError,
    KeyMaterial,
    Transaction,
    VectorClock,
    digest,
    sign,
    verify,
)
from qof.fairgraph import (
    DependencyGraph,
    PrecedenceMatrix,
    add_edges,
    build_precedence,
    build_vertices,
    collapse,
    extract_deliverable,
    scc,
)
from qof.engine import Cut, DeliveredBatch, compute_cut

__version__ = "0.1.0"

__all__ = [
    "Config",
    "ConfigError",
    "Cut",
    "DeliveredBatch",
    "DependencyGraph",
    "KeyMaterial",
    "PrecedenceMatrix",
    "Transaction",
    "VectorClock",
    "add_edges",
    "build_precedence",
    "build_vertices",
    "collapse",
    "compute_cut",
    "digest",
    "extract_deliverable",
    "scc",
    "sign",
    "verify",
]
