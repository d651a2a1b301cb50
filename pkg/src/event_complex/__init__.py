"""Joint constrained learning of temporal and subevent relations between events.

Modules: ``relations`` (label algebra and induction table), ``autodiff``,
``losses``, ``model``, ``inference`` (greedy and exact global decoding),
``data`` (synthetic corpora, JSONL format, RED mapping) and ``harness``
(training, evaluation, ablations). ``cli`` is the command line front end.
"""

from .relations import (
    AF,
    ALL_LABELS,
    BF,
    CP,
    CR,
    EQ,
    NR,
    PC,
    VG,
    ConflictError,
    Head,
    RelationGraph,
    RelationLabel,
    count_violations,
    induce,
    inverse,
    transitive_closure,
)

__version__ = "0.1.0"

__all__ = [
    "AF", "ALL_LABELS", "BF", "CP", "CR", "EQ", "NR", "PC", "VG",
    "ConflictError", "Head", "RelationGraph", "RelationLabel",
    "count_violations", "induce", "inverse", "transitive_closure",
]
