"""Relation algebra over the joint temporal + subevent label space.

Eight labels live in two heads. Temporal labels compare event start points
(BF, AF, EQ, VG); subevent labels describe membership (PC, CP, CR, NR).
The conjunction induction table below is transcribed cell-for-cell and
parsed at import time; nothing in it is derived programmatically.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, NamedTuple, Optional

import numpy as np


class Head(str, enum.Enum):
    TEMPORAL = "temporal"
    SUBEVENT = "subevent"


class RelationLabel(str, enum.Enum):
    BF = "BF"
    AF = "AF"
    EQ = "EQ"
    VG = "VG"
    PC = "PC"
    CP = "CP"
    CR = "CR"
    NR = "NR"

    @property
    def head(self) -> Head:
        return Head.TEMPORAL if self in TEMPORAL_LABELS else Head.SUBEVENT

    @property
    def index(self) -> int:
        """Position in the 8-way score vector (temporal block first)."""
        return _INDEX[self]

    @classmethod
    def parse(cls, code: str) -> "RelationLabel":
        try:
            return cls(code.strip().upper())
        except ValueError:
            raise ValueError(f"unknown relation label {code!r}") from None

    def __str__(self) -> str:
        return self.value


BF, AF, EQ, VG = RelationLabel.BF, RelationLabel.AF, RelationLabel.EQ, RelationLabel.VG
PC, CP, CR, NR = RelationLabel.PC, RelationLabel.CP, RelationLabel.CR, RelationLabel.NR

TEMPORAL_LABELS: tuple[RelationLabel, ...] = (BF, AF, EQ, VG)
SUBEVENT_LABELS: tuple[RelationLabel, ...] = (PC, CP, CR, NR)
ALL_LABELS: tuple[RelationLabel, ...] = TEMPORAL_LABELS + SUBEVENT_LABELS
HEAD_LABELS = {Head.TEMPORAL: TEMPORAL_LABELS, Head.SUBEVENT: SUBEVENT_LABELS}
_INDEX = {lab: i for i, lab in enumerate(ALL_LABELS)}

_INVERSE = {BF: AF, AF: BF, EQ: EQ, VG: VG, PC: CP, CP: PC, CR: CR, NR: NR}
_IMPLIED_TEMPORAL = {PC: BF, CP: AF, CR: EQ, NR: None}


def inverse(r: RelationLabel) -> RelationLabel:
    """Converse relation: r(e1, e2) holds iff inverse(r)(e2, e1) holds."""
    return _INVERSE[r]


def implied_temprel(s: RelationLabel) -> Optional[RelationLabel]:
    """Temporal label forced by a subevent label; NoRel forces nothing."""
    if s.head is not Head.SUBEVENT:
        raise ValueError(f"{s} is not a subevent label")
    return _IMPLIED_TEMPORAL[s]


# --------------------------------------------------------------------------
# Conjunction induction table.
#
# Rows are alpha(e1, e2), columns beta(e2, e3); each cell lists labels that
# must hold on (e1, e3) and, prefixed with "~", labels that must not hold.
# "--" means no constraint. Column order matches the published layout.
# --------------------------------------------------------------------------

_TABLE_COLUMNS = ("PC", "CP", "CR", "NR", "BF", "AF", "EQ", "VG")

_TABLE_ROWS = {
    "PC": ("PC, ~AF", "--", "PC, ~AF", "~CP, ~CR", "BF, ~CP, ~CR", "--", "BF, ~CP, ~CR", "--"),
    "CP": ("--", "CP, ~BF", "CP, ~BF", "~PC, ~CR", "--", "AF, ~PC, ~CR", "AF, ~PC, ~CR", "--"),
    "CR": ("PC, ~AF", "CP, ~BF", "CR, EQ", "NR", "BF, ~CP, ~CR", "AF, ~PC, ~CR", "EQ", "VG"),
    "NR": ("~CP, ~CR", "~PC, ~CR", "NR", "--", "--", "--", "--", "--"),
    "BF": ("BF, ~CP, ~CR", "--", "BF, ~CP, ~CR", "--", "BF, ~CP, ~CR", "--", "BF, ~CP, ~CR", "~AF, ~EQ"),
    "AF": ("--", "AF, ~PC, ~CR", "AF, ~PC, ~CR", "--", "--", "AF, ~PC, ~CR", "AF, ~PC, ~CR", "~BF, ~EQ"),
    "EQ": ("~AF", "~BF", "EQ", "--", "BF, ~CP, ~CR", "AF, ~PC, ~CR", "EQ", "VG, ~CR"),
    "VG": ("--", "--", "VG, ~CR", "--", "~AF, ~EQ", "~BF, ~EQ", "VG", "--"),
}


@dataclass(frozen=True)
class InductionEntry:
    required: frozenset[RelationLabel] = frozenset()
    forbidden: frozenset[RelationLabel] = frozenset()

    @property
    def empty(self) -> bool:
        return not self.required and not self.forbidden

    def required_in(self, head: Head) -> Optional[RelationLabel]:
        for r in self.required:
            if r.head is head:
                return r
        return None


def _parse_cell(text: str) -> InductionEntry:
    if text.strip() == "--":
        return InductionEntry()
    required, forbidden = set(), set()
    for tok in text.split(","):
        tok = tok.strip()
        if tok.startswith("~"):
            forbidden.add(RelationLabel.parse(tok[1:]))
        else:
            required.add(RelationLabel.parse(tok))
    return InductionEntry(frozenset(required), frozenset(forbidden))


INDUCTION_TABLE: Mapping[tuple[RelationLabel, RelationLabel], InductionEntry] = {
    (RelationLabel(row), RelationLabel(col)): _parse_cell(cell)
    for row, cells in _TABLE_ROWS.items()
    for col, cell in zip(_TABLE_COLUMNS, cells)
}


def induce(alpha: RelationLabel, beta: RelationLabel) -> InductionEntry:
    """Deductions for (e1, e3) from alpha(e1, e2) and beta(e2, e3)."""
    return INDUCTION_TABLE[alpha, beta]


def _table_tensors() -> tuple[np.ndarray, np.ndarray]:
    req = np.zeros((8, 8, 8), dtype=bool)
    forb = np.zeros((8, 8, 8), dtype=bool)
    for (a, b), entry in INDUCTION_TABLE.items():
        for r in entry.required:
            req[a.index, b.index, r.index] = True
        for f in entry.forbidden:
            forb[a.index, b.index, f.index] = True
    req.setflags(write=False)
    forb.setflags(write=False)
    return req, forb


# REQUIRED[a, b, g] is True when g in De(a, b); FORBIDDEN likewise for negations.
REQUIRED, FORBIDDEN = _table_tensors()
INVERSE_INDEX = np.array([inverse(r).index for r in ALL_LABELS])


# --------------------------------------------------------------------------
# Triple checking
# --------------------------------------------------------------------------

PairLabels = tuple[Optional[RelationLabel], Optional[RelationLabel]]


class Violation(NamedTuple):
    alpha: RelationLabel
    beta: RelationLabel
    kind: str  # "required" or "forbidden"
    label: RelationLabel
    found: Optional[RelationLabel]

    def __str__(self) -> str:
        mark = "" if self.kind == "required" else "~"
        return f"{self.alpha}*{self.beta} => {mark}{self.label} (found {self.found})"


def _same_head(labels: PairLabels, head: Head) -> Optional[RelationLabel]:
    return labels[0] if head is Head.TEMPORAL else labels[1]


def check_triple(labels_12: PairLabels, labels_23: PairLabels, labels_13: PairLabels) -> list[Violation]:
    """All induction-table violations for one ordered triple.

    Each argument is a ``(temporal, subevent)`` tuple. Missing labels (None)
    on the antecedent side skip that combination; a missing consequent slot
    is neither required nor forbidden, so it never violates.
    """
    out = []
    for alpha in labels_12:
        if alpha is None:
            continue
        for beta in labels_23:
            if beta is None:
                continue
            entry = INDUCTION_TABLE[alpha, beta]
            for r in entry.required:
                found = _same_head(labels_13, r.head)
                if found is not None and found != r:
                    out.append(Violation(alpha, beta, "required", r, found))
            for f in entry.forbidden:
                found = _same_head(labels_13, f.head)
                if found == f:
                    out.append(Violation(alpha, beta, "forbidden", f, found))
    return out


# --------------------------------------------------------------------------
# Graphs
# --------------------------------------------------------------------------


class ConflictError(ValueError):
    """Annotations (or deductions from them) contradict the induction table."""

    def __init__(self, e1: int, e3: int, existing, deduced, reason: str = "required"):
        self.e1, self.e3 = e1, e3
        self.existing, self.deduced = existing, deduced
        if reason == "forbidden":
            msg = f"pair ({e1}, {e3}): label {existing} is forbidden by deduction"
        else:
            msg = f"pair ({e1}, {e3}): existing {existing} contradicts deduced {deduced}"
        super().__init__(msg)


def _canon(i: int, j: int) -> tuple[int, int, bool]:
    if i == j:
        raise ValueError("a relation needs two distinct events")
    return (i, j, False) if i < j else (j, i, True)


def _inv(r: Optional[RelationLabel]) -> Optional[RelationLabel]:
    return None if r is None else _INVERSE[r]


@dataclass(frozen=True)
class RelationGraph:
    """Per-pair labels over ``n_events`` events.

    Edges are keyed by the canonical pair ``(i, j)`` with ``i < j``; reading
    ``(j, i)`` returns the inverted labels, so the stored data can never be
    asymmetric.
    """

    n_events: int
    edges: Mapping[tuple[int, int], PairLabels] = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for (i, j), (t, s) in self.edges.items():
            if not (0 <= i < j < self.n_events):
                raise ValueError(f"edge ({i}, {j}) is not canonical for {self.n_events} events")
            if t is not None and t.head is not Head.TEMPORAL:
                raise ValueError(f"edge ({i}, {j}): {t} is not a temporal label")
            if s is not None and s.head is not Head.SUBEVENT:
                raise ValueError(f"edge ({i}, {j}): {s} is not a subevent label")
            if t is not None or s is not None:
                clean[i, j] = (t, s)
        object.__setattr__(self, "edges", dict(sorted(clean.items())))

    @classmethod
    def from_directed(cls, n_events: int, labels: Iterable[tuple[int, int, Optional[RelationLabel], Optional[RelationLabel]]]) -> "RelationGraph":
        edges = {}
        for i, j, t, s in labels:
            a, b, flip = _canon(i, j)
            edges[a, b] = (_inv(t), _inv(s)) if flip else (t, s)
        return cls(n_events, edges)

    def get(self, i: int, j: int) -> PairLabels:
        a, b, flip = _canon(i, j)
        t, s = self.edges.get((a, b), (None, None))
        return (_inv(t), _inv(s)) if flip else (t, s)

    def label(self, i: int, j: int, head: Head) -> Optional[RelationLabel]:
        return _same_head(self.get(i, j), head)

    def pairs(self) -> Iterator[tuple[int, int]]:
        return itertools.combinations(range(self.n_events), 2)

    def is_complete(self) -> bool:
        return all(
            None not in self.edges.get(p, (None, None)) for p in self.pairs()
        )

    def with_labels(self, i: int, j: int, temporal=None, subevent=None) -> "RelationGraph":
        a, b, flip = _canon(i, j)
        edges = dict(self.edges)
        edges[a, b] = (_inv(temporal), _inv(subevent)) if flip else (temporal, subevent)
        return RelationGraph(self.n_events, edges)

    def restrict(self, head: Head) -> "RelationGraph":
        keep = 0 if head is Head.TEMPORAL else 1
        return RelationGraph(
            self.n_events,
            {p: tuple(l if k == keep else None for k, l in enumerate(v)) for p, v in self.edges.items()},
        )


@dataclass
class ViolationReport:
    total_triples: int
    violating_triples: int
    details: list[tuple[int, int, int, Violation]] = field(default_factory=list)

    @property
    def rate(self) -> float:
        return self.violating_triples / self.total_triples if self.total_triples else 0.0


def ordered_triples(n: int) -> Iterator[tuple[int, int, int]]:
    return itertools.permutations(range(n), 3)


def count_violations(g: RelationGraph) -> ViolationReport:
    """Check every ordered triple of distinct events against the table.

    A triple counts once toward ``violating_triples`` however many table
    entries it breaks; ``details`` lists each broken entry.
    """
    total = bad = 0
    details = []
    for e1, e2, e3 in ordered_triples(g.n_events):
        total += 1
        found = check_triple(g.get(e1, e2), g.get(e2, e3), g.get(e1, e3))
        if found:
            bad += 1
            details.extend((e1, e2, e3, v) for v in found)
    return ViolationReport(total, bad, details)


def transitive_closure(g: RelationGraph) -> RelationGraph:
    """Add every label the induction table deduces, until nothing changes.

    Existing labels are never overwritten. Raises ConflictError when a
    deduction disagrees with a label already present, or when a present
    label is forbidden by some deduction.
    """
    n = g.n_events
    # Directed label matrix; slot [i][j] is (temporal, subevent) for (i, j).
    lab: list[list[list]] = [[[None, None] for _ in range(n)] for _ in range(n)]
    for (i, j), (t, s) in g.edges.items():
        lab[i][j] = [t, s]
        lab[j][i] = [_inv(t), _inv(s)]

    changed = True
    while changed:
        changed = False
        for e1, e2, e3 in ordered_triples(n):
            l12, l23 = lab[e1][e2], lab[e2][e3]
            if (l12[0] is None and l12[1] is None) or (l23[0] is None and l23[1] is None):
                continue
            l13 = lab[e1][e3]
            for alpha in l12:
                if alpha is None:
                    continue
                for beta in l23:
                    if beta is None:
                        continue
                    entry = INDUCTION_TABLE[alpha, beta]
                    for r in entry.required:
                        k = 0 if r.head is Head.TEMPORAL else 1
                        if l13[k] is None:
                            l13[k] = r
                            lab[e3][e1][k] = _INVERSE[r]
                            changed = True
                        elif l13[k] != r:
                            raise ConflictError(e1, e3, l13[k], r)
                    for f in entry.forbidden:
                        k = 0 if f.head is Head.TEMPORAL else 1
                        if l13[k] == f:
                            raise ConflictError(e1, e3, f, f, reason="forbidden")

    edges = {}
    for i, j in itertools.combinations(range(n), 2):
        t, s = lab[i][j]
        if t is not None or s is not None:
            edges[i, j] = (t, s)
    return RelationGraph(n, edges)
