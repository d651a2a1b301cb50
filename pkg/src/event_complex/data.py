"""Synthetic event-complex corpora, the JSONL corpus format, and RED conversion.

Generated ground truth follows one model of time and membership, so every
induction-table rule holds on it by construction:

* each mention realizes an underlying *node*; coreferent mentions share one;
* nodes sit on independent *storylines*; pairs across storylines are
  (VG, NR), the noise pairs;
* within a storyline nodes form a forest and each has an integer start
  time, a child starting strictly after its parent.

Text is rendered from clause templates. Each clause carries the
storyline's region token, usually a day token for the start time, a
trigger word whose lexicon encodes tree depth, the node's own thread tag
and, for children, the parent's thread tag.
"""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .model import POS_TAGS, Document, Token, Vocab
from .relations import (
    AF,
    BF,
    CP,
    CR,
    EQ,
    NR,
    PC,
    VG,
    ConflictError,
    RelationGraph,
    RelationLabel,
    count_violations,
    inverse,
    transitive_closure,
)

log = logging.getLogger(__name__)

SPLITS = ("train", "dev", "test")
_POS = {tag: k for k, tag in enumerate(POS_TAGS)}


class ParseError(ValueError):
    def __init__(self, line: int, msg: str):
        self.line = line
        super().__init__(f"line {line}: {msg}")


@dataclass(frozen=True)
class SyntheticSpec:
    seed: int = 0
    docs: int = 200
    events: tuple[int, int] = (5, 9)
    branching: tuple[int, int] = (1, 3)
    noise: float = 0.2
    vocab_size: int = 24
    template: int = 0
    coref_rate: float = 0.1
    time_cue_rate: float = 0.7
    max_depth: int = 3
    horizon: int = 30

    def __post_init__(self):
        for name in ("events", "branching"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 0:
                raise ValueError(f"{name} range {lo}..{hi} is empty")
        if self.events[0] < 1:
            raise ValueError("documents need at least one event")
        for name in ("noise", "coref_rate", "time_cue_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.template not in TEMPLATES:
            raise ValueError(f"unknown template grammar {self.template}")
        if self.vocab_size < 4 or self.docs < 0 or self.max_depth < 1:
            raise ValueError("vocab_size >= 4, docs >= 0 and max_depth >= 1 required")


@dataclass(frozen=True)
class CorpusRecord:
    document: Document
    gold: RelationGraph
    split: str = "train"

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}")
        if self.gold.n_events != self.document.n_events:
            raise ValueError("gold graph and document disagree on the number of events")


# ----------------------------------------------------------------------------
# generation
# ----------------------------------------------------------------------------

@dataclass
class _Node:
    storyline: int
    parent: Optional[int]
    depth: int
    start: int
    children: int = 0
    ancestors: frozenset = frozenset()


N_REGIONS = 8
N_THREADS = 24
FILLERS = ("the", "a", "report", "said", "officials", "that", "then", "later", "after", "meanwhile")
TEMPLATES = {
    # slot order for one clause
    0: ("region", "filler", "day", "trigger", "thread", "parent", "."),
    1: ("filler", "trigger", "thread", "parent", "day", "region", "."),
}


def _lexicon(spec: SyntheticSpec) -> list[list[str]]:
    per = max(1, spec.vocab_size // spec.max_depth)
    return [[f"ev{d}_{k}" for k in range(per)] for d in range(spec.max_depth)]


def build_vocab(spec: SyntheticSpec) -> Vocab:
    words = list(FILLERS) + [".", "within", "nodate"]
    words += [f"day{t:02d}" for t in range(spec.horizon + spec.max_depth * 3 + 1)]
    words += [f"region{k}" for k in range(N_REGIONS)]
    words += [f"th{k}" for k in range(N_THREADS)]
    for level in _lexicon(spec):
        words += level
    return Vocab(words)


def _sample_nodes(rng: np.random.Generator, n_mentions: int, spec: SyntheticSpec) -> tuple[list[_Node], list[int]]:
    nodes: list[_Node] = []
    mention_node: list[int] = []
    max_children = int(rng.integers(spec.branching[0], spec.branching[1] + 1))
    for _ in range(n_mentions):
        if nodes and rng.random() < spec.coref_rate:
            mention_node.append(int(rng.integers(len(nodes))))
            continue
        if nodes and rng.random() < spec.noise:
            storyline = 1 + int(rng.integers(2))
        else:
            storyline = 0
        cands = [k for k, nd in enumerate(nodes)
                 if nd.storyline == storyline and nd.depth + 1 < spec.max_depth and nd.children < max_children]
        if cands and rng.random() < 0.6:
            p = cands[int(rng.integers(len(cands)))]
            parent = nodes[p]
            parent.children += 1
            node = _Node(storyline, p, parent.depth + 1, parent.start + int(rng.integers(1, 4)),
                         ancestors=parent.ancestors | {p})
        else:
            node = _Node(storyline, None, 0, int(rng.integers(0, spec.horizon)))
        nodes.append(node)
        mention_node.append(len(nodes) - 1)
    return nodes, mention_node


def _relation(nodes: list[_Node], a: int, b: int) -> tuple[RelationLabel, RelationLabel]:
    if a == b:
        return EQ, CR
    na, nb = nodes[a], nodes[b]
    if na.storyline != nb.storyline:
        return VG, NR
    if a in nb.ancestors:
        sub = PC
    elif b in na.ancestors:
        sub = CP
    else:
        sub = NR
    temp = BF if na.start < nb.start else AF if na.start > nb.start else EQ
    return temp, sub


def generate_complex(seed: int, n_events: int, spec: Optional[SyntheticSpec] = None,
                     vocab: Optional[Vocab] = None, doc_id: Optional[str] = None) -> tuple[RelationGraph, Document]:
    if n_events < 1:
        raise ValueError("n_events must be >= 1")
    spec = spec or SyntheticSpec()
    vocab = vocab or build_vocab(spec)
    rng = np.random.default_rng(seed)
    nodes, mention_node = _sample_nodes(rng, n_events, spec)

    lexicon = _lexicon(spec)
    triggers = [lexicon[nd.depth][int(rng.integers(len(lexicon[nd.depth])))] for nd in nodes]
    threads = rng.choice(N_THREADS, size=len(nodes), replace=len(nodes) > N_THREADS)
    regions = rng.choice(N_REGIONS, size=3, replace=False)

    # narrative order: mostly chronological, locally shuffled
    keys = [nodes[mention_node[m]].start + rng.normal(0, 4.0) for m in range(n_events)]
    order = sorted(range(n_events), key=lambda m: keys[m])

    tokens: list[Token] = []
    events: list[int] = []
    for m in order:
        nd = nodes[mention_node[m]]
        k = mention_node[m]
        for slot in TEMPLATES[spec.template]:
            if slot == "region":
                words = [(f"region{regions[nd.storyline]}", "PROPN")]
            elif slot == "filler":
                words = [(FILLERS[int(rng.integers(len(FILLERS)))], "DET")]
            elif slot == "day":
                on = rng.random() < spec.time_cue_rate
                words = [(f"day{nd.start:02d}" if on else "nodate", "TIME")]
            elif slot == "trigger":
                events.append(len(tokens))
                words = [(triggers[k], "VERB")]
            elif slot == "thread":
                words = [(f"th{threads[k]}", "PROPN")]
            elif slot == "parent":
                words = [] if nd.parent is None else [("within", "ADP"), (f"th{threads[nd.parent]}", "PROPN")]
            else:
                words = [(".", "PUNCT")]
            tokens.extend(Token(w, vocab[w], _POS[p]) for w, p in words)

    edges = {}
    for i, j in itertools.combinations(range(n_events), 2):
        edges[i, j] = _relation(nodes, mention_node[order[i]], mention_node[order[j]])
    doc = Document(doc_id or f"syn{seed}", tokens, events)
    return RelationGraph(n_events, edges), doc


def generate_corpus(spec: SyntheticSpec) -> tuple[list[CorpusRecord], Vocab]:
    """``spec.docs`` records (all tagged train; use split_corpus afterwards)."""
    vocab = build_vocab(spec)
    rng = np.random.default_rng(spec.seed)
    records = []
    for k in range(spec.docs):
        n = int(rng.integers(spec.events[0], spec.events[1] + 1))
        gold, doc = generate_complex(int(rng.integers(2**31)), n, spec, vocab, doc_id=f"syn{spec.seed}_{k:04d}")
        records.append(CorpusRecord(doc, gold))
    return records, vocab


def split_corpus(records: Sequence[CorpusRecord], fractions: Sequence[float], seed: int = 0) -> list[CorpusRecord]:
    """Document-level split into train/dev/test by ``fractions`` (largest-remainder rounding)."""
    if not 1 <= len(fractions) <= len(SPLITS) or any(f < 0 for f in fractions):
        raise ValueError("between one and three non-negative fractions required")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("split fractions must sum to 1")
    n = len(records)
    exact = [f * n for f in fractions]
    counts = [int(np.floor(x)) for x in exact]
    for k in sorted(range(len(exact)), key=lambda k: counts[k] - exact[k])[: n - sum(counts)]:
        counts[k] += 1
    perm = np.random.default_rng(seed).permutation(n)
    tag = np.empty(n, dtype=object)
    start = 0
    for name, c in zip(SPLITS, counts):
        tag[perm[start:start + c]] = name
        start += c
    return [replace(r, split=str(tag[k])) for k, r in enumerate(records)]


def mask_annotations(record: CorpusRecord, temporal_rate: float, subevent_rate: float,
                     rng: np.random.Generator) -> CorpusRecord:
    """Keep each pair's temporal / subevent label with the given probability."""
    edges = {}
    for p, (t, s) in record.gold.edges.items():
        keep_t = t if rng.random() < temporal_rate else None
        keep_s = s if rng.random() < subevent_rate else None
        edges[p] = (keep_t, keep_s)
    return replace(record, gold=RelationGraph(record.gold.n_events, edges))


# ----------------------------------------------------------------------------
# JSONL corpus format
# ----------------------------------------------------------------------------

def record_to_json(record: CorpusRecord) -> dict:
    doc = record.document
    return {
        "id": doc.id,
        "split": record.split,
        "tokens": [{"t": tok.text, "pos": tok.pos, "id": tok.vocab_id} for tok in doc.tokens],
        "events": list(doc.events),
        "relations": [
            {"i": i, "j": j, "temporal": None if t is None else t.value, "subevent": None if s is None else s.value}
            for (i, j), (t, s) in record.gold.edges.items()
        ],
    }


def _label(code) -> Optional[RelationLabel]:
    return None if code is None else RelationLabel.parse(code)


def record_from_json(obj: dict, vocab: Optional[Vocab] = None) -> CorpusRecord:
    tokens = []
    for tok in obj["tokens"]:
        vid = tok["id"] if "id" in tok else (vocab[tok["t"]] if vocab is not None else 0)
        tokens.append(Token(tok["t"], int(vid), int(tok["pos"])))
    doc = Document(obj["id"], tokens, [int(e) for e in obj["events"]])
    edges = [(int(r["i"]), int(r["j"]), _label(r.get("temporal")), _label(r.get("subevent"))) for r in obj["relations"]]
    gold = RelationGraph.from_directed(len(doc.events), edges)
    return CorpusRecord(doc, gold, obj.get("split", "train"))


def save_corpus(records: Iterable[CorpusRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(record_to_json(r), separators=(",", ":")) + "\n")


def validate_gold(record: CorpusRecord) -> RelationGraph:
    """Close the gold graph; raises ConflictError if the annotation is inconsistent."""
    closed = transitive_closure(record.gold)
    report = count_violations(closed)
    if report.violating_triples:
        e1, _, e3, v = report.details[0]
        raise ConflictError(e1, e3, v.found, v.label)
    return closed


def load_corpus(path, strict: bool = True, vocab: Optional[Vocab] = None) -> list[CorpusRecord]:
    """Read a JSONL corpus. Strict mode closes and validates every gold graph."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = record_from_json(json.loads(line), vocab)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                if isinstance(exc, ConflictError):
                    raise
                raise ParseError(lineno, f"{type(exc).__name__}: {exc}") from exc
            if strict:
                validate_gold(rec)
            records.append(rec)
    return records


# ----------------------------------------------------------------------------
# RED
# ----------------------------------------------------------------------------

RED_MAPPING: dict[str, tuple[Optional[RelationLabel], Optional[RelationLabel]]] = {
    "BEFORE": (None, BF),
    "BEFORE/CAUSES": (None, BF),
    "BEFORE/PRECONDITION": (None, BF),
    "ENDS-ON": (None, BF),
    "OVERLAP/PRECONDITION": (None, BF),
    "SIMULTANEOUS": (None, EQ),
    "OVERLAP": (None, VG),
    "REINITIATES": (None, VG),
    "CONTAINS": (PC, BF),
    "CONTAINS-SUBEVENT": (PC, BF),
    "BEGINS-ON": (None, AF),
}

# other RED relation types, grouped by category
RED_TEMPORAL_OTHER = frozenset({"OVERLAP/CAUSES", "CAUSES", "PRECONDITION", "BEFORE/OVERLAP"})
RED_MEMBERSHIP_OTHER = frozenset({"IDENTICAL", "SET/MEMBER", "WHOLE/PART", "BRIDGING", "APPOSITIVE"})


def map_red_label(raw: str) -> tuple[Optional[RelationLabel], Optional[RelationLabel]]:
    """RED relation string -> (subevent, temporal).

    Unlisted temporal and causal types map to Vague; coreference, bridging
    and set-membership types to NoRel. Unknown strings fall back to Vague
    with a warning.
    """
    key = raw.strip().upper()
    if key in RED_MAPPING:
        return RED_MAPPING[key]
    if key in RED_MEMBERSHIP_OTHER:
        return (NR, None)
    if key not in RED_TEMPORAL_OTHER:
        log.warning("unknown RED relation %r mapped to VG", raw)
    return (None, VG)


def convert_red(rows: Iterable[str]) -> list[CorpusRecord]:
    """Tab-separated ``doc_id, e1, e2, label`` rows -> corpus records.

    The export carries no text, so each document is rendered as one
    placeholder token per event. When two rows label the same pair on the
    same head, the first one wins.
    """
    docs: dict[str, dict] = {}
    for lineno, row in enumerate(rows, start=1):
        if not row.strip() or row.startswith("#"):
            continue
        parts = row.rstrip("\n").split("\t")
        if len(parts) != 4:
            raise ParseError(lineno, f"expected 4 tab-separated fields, got {len(parts)}")
        doc_id, e1, e2, raw = parts
        try:
            i, j = int(e1), int(e2)
        except ValueError as exc:
            raise ParseError(lineno, str(exc)) from exc
        if i == j or i < 0 or j < 0:
            raise ParseError(lineno, f"bad event pair ({i}, {j})")
        sub, temp = map_red_label(raw)
        entry = docs.setdefault(doc_id, {"n": 0, "edges": {}})
        entry["n"] = max(entry["n"], i + 1, j + 1)
        a, b = (i, j) if i < j else (j, i)
        if i > j:
            sub = None if sub is None else inverse(sub)
            temp = None if temp is None else inverse(temp)
        old_t, old_s = entry["edges"].get((a, b), (None, None))
        entry["edges"][a, b] = (old_t or temp, old_s or sub)

    records = []
    for doc_id, entry in docs.items():
        n = entry["n"]
        tokens = [Token(f"e{k}", 0, _POS["X"]) for k in range(n)]
        doc = Document(doc_id, tokens, range(n))
        records.append(CorpusRecord(doc, RelationGraph(n, entry["edges"]), "test"))
    return records
