"""Decoding event complexes from pair scores.

Three decoders: per-head argmax, subevent-first assembly of a complex, and
exact global decoding. The global decoder searches, by branch-and-bound,
for the labelling with the largest total log score that breaks no rule of
the induction table and keeps each pair's two labels coherent.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from .losses import PairScores
from .relations import (
    AF,
    BF,
    CP,
    CR,
    EQ,
    NR,
    PC,
    SUBEVENT_LABELS,
    TEMPORAL_LABELS,
    VG,
    Head,
    RelationGraph,
    RelationLabel,
    check_triple,
    count_violations,
    implied_temprel,
    inverse,
)

DEFAULT_MAX_EVENTS = 12

ScoreMap = Mapping[tuple[int, int], PairScores]


class CapExceeded(ValueError):
    pass


class InfeasibleError(RuntimeError):
    pass


def greedy_decode(scores: PairScores, task: Head) -> RelationLabel:
    """Argmax within one head; ties go to the earlier label (BF<AF<EQ<VG, PC<CP<CR<NR)."""
    if task is Head.TEMPORAL:
        return TEMPORAL_LABELS[int(np.argmax(scores.temporal))]
    return SUBEVENT_LABELS[int(np.argmax(scores.subevent))]


def decode_greedy(scores: ScoreMap, n_events: int) -> RelationGraph:
    """Independent per-head argmax for every canonical pair."""
    edges = {}
    for i, j in itertools.combinations(range(n_events), 2):
        s = scores[i, j]
        edges[i, j] = (greedy_decode(s, Head.TEMPORAL), greedy_decode(s, Head.SUBEVENT))
    return RelationGraph(n_events, edges)


def decode_event_complex(scores: ScoreMap, n_events: int) -> RelationGraph:
    """Subevent prediction first; a non-NR subevent label fixes the temporal one."""
    edges = {}
    for i, j in itertools.combinations(range(n_events), 2):
        s = scores[i, j]
        sub = greedy_decode(s, Head.SUBEVENT)
        temp = implied_temprel(sub)
        if temp is None:
            temp = greedy_decode(s, Head.TEMPORAL)
        edges[i, j] = (temp, sub)
    return RelationGraph(n_events, edges)


# ----------------------------------------------------------------------------
# global decoding
# ----------------------------------------------------------------------------

# Coherent (temporal, subevent) values for one pair.
PAIR_VALUES: tuple[tuple[RelationLabel, RelationLabel], ...] = (
    (BF, PC), (AF, CP), (EQ, CR), (BF, NR), (AF, NR), (EQ, NR), (VG, NR),
)
_VALUE_INDEX = {v: k for k, v in enumerate(PAIR_VALUES)}
N_VALUES = len(PAIR_VALUES)


def _inverse_value(v: int) -> int:
    t, s = PAIR_VALUES[v]
    return _VALUE_INDEX[inverse(t), inverse(s)]


VALUE_INVERSE = np.array([_inverse_value(v) for v in range(N_VALUES)])


def _triangle_table() -> np.ndarray:
    """ok[x, y, z]: pairs (a,b)=x, (b,c)=y, (a,c)=z (a<b<c) break no rule in any order."""
    ok = np.ones((N_VALUES,) * 3, dtype=bool)
    for x, y, z in itertools.product(range(N_VALUES), repeat=3):
        g = RelationGraph(3, {(0, 1): PAIR_VALUES[x], (1, 2): PAIR_VALUES[y], (0, 2): PAIR_VALUES[z]})
        ok[x, y, z] = all(
            not check_triple(g.get(a, b), g.get(b, c), g.get(a, c))
            for a, b, c in itertools.permutations(range(3))
        )
    ok.setflags(write=False)
    return ok


TRIANGLE_OK = _triangle_table()


@dataclass
class DecodingProblem:
    n_events: int
    scores: ScoreMap

    def __post_init__(self):
        for i, j in itertools.permutations(range(self.n_events), 2):
            if (i, j) not in self.scores:
                raise KeyError(f"missing scores for pair ({i}, {j})")

    def value_scores(self, pairs: list[tuple[int, int]]) -> np.ndarray:
        """(n_pairs, N_VALUES) total log score per canonical pair and value.

        Both orientations count: log p_ij(t) + log p_ij(s) + log p_ji(t') + log p_ji(s').
        """
        out = np.empty((len(pairs), N_VALUES))
        for k, (i, j) in enumerate(pairs):
            fwd, rev = self.scores[i, j].vector(), self.scores[j, i].vector()
            lf, lr = np.log(fwd), np.log(rev)
            for v, (t, s) in enumerate(PAIR_VALUES):
                out[k, v] = (lf[t.index] + lf[s.index]) + (lr[inverse(t).index] + lr[inverse(s).index])
        return out


def assignment_objective(table: np.ndarray, values) -> float:
    """Objective of one assignment, summed in canonical pair order."""
    total = 0.0
    for k, v in enumerate(values):
        total += table[k, v]
    return total


@dataclass
class DecodeStats:
    objective: float
    nodes: int
    wall_time: float
    violations: int

    def as_dict(self) -> dict:
        return {"objective": self.objective, "nodes": self.nodes,
                "wall_time": self.wall_time, "violations": self.violations}


def canonical_pairs(n: int) -> list[tuple[int, int]]:
    """Pairs (i, j), i < j, in colex order: (0,1), (0,2), (1,2), (0,3), ...

    Every triangle is closed as soon as its last event's pairs are placed,
    which is what makes forward checking bite early in the search.
    """
    return [(i, j) for j in range(n) for i in range(j)]


# a branch must beat the incumbent by more than this to be explored
_TOL = 1e-9


class _Search:
    """Branch-and-bound state with a triangle-decomposition bound.

    The objective is split into one share per (triangle, member pair); the
    shares of a pair always sum to its score. Each triangle then picks its
    best consistent labelling independently, which bounds the optimum from
    above for *any* such split. Max-sum diffusion moves the shares so that
    triangles agree on each pair's max-marginals, tightening the bound; it
    is run to convergence at the root and warm-started at every node.
    """

    def __init__(self, n: int, table: np.ndarray, pairs: list[tuple[int, int]],
                 root_iters: int = 300, node_iters: int = 20):
        self.table = table
        self.n_pairs = len(pairs)
        index = {p: k for k, p in enumerate(pairs)}
        tris = [(index[a, b], index[b, c], index[a, c]) for a, b, c in itertools.combinations(range(n), 3)]
        self.tris = np.array(tris, dtype=int).reshape(-1, 3)
        self.by_pair = [[] for _ in pairs]
        for tri in tris:
            for k in tri:
                self.by_pair[k].append(tri)
        self.degree = np.bincount(self.tris.reshape(-1), minlength=self.n_pairs).astype(float)
        self.incidence = np.zeros((self.n_pairs, self.tris.size))
        self.incidence[self.tris.reshape(-1), np.arange(self.tris.size)] = 1.0
        self.ok = np.nonzero(TRIANGLE_OK)
        # per position: permutation grouping allowed triples by that pair's value
        self.groups = []
        for pos in range(3):
            order = np.argsort(self.ok[pos], kind="stable")
            starts = np.searchsorted(self.ok[pos][order], np.arange(N_VALUES))
            self.groups.append((order, starts))
        self.root_iters, self.node_iters = root_iters, node_iters
        self.best = -math.inf
        self.best_values: Optional[np.ndarray] = None
        self.nodes = 0

    def initial_shares(self) -> np.ndarray:
        return self.table[self.tris] / np.maximum(self.degree[self.tris], 1.0)[..., None]

    def _scores(self, theta: np.ndarray, domains: np.ndarray) -> np.ndarray:
        """Share totals of every allowed labelling of every triangle, shape (n_tri, n_allowed)."""
        th = np.where(domains[self.tris], theta, -np.inf)
        return th[:, 0, self.ok[0]] + th[:, 1, self.ok[1]] + th[:, 2, self.ok[2]]

    def _max_marginals(self, scores: np.ndarray) -> np.ndarray:
        return np.stack([np.maximum.reduceat(scores[:, order], starts, axis=1)
                         for order, starts in self.groups], axis=1)

    def diffuse(self, theta: np.ndarray, domains: np.ndarray, iters: int) -> tuple[np.ndarray, float, np.ndarray]:
        """Returns (shares, bound, per-pair conditional bound of shape (n_pairs, N_VALUES))."""
        if len(self.tris) == 0:
            masked = np.where(domains, self.table, -np.inf)
            best = masked.max(axis=1)
            return theta, float(best.sum()), masked - best[:, None] + best.sum()
        prev = math.inf
        for it in range(iters + 1):
            scores = self._scores(theta, domains)
            tri_best = scores.max(axis=1)
            bound = float(tri_best.sum())
            mm = self._max_marginals(scores)
            if it == iters or not math.isfinite(bound) or prev - bound < 1e-12:
                break
            prev = bound
            finite = np.isfinite(mm)
            flat_mm = np.where(finite, mm, 0.0).reshape(-1, N_VALUES)
            total = self.incidence @ flat_mm
            count = self.incidence @ finite.reshape(-1, N_VALUES)
            avg = total / np.maximum(count, 1.0)
            # averaging over the finite entries keeps each pair's shares summing to its score
            delta = np.where(finite, avg[self.tris] - mm, 0.0)
            theta = theta + 0.5 * delta
        if not math.isfinite(bound):
            return theta, bound, np.full((self.n_pairs, N_VALUES), -np.inf)
        # bound with pair k fixed to v: its triangles' max-marginals plus the rest
        finite = np.isfinite(mm).reshape(-1, N_VALUES)
        slack = np.where(finite, (mm - tri_best[:, None, None]).reshape(-1, N_VALUES), 0.0)
        cond = self.incidence @ slack + bound
        cond[(self.incidence @ ~finite) > 0] = -np.inf
        return theta, bound, cond


def _consistent_values(tri, values, target) -> np.ndarray:
    """Mask of values for pair ``target`` given the other two (assigned) pairs of ``tri``."""
    ab, bc, ac = tri
    if target == ab:
        return TRIANGLE_OK[:, values[bc], values[ac]]
    if target == bc:
        return TRIANGLE_OK[values[ab], :, values[ac]]
    return TRIANGLE_OK[values[ab], values[bc], :]


def global_decode(problem: DecodingProblem, max_events: int = DEFAULT_MAX_EVENTS) -> tuple[RelationGraph, DecodeStats]:
    """Exact best consistent labelling.

    Depth-first branch-and-bound over pairs in colex order. Forward checking
    on triangles prunes the domains of unassigned pairs, and the bound is the
    diffused triangle decomposition of ``_Search``. Values are tried in order
    of their conditional bound, then raw score, then index.
    """
    n = problem.n_events
    if n > max_events:
        raise CapExceeded(f"{n} events exceeds the global decoding cap of {max_events}")
    start = time.perf_counter()
    pairs = canonical_pairs(n)
    if not pairs:
        return RelationGraph(n), DecodeStats(0.0, 0, time.perf_counter() - start, 0)

    table = problem.value_scores(pairs)
    search = _Search(n, table, pairs)
    values = np.full(len(pairs), -1, dtype=int)
    domains = np.ones((len(pairs), N_VALUES), dtype=bool)
    theta, _, cond = search.diffuse(search.initial_shares(), domains, search.root_iters)
    _branch(search, 0, values, domains, theta, cond)

    if search.best_values is None:
        raise InfeasibleError("no consistent labelling found")
    best = search.best_values
    graph = RelationGraph(n, {p: PAIR_VALUES[best[k]] for k, p in enumerate(pairs)})
    violations = count_violations(graph).violating_triples
    assert violations == 0, "global decode produced an inconsistent graph"
    stats = DecodeStats(assignment_objective(table, best), search.nodes,
                        time.perf_counter() - start, violations)
    return graph, stats


def _branch(search: _Search, k: int, values: np.ndarray, domains: np.ndarray,
            theta: np.ndarray, cond: np.ndarray) -> None:
    search.nodes += 1
    if k == len(values):
        obj = assignment_objective(search.table, values)
        if obj > search.best:
            search.best, search.best_values = obj, values.copy()
        return

    row = search.table[k]
    candidates = sorted(np.flatnonzero(domains[k]), key=lambda v: (-cond[k, v], -row[v], v))
    for v in candidates:
        if cond[k, v] <= search.best + _TOL:
            continue
        values[k] = v
        child = domains.copy()
        child[k] = False
        child[k, v] = True
        feasible = True
        for tri in search.by_pair[k]:
            unassigned = [p for p in tri if p != k and values[p] < 0]
            if not unassigned:
                if not TRIANGLE_OK[values[tri[0]], values[tri[1]], values[tri[2]]]:
                    feasible = False
                    break
            elif len(unassigned) == 1:
                m = unassigned[0]
                child[m] &= _consistent_values(tri, values, m)
                if not child[m].any():
                    feasible = False
                    break
        if feasible:
            th, bound, child_cond = search.diffuse(theta, child, search.node_iters)
            if bound > search.best + _TOL:
                _branch(search, k + 1, values, child, th, child_cond)
        values[k] = -1


def decode_windows(scores: ScoreMap, n_events: int, max_events: int = DEFAULT_MAX_EVENTS) -> tuple[RelationGraph, list[DecodeStats]]:
    """Global decoding for documents longer than the cap.

    Windows of ``max_events`` consecutive events, stride ``max_events // 2``;
    a pair covered by several windows takes the labels of the window with the
    highest objective.
    """
    if n_events <= max_events:
        g, st = global_decode(DecodingProblem(n_events, scores), max_events)
        return g, [st]
    stride = max(1, max_events // 2)
    starts = list(range(0, n_events - max_events + 1, stride))
    if starts[-1] != n_events - max_events:
        starts.append(n_events - max_events)
    chosen: dict[tuple[int, int], tuple[float, tuple]] = {}
    stats = []
    for s0 in starts:
        ids = list(range(s0, s0 + max_events))
        local = {(a, b): scores[ids[a], ids[b]] for a, b in itertools.permutations(range(max_events), 2)}
        g, st = global_decode(DecodingProblem(max_events, local), max_events)
        stats.append(st)
        for (a, b), lab in g.edges.items():
            key = (ids[a], ids[b])
            if key not in chosen or st.objective > chosen[key][0]:
                chosen[key] = (st.objective, lab)
    # pairs no window covers fall back to subevent-first greedy labels
    edges = dict(decode_event_complex(scores, n_events).edges)
    edges.update({p: lab for p, (_, lab) in chosen.items()})
    return RelationGraph(n_events, edges), stats
