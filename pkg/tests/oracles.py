"""Reference decoders and problem generators shared by the test modules."""

import functools
import itertools

import numpy as np

from event_complex.data import generate_complex
from event_complex.inference import DecodingProblem, canonical_pairs
from event_complex.losses import PairScores
from event_complex.relations import (
    NR,
    SUBEVENT_LABELS,
    TEMPORAL_LABELS,
    RelationGraph,
    count_violations,
    implied_temprel,
    inverse,
)


def coherent_values():
    """(temporal, subevent) combinations out of all 16 that respect implied_temprel."""
    return [(t, s) for t in TEMPORAL_LABELS for s in SUBEVENT_LABELS
            if s is NR or implied_temprel(s) is t]


@functools.lru_cache(maxsize=None)
def _triangle_ok() -> np.ndarray:
    vals = coherent_values()
    ok = np.zeros((len(vals),) * 3, dtype=bool)
    for x, y, z in itertools.product(range(len(vals)), repeat=3):
        g = RelationGraph(3, {(0, 1): vals[x], (1, 2): vals[y], (0, 2): vals[z]})
        ok[x, y, z] = count_violations(g).violating_triples == 0
    return ok


@functools.lru_cache(maxsize=None)
def feasible_assignments(n: int) -> np.ndarray:
    """Every consistent labelling of n <= 4 events, as value indices per canonical pair."""
    vals = coherent_values()
    pairs = canonical_pairs(n)
    grid = np.array(list(itertools.product(range(len(vals)), repeat=len(pairs))), dtype=int).reshape(-1, len(pairs))
    col = {p: k for k, p in enumerate(pairs)}
    keep = np.ones(len(grid), dtype=bool)
    ok = _triangle_ok()
    for a, b, c in itertools.combinations(range(n), 3):
        keep &= ok[grid[:, col[a, b]], grid[:, col[b, c]], grid[:, col[a, c]]]
    return grid[keep]


def pair_objective(problem: DecodingProblem, i: int, j: int, t, s) -> float:
    fwd, rev = problem.scores[i, j], problem.scores[j, i]
    return float(np.log(fwd[t]) + np.log(fwd[s]) + np.log(rev[inverse(t)]) + np.log(rev[inverse(s)]))


def graph_objective(problem: DecodingProblem, graph: RelationGraph) -> float:
    return sum(pair_objective(problem, i, j, *lab) for (i, j), lab in graph.edges.items())


def brute_force(problem: DecodingProblem) -> float:
    """Best objective over all consistent, coherent labellings (n <= 4)."""
    n = problem.n_events
    pairs = canonical_pairs(n)
    if not pairs:
        return 0.0
    vals = coherent_values()
    table = np.array([[pair_objective(problem, i, j, *v) for v in vals] for i, j in pairs])
    grid = feasible_assignments(n)
    return float(table[np.arange(len(pairs)), grid].sum(axis=1).max())


def _scores_from_logits(z: np.ndarray) -> PairScores:
    def soft(x):
        e = np.exp(x - x.max())
        return e / e.sum()
    return PairScores(soft(z[:4]), soft(z[4:]))


def random_problem(rng: np.random.Generator, n: int, scale: float = 2.0) -> DecodingProblem:
    scores = {(i, j): _scores_from_logits(rng.normal(size=8) * scale)
              for i, j in itertools.permutations(range(n), 2)}
    return DecodingProblem(n, scores)


def noisy_gold_problem(seed: int, n: int, sharp: float = 2.0, noise: float = 1.5) -> tuple[DecodingProblem, RelationGraph]:
    """Scores peaked at a generated gold graph plus Gaussian logit noise."""
    gold, _ = generate_complex(seed, n)
    rng = np.random.default_rng(seed)
    scores = {}
    for i, j in itertools.permutations(range(n), 2):
        t, s = gold.get(i, j)
        z = rng.normal(size=8) * noise
        z[t.index] += sharp
        z[s.index] += sharp
        scores[i, j] = _scores_from_logits(z)
    return DecodingProblem(n, scores), gold

