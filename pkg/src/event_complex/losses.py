"""Annotation, symmetry and conjunction consistency losses.

Every loss here consumes probability tensors laid out as ``(rows, 8)`` in
the label order BF, AF, EQ, VG, PC, CP, CR, NR (two softmax heads side by
side). Rules are relaxed with the product t-norm and moved to negative log
space, so each satisfied rule costs exactly zero.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .relations import (
    ALL_LABELS,
    FORBIDDEN,
    INVERSE_INDEX,
    REQUIRED,
    Head,
    RelationLabel,
)

PROB_FLOOR = 1e-12


class MissingScore(KeyError):
    pass


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class PairScores:
    """Two per-head distributions for one directed event pair."""

    temporal: np.ndarray
    subevent: np.ndarray

    def __post_init__(self):
        for name in ("temporal", "subevent"):
            v = np.asarray(getattr(self, name), dtype=np.float64)
            if v.shape != (4,):
                raise ValueError(f"{name} scores need 4 entries, got shape {v.shape}")
            if np.any(v <= 0) or np.any(v > 1):
                raise ValueError(f"{name} scores must lie in (0, 1]")
            if abs(v.sum() - 1.0) > 1e-9:
                raise ValueError(f"{name} scores sum to {v.sum()!r}, not 1")
            object.__setattr__(self, name, v)

    @classmethod
    def from_vector(cls, v) -> "PairScores":
        v = np.asarray(v, dtype=np.float64)
        return cls(v[:4], v[4:])

    def vector(self) -> np.ndarray:
        return np.concatenate([self.temporal, self.subevent])

    def __getitem__(self, label: RelationLabel) -> float:
        return float(self.vector()[label.index])


def stack_scores(scores: Sequence[PairScores]) -> ad.Tensor:
    return ad.Tensor(np.stack([s.vector() for s in scores]))


def normalize_heads(logits: ad.Tensor, floor: float = PROB_FLOOR) -> ad.Tensor:
    """Per-head softmax over ``(rows, 8)`` logits, floored and renormalized."""
    heads = []
    for lo in (0, 4):
        p = ad.softmax(logits[:, lo:lo + 4], axis=-1)
        if floor > 0:
            p = ad.floor_at(p, floor)
            p = p / p.sum(axis=-1, keepdims=True)
        heads.append(p)
    return ad.concat(heads, axis=-1)


@dataclass(frozen=True)
class LabelWeights:
    w: Mapping[RelationLabel, float] = field(default_factory=lambda: {r: 1.0 for r in ALL_LABELS})

    def __post_init__(self):
        for r in ALL_LABELS:
            if self.w.get(r, 0.0) <= 0:
                raise ValueError(f"label weight for {r} must be positive")

    def array(self) -> np.ndarray:
        return np.array([self.w[r] for r in ALL_LABELS])

    def scaled(self, c: float) -> "LabelWeights":
        return LabelWeights({r: c * v for r, v in self.w.items()})

    @classmethod
    def from_counts(cls, counts: Mapping[RelationLabel, int]) -> "LabelWeights":
        """Inverse class frequency, normalized to mean 1 within each head.

        Labels never seen in training get the largest weight of their head.
        """
        w = {}
        for head in Head:
            labels = [r for r in ALL_LABELS if r.head is head]
            seen = [r for r in labels if counts.get(r, 0) > 0]
            if not seen:
                w.update({r: 1.0 for r in labels})
                continue
            inv = {r: 1.0 / counts[r] for r in seen}
            mean = sum(inv.values()) / len(inv)
            top = max(inv.values()) / mean
            w.update({r: inv[r] / mean if r in inv else top for r in labels})
        return cls(w)


def _gold_indices(gold, n_rows: int) -> tuple[np.ndarray, np.ndarray]:
    rows, cols = [], []
    for row, label in gold:
        if row is None or not 0 <= row < n_rows:
            raise MissingScore(f"no scores for gold pair row {row!r} ({label})")
        rows.append(row)
        cols.append(label.index)
    return np.array(rows, dtype=int), np.array(cols, dtype=int)


def annotation_loss(probs: ad.Tensor, gold: Sequence[tuple[int, RelationLabel]],
                    weights: Optional[LabelWeights] = None) -> ad.Tensor:
    """Weighted cross entropy: sum of ``-w_r * log p[r]`` over gold labels.

    ``gold`` pairs a row of ``probs`` with one label; a pair annotated on
    both heads appears twice.
    """
    probs = ad.as_tensor(probs)
    if not gold:
        return ad.Tensor(0.0)
    rows, cols = _gold_indices(gold, probs.shape[0])
    w = (weights or LabelWeights()).array()[cols]
    return -(ad.log(probs[rows, cols]) * w).sum()


def symmetry_loss(fwd: ad.Tensor, rev: ad.Tensor) -> ad.Tensor:
    """Sum over all 8 labels of ``|log fwd[a] - log rev[inverse(a)]|``."""
    fwd, rev = ad.as_tensor(fwd), ad.as_tensor(rev)
    if fwd.shape[0] == 0:
        return ad.Tensor(0.0)
    diff = ad.log(fwd) - ad.log(rev[:, INVERSE_INDEX])
    return ad.absolute(diff).sum()


# ----------------------------------------------------------------------------
# conjunction
# ----------------------------------------------------------------------------

CONSTRAINT_SCOPES = ("all", "within", "cross")


def _grounding(table: np.ndarray, scope: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    a, b, c = np.nonzero(table)
    heads = np.array([r.head is Head.TEMPORAL for r in ALL_LABELS])
    within = (heads[a] == heads[b]) & (heads[b] == heads[c])
    if scope == "within":
        keep = within
    elif scope == "cross":
        keep = ~within
    elif scope == "all":
        keep = np.ones_like(within)
    else:
        raise ValueError(f"unknown constraint scope {scope!r}")
    return a[keep], b[keep], c[keep]


_GROUNDINGS = {
    scope: (_grounding(REQUIRED, scope), _grounding(FORBIDDEN, scope))
    for scope in CONSTRAINT_SCOPES
}


@dataclass
class ConjunctionTerms:
    """Signed terms before the penalty, one column per grounding.

    ``required[k, m]`` is ``log p12[a] + log p23[b] - log p13[g]`` for the
    grounding ``required_cells[m] = (a, b, g)``; ``forbidden`` uses
    ``log(1 - p13[d])`` for ``forbidden_cells[m] = (a, b, d)``.
    """

    required: ad.Tensor
    forbidden: ad.Tensor
    required_cells: np.ndarray
    forbidden_cells: np.ndarray

    def column(self, alpha: RelationLabel, beta: RelationLabel, label: RelationLabel,
               forbidden: bool = False) -> ad.Tensor:
        cells = self.forbidden_cells if forbidden else self.required_cells
        hit = np.flatnonzero((cells == (alpha.index, beta.index, label.index)).all(axis=1))
        if not len(hit):
            kind = "forbidden" if forbidden else "required"
            raise KeyError(f"{label} is not {kind} by ({alpha}, {beta}) in this scope")
        terms = self.forbidden if forbidden else self.required
        return terms[:, int(hit[0])]


def conjunction_terms(p12: ad.Tensor, p23: ad.Tensor, p13: ad.Tensor, scope: str = "all") -> ConjunctionTerms:
    if scope not in _GROUNDINGS:
        raise ValueError(f"unknown scope {scope!r}")
    p12, p23, p13 = ad.as_tensor(p12), ad.as_tensor(p23), ad.as_tensor(p13)
    if np.any(p13.data >= 1.0):
        raise DomainError("a consequent probability equals 1; log(1 - p) is undefined")
    (ra, rb, rg), (fa, fb, fd) = _GROUNDINGS[scope]
    la, lb = ad.log(p12), ad.log(p23)
    required = la[:, ra] + lb[:, rb] - ad.log(p13)[:, rg]
    forbidden = la[:, fa] + lb[:, fb] - ad.log(1.0 - p13[:, fd])
    return ConjunctionTerms(required, forbidden, np.stack([ra, rb, rg], axis=1), np.stack([fa, fb, fd], axis=1))


def conjunction_loss(p12: ad.Tensor, p23: ad.Tensor, p13: ad.Tensor,
                     hinge: bool = False, scope: str = "all") -> ad.Tensor:
    """Conjunction consistency over a batch of ordered triples.

    Row ``k`` of the three tensors scores (e1, e2), (e2, e3) and (e1, e3) of
    triple ``k``. For every table cell (a, b) and each required label g the
    term is ``|log p12[a] + log p23[b] - log p13[g]|``; each forbidden label
    d uses ``log(1 - p13[d])`` in place of ``log p13[g]``. With ``hinge`` the
    absolute value becomes ``max(0, .)``. ``scope`` keeps all groundings,
    only single-head ones ("within"), or only the head-mixing ones ("cross").
    """
    if scope not in _GROUNDINGS:
        raise ValueError(f"unknown scope {scope!r}")
    if ad.as_tensor(p12).shape[0] == 0:
        return ad.Tensor(0.0)
    terms = conjunction_terms(p12, p23, p13, scope)
    penalty = ad.hinge if hinge else ad.absolute
    total = ad.Tensor(0.0)
    if len(terms.required_cells):
        total = total + penalty(terms.required).sum()
    if len(terms.forbidden_cells):
        total = total + penalty(terms.forbidden).sum()
    return total


def enumerate_triples(n_events: int, max_triples: Optional[int] = None,
                      rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Ordered distinct triples, uniformly subsampled down to ``max_triples``."""
    triples = np.array(list(itertools.permutations(range(n_events), 3)), dtype=int).reshape(-1, 3)
    if max_triples is not None and len(triples) > max_triples:
        rng = rng if rng is not None else np.random.default_rng(0)
        keep = np.sort(rng.choice(len(triples), size=max_triples, replace=False))
        triples = triples[keep]
    return triples


# ----------------------------------------------------------------------------
# joint objective
# ----------------------------------------------------------------------------

@dataclass
class ScoredBatch:
    """Probabilities for directed pairs plus the index structure the losses need.

    ``gold`` rows point into ``probs``; ``sym_fwd[k]`` and ``sym_rev[k]`` are
    the rows of (e1, e2) and (e2, e1); ``triples`` holds row triples
    (r12, r23, r13).
    """

    probs: ad.Tensor
    gold: list[tuple[int, RelationLabel]] = field(default_factory=list)
    sym_fwd: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    sym_rev: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    triples: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=int))


@dataclass
class LossBreakdown:
    l_a: float
    l_s: float
    l_c: float
    lambda_s: float
    lambda_c: float
    total: float
    tensor: Optional[ad.Tensor] = field(default=None, repr=False, compare=False)

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("l_a", "l_s", "l_c", "lambda_s", "lambda_c", "total")}


def joint_loss(batch: ScoredBatch, weights: Optional[LabelWeights] = None,
               lambda_s: float = 0.2, lambda_c: float = 0.2, hinge: bool = False,
               scope: str = "all") -> LossBreakdown:
    if lambda_s < 0 or lambda_c < 0:
        raise ValueError("loss coefficients must be non-negative")
    probs = batch.probs
    l_a = annotation_loss(probs, batch.gold, weights)
    zero = ad.Tensor(0.0)
    l_s = symmetry_loss(probs[batch.sym_fwd], probs[batch.sym_rev]) if lambda_s and len(batch.sym_fwd) else zero
    if lambda_c and len(batch.triples):
        t = batch.triples
        l_c = conjunction_loss(probs[t[:, 0]], probs[t[:, 1]], probs[t[:, 2]], hinge=hinge, scope=scope)
    else:
        l_c = zero
    total = l_a + l_s * lambda_s + l_c * lambda_c
    return LossBreakdown(l_a.item(), l_s.item(), l_c.item(), lambda_s, lambda_c, total.item(), total)
