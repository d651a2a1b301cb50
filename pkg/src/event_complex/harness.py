"""Training, evaluation and the ablation ladder.

Training minimizes the joint loss with AMSGrad over batches made of whole
documents, so every triple of events in a batch can be grounded by the
conjunction loss. Evaluation follows the usual protocols: temporal micro
P/R/F1 with Vague as the null class, and subevent F1 on textually ordered
pairs against a closure-populated gold graph.
"""

from __future__ import annotations

import configparser
import dataclasses
import itertools
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .data import CorpusRecord, mask_annotations
from .inference import (
    DEFAULT_MAX_EVENTS,
    decode_greedy,
    decode_windows,
)
from .losses import PROB_FLOOR, LabelWeights, PairScores, ScoredBatch, enumerate_triples, joint_loss
from .model import (
    Document,
    EncoderParams,
    ModelDims,
    encode_batch,
    init_params,
    ordered_pairs,
    pair_features,
    score_features,
)
from .relations import (
    ALL_LABELS,
    CP,
    PC,
    VG,
    ConflictError,
    Head,
    RelationGraph,
    count_violations,
    inverse,
    transitive_closure,
)

log = logging.getLogger(__name__)

# per-pair commonsense vectors for a document: (doc, directed pairs (m, 2)) -> (m, d_common)
CommonsenseProvider = Callable[[Document, np.ndarray], np.ndarray]


class DivergenceError(RuntimeError):
    pass


class MismatchError(ValueError):
    pass


# ----------------------------------------------------------------------------
# configuration
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    epochs: int = 30
    batch_size: int = 64
    lr: float = 0.001
    lambda_s: float = 0.2
    lambda_c: float = 0.2
    # ablation flags
    joint: bool = True
    task_constraints: bool = True
    cross_task_constraints: bool = True
    commonsense: bool = False
    global_inference: bool = False
    # model
    d_tok: int = 32
    d_pos: int = 18
    d_h: int = 64
    cell_type: str = "lstm"
    d_common: int = 4
    # optimizer
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    # losses
    prob_floor: float = PROB_FLOOR
    conjunction_hinge: bool = False
    max_triples_per_doc: int = 2000
    class_weights: bool = True
    # an annotated pair (i, j) also supervises (j, i) with the inverse label
    annotate_reverse: bool = False
    # training view of the train split: fraction of pairs whose label is kept per head
    temporal_keep: float = 1.0
    subevent_keep: float = 1.0
    # each train document keeps the labels of one head only, as with two single-task corpora
    disjoint_heads: bool = False
    # temporal labels only for events at most this far apart in the text (0: no limit)
    temporal_window: int = 0
    # decoding
    max_events: int = DEFAULT_MAX_EVENTS

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        for name in ("lr", "adam_eps", "prob_floor"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.lambda_s < 0 or self.lambda_c < 0:
            raise ValueError("loss coefficients must be non-negative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("optimizer betas must lie in [0, 1)")
        for name in ("temporal_keep", "subevent_keep"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.cell_type not in ("lstm", "tanh"):
            raise ValueError(f"unknown cell type {self.cell_type!r}")

    @property
    def constraint_scope(self) -> Optional[str]:
        """Groundings the conjunction loss uses, or None when it is off."""
        if self.task_constraints and self.cross_task_constraints:
            return "all"
        if self.task_constraints:
            return "within"
        if self.cross_task_constraints:
            return "cross"
        return None

    @property
    def effective_lambdas(self) -> tuple[float, float]:
        """(lambda_s, lambda_c) after the ablation flags are applied."""
        lam_s = self.lambda_s if self.task_constraints else 0.0
        lam_c = self.lambda_c if self.constraint_scope else 0.0
        return lam_s, lam_c

    def dims(self, vocab_size: int) -> ModelDims:
        return ModelDims(vocab_size=vocab_size, d_tok=self.d_tok, d_pos=self.d_pos, d_h=self.d_h,
                         d_common=self.d_common if self.commonsense else 0, cell_type=self.cell_type)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


PROFILES = {
    "desk": TrainConfig(),
    "paper_scale": TrainConfig(epochs=80, batch_size=512, d_h=768),
}


def _coerce(value: str, kind):
    if kind is bool or kind == "bool":
        low = value.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if kind is int or kind == "int":
        return int(value)
    if kind is float or kind == "float":
        return float(value)
    return value.strip()


def config_from_mapping(values: dict, base: Optional[TrainConfig] = None) -> TrainConfig:
    """Apply string (or typed) overrides; keys are TrainConfig field names, dashes allowed."""
    base = base or TrainConfig()
    kinds = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    changes = {}
    for key, value in values.items():
        name = key.replace("-", "_")
        if name not in kinds:
            raise KeyError(f"unknown config key {key!r}")
        changes[name] = _coerce(value, kinds[name]) if isinstance(value, str) else value
    return dataclasses.replace(base, **changes)


def load_config(path, base: Optional[TrainConfig] = None) -> TrainConfig:
    """Read a ``key = value`` file (``#`` comments); a ``profile`` key picks the base profile."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    parser.optionxform = str
    parser.read_string("[config]\n" + Path(path).read_text())
    values = dict(parser["config"])
    profile = values.pop("profile", None)
    if profile is not None:
        if profile not in PROFILES:
            raise KeyError(f"unknown profile {profile!r}")
        base = PROFILES[profile]
    return config_from_mapping(values, base)


# ----------------------------------------------------------------------------
# optimizer
# ----------------------------------------------------------------------------

class AMSGrad:
    """Adam with a running max of the second moment (bias-corrected moments)."""

    def __init__(self, params: Sequence[ad.Tensor], lr: float = 0.001, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.v_max = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v, vm in zip(self.params, self.m, self.v, self.v_max):
            if p.grad is None:
                g = np.zeros_like(p.data)
            else:
                g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            np.maximum(vm, v / c2, out=vm)
            p.data -= self.lr * (m / c1) / (np.sqrt(vm) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def state_dict(self) -> dict:
        return {"t": self.t, "m": [a.copy() for a in self.m], "v": [a.copy() for a in self.v],
                "v_max": [a.copy() for a in self.v_max]}


# ----------------------------------------------------------------------------
# batching
# ----------------------------------------------------------------------------

def training_view(records: Sequence[CorpusRecord], config: TrainConfig,
                  head: Optional[Head] = None) -> list[CorpusRecord]:
    """Train-split records with annotations thinned per ``*_keep``.

    Single-task training drops the other head's labels; ``disjoint_heads``
    gives each document the labels of one randomly chosen head.
    """
    rng = np.random.default_rng(config.seed + 7919)
    t_keep = 0.0 if head is Head.SUBEVENT else config.temporal_keep
    s_keep = 0.0 if head is Head.TEMPORAL else config.subevent_keep
    out = []
    for r in records:
        if r.split != "train":
            continue
        t_doc, s_doc = t_keep, s_keep
        if config.disjoint_heads:
            if rng.random() < 0.5:
                s_doc = 0.0
            else:
                t_doc = 0.0
        masked = mask_annotations(r, t_doc, s_doc, rng)
        if config.temporal_window:
            edges = {(i, j): (t if j - i <= config.temporal_window else None, s)
                     for (i, j), (t, s) in masked.gold.edges.items()}
            masked = dataclasses.replace(masked, gold=RelationGraph(masked.gold.n_events, edges))
        out.append(masked)
    return out


def make_batches(records: Sequence[CorpusRecord], batch_size: int,
                 rng: np.random.Generator) -> list[list[CorpusRecord]]:
    """Shuffle documents, then pack whole documents up to ``batch_size`` directed pairs."""
    order = rng.permutation(len(records))
    batches, cur, size = [], [], 0
    for k in order:
        r = records[k]
        m = r.document.n_events * (r.document.n_events - 1)
        if cur and size + m > batch_size:
            batches.append(cur)
            cur, size = [], 0
        cur.append(r)
        size += m
    if cur:
        batches.append(cur)
    return batches


def _zero_common(doc: Document, pairs: np.ndarray, width: int) -> np.ndarray:
    return np.zeros((len(pairs), width))


def score_batch(records: Sequence[CorpusRecord], params: EncoderParams, config: TrainConfig,
                rng: Optional[np.random.Generator] = None,
                commonsense: Optional[CommonsenseProvider] = None) -> ScoredBatch:
    """Forward pass over a batch of documents, with the index structure for the losses."""
    docs = [r.document for r in records]
    embeddings = encode_batch(docs, params)
    feats, commons, gold = [], [], []
    fwd, rev, triples = [], [], []
    offset = 0
    for r, emb in zip(records, embeddings):
        n = r.document.n_events
        pairs = ordered_pairs(n)
        if len(pairs) == 0:
            continue
        row = {(int(i), int(j)): offset + k for k, (i, j) in enumerate(pairs)}
        feats.append(pair_features(emb[pairs[:, 0]], emb[pairs[:, 1]]))
        if params.dims.d_common:
            provider = commonsense or (lambda d, p: _zero_common(d, p, params.dims.d_common))
            commons.append(np.asarray(provider(r.document, pairs), dtype=float))
        for (i, j), (t, s) in r.gold.edges.items():
            for lab in (t, s):
                if lab is not None:
                    gold.append((row[i, j], lab))
                    if config.annotate_reverse:
                        gold.append((row[j, i], inverse(lab)))
        for i, j in itertools.combinations(range(n), 2):
            fwd.append(row[i, j])
            rev.append(row[j, i])
        if n >= 3:
            for a, b, c in enumerate_triples(n, config.max_triples_per_doc, rng):
                triples.append((row[a, b], row[b, c], row[a, c]))
        offset += len(pairs)
    if not feats:
        return ScoredBatch(ad.Tensor(np.zeros((0, 8))))
    features = ad.concat(feats, axis=0)
    cs = np.concatenate(commons, axis=0) if commons else None
    probs = score_features(features, params, cs, config.prob_floor)
    return ScoredBatch(probs, gold, np.array(fwd, dtype=int), np.array(rev, dtype=int),
                       np.array(triples, dtype=int).reshape(-1, 3))


# ----------------------------------------------------------------------------
# training
# ----------------------------------------------------------------------------

@dataclass
class EpochLog:
    epoch: int
    loss: dict
    dev: Optional[dict] = None
    seconds: float = 0.0


@dataclass
class TrainingLog:
    epochs: list[EpochLog] = field(default_factory=list)
    best_epoch: Optional[int] = None

    def loss_curve(self) -> list[float]:
        return [e.loss["total"] for e in self.epochs]

    def as_dict(self) -> dict:
        return {"best_epoch": self.best_epoch,
                "epochs": [dataclasses.asdict(e) for e in self.epochs]}


def label_weights(records: Iterable[CorpusRecord]) -> LabelWeights:
    counts = {r: 0 for r in ALL_LABELS}
    for rec in records:
        for t, s in rec.gold.edges.values():
            for lab in (t, s):
                if lab is not None:
                    counts[lab] += 1
    return LabelWeights.from_counts(counts)


def vocab_size_of(records: Iterable[CorpusRecord]) -> int:
    top = 0
    for r in records:
        for tok in r.document.tokens:
            top = max(top, tok.vocab_id)
    return top + 1


def train(config: TrainConfig, records: Sequence[CorpusRecord], head: Optional[Head] = None,
          vocab_size: Optional[int] = None, commonsense: Optional[CommonsenseProvider] = None,
          ) -> tuple[EncoderParams, TrainingLog]:
    """Fit encoder and scorer on the train split.

    With ``head`` set, only that head's annotations are used (single-task
    training). When a dev split exists, the parameters of the epoch with
    the best dev temporal F1 are returned (subevent micro F1 for a
    subevent-only model).
    """
    train_recs = training_view(records, config, head)
    if not train_recs:
        raise ValueError("corpus has no train split")
    dev_recs = [r for r in records if r.split == "dev"]
    vocab_size = vocab_size or vocab_size_of(records)
    params = init_params(config.seed, config.dims(vocab_size))
    weights = label_weights(train_recs) if config.class_weights else LabelWeights()
    lam_s, lam_c = config.effective_lambdas
    scope = config.constraint_scope or "all"
    opt = AMSGrad(params.parameters(), config.lr, config.beta1, config.beta2, config.adam_eps)
    rng = np.random.default_rng(config.seed)
    history = TrainingLog()
    best_score, best_params = -math.inf, None

    for epoch in range(config.epochs):
        start = time.perf_counter()
        sums = {"l_a": 0.0, "l_s": 0.0, "l_c": 0.0, "total": 0.0}
        for batch in make_batches(train_recs, config.batch_size, rng):
            scored = score_batch(batch, params, config, rng, commonsense)
            if not len(scored.gold) and not lam_s and not lam_c:
                continue
            parts = joint_loss(scored, weights, lam_s, lam_c, hinge=config.conjunction_hinge, scope=scope)
            if not math.isfinite(parts.total):
                raise DivergenceError(f"non-finite loss {parts.total} in epoch {epoch}")
            opt.zero_grad()
            parts.tensor.backward()
            opt.step()
            if not all(np.isfinite(p.data).all() for p in opt.params):
                raise DivergenceError(f"non-finite parameters after a step in epoch {epoch}")
            for k in sums:
                sums[k] += getattr(parts, k)
        entry = EpochLog(epoch, dict(sums, lambda_s=lam_s, lambda_c=lam_c))
        if dev_recs:
            preds = predict_graphs([r.document for r in dev_recs], params, commonsense=commonsense)
            golds = [r.gold for r in dev_recs]
            entry.dev = {"temporal": evaluate_temprel(preds, golds), "subevent": evaluate_subevent(preds, golds),
                         "violation_rate": violation_rate(preds)}
            score = entry.dev["subevent"]["F1_micro"] if head is Head.SUBEVENT else entry.dev["temporal"]["F1"]
            if score > best_score:
                best_score, best_params = score, params.copy()
                history.best_epoch = epoch
        entry.seconds = time.perf_counter() - start
        history.epochs.append(entry)
        log.info("epoch %d loss %.4f%s", epoch, sums["total"],
                 "" if entry.dev is None else f" dev tF1 {entry.dev['temporal']['F1']:.3f}"
                 f" sF1 {entry.dev['subevent']['F1_micro']:.3f}")
    return (best_params if best_params is not None else params), history


# ----------------------------------------------------------------------------
# prediction
# ----------------------------------------------------------------------------

def predict_pair_scores(docs: Sequence[Document], params: EncoderParams,
                        commonsense: Optional[CommonsenseProvider] = None,
                        chunk: int = 32) -> list[dict[tuple[int, int], PairScores]]:
    """Scores for every ordered pair of each document."""
    out = []
    for lo in range(0, len(docs), chunk):
        part = docs[lo:lo + chunk]
        embeddings = encode_batch(part, params)
        for doc, emb in zip(part, embeddings):
            pairs = ordered_pairs(doc.n_events)
            if len(pairs) == 0:
                out.append({})
                continue
            h = emb.data
            feats = pair_features(h[pairs[:, 0]], h[pairs[:, 1]])
            cs = None
            if params.dims.d_common:
                cs = (commonsense or (lambda d, p: _zero_common(d, p, params.dims.d_common)))(doc, pairs)
            probs = score_features(feats, params, cs).data
            out.append({(int(i), int(j)): PairScores.from_vector(p) for (i, j), p in zip(pairs, probs)})
    return out


def combine_heads(temporal: dict, subevent: dict) -> dict:
    """Temporal head from one score map, subevent head from another."""
    return {p: PairScores(temporal[p].temporal, subevent[p].subevent) for p in temporal}


def decode_scores(scores: Sequence[dict], docs: Sequence[Document], use_global: bool = False,
                  max_events: int = DEFAULT_MAX_EVENTS) -> tuple[list[RelationGraph], list]:
    graphs, stats = [], []
    for doc, sc in zip(docs, scores):
        if use_global:
            g, st = decode_windows(sc, doc.n_events, max_events)
            stats.extend(st)
        else:
            g = decode_greedy(sc, doc.n_events)
        graphs.append(g)
    return graphs, stats


def predict_graphs(docs: Sequence[Document], params: EncoderParams, use_global: bool = False,
                   max_events: int = DEFAULT_MAX_EVENTS,
                   commonsense: Optional[CommonsenseProvider] = None) -> list[RelationGraph]:
    scores = predict_pair_scores(docs, params, commonsense)
    return decode_scores(scores, docs, use_global, max_events)[0]


# ----------------------------------------------------------------------------
# evaluation
# ----------------------------------------------------------------------------

def _prf(correct: int, predicted: int, gold: int) -> dict:
    p = correct / predicted if predicted else 0.0
    r = correct / gold if gold else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return {"P": p, "R": r, "F1": f}


def _check_matched(preds: Sequence[RelationGraph], golds: Sequence[RelationGraph]):
    if len(preds) != len(golds):
        raise MismatchError(f"{len(preds)} predicted graphs for {len(golds)} gold graphs")
    for k, (p, g) in enumerate(zip(preds, golds)):
        if p.n_events != g.n_events:
            raise MismatchError(f"document {k}: {p.n_events} predicted events vs {g.n_events} gold")


def evaluate_temprel(preds: Sequence[RelationGraph], golds: Sequence[RelationGraph]) -> dict:
    """Micro P/R/F1 over gold-annotated pairs, Vague counted as no relation."""
    _check_matched(preds, golds)
    correct = predicted = gold_n = 0
    for k, (pg, gg) in enumerate(zip(preds, golds)):
        for pair, (gt, _) in gg.edges.items():
            if gt is None:
                continue
            if pair not in pg.edges or pg.edges[pair][0] is None:
                raise MismatchError(f"document {k}: no temporal prediction for pair {pair}")
            pt = pg.edges[pair][0]
            if pt is not VG:
                predicted += 1
                correct += pt is gt
            gold_n += gt is not VG
    return _prf(correct, predicted, gold_n)


def evaluate_subevent(preds: Sequence[RelationGraph], golds: Sequence[RelationGraph]) -> dict:
    """F1 of PC, of CP, and their micro average on pairs (e1, e2) with e1 first in the text.

    Events are indexed in text order, so these are the canonical pairs.
    Gold subevent labels are completed by transitive closure first.
    """
    _check_matched(preds, golds)
    tp = {PC: 0, CP: 0}
    n_pred = {PC: 0, CP: 0}
    n_gold = {PC: 0, CP: 0}
    for k, (pg, gg) in enumerate(zip(preds, golds)):
        closed = transitive_closure(gg.restrict(Head.SUBEVENT))
        for pair, (_, gs) in closed.edges.items():
            if gs is None:
                continue
            if pair not in pg.edges or pg.edges[pair][1] is None:
                raise MismatchError(f"document {k}: no subevent prediction for pair {pair}")
            ps = pg.edges[pair][1]
            for lab in (PC, CP):
                n_pred[lab] += ps is lab
                n_gold[lab] += gs is lab
                tp[lab] += ps is lab and gs is lab
    pc = _prf(tp[PC], n_pred[PC], n_gold[PC])
    cp = _prf(tp[CP], n_pred[CP], n_gold[CP])
    micro = _prf(tp[PC] + tp[CP], n_pred[PC] + n_pred[CP], n_gold[PC] + n_gold[CP])
    return {"F1_PC": pc["F1"], "F1_CP": cp["F1"], "F1_micro": micro["F1"],
            "P_micro": micro["P"], "R_micro": micro["R"]}


def violation_rate(graphs: Iterable[RelationGraph]) -> float:
    """Violating ordered triples over all ordered triples, pooled across documents."""
    bad = total = 0
    for g in graphs:
        rep = count_violations(g)
        bad += rep.violating_triples
        total += rep.total_triples
    return bad / total if total else 0.0


@dataclass
class MetricsReport:
    temporal: dict
    subevent: dict
    violation_rate: float
    loss_curve: list = field(default_factory=list)
    decode_seconds: float = 0.0

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def evaluate(preds: Sequence[RelationGraph], golds: Sequence[RelationGraph],
             loss_curve: Sequence[float] = ()) -> MetricsReport:
    return MetricsReport(evaluate_temprel(preds, golds), evaluate_subevent(preds, golds),
                         violation_rate(preds), list(loss_curve))


# ----------------------------------------------------------------------------
# ablation ladder
# ----------------------------------------------------------------------------

LADDER = ("single-task", "joint", "+task constraints", "+cross-task constraints", "+global inference")


def ladder_config(row: str, base: TrainConfig) -> TrainConfig:
    flags = {
        "single-task": dict(joint=False, task_constraints=False, cross_task_constraints=False, global_inference=False),
        "joint": dict(joint=True, task_constraints=False, cross_task_constraints=False, global_inference=False),
        "+task constraints": dict(joint=True, task_constraints=True, cross_task_constraints=False, global_inference=False),
        "+cross-task constraints": dict(joint=True, task_constraints=True, cross_task_constraints=True, global_inference=False),
        "+global inference": dict(joint=True, task_constraints=True, cross_task_constraints=True, global_inference=True),
    }
    if row not in flags:
        raise KeyError(f"unknown ablation row {row!r}")
    return base.replace(**flags[row])


@dataclass
class AblationRow:
    name: str
    config: TrainConfig
    report: MetricsReport
    train_seconds: float


def fit_scores(config: TrainConfig, records: Sequence[CorpusRecord], docs: Sequence[Document],
               vocab_size: Optional[int] = None,
               commonsense: Optional[CommonsenseProvider] = None) -> tuple[list[dict], list[float]]:
    """Train per ``config`` (two single-head models when not joint) and score ``docs``."""
    if config.joint:
        params, history = train(config, records, vocab_size=vocab_size, commonsense=commonsense)
        return predict_pair_scores(docs, params, commonsense), history.loss_curve()
    p_t, h_t = train(config, records, Head.TEMPORAL, vocab_size, commonsense)
    p_s, h_s = train(config, records, Head.SUBEVENT, vocab_size, commonsense)
    s_t = predict_pair_scores(docs, p_t, commonsense)
    s_s = predict_pair_scores(docs, p_s, commonsense)
    curve = [a + b for a, b in zip(h_t.loss_curve(), h_s.loss_curve())]
    return [combine_heads(a, b) for a, b in zip(s_t, s_s)], curve


def run_ablation(base: TrainConfig, records: Sequence[CorpusRecord], rows: Sequence[str] = LADDER,
                 split: str = "test", commonsense: Optional[CommonsenseProvider] = None) -> list[AblationRow]:
    """Run the ladder with one shared seed; the global-inference row reuses the
    parameters of the row before it and differs only in decoding."""
    test = [r for r in records if r.split == split]
    if not test:
        raise ValueError(f"corpus has no {split!r} split")
    docs, golds = [r.document for r in test], [r.gold for r in test]
    vocab_size = vocab_size_of(records)
    cache: dict[tuple, tuple[list[dict], list[float], float]] = {}
    out = []
    for name in rows:
        cfg = ladder_config(name, base)
        key = (cfg.joint, cfg.task_constraints, cfg.cross_task_constraints)
        if key not in cache:
            t0 = time.perf_counter()
            scores, curve = fit_scores(cfg, records, docs, vocab_size, commonsense)
            cache[key] = (scores, curve, time.perf_counter() - t0)
        scores, curve, secs = cache[key]
        t0 = time.perf_counter()
        preds, _ = decode_scores(scores, docs, cfg.global_inference, cfg.max_events)
        report = evaluate(preds, golds, curve)
        report.decode_seconds = time.perf_counter() - t0
        out.append(AblationRow(name, cfg, report, secs))
        log.info("%-24s tF1 %.3f sF1 %.3f viol %.4f", name, report.temporal["F1"],
                 report.subevent["F1_micro"], report.violation_rate)
    return out


def format_table(rows: Sequence[AblationRow]) -> str:
    lines = [f"{'configuration':<26}{'temporal F1':>12}{'PC F1':>8}{'CP F1':>8}{'micro F1':>10}{'viol.':>9}"]
    for r in rows:
        t, s = r.report.temporal, r.report.subevent
        lines.append(f"{r.name:<26}{100 * t['F1']:>12.1f}{100 * s['F1_PC']:>8.1f}{100 * s['F1_CP']:>8.1f}"
                     f"{100 * s['F1_micro']:>10.1f}{r.report.violation_rate:>9.4f}")
    return "\n".join(lines)


def check_records(records: Sequence[CorpusRecord]) -> list[str]:
    """Invariant problems in gold graphs (empty when all close cleanly with no violations)."""
    problems = []
    for r in records:
        try:
            closed = transitive_closure(r.gold)
        except ConflictError as exc:
            problems.append(f"{r.document.id}: {exc}")
            continue
        rep = count_violations(closed)
        if rep.violating_triples:
            problems.append(f"{r.document.id}: {rep.violating_triples} violating triples, e.g. {rep.details[0]}")
    return problems
