"""Event-pair encoder and two-headed relation scorer.

Token embeddings (trainable, or supplied per token by a stronger encoder)
are concatenated with one-hot POS tags and run through a one-layer
bidirectional recurrent encoder. The state over each trigger is the event
embedding; pair features are ``[h1, h2, h1*h2, h1-h2]`` and an MLP with one
hidden layer maps them to 8 logits normalized by two softmaxes.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .losses import PROB_FLOOR, PairScores, normalize_heads

N_POS = 18
OOV = "<oov>"
CHECKPOINT_VERSION = 1

# Collapsed 18-way POS inventory; closely related Penn tags share a slot.
POS_TAGS = (
    "NOUN", "PROPN", "PRON", "VERB", "AUX", "ADJ", "ADV", "ADP", "DET",
    "NUM", "CONJ", "PART", "PUNCT", "SYM", "INTJ", "TIME", "MARK", "X",
)


@dataclass(frozen=True)
class Token:
    text: str
    vocab_id: int
    pos: int


@dataclass(frozen=True)
class Document:
    id: str
    tokens: tuple[Token, ...]
    events: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "events", tuple(self.events))
        for e in self.events:
            if not 0 <= e < len(self.tokens):
                raise ValueError(f"document {self.id}: event index {e} out of range")
        for t in self.tokens:
            if not 0 <= t.pos < N_POS:
                raise ValueError(f"document {self.id}: POS id {t.pos} out of range")

    def __len__(self):
        return len(self.tokens)

    @property
    def n_events(self) -> int:
        return len(self.events)


class Vocab:
    """String <-> id map; id 0 is reserved for unknown tokens."""

    def __init__(self, words: Sequence[str] = ()):
        self.itos = [OOV]
        self.stoi = {OOV: 0}
        for w in words:
            self.add(w)

    def add(self, word: str) -> int:
        if word not in self.stoi:
            self.stoi[word] = len(self.itos)
            self.itos.append(word)
        return self.stoi[word]

    def __getitem__(self, word: str) -> int:
        return self.stoi.get(word, 0)

    def __len__(self):
        return len(self.itos)


@dataclass(frozen=True)
class ModelDims:
    vocab_size: int
    d_tok: int = 32
    d_pos: int = N_POS
    d_h: int = 64
    d_common: int = 0
    cell_type: str = "lstm"

    def __post_init__(self):
        for k in ("vocab_size", "d_tok", "d_pos", "d_h"):
            if getattr(self, k) <= 0:
                raise ValueError(f"{k} must be positive")
        if self.d_common < 0:
            raise ValueError("d_common must be non-negative")
        if self.cell_type not in ("lstm", "tanh"):
            raise ValueError(f"unknown cell type {self.cell_type!r}")

    @property
    def d_in(self) -> int:
        return self.d_tok + self.d_pos

    @property
    def d_event(self) -> int:
        return 2 * self.d_h

    @property
    def d_features(self) -> int:
        return 4 * self.d_event + self.d_common

    @property
    def d_hidden(self) -> int:
        # one hidden layer, width = mean of input and output widths
        return (self.d_features + 8) // 2

    @property
    def gates(self) -> int:
        return 4 if self.cell_type == "lstm" else 1


PARAM_NAMES = ("emb", "fw_W", "fw_U", "fw_b", "bw_W", "bw_U", "bw_b", "mlp_W1", "mlp_b1", "mlp_W2", "mlp_b2")


@dataclass
class EncoderParams:
    dims: ModelDims
    tensors: dict[str, ad.Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> ad.Tensor:
        return self.tensors[name]

    def parameters(self) -> list[ad.Tensor]:
        return [self.tensors[k] for k in PARAM_NAMES]

    def copy(self) -> "EncoderParams":
        return EncoderParams(self.dims, {k: ad.parameter(v.data.copy(), k) for k, v in self.tensors.items()})

    def allclose(self, other: "EncoderParams", atol: float = 0.0) -> bool:
        return self.dims == other.dims and all(
            np.allclose(self[k].data, other[k].data, rtol=0, atol=atol) for k in PARAM_NAMES
        )


def init_params(seed: int, dims: ModelDims) -> EncoderParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight matrix."""
    rng = np.random.default_rng(seed)

    def uni(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    g = dims.gates * dims.d_h
    shapes = {
        "emb": ((dims.vocab_size, dims.d_tok), dims.d_tok),
        "fw_W": ((dims.d_in, g), dims.d_in),
        "fw_U": ((dims.d_h, g), dims.d_h),
        "fw_b": ((g,), dims.d_h),
        "bw_W": ((dims.d_in, g), dims.d_in),
        "bw_U": ((dims.d_h, g), dims.d_h),
        "bw_b": ((g,), dims.d_h),
        "mlp_W1": ((dims.d_features, dims.d_hidden), dims.d_features),
        "mlp_b1": ((dims.d_hidden,), dims.d_features),
        "mlp_W2": ((dims.d_hidden, 8), dims.d_hidden),
        "mlp_b2": ((8,), dims.d_hidden),
    }
    return EncoderParams(dims, {k: ad.parameter(uni(*shapes[k]), k) for k in PARAM_NAMES})


# ----------------------------------------------------------------------------
# encoder
# ----------------------------------------------------------------------------

def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _run_direction(xw: ad.Tensor, steps: int, batch: int, U: ad.Tensor, d_h: int, cell: str) -> ad.Tensor:
    """Unroll one direction as a single graph node; returns states (steps, batch, d_h).

    ``xw`` holds the input projections, (steps * batch, gates * d_h). The
    backward pass is hand-written backpropagation through time.
    """
    x = xw.data.reshape(steps, batch, -1)
    u = U.data
    hs = np.zeros((steps + 1, batch, d_h))
    if cell == "lstm":
        cs = np.zeros((steps + 1, batch, d_h))
        acts = np.empty((steps, batch, 4 * d_h))
    for t in range(steps):
        z = x[t] + hs[t] @ u
        if cell == "lstm":
            a = acts[t]
            a[:, :2 * d_h] = _sigmoid(z[:, :2 * d_h])
            a[:, 2 * d_h:3 * d_h] = np.tanh(z[:, 2 * d_h:3 * d_h])
            a[:, 3 * d_h:] = _sigmoid(z[:, 3 * d_h:])
            cs[t + 1] = a[:, d_h:2 * d_h] * cs[t] + a[:, :d_h] * a[:, 2 * d_h:3 * d_h]
            hs[t + 1] = a[:, 3 * d_h:] * np.tanh(cs[t + 1])
        else:
            hs[t + 1] = np.tanh(z)

    def back(g):
        dx = np.empty_like(x)
        du = np.zeros_like(u)
        dh_next = np.zeros((batch, d_h))
        dc_next = np.zeros((batch, d_h))
        for t in reversed(range(steps)):
            dh = g[t] + dh_next
            if cell == "lstm":
                a = acts[t]
                i, f, gg, o = a[:, :d_h], a[:, d_h:2 * d_h], a[:, 2 * d_h:3 * d_h], a[:, 3 * d_h:]
                tc = np.tanh(cs[t + 1])
                dc = dh * o * (1.0 - tc * tc) + dc_next
                dz = np.concatenate([dc * gg * i * (1.0 - i), dc * cs[t] * f * (1.0 - f),
                                     dc * i * (1.0 - gg * gg), dh * tc * o * (1.0 - o)], axis=1)
                dc_next = dc * f
            else:
                dz = dh * (1.0 - hs[t + 1] ** 2)
            dx[t] = dz
            du += hs[t].T @ dz
            dh_next = dz @ u.T
        return dx.reshape(xw.shape), du

    return ad.Tensor(hs[1:], _parents=(xw, U), _backward=back)


def _inputs(docs: Sequence[Document], params: EncoderParams, reverse: bool,
            token_vectors: Optional[Sequence[np.ndarray]]) -> ad.Tensor:
    dims = params.dims
    steps, batch = max(len(d) for d in docs), len(docs)
    ids = np.zeros((steps, batch), dtype=int)
    pos = np.zeros((steps, batch, dims.d_pos))
    ext = None if token_vectors is None else np.zeros((steps, batch, dims.d_tok))
    for b, doc in enumerate(docs):
        toks = doc.tokens[::-1] if reverse else doc.tokens
        for t, tok in enumerate(toks):
            ids[t, b] = tok.vocab_id if 0 <= tok.vocab_id < dims.vocab_size else 0
            pos[t, b, tok.pos] = 1.0
        if ext is not None:
            vec = np.asarray(token_vectors[b])
            ext[:len(toks), b] = vec[::-1] if reverse else vec
    words = params["emb"][ids] if ext is None else ad.Tensor(ext)
    x = ad.concat([words, ad.Tensor(pos)], axis=-1)
    return ad.reshape(x, (steps * batch, dims.d_in))


def encode_batch(docs: Sequence[Document], params: EncoderParams,
                 token_vectors: Optional[Sequence[np.ndarray]] = None) -> list[ad.Tensor]:
    """Event embeddings (n_events, 2*d_h) for each document, one batched unroll.

    Sequences are right-padded; the backward direction runs over each
    document reversed, so padding never precedes real tokens in either pass.
    """
    if not docs or any(len(d) == 0 for d in docs):
        raise ValueError("cannot encode an empty document")
    dims = params.dims
    steps, batch = max(len(d) for d in docs), len(docs)
    outs = []
    for prefix, reverse in (("fw", False), ("bw", True)):
        x = _inputs(docs, params, reverse, token_vectors)
        xw = x @ params[f"{prefix}_W"] + params[f"{prefix}_b"]
        outs.append(_run_direction(xw, steps, batch, params[f"{prefix}_U"], dims.d_h, dims.cell_type))
    fw, bw = outs

    t_f, t_b, col = [], [], []
    for b, doc in enumerate(docs):
        for p in doc.events:
            t_f.append(p)
            t_b.append(len(doc) - 1 - p)
            col.append(b)
    col = np.array(col, dtype=int)
    flat = ad.concat([fw[np.array(t_f, dtype=int), col], bw[np.array(t_b, dtype=int), col]], axis=-1)

    result, start = [], 0
    for doc in docs:
        result.append(flat[start:start + doc.n_events])
        start += doc.n_events
    return result


def encode_document(doc: Document, params: EncoderParams,
                    token_vectors: Optional[np.ndarray] = None) -> dict[int, np.ndarray]:
    """Map event position (index into ``doc.events``) to its embedding."""
    vecs = None if token_vectors is None else [token_vectors]
    emb = encode_batch([doc], params, vecs)[0].data
    return {k: emb[k].copy() for k in range(doc.n_events)}


# ----------------------------------------------------------------------------
# scoring
# ----------------------------------------------------------------------------

def pair_features(h1, h2):
    """``[h1, h2, h1*h2, h1-h2]`` along the last axis (numpy or Tensor rows)."""
    if isinstance(h1, ad.Tensor) or isinstance(h2, ad.Tensor):
        h1, h2 = ad.as_tensor(h1), ad.as_tensor(h2)
        if h1.shape[-1] != h2.shape[-1]:
            raise ValueError(f"embedding widths differ: {h1.shape[-1]} vs {h2.shape[-1]}")
        return ad.concat([h1, h2, h1 * h2, h1 - h2], axis=-1)
    h1, h2 = np.asarray(h1, dtype=float), np.asarray(h2, dtype=float)
    if h1.shape[-1] != h2.shape[-1]:
        raise ValueError(f"embedding widths differ: {h1.shape[-1]} vs {h2.shape[-1]}")
    return np.concatenate([h1, h2, h1 * h2, h1 - h2], axis=-1)


def score_features(features, params: EncoderParams, commonsense=None,
                   floor: float = PROB_FLOOR) -> ad.Tensor:
    """Probability rows (n, 8) for a batch of pair feature rows."""
    features = ad.as_tensor(features)
    dims = params.dims
    if dims.d_common:
        if commonsense is None:
            commonsense = np.zeros((features.shape[0], dims.d_common))
        features = ad.concat([features, ad.as_tensor(commonsense)], axis=-1)
    elif commonsense is not None and np.size(commonsense):
        raise ValueError("model was built without a commonsense channel")
    if features.shape[-1] != dims.d_features:
        raise ValueError(f"expected {dims.d_features} feature columns, got {features.shape[-1]}")
    hidden = ad.tanh(features @ params["mlp_W1"] + params["mlp_b1"])
    logits = hidden @ params["mlp_W2"] + params["mlp_b2"]
    return normalize_heads(logits, floor)


def score_pair(features, params: EncoderParams, commonsense=None) -> PairScores:
    f = np.asarray(features, dtype=float).reshape(1, -1)
    cs = None if commonsense is None else np.asarray(commonsense, dtype=float).reshape(1, -1)
    return PairScores.from_vector(score_features(f, params, cs).data[0])


def ordered_pairs(n: int) -> np.ndarray:
    return np.array([(i, j) for i in range(n) for j in range(n) if i != j], dtype=int).reshape(-1, 2)


def score_document_pairs(embeddings: ad.Tensor, params: EncoderParams, commonsense=None) -> tuple[np.ndarray, ad.Tensor]:
    """Score every ordered pair of events; returns (pairs, probs)."""
    pairs = ordered_pairs(embeddings.shape[0])
    if len(pairs) == 0:
        return pairs, ad.Tensor(np.zeros((0, 8)))
    feats = pair_features(embeddings[pairs[:, 0]], embeddings[pairs[:, 1]])
    return pairs, score_features(feats, params, commonsense)


def predict_scores(doc: Document, params: EncoderParams) -> dict[tuple[int, int], PairScores]:
    """PairScores for every ordered event pair of a document (no gradient)."""
    emb = encode_batch([doc], params)[0]
    pairs, probs = score_document_pairs(ad.Tensor(emb.data), params)
    return {(int(i), int(j)): PairScores.from_vector(p) for (i, j), p in zip(pairs, probs.data)}


# ----------------------------------------------------------------------------
# checkpoints: a numpy .npz archive; "__header__" holds a JSON string with the
# format version and ModelDims, every other key is one parameter tensor.
# ----------------------------------------------------------------------------

def save_params(params: EncoderParams, path) -> None:
    header = json.dumps({"version": CHECKPOINT_VERSION, "dims": asdict(params.dims)})
    arrays = {k: params[k].data for k in PARAM_NAMES}
    with open(path, "wb") as fh:
        np.savez(fh, __header__=np.array(header), **arrays)


def load_params(path) -> EncoderParams:
    with np.load(Path(path), allow_pickle=False) as z:
        header = json.loads(str(z["__header__"]))
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')!r}")
        dims = ModelDims(**header["dims"])
        tensors = {k: ad.parameter(z[k], k) for k in PARAM_NAMES}
    return EncoderParams(dims, tensors)
