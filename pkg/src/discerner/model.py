"""Hierarchical encoder models for per-criterion document classification.

Two variants share all machinery: "hea" pools the document encoder's states
with trainable global attention, "he" mean-pools them. Both stack a
bidirectional GRU over token vectors (sentence encoder) and a second
bidirectional GRU over sentence vectors (document encoder), ending in an
affine map plus softmax over {fail, pass}.

Sentence encoding batches sentences of equal token count through one GRU
chain; this is exactly equivalent to encoding them one at a time and is the
main reason training on hundreds of documents stays tractable in pure
numpy.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .corpus import CRITERIA, Document
from .errors import (
    BadMagic,
    CheckpointError,
    EmptyDocument,
    NoAttention,
    ShapeMismatch,
    VersionUnsupported,
)

VARIANTS = ("hea", "he")
JOINS = ("concat", "sum")
ATTENTION_MODES = ("additive", "scaled_dot")

GATE_NAMES = ("w_z", "w_r", "w_h", "u_z", "u_r", "u_h", "b_z", "b_r", "b_h")
ENCODER_PREFIXES = ("sent_fwd", "sent_bwd", "doc_fwd", "doc_bwd")


@dataclass
class ModelConfig:
    """Architecture choices; all derived dimensions come from here."""

    variant: str = "hea"
    d_h_sent: int = 32
    d_h_doc: int = 32
    join_sent: str = "concat"
    join_doc: str = "concat"
    attention: str = "scaled_dot"
    d_q: int | None = None
    dropout_p: float = 0.0
    criterion: str = "q5"
    embed_dim: int = 32

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ShapeMismatch(f"unknown variant {self.variant!r}")
        if self.join_sent not in JOINS or self.join_doc not in JOINS:
            raise ShapeMismatch("joins must be 'concat' or 'sum'")
        if self.attention not in ATTENTION_MODES:
            raise ShapeMismatch(f"unknown attention mode {self.attention!r}")
        if self.criterion not in CRITERIA:
            raise ShapeMismatch(f"unknown criterion {self.criterion!r}")
        if min(self.d_h_sent, self.d_h_doc, self.embed_dim) < 1:
            raise ShapeMismatch("dimensions must be positive")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ShapeMismatch(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if (
            self.variant == "hea"
            and self.attention == "scaled_dot"
            and self.d_q is not None
            and self.d_q != self.d_l
        ):
            raise ShapeMismatch("scaled_dot attention requires d_q == d_l")

    @property
    def d_sent(self) -> int:
        return 2 * self.d_h_sent if self.join_sent == "concat" else self.d_h_sent

    @property
    def d_l(self) -> int:
        return 2 * self.d_h_doc if self.join_doc == "concat" else self.d_h_doc

    @property
    def d_z(self) -> int:
        return self.d_l

    @property
    def query_dim(self) -> int:
        return self.d_l if self.d_q is None else self.d_q

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "d_h_sent": self.d_h_sent,
            "d_h_doc": self.d_h_doc,
            "join_sent": self.join_sent,
            "join_doc": self.join_doc,
            "attention": self.attention,
            "d_q": self.d_q,
            "dropout_p": self.dropout_p,
            "criterion": self.criterion,
            "embed_dim": self.embed_dim,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class GRUCellParams:
    """Gate weights: w_* map the input, u_* the previous state, b_* are biases."""

    w_z: Tensor
    w_r: Tensor
    w_h: Tensor
    u_z: Tensor
    u_r: Tensor
    u_h: Tensor
    b_z: Tensor
    b_r: Tensor
    b_h: Tensor

    @property
    def d_h(self) -> int:
        return self.w_z.data.shape[0]

    @property
    def d_in(self) -> int:
        return self.w_z.data.shape[1]


@dataclass
class GateTrace:
    """Per-step gate activations, for debugging and invariant tests."""

    z: np.ndarray
    r: np.ndarray
    h_tilde: np.ndarray
    h: np.ndarray


@dataclass
class EncoderParams:
    forward_cell: GRUCellParams
    backward_cell: GRUCellParams
    join: str


@dataclass
class AttentionParams:
    mode: str
    query: Tensor
    w: Tensor | None = None  # additive mode only, shape (d_q, d_l)


@dataclass
class ClassifierParams:
    w: Tensor
    b: Tensor


@dataclass
class Prediction:
    """Output distribution over {fail, pass} plus attention, when present."""

    probs: np.ndarray
    label: int
    confidence: float
    attention: np.ndarray | None = None


@dataclass
class ForwardResult:
    prediction: Prediction
    probs_node: Tensor
    alpha_node: Tensor | None = None


# ---------------------------------------------------------------------------
# core steps


def gru_step(
    cell: GRUCellParams, w_t: Tensor, h_prev: Tensor
) -> tuple[Tensor, GateTrace]:
    """One gated update: sigmoid update/reset gates, tanh candidate state,
    convex combination of candidate and previous state."""
    z = ad.sigmoid(
        ad.add(ad.add(ad.matmul(cell.w_z, w_t), ad.matmul(cell.u_z, h_prev)), cell.b_z)
    )
    r = ad.sigmoid(
        ad.add(ad.add(ad.matmul(cell.w_r, w_t), ad.matmul(cell.u_r, h_prev)), cell.b_r)
    )
    h_tilde = ad.tanh(
        ad.add(
            ad.add(ad.matmul(cell.w_h, w_t), ad.hadamard(r, ad.matmul(cell.u_h, h_prev))),
            cell.b_h,
        )
    )
    h = ad.add(ad.hadamard(ad.one_minus(z), h_tilde), ad.hadamard(z, h_prev))
    return h, GateTrace(z=z.data, r=r.data, h_tilde=h_tilde.data, h=h.data)


class _RowCell:
    """A GRU cell with weights pre-transposed for row-batched steps."""

    __slots__ = ("wzT", "wrT", "whT", "uzT", "urT", "uhT", "b_z", "b_r", "b_h", "d_h")

    def __init__(self, cell: GRUCellParams):
        self.wzT = ad.transpose(cell.w_z)
        self.wrT = ad.transpose(cell.w_r)
        self.whT = ad.transpose(cell.w_h)
        self.uzT = ad.transpose(cell.u_z)
        self.urT = ad.transpose(cell.u_r)
        self.uhT = ad.transpose(cell.u_h)
        self.b_z = cell.b_z
        self.b_r = cell.b_r
        self.b_h = cell.b_h
        self.d_h = cell.d_h

    def step(self, x: Tensor, h_prev: Tensor) -> Tensor:
        z = ad.sigmoid(
            ad.add_rows(ad.add(ad.matmul(x, self.wzT), ad.matmul(h_prev, self.uzT)), self.b_z)
        )
        r = ad.sigmoid(
            ad.add_rows(ad.add(ad.matmul(x, self.wrT), ad.matmul(h_prev, self.urT)), self.b_r)
        )
        h_tilde = ad.tanh(
            ad.add_rows(
                ad.add(ad.matmul(x, self.whT), ad.hadamard(r, ad.matmul(h_prev, self.uhT))),
                self.b_h,
            )
        )
        return ad.add(ad.hadamard(ad.one_minus(z), h_tilde), ad.hadamard(z, h_prev))


def _join(a: Tensor, b: Tensor, join: str, axis: int = 0) -> Tensor:
    if join == "concat":
        return ad.concat(a, b, axis=axis)
    return ad.add(a, b)


def encode_sentence(enc: EncoderParams, tokens: Tensor | np.ndarray) -> Tensor:
    """Bidirectional GRU over one sentence's token vectors.

    Joins the forward state at the last token with the backward state at the
    first token. Initial states are zero in both directions.
    """
    t = tokens if isinstance(tokens, Tensor) else Tensor(tokens)
    if t.data.ndim != 2 or t.data.shape[0] < 1:
        raise ShapeMismatch(f"sentence matrix must be (T, d), got {t.data.shape}")
    n = t.data.shape[0]
    h_f = Tensor(np.zeros(enc.forward_cell.d_h))
    for i in range(n):
        h_f, _ = gru_step(enc.forward_cell, ad.row(t, i), h_f)
    h_b = Tensor(np.zeros(enc.backward_cell.d_h))
    for i in range(n - 1, -1, -1):
        h_b, _ = gru_step(enc.backward_cell, ad.row(t, i), h_b)
    return _join(h_f, h_b, enc.join)


def encode_sentences(
    enc: EncoderParams, matrices: Sequence[np.ndarray]
) -> list[Tensor]:
    """Encode every sentence of a document, batching equal-length sentences.

    Returns one sentence vector per input matrix, in input order; results
    match per-sentence encode_sentence up to matmul rounding.
    """
    if not matrices:
        raise EmptyDocument("no sentences to encode")
    groups: dict[int, list[int]] = {}
    for idx, m in enumerate(matrices):
        if m.ndim != 2 or m.shape[0] < 1:
            raise ShapeMismatch(f"sentence matrix must be (T, d), got {m.shape}")
        groups.setdefault(m.shape[0], []).append(idx)
    fwd = _RowCell(enc.forward_cell)
    bwd = _RowCell(enc.backward_cell)
    out: list[Tensor | None] = [None] * len(matrices)
    for length in sorted(groups):
        idxs = groups[length]
        batch = len(idxs)
        steps = [
            Tensor(np.stack([matrices[i][t] for i in idxs])) for t in range(length)
        ]
        h_f = Tensor(np.zeros((batch, fwd.d_h)))
        for t in range(length):
            h_f = fwd.step(steps[t], h_f)
        h_b = Tensor(np.zeros((batch, bwd.d_h)))
        for t in range(length - 1, -1, -1):
            h_b = bwd.step(steps[t], h_b)
        joined = _join(h_f, h_b, enc.join, axis=1)
        for j, i in enumerate(idxs):
            out[i] = ad.row(joined, j)
    return out  # type: ignore[return-value]


def encode_document(enc: EncoderParams, sentence_vectors: Sequence[Tensor]) -> list[Tensor]:
    """Bidirectional GRU over sentence vectors; joined state per position."""
    n = len(sentence_vectors)
    if n < 1:
        raise EmptyDocument("no sentence vectors to encode")
    forward_states = []
    h = Tensor(np.zeros(enc.forward_cell.d_h))
    for i in range(n):
        h, _ = gru_step(enc.forward_cell, sentence_vectors[i], h)
        forward_states.append(h)
    backward_states: list[Tensor] = [None] * n  # type: ignore[list-item]
    h = Tensor(np.zeros(enc.backward_cell.d_h))
    for i in range(n - 1, -1, -1):
        h, _ = gru_step(enc.backward_cell, sentence_vectors[i], h)
        backward_states[i] = h
    return [
        _join(forward_states[i], backward_states[i], enc.join) for i in range(n)
    ]


def attention_scores(attn: AttentionParams, states: Tensor | Sequence[Tensor]) -> Tensor:
    """Unnormalized per-state scores; row-independent, so permuting the
    states permutes the scores identically.

    additive:   score_i = q . tanh(W l_i)
    scaled_dot: score_i = (q . l_i) / sqrt(D_l)
    """
    o = states if isinstance(states, Tensor) else ad.stack_rows(list(states))
    if o.data.ndim != 2:
        raise ShapeMismatch(f"attention input must be (T, d_l), got {o.data.shape}")
    d_l = o.data.shape[1]
    if attn.mode == "scaled_dot":
        if attn.query.data.shape[0] != d_l:
            raise ShapeMismatch("scaled_dot: query dim must equal state dim")
        return ad.scale(ad.matmul(o, attn.query), 1.0 / np.sqrt(d_l))
    if attn.mode == "additive":
        if attn.w is None:
            raise ShapeMismatch("additive attention needs a projection matrix")
        if attn.w.data.shape != (attn.query.data.shape[0], d_l):
            raise ShapeMismatch(
                f"additive: projection {attn.w.data.shape} incompatible with "
                f"query {attn.query.data.shape} and states {o.data.shape}"
            )
        return ad.matmul(ad.tanh(ad.matmul(o, ad.transpose(attn.w))), attn.query)
    raise ShapeMismatch(f"unknown attention mode {attn.mode!r}")


def attention_weights(attn: AttentionParams, states: Tensor | Sequence[Tensor]) -> Tensor:
    """Softmax-normalized attention over encoder states."""
    return ad.softmax(attention_scores(attn, states))


def pool_document(
    variant: str, states: Tensor | Sequence[Tensor], alpha: Tensor | None = None
) -> Tensor:
    """Weighted sum of states (hea) or their arithmetic mean (he).

    The mean is computed as a weighted sum with uniform weights, so forcing
    uniform attention reproduces the ablation bit-for-bit.
    """
    o = states if isinstance(states, Tensor) else ad.stack_rows(list(states))
    n = o.data.shape[0]
    if variant == "hea":
        if alpha is None:
            raise ShapeMismatch("hea pooling needs attention weights")
        if alpha.data.shape != (n,):
            raise ShapeMismatch(f"alpha length {alpha.data.shape} vs {n} states")
        weights = alpha
    elif variant == "he":
        if alpha is not None:
            raise ShapeMismatch("he pooling takes no attention weights")
        weights = Tensor(np.full(n, 1.0 / n))
    else:
        raise ShapeMismatch(f"unknown variant {variant!r}")
    return ad.matmul(ad.transpose(o), weights)


def classify(clf: ClassifierParams, z: Tensor) -> Tensor:
    """Affine map followed by softmax: probability of fail vs pass."""
    return ad.softmax(ad.add(ad.matmul(clf.w, z), clf.b))


# ---------------------------------------------------------------------------
# parameter store


class ModelParams:
    """All trainable weights, addressable both by name and by submodule."""

    def __init__(self, config: ModelConfig, tensors: dict[str, Tensor]):
        expected = expected_param_names(config)
        if tuple(tensors.keys()) != expected:
            raise CheckpointError(
                "parameter names do not match the configuration; "
                f"expected {expected}, got {tuple(tensors.keys())}"
            )
        self.config = config
        self.tensors = tensors

        def cell(prefix: str) -> GRUCellParams:
            return GRUCellParams(*(tensors[f"{prefix}.{g}"] for g in GATE_NAMES))

        self.sent = EncoderParams(cell("sent_fwd"), cell("sent_bwd"), config.join_sent)
        self.doc = EncoderParams(cell("doc_fwd"), cell("doc_bwd"), config.join_doc)
        if config.variant == "hea":
            self.attn = AttentionParams(
                mode=config.attention,
                query=tensors["attn.q"],
                w=tensors.get("attn.w"),
            )
        else:
            self.attn = None
        self.clf = ClassifierParams(w=tensors["clf.w"], b=tensors["clf.b"])

    def trainable(self) -> list[Tensor]:
        return list(self.tensors.values())

    def parameters(self) -> list[ad.Parameter]:
        return [ad.Parameter(name, t) for name, t in self.tensors.items()]

    def snapshot(self) -> dict[str, np.ndarray]:
        """Copy of all weights rounded to float32 storage precision.

        Checkpoints store binary32; snapshotting through that rounding makes
        a saved-then-loaded model reproduce the snapshot bit-for-bit.
        """
        return {
            name: t.data.astype(np.float32).astype(np.float64)
            for name, t in self.tensors.items()
        }

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, t in self.tensors.items():
            if name not in arrays:
                raise CheckpointError(f"missing parameter {name}")
            if arrays[name].shape != t.data.shape:
                raise CheckpointError(
                    f"parameter {name}: shape {arrays[name].shape} != {t.data.shape}"
                )
            t.data = np.ascontiguousarray(arrays[name], dtype=np.float64)


def expected_param_names(config: ModelConfig) -> tuple[str, ...]:
    names = [f"{prefix}.{g}" for prefix in ENCODER_PREFIXES for g in GATE_NAMES]
    if config.variant == "hea":
        names.append("attn.q")
        if config.attention == "additive":
            names.append("attn.w")
    names.extend(["clf.w", "clf.b"])
    return tuple(names)


def init_params(config: ModelConfig, rng: np.random.Generator) -> ModelParams:
    """Scaled-uniform weights, zero biases, small uniform query/classifier."""
    tensors: dict[str, Tensor] = {}

    def add_cell(prefix: str, d_in: int, d_h: int) -> None:
        bound = 1.0 / np.sqrt(d_h)
        for g in ("w_z", "w_r", "w_h"):
            tensors[f"{prefix}.{g}"] = Tensor(rng.uniform(-bound, bound, (d_h, d_in)))
        for g in ("u_z", "u_r", "u_h"):
            tensors[f"{prefix}.{g}"] = Tensor(rng.uniform(-bound, bound, (d_h, d_h)))
        for g in ("b_z", "b_r", "b_h"):
            tensors[f"{prefix}.{g}"] = Tensor(np.zeros(d_h))

    add_cell("sent_fwd", config.embed_dim, config.d_h_sent)
    add_cell("sent_bwd", config.embed_dim, config.d_h_sent)
    add_cell("doc_fwd", config.d_sent, config.d_h_doc)
    add_cell("doc_bwd", config.d_sent, config.d_h_doc)
    if config.variant == "hea":
        tensors["attn.q"] = Tensor(rng.uniform(-0.1, 0.1, config.query_dim))
        if config.attention == "additive":
            bound = 1.0 / np.sqrt(config.d_l)
            tensors["attn.w"] = Tensor(
                rng.uniform(-bound, bound, (config.query_dim, config.d_l))
            )
    tensors["clf.w"] = Tensor(rng.uniform(-0.1, 0.1, (2, config.d_z)))
    tensors["clf.b"] = Tensor(np.zeros(2))
    return ModelParams(config, tensors)


# ---------------------------------------------------------------------------
# full forward pass


def forward(
    config: ModelConfig,
    params: ModelParams,
    sentence_matrices: Sequence[np.ndarray],
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
) -> ForwardResult:
    """Sentence encoder -> document encoder -> pooling -> classifier.

    Dropout (on sentence vectors and on the pooled document vector) is only
    active in train mode; evaluation is deterministic.
    """
    if len(sentence_matrices) == 0:
        raise EmptyDocument("cannot run the model on a document with no sentences")
    use_dropout = train_mode and config.dropout_p > 0.0
    if use_dropout and rng is None:
        raise ValueError("train-mode dropout needs an rng")

    sent_vecs = encode_sentences(params.sent, sentence_matrices)
    if use_dropout:
        sent_vecs = [
            ad.hadamard(v, ad.dropout_mask(v.data.shape, config.dropout_p, rng))
            for v in sent_vecs
        ]
    states = encode_document(params.doc, sent_vecs)
    o = ad.stack_rows(states)
    alpha_node: Tensor | None = None
    if config.variant == "hea":
        assert params.attn is not None
        alpha_node = attention_weights(params.attn, o)
        z = pool_document("hea", o, alpha_node)
    else:
        z = pool_document("he", o)
    if use_dropout:
        z = ad.hadamard(z, ad.dropout_mask(z.data.shape, config.dropout_p, rng))
    probs_node = classify(params.clf, z)
    probs = probs_node.data.copy()
    label = int(np.argmax(probs))
    prediction = Prediction(
        probs=probs,
        label=label,
        confidence=float(probs[label]),
        attention=alpha_node.data.copy() if alpha_node is not None else None,
    )
    return ForwardResult(prediction=prediction, probs_node=probs_node, alpha_node=alpha_node)


def top_attended(
    prediction: Prediction, doc: Document, k: int
) -> list[tuple[str, float]]:
    """The k sentences with the highest attention weight, ties broken by
    lower sentence index; k is clipped to the document length."""
    if prediction.attention is None:
        raise NoAttention("prediction carries no attention weights")
    alpha = prediction.attention
    if len(alpha) != doc.n_sentences:
        raise ShapeMismatch(
            f"attention length {len(alpha)} vs {doc.n_sentences} sentences"
        )
    k = max(0, min(k, doc.n_sentences))
    order = sorted(range(doc.n_sentences), key=lambda i: (-alpha[i], i))
    return [(doc.sentence_text(i), float(alpha[i])) for i in order[:k]]


# ---------------------------------------------------------------------------
# checkpoint format

CHECKPOINT_MAGIC = b"ADCK"
CHECKPOINT_VERSION = 1


def params_from_arrays(config: ModelConfig, arrays: dict[str, np.ndarray]) -> ModelParams:
    tensors = {
        name: Tensor(np.ascontiguousarray(arrays[name], dtype=np.float64))
        for name in expected_param_names(config)
    }
    return ModelParams(config, tensors)


@dataclass
class CheckpointFile:
    config: ModelConfig
    arrays: dict[str, np.ndarray]
    criterion: str
    best_epoch: int
    val_f1_macro: float
    seed: int

    def build_params(self) -> ModelParams:
        return params_from_arrays(self.config, self.arrays)


def save_checkpoint(
    path: str | Path,
    config: ModelConfig,
    arrays: dict[str, np.ndarray],
    criterion: str,
    best_epoch: int,
    val_f1_macro: float,
    seed: int,
) -> None:
    """Binary checkpoint: JSON header then named float32 weight records."""
    expected = expected_param_names(config)
    if set(arrays.keys()) != set(expected):
        raise CheckpointError("arrays do not match the configuration's parameter set")
    header = json.dumps(
        {
            "config": config.to_dict(),
            "criterion": criterion,
            "best_epoch": best_epoch,
            "val_f1_macro": val_f1_macro,
            "seed": seed,
        },
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(header)), header]
    for name in expected:
        arr = np.ascontiguousarray(arrays[name])
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.astype("<f4").tobytes(order="C"))
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path: str | Path) -> CheckpointFile:
    blob = Path(path).read_bytes()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise BadMagic(f"{path}: not a checkpoint file")
    version, header_len = struct.unpack_from("<II", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise VersionUnsupported(f"{path}: checkpoint version {version}")
    header = json.loads(blob[12 : 12 + header_len].decode("utf-8"))
    config = ModelConfig.from_dict(header["config"])
    offset = 12 + header_len
    arrays: dict[str, np.ndarray] = {}
    while offset < len(blob):
        (name_len,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        name = blob[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        dims = struct.unpack_from(f"<{rank}I", blob, offset)
        offset += 4 * rank
        count = int(np.prod(dims)) if rank else 1
        values = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
        offset += 4 * count
        arrays[name] = values.reshape(dims).astype(np.float64)
    expected = set(expected_param_names(config))
    if set(arrays.keys()) != expected:
        raise CheckpointError(
            f"checkpoint parameter names {sorted(arrays)} do not match "
            f"the configuration's expectation {sorted(expected)}"
        )
    return CheckpointFile(
        config=config,
        arrays=arrays,
        criterion=header["criterion"],
        best_epoch=int(header["best_epoch"]),
        val_f1_macro=float(header["val_f1_macro"]),
        seed=int(header["seed"]),
    )
