"""Hierarchical clause classifier.

Three stacked components, all built from bidirectional gated recurrent units:

* a local clause encoder that maps each clause's tokens to a fixed vector
  (pluggable: either the trainable encoder here, or externally supplied
  clause vectors standing in for a frozen pretrained encoder);
* a global context encoder that runs over the concatenated token stream of
  the whole paragraph and mean-pools its states into a context vector;
* a two-layer classifier: a first recurrence over clause vectors produces
  per-clause probabilities, and a second recurrence over [probabilities;
  clause vector] pairs refines them using the label context.

Forward passes build an autodiff tape, so exact reverse-mode gradients of the
training loss are available for every parameter.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Var, leaf
from .corpus import Clause, ElementLabel, N_LABELS, Paragraph, Vocabulary

CHECKPOINT_MAGIC = b"FELCKPT1\n"

VARIANTS = ("full", "no-gc", "no-lr", "baseline")


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    embed_dim: int = 128
    hidden: int = 256
    n_labels: int = N_LABELS
    dropout: float = 0.3
    encoder_kind: str = "trainable"  # "trainable" | "external"
    use_global_context: bool = True
    use_label_refiner: bool = True
    aux_loss_weight: float = 0.5

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be >= 2")
        if self.hidden <= 0 or self.embed_dim <= 0:
            raise ValueError("hidden and embed_dim must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.n_labels != N_LABELS:
            raise ValueError(f"n_labels must be {N_LABELS}")
        if self.encoder_kind not in ("trainable", "external"):
            raise ValueError(f"unknown encoder kind {self.encoder_kind!r}")

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "embed_dim": self.embed_dim,
            "hidden": self.hidden,
            "n_labels": self.n_labels,
            "dropout": self.dropout,
            "encoder_kind": self.encoder_kind,
            "use_global_context": self.use_global_context,
            "use_label_refiner": self.use_label_refiner,
            "aux_loss_weight": self.aux_loss_weight,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        return cls(**data)


def parameter_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Canonical tensor names and shapes for a configuration.

    Recurrent weights per direction are combined gate matrices with rows
    ordered [update; reset; candidate]: W (3H, in), U (3H, H), b (3H,).
    """
    h, e, v, k = config.hidden, config.embed_dim, config.vocab_size, config.n_labels
    shapes: dict[str, tuple[int, ...]] = {"embedding": (v, e)}

    def gru(prefix: str, in_dim: int) -> None:
        for d in ("fw", "bw"):
            shapes[f"{prefix}.{d}.W"] = (3 * h, in_dim)
            shapes[f"{prefix}.{d}.U"] = (3 * h, h)
            shapes[f"{prefix}.{d}.b"] = (3 * h,)

    if config.encoder_kind == "trainable":
        gru("local", e)
    gru("global.l1", e)
    gru("global.l2", 2 * h)
    gru("cls1", 2 * h)
    gru("cls2", 2 * h + k)
    shapes["out1.W"] = (k, 4 * h)
    shapes["out1.b"] = (k,)
    shapes["out2.W"] = (k, 4 * h)
    shapes["out2.b"] = (k,)
    return shapes


def head_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Clause-level linear head used for encoder pretraining and the
    independent-clause baseline."""
    return {
        "head.W": (config.n_labels, 2 * config.hidden),
        "head.b": (config.n_labels,),
    }


class ModelParameters:
    """Named float64 tensors validated against a :class:`ModelConfig`."""

    def __init__(self, config: ModelConfig, tensors: dict[str, np.ndarray]):
        required = parameter_shapes(config)
        optional = head_shapes(config)
        validated: dict[str, np.ndarray] = {}
        for name, shape in required.items():
            if name not in tensors:
                raise ValueError(f"missing parameter tensor {name!r}")
            arr = np.asarray(tensors[name], dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(
                    f"tensor {name!r} has shape {arr.shape}, expected {shape}")
            validated[name] = arr
        for name, arr in tensors.items():
            if name in required:
                continue
            if name not in optional:
                raise ValueError(f"unexpected parameter tensor {name!r}")
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != optional[name]:
                raise ValueError(
                    f"tensor {name!r} has shape {arr.shape}, "
                    f"expected {optional[name]}")
            validated[name] = arr
        if not np.all([np.isfinite(a).all() for a in validated.values()]):
            raise ValueError("parameters contain non-finite values")
        self.config = config
        self.tensors = validated

    def names(self) -> list[str]:
        return list(self.tensors)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        if name not in self.tensors:
            raise KeyError(name)
        if value.shape != self.tensors[name].shape:
            raise ValueError(f"shape mismatch for {name!r}")
        self.tensors[name] = np.asarray(value, dtype=np.float64)

    def copy(self) -> "ModelParameters":
        return ModelParameters(
            self.config, {n: a.copy() for n, a in self.tensors.items()})


def init_parameters(
    config: ModelConfig,
    seed: int | np.random.Generator = 0,
    with_head: bool = False,
) -> ModelParameters:
    """Uniform(-k, k) initialization with k = 1/sqrt(fan-in); zero biases."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    shapes = dict(parameter_shapes(config))
    if with_head:
        shapes.update(head_shapes(config))
    tensors = {}
    for name, shape in shapes.items():
        if name.endswith(".b") or name.endswith(".bias"):
            tensors[name] = np.zeros(shape)
        else:
            fan_in = shape[-1]
            k = 1.0 / np.sqrt(fan_in)
            tensors[name] = rng.uniform(-k, k, size=shape)
    return ModelParameters(config, tensors)


# ---------------------------------------------------------------------------
# forward pass
# ---------------------------------------------------------------------------

@dataclass
class ForwardTrace:
    """All intermediate representations of one paragraph's forward pass."""

    clause_reps: np.ndarray            # (n, 2H)
    context: np.ndarray                # (2H,)
    first_states: np.ndarray           # (n, 2H)
    first_probs: np.ndarray            # (n, n_labels)
    refined_states: np.ndarray | None  # (n, 2H) or None when refiner disabled
    refined_probs: np.ndarray | None

    @property
    def output_probs(self) -> np.ndarray:
        return self.refined_probs if self.refined_probs is not None else self.first_probs


class _Dropout:
    """Inverted dropout; identity when no rng is supplied (evaluation mode)."""

    def __init__(self, rate: float, rng: np.random.Generator | None):
        self.rate = rate
        self.rng = rng

    def __call__(self, x: Var) -> Var:
        if self.rng is None or self.rate <= 0.0:
            return x
        keep = 1.0 - self.rate
        mask = (self.rng.random(x.value.shape) < keep) / keep
        return ad.mul(x, leaf(mask))


def _make_leaves(params: ModelParameters, trainable: set[str] | None) -> dict[str, Var]:
    return {
        name: leaf(arr, requires=(trainable is None or name in trainable))
        for name, arr in params.tensors.items()
    }


def _gru_direction(
    w: Var, u: Var, b: Var,
    xs: Var, n_rows: int,
    masks: np.ndarray | None,
    reverse: bool,
) -> tuple[Var, Var]:
    """Scan one direction over a step-major input matrix.

    ``xs`` stacks the step inputs as ``(T * n_rows, in_dim)`` with step t in
    rows ``t*n_rows:(t+1)*n_rows``; the input projection for all gates and
    steps is one matrix product, and the scan itself is a single fused node.
    Returns the stacked states (step-major) and the final state.
    """
    total = xs.value.shape[0]
    xw = ad.add_bias(ad.matmul_nt(xs, w), b)
    states = ad.gru_scan(xw, u, n_rows, masks, reverse)
    if reverse:
        final = ad.take_rows_slice(states, 0, n_rows)
    else:
        final = ad.take_rows_slice(states, total - n_rows, total)
    return states, final


def _bigru(
    leaves: dict[str, Var], prefix: str,
    xs: Var, n_rows: int,
    masks: np.ndarray | None = None,
    want_states: bool = True,
) -> tuple[Var | None, Var, Var]:
    """Bidirectional scan; stacked [fw; bw] states plus both final states.

    With right-padded inputs and masks, the forward final state is each
    row's state at its last valid step (frozen through the padding) and the
    backward final state is the state at step 0.
    """
    fw_states, fw_final = _gru_direction(
        leaves[f"{prefix}.fw.W"], leaves[f"{prefix}.fw.U"],
        leaves[f"{prefix}.fw.b"], xs, n_rows, masks, reverse=False)
    bw_states, bw_final = _gru_direction(
        leaves[f"{prefix}.bw.W"], leaves[f"{prefix}.bw.U"],
        leaves[f"{prefix}.bw.b"], xs, n_rows, masks, reverse=True)
    joined = None
    if want_states:
        joined = ad.concat([fw_states, bw_states], axis=1)
    return joined, fw_final, bw_final


class _BatchLayout:
    """Row bookkeeping for a batch whose clauses are stacked paragraph-major."""

    def __init__(self, paragraphs: Sequence[Paragraph]):
        self.n_clauses = [len(p.clauses) for p in paragraphs]
        self.offsets = np.concatenate([[0], np.cumsum(self.n_clauses)])
        self.total = int(self.offsets[-1])
        self.n_max = max(self.n_clauses)
        n_par = len(paragraphs)
        # step-major (position-by-paragraph) index into the clause rows,
        # -1 where a paragraph has no clause at that position
        self.step_index = np.full((self.n_max, n_par), -1, dtype=np.int64)
        self.inverse_index = np.empty(self.total, dtype=np.int64)
        self.paragraph_of = np.empty(self.total, dtype=np.int64)
        for b, n in enumerate(self.n_clauses):
            rows = self.offsets[b] + np.arange(n)
            self.step_index[:n, b] = rows
            self.inverse_index[rows] = np.arange(n) * n_par + b
            self.paragraph_of[rows] = b
        self.step_masks = _step_masks(self.n_max, np.asarray(self.n_clauses))


def _step_masks(t_max: int, lengths: np.ndarray) -> np.ndarray | None:
    """(T, rows, 1) validity masks for right-padded sequences, or None when
    every sequence spans all steps."""
    if lengths.min() == t_max:
        return None
    return (np.arange(t_max)[:, None] < lengths[None, :]
            ).astype(np.float64)[:, :, None]


def _collect_tokens(paragraphs: Sequence[Paragraph]) -> list[tuple[int, ...]]:
    all_tokens = []
    for p in paragraphs:
        for clause in p.clauses:
            if clause.tokens is None:
                raise ValueError(f"paragraph {p.id!r} is not tokenized")
            if len(clause.tokens) == 0:
                raise ValueError(f"paragraph {p.id!r} contains an empty clause")
            all_tokens.append(clause.tokens)
    return all_tokens


def _encode_clauses_graph(
    leaves: dict[str, Var], config: ModelConfig,
    paragraphs: Sequence[Paragraph],
    clause_vectors: Sequence[np.ndarray] | None,
) -> Var:
    """Clause representations for every clause in the batch, stacked
    paragraph-major into (total_clauses, 2H)."""
    if config.encoder_kind == "external":
        if clause_vectors is None:
            raise ValueError("external encoder kind requires clause vectors")
        blocks = []
        for p, vecs in zip(paragraphs, clause_vectors):
            if vecs is None:
                raise ValueError(
                    f"paragraph {p.id!r}: missing external clause vectors")
            arr = np.asarray(vecs, dtype=np.float64)
            expected = (len(p.clauses), 2 * config.hidden)
            if arr.shape != expected:
                raise ValueError(
                    f"paragraph {p.id!r}: clause vectors have shape "
                    f"{arr.shape}, expected {expected}")
            blocks.append(arr)
        return leaf(np.concatenate(blocks, axis=0))
    tokens = _collect_tokens(paragraphs)
    lengths = np.asarray([len(t) for t in tokens])
    n, t_max = len(tokens), int(lengths.max())
    ids = np.zeros((n, t_max), dtype=np.int64)
    for i, toks in enumerate(tokens):
        ids[i, :len(toks)] = toks
    # one step-major gather: rows t*n:(t+1)*n hold every clause's t-th token
    xs = ad.embedding_rows(leaves["embedding"], ids.T.reshape(-1))
    _, fw_final, bw_final = _bigru(leaves, "local", xs, n,
                                   _step_masks(t_max, lengths),
                                   want_states=False)
    return ad.concat([fw_final, bw_final], axis=1)


def _global_context_graph(
    leaves: dict[str, Var], config: ModelConfig,
    paragraphs: Sequence[Paragraph], drop: _Dropout,
) -> Var:
    """Per-paragraph context vectors (batch, 2H): two recurrent layers over
    each paragraph's concatenated token stream, mean-pooled over the top
    layer's states."""
    streams = []
    for p in paragraphs:
        stream: list[int] = []
        for clause in p.clauses:
            if clause.tokens is None:
                raise ValueError(f"paragraph {p.id!r} is not tokenized")
            stream.extend(clause.tokens)
        if not stream:
            raise ValueError(f"paragraph {p.id!r} has zero total tokens")
        streams.append(stream)
    n_par = len(streams)
    slen = np.asarray([len(s) for s in streams])
    t_max = int(slen.max())
    ids = np.zeros((n_par, t_max), dtype=np.int64)
    for b, s in enumerate(streams):
        ids[b, :len(s)] = s
    xs = ad.embedding_rows(leaves["embedding"], ids.T.reshape(-1))
    masks = _step_masks(t_max, slen)
    l1_states, _, _ = _bigru(leaves, "global.l1", xs, n_par, masks)
    l1 = drop(l1_states)
    l2_states, _, _ = _bigru(leaves, "global.l2", l1, n_par, masks)
    return ad.mean_pool_steps(l2_states, n_par, slen.astype(np.float64),
                              masks)


def _scan_clauses(
    leaves: dict[str, Var], prefix: str, x: Var, layout: _BatchLayout,
) -> Var:
    """Bidirectional scan over each paragraph's clause sequence.

    ``x`` holds per-clause rows paragraph-major; the result has the same row
    order with [fw; bw] states.
    """
    xs = ad.gather_rows(x, layout.step_index.reshape(-1))
    states, _, _ = _bigru(leaves, prefix, xs, layout.step_index.shape[1],
                          layout.step_masks)
    return ad.gather_rows(states, layout.inverse_index)


def _classify_graph(
    leaves: dict[str, Var], config: ModelConfig, reps: Var,
    clause_context: Var, layout: _BatchLayout, drop: _Dropout,
) -> tuple[Var, Var, Var]:
    """First-stage states, logits, and probabilities (per clause row)."""
    s1 = drop(_scan_clauses(leaves, "cls1", reps, layout))
    features = ad.concat([s1, clause_context], axis=1)
    logits = ad.add_bias(ad.matmul_nt(features, leaves["out1.W"]),
                         leaves["out1.b"])
    return s1, logits, ad.softmax_rows(logits)


def _refine_graph(
    leaves: dict[str, Var], config: ModelConfig, reps: Var, probs: Var,
    clause_context: Var, layout: _BatchLayout, drop: _Dropout,
) -> tuple[Var, Var, Var]:
    """Second-stage states, logits, and refined probabilities."""
    joined = ad.concat([probs, reps], axis=1)
    s2 = drop(_scan_clauses(leaves, "cls2", joined, layout))
    features = ad.concat([s2, clause_context], axis=1)
    logits = ad.add_bias(ad.matmul_nt(features, leaves["out2.W"]),
                         leaves["out2.b"])
    return s2, logits, ad.softmax_rows(logits)


def _batch_graph(
    leaves: dict[str, Var], config: ModelConfig,
    paragraphs: Sequence[Paragraph], drop: _Dropout,
    clause_vectors: Sequence[np.ndarray] | None = None,
) -> dict:
    """Forward graph for a batch of paragraphs; clause rows paragraph-major."""
    layout = _BatchLayout(paragraphs)
    reps = drop(_encode_clauses_graph(leaves, config, paragraphs,
                                      clause_vectors))
    if config.use_global_context:
        context = drop(_global_context_graph(leaves, config, paragraphs, drop))
    else:
        context = leaf(np.zeros((len(paragraphs), 2 * config.hidden)))
    clause_context = ad.gather_rows(context, layout.paragraph_of)
    s1, logits1, probs1 = _classify_graph(
        leaves, config, reps, clause_context, layout, drop)
    out = {"layout": layout, "reps": reps, "context": context,
           "s1": s1, "logits1": logits1, "probs1": probs1,
           "s2": None, "logits2": None, "probs2": None}
    if config.use_label_refiner:
        s2, logits2, probs2 = _refine_graph(
            leaves, config, reps, probs1, clause_context, layout, drop)
        out.update({"s2": s2, "logits2": logits2, "probs2": probs2})
    return out


def forward(
    params: ModelParameters,
    paragraph: Paragraph,
    training: bool = False,
    rng: np.random.Generator | None = None,
    clause_vectors: np.ndarray | None = None,
) -> ForwardTrace:
    """Run the full model on one paragraph.

    Dropout is active only when ``training`` is true and an rng is supplied;
    evaluation mode is deterministic.
    """
    config = params.config
    drop = _Dropout(config.dropout if training else 0.0,
                    rng if training else None)
    leaves = _make_leaves(params, trainable=set())
    g = _batch_graph(leaves, config, [paragraph], drop,
                     [clause_vectors] if clause_vectors is not None else None)
    return ForwardTrace(
        clause_reps=g["reps"].value,
        context=g["context"].value[0],
        first_states=g["s1"].value,
        first_probs=g["probs1"].value,
        refined_states=g["s2"].value if g["s2"] is not None else None,
        refined_probs=g["probs2"].value if g["probs2"] is not None else None,
    )


# ---------------------------------------------------------------------------
# spec-level component operations
# ---------------------------------------------------------------------------

def encode_clause(
    params: ModelParameters,
    tokens: Sequence[int] | None,
    vector: np.ndarray | None = None,
) -> np.ndarray:
    """Clause representation h_i.

    Trainable kind: embed the tokens, run the local bidirectional encoder,
    and concatenate the final forward and backward states. External kind:
    return the precomputed vector.
    """
    config = params.config
    if config.encoder_kind == "external":
        if vector is None:
            raise ValueError("external encoder kind requires a clause vector")
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (2 * config.hidden,):
            raise ValueError(
                f"clause vector must have shape ({2 * config.hidden},)")
        return vector
    if not tokens:
        raise ValueError("clause tokens must be non-empty")
    clause = Clause(text="", tokens=tuple(int(t) for t in tokens))
    paragraph = Paragraph("_clause", (clause,))
    leaves = _make_leaves(params, trainable=set())
    reps = _encode_clauses_graph(leaves, config, [paragraph], None)
    return reps.value[0]


def encode_global_context(
    params: ModelParameters, paragraph: Paragraph
) -> np.ndarray:
    """Context vector c: mean of the two-layer global encoder's states."""
    leaves = _make_leaves(params, trainable=set())
    drop = _Dropout(0.0, None)
    return _global_context_graph(
        leaves, params.config, [paragraph], drop).value[0]


def first_stage_classify(
    params: ModelParameters,
    clause_reps: np.ndarray,
    context: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """First-stage states s1 and probabilities from clause representations.

    ``context`` defaults to a zero vector, the global-context ablation.
    """
    config = params.config
    reps = np.asarray(clause_reps, dtype=np.float64)
    if reps.ndim != 2 or reps.shape[1] != 2 * config.hidden:
        raise ValueError(
            f"clause representations must be (n, {2 * config.hidden})")
    c = np.repeat(_context_row(config, context), reps.shape[0], axis=0)
    layout = _single_sequence_layout(reps.shape[0])
    leaves = _make_leaves(params, trainable=set())
    s1, _, probs = _classify_graph(
        leaves, config, leaf(reps), leaf(c), layout, _Dropout(0.0, None))
    return s1.value, probs.value


def refine_labels(
    params: ModelParameters,
    clause_reps: np.ndarray,
    first_probs: np.ndarray,
    context: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Second-stage states s2 and refined probabilities."""
    config = params.config
    reps = np.asarray(clause_reps, dtype=np.float64)
    probs = np.asarray(first_probs, dtype=np.float64)
    if probs.shape != (reps.shape[0], config.n_labels):
        raise ValueError(
            f"first-stage probabilities must be (n, {config.n_labels})")
    c = np.repeat(_context_row(config, context), reps.shape[0], axis=0)
    layout = _single_sequence_layout(reps.shape[0])
    leaves = _make_leaves(params, trainable=set())
    s2, _, refined = _refine_graph(
        leaves, config, leaf(reps), leaf(probs), leaf(c), layout,
        _Dropout(0.0, None))
    return s2.value, refined.value


def _context_row(config: ModelConfig, context: np.ndarray | None) -> np.ndarray:
    if context is None:
        return np.zeros((1, 2 * config.hidden))
    c = np.asarray(context, dtype=np.float64).reshape(1, -1)
    if c.shape[1] != 2 * config.hidden:
        raise ValueError(f"context must have {2 * config.hidden} entries")
    return c


def _single_sequence_layout(n: int) -> _BatchLayout:
    clauses = tuple(Clause(text="", tokens=(1,)) for _ in range(n))
    return _BatchLayout([Paragraph("_seq", clauses)])


# ---------------------------------------------------------------------------
# loss and gradients
# ---------------------------------------------------------------------------

def _gold_ids(paragraph: Paragraph, gold: Sequence[ElementLabel] | None) -> np.ndarray:
    if gold is None:
        gold = [c.gold for c in paragraph.clauses]
    if any(g is None for g in gold):
        raise ValueError(f"paragraph {paragraph.id!r} has unlabeled clauses")
    if len(gold) != len(paragraph.clauses):
        raise ValueError("gold labels do not match clause count")
    return np.asarray([int(g) for g in gold], dtype=np.int64)


def loss(
    trace: ForwardTrace,
    gold: Sequence[ElementLabel],
    aux_loss_weight: float = 0.5,
) -> float:
    """Training objective evaluated on a forward trace.

    Mean refined-stage cross entropy plus ``aux_loss_weight`` times the mean
    first-stage cross entropy; first-stage only when the refiner is disabled.
    """
    y = np.asarray([int(g) for g in gold], dtype=np.int64)
    idx = np.arange(len(y))
    first = -np.log(trace.first_probs[idx, y]).mean()
    if trace.refined_probs is None:
        return float(first)
    refined = -np.log(trace.refined_probs[idx, y]).mean()
    return float(refined + aux_loss_weight * first)


def _batch_gold_and_weights(
    batch: Sequence[Paragraph],
    gold: Sequence[Sequence[ElementLabel]] | None,
) -> tuple[np.ndarray, np.ndarray]:
    """Flattened gold ids plus per-clause weights 1/(batch * clauses-in-
    paragraph), so the weighted sum equals the mean over paragraphs of each
    paragraph's mean clause loss."""
    ids = []
    weights = []
    for i, paragraph in enumerate(batch):
        y = _gold_ids(paragraph, gold[i] if gold is not None else None)
        ids.append(y)
        weights.append(np.full(len(y), 1.0 / (len(batch) * len(y))))
    return np.concatenate(ids), np.concatenate(weights)


def _loss_graph(g: dict, config: ModelConfig, y: np.ndarray,
                weights: np.ndarray) -> Var:
    ce1 = ad.weighted_cross_entropy_with_logits(g["logits1"], y, weights)
    if not config.use_label_refiner:
        return ce1
    ce2 = ad.weighted_cross_entropy_with_logits(g["logits2"], y, weights)
    return ad.add(ce2, ad.scale(ce1, config.aux_loss_weight))


def loss_and_gradients(
    params: ModelParameters,
    batch: Sequence[Paragraph],
    gold: Sequence[Sequence[ElementLabel]] | None = None,
    trainable: set[str] | None = None,
    rng: np.random.Generator | None = None,
    clause_vectors: Sequence[np.ndarray] | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean loss over a batch of paragraphs and its exact gradients.

    The batch loss is the mean over paragraphs of each paragraph's loss.
    ``trainable`` restricts which parameters receive gradients (None means
    all); frozen parameters come back as zero arrays. Dropout is active only
    when an rng is supplied.
    """
    config = params.config
    leaves = _make_leaves(params, trainable)
    drop = _Dropout(config.dropout if rng is not None else 0.0, rng)
    y, weights = _batch_gold_and_weights(batch, gold)
    g = _batch_graph(leaves, config, batch, drop, clause_vectors)
    total = _loss_graph(g, config, y, weights)
    ad.backward(total)
    grads = {
        name: (lf.grad if lf.grad is not None else np.zeros_like(lf.value))
        for name, lf in leaves.items()
    }
    return float(total.value), grads


def backward(
    params: ModelParameters,
    paragraph: Paragraph,
    gold: Sequence[ElementLabel] | None = None,
    clause_vectors: np.ndarray | None = None,
) -> dict[str, np.ndarray]:
    """Exact gradients of the loss for one paragraph, dropout disabled."""
    _, grads = loss_and_gradients(
        params, [paragraph],
        gold=[gold] if gold is not None else None,
        clause_vectors=[clause_vectors] if clause_vectors is not None else None,
    )
    return grads


def batch_loss(
    params: ModelParameters,
    batch: Sequence[Paragraph],
    gold: Sequence[Sequence[ElementLabel]] | None = None,
    clause_vectors: Sequence[np.ndarray] | None = None,
) -> float:
    """Mean loss over a batch without gradients (used by finite differences)."""
    config = params.config
    leaves = _make_leaves(params, trainable=set())
    drop = _Dropout(0.0, None)
    y, weights = _batch_gold_and_weights(batch, gold)
    g = _batch_graph(leaves, config, batch, drop, clause_vectors)
    return float(_loss_graph(g, config, y, weights).value)


# ---------------------------------------------------------------------------
# clause-level head (pretraining and the independent-clause baseline)
# ---------------------------------------------------------------------------

def head_logits_graph(
    leaves: dict[str, Var], config: ModelConfig,
    paragraphs: Sequence[Paragraph], drop: _Dropout,
    clause_vectors: Sequence[np.ndarray] | None = None,
) -> Var:
    """Per-clause head logits for all clauses of a batch, paragraph-major."""
    reps = drop(_encode_clauses_graph(leaves, config, paragraphs,
                                      clause_vectors))
    return ad.add_bias(ad.matmul_nt(reps, leaves["head.W"]), leaves["head.b"])


def head_probabilities(
    params: ModelParameters, paragraph: Paragraph,
    clause_vectors: np.ndarray | None = None,
) -> np.ndarray:
    """Per-clause probabilities from the encoder plus linear head."""
    leaves = _make_leaves(params, trainable=set())
    logits = head_logits_graph(
        leaves, params.config, [paragraph], _Dropout(0.0, None),
        [clause_vectors] if clause_vectors is not None else None)
    return ad.softmax_rows(logits).value


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(
    path,
    params: ModelParameters,
    vocabulary: Vocabulary | None = None,
    variant: str = "full",
) -> None:
    """Single-file checkpoint: JSON header plus little-endian float32 tensors."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    names = params.names()
    header = {
        "format": 1,
        "variant": variant,
        "config": params.config.to_dict(),
        "vocabulary": list(vocabulary.tokens) if vocabulary is not None else None,
        "tensors": [
            {"name": n, "shape": list(params[n].shape)} for n in names
        ],
    }
    blob = json.dumps(header, ensure_ascii=False,
                      separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(params[n].astype("<f4").tobytes())


def load_checkpoint(path) -> tuple[ModelParameters, Vocabulary | None, str]:
    """Load a checkpoint, validating every tensor shape against the config."""
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a model checkpoint")
        (blob_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(blob_len).decode("utf-8"))
        config = ModelConfig.from_dict(header["config"])
        tensors = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(4 * count)
            if len(raw) != 4 * count:
                raise ValueError(f"{path}: truncated tensor {entry['name']!r}")
            tensors[entry["name"]] = np.frombuffer(
                raw, dtype="<f4").reshape(shape).astype(np.float64)
    vocab = (Vocabulary(header["vocabulary"])
             if header.get("vocabulary") is not None else None)
    variant = header.get("variant", "full")
    if variant not in VARIANTS:
        raise ValueError(f"{path}: unknown variant {variant!r}")
    return ModelParameters(config, tensors), vocab, variant
