"""Two-phase training, evaluation metrics, and ablation orchestration.

Phase 1 trains the local clause encoder plus a temporary linear head on
independent clause classification. Phase 2 freezes the encoder and trains the
global context encoder, both classifier recurrences, and the output matrices
on whole paragraphs. The best checkpoint is selected by validation macro-F1.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import model as mdl
from .analytics import confusion_matrix
from .corpus import (
    Corpus,
    ElementLabel,
    LABELS,
    Paragraph,
    Vocabulary,
    build_vocabulary,
    tokenize_corpus,
)
from .model import ModelConfig, ModelParameters


@dataclass(frozen=True)
class PhaseConfig:
    epochs: int
    learning_rate: float
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")


@dataclass(frozen=True)
class TrainConfig:
    """Defaults mirror the reference setup: 4 epochs of encoder fine-tuning
    with decoupled weight decay at 2e-5, then 10 epochs at 2e-4, batches of
    32 paragraphs. Desk-scale experiments override the learning rates."""

    phase1: PhaseConfig = field(default_factory=lambda: PhaseConfig(4, 2e-5, 0.01))
    phase2: PhaseConfig = field(default_factory=lambda: PhaseConfig(10, 2e-4))
    batch_size: int = 32
    seed: int = 0
    clip_norm: float = 5.0
    early_stop_metric: str = "macro_f1"

    def to_dict(self) -> dict:
        return {
            "phase1": {
                "epochs": self.phase1.epochs,
                "learning_rate": self.phase1.learning_rate,
                "weight_decay": self.phase1.weight_decay,
            },
            "phase2": {
                "epochs": self.phase2.epochs,
                "learning_rate": self.phase2.learning_rate,
                "weight_decay": self.phase2.weight_decay,
            },
            "batch_size": self.batch_size,
            "seed": self.seed,
            "clip_norm": self.clip_norm,
            "early_stop_metric": self.early_stop_metric,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        kwargs = dict(data)
        for phase in ("phase1", "phase2"):
            if phase in kwargs:
                kwargs[phase] = PhaseConfig(**kwargs[phase])
        return cls(**kwargs)


class Adam:
    """Adaptive-moment optimizer; ``decoupled_decay`` switches on the
    decoupled weight decay variant used for encoder fine-tuning."""

    def __init__(
        self,
        learning_rate: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.0,
        decoupled_decay: bool = False,
    ):
        self.lr = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.decoupled_decay = decoupled_decay
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(
        self,
        params: ModelParameters,
        grads: dict[str, np.ndarray],
        trainable: set[str],
        clip_norm: float = 0.0,
    ) -> None:
        names = [n for n in params.names() if n in trainable]
        if clip_norm > 0.0:
            total = np.sqrt(sum(float(np.sum(grads[n] ** 2)) for n in names))
            if total > clip_norm:
                scale = clip_norm / total
                grads = {n: grads[n] * scale for n in grads}
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for n in names:
            g = grads[n]
            if n not in self.m:
                self.m[n] = np.zeros_like(g)
                self.v[n] = np.zeros_like(g)
            self.m[n] = self.beta1 * self.m[n] + (1.0 - self.beta1) * g
            self.v[n] = self.beta2 * self.v[n] + (1.0 - self.beta2) * g * g
            update = (self.m[n] / bc1) / (np.sqrt(self.v[n] / bc2) + self.eps)
            if self.decoupled_decay and self.weight_decay > 0.0 and g.ndim > 1:
                update = update + self.weight_decay * params[n]
            params[n] = params[n] - self.lr * update


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------

def make_batches(
    paragraphs: Sequence[Paragraph],
    batch_size: int,
    rng: np.random.Generator,
) -> list[list[int]]:
    """Group paragraphs of similar clause count into batches; batch order and
    within-length ties are reshuffled from the rng each call."""
    n = len(paragraphs)
    jitter = rng.permutation(n)
    order = sorted(range(n), key=lambda i: (len(paragraphs[i]), jitter[i]))
    batches = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    perm = rng.permutation(len(batches))
    return [batches[i] for i in perm]


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EvalReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    per_label: dict[ElementLabel, tuple[float, float, float]]
    confusion: np.ndarray
    n_clauses: int
    averaging: str = "macro"

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "averaging": self.averaging,
            "n_clauses": self.n_clauses,
            "per_label": {
                lab.name: {"precision": p, "recall": r, "f1": f}
                for lab, (p, r, f) in self.per_label.items()
            },
            "confusion": self.confusion.tolist(),
        }


def metrics_from_predictions(
    gold: Sequence[ElementLabel],
    pred: Sequence[ElementLabel],
    averaging: str = "macro",
) -> EvalReport:
    """Accuracy plus per-label and averaged precision/recall/F1.

    Metrics are tallied directly from the prediction pairs; the confusion
    matrix is attached for independent recomputation.
    """
    if averaging not in ("macro", "weighted"):
        raise ValueError(f"unknown averaging {averaging!r}")
    if not gold:
        raise ValueError("empty corpus")
    tp = {lab: 0 for lab in LABELS}
    fp = {lab: 0 for lab in LABELS}
    fn = {lab: 0 for lab in LABELS}
    hits = 0
    for g, p in zip(gold, pred):
        if g == p:
            hits += 1
            tp[g] += 1
        else:
            fp[p] += 1
            fn[g] += 1
    per_label = {}
    for lab in LABELS:
        prec = tp[lab] / (tp[lab] + fp[lab]) if tp[lab] + fp[lab] else 0.0
        rec = tp[lab] / (tp[lab] + fn[lab]) if tp[lab] + fn[lab] else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        per_label[lab] = (prec, rec, f1)
    if averaging == "macro":
        def average(index: int) -> float:
            return float(np.mean([per_label[lab][index] for lab in LABELS]))
    else:
        total = len(gold)

        def average(index: int) -> float:
            return float(sum(
                (tp[lab] + fn[lab]) / total * per_label[lab][index]
                for lab in LABELS))
    return EvalReport(
        accuracy=hits / len(gold),
        precision=average(0),
        recall=average(1),
        f1=average(2),
        per_label=per_label,
        confusion=confusion_matrix(list(gold), list(pred)),
        n_clauses=len(gold),
        averaging=averaging,
    )


def _vectors_for(
    clause_vectors: dict[str, np.ndarray] | None, paragraph: Paragraph,
) -> np.ndarray | None:
    if clause_vectors is None:
        return None
    if paragraph.id not in clause_vectors:
        raise ValueError(
            f"paragraph {paragraph.id!r}: missing external clause vectors")
    return clause_vectors[paragraph.id]


def predict_corpus(
    params: ModelParameters,
    corpus: Corpus,
    use_head: bool = False,
    clause_vectors: dict[str, np.ndarray] | None = None,
) -> tuple[list[ElementLabel], list[ElementLabel]]:
    """Evaluation-mode gold/predicted label lists over a tokenized corpus.

    ``clause_vectors`` maps paragraph ids to (n, 2*hidden) arrays; required
    for external-encoder models.
    """
    gold: list[ElementLabel] = []
    pred: list[ElementLabel] = []
    for p in corpus.paragraphs:
        vectors = _vectors_for(clause_vectors, p)
        if use_head:
            probs = mdl.head_probabilities(params, p, vectors)
        else:
            probs = mdl.forward(params, p, clause_vectors=vectors).output_probs
        for i, clause in enumerate(p.clauses):
            if clause.gold is None:
                raise ValueError(f"paragraph {p.id!r} has unlabeled clauses")
            gold.append(clause.gold)
            pred.append(LABELS[int(np.argmax(probs[i]))])
    return gold, pred


def evaluate(
    params: ModelParameters,
    corpus: Corpus,
    averaging: str = "macro",
    use_head: bool = False,
    clause_vectors: dict[str, np.ndarray] | None = None,
) -> EvalReport:
    """Evaluate on a labeled, tokenized corpus in evaluation mode."""
    if len(corpus.paragraphs) == 0:
        raise ValueError("empty corpus")
    gold, pred = predict_corpus(params, corpus, use_head=use_head,
                                clause_vectors=clause_vectors)
    return metrics_from_predictions(gold, pred, averaging)


# ---------------------------------------------------------------------------
# trainable-parameter groups
# ---------------------------------------------------------------------------

def _phase1_trainable(params: ModelParameters) -> set[str]:
    return {n for n in params.names()
            if n == "embedding" or n.startswith(("local.", "head."))}


def _phase2_trainable(params: ModelParameters) -> set[str]:
    names = {n for n in params.names()
             if n.startswith(("global.", "cls1.", "cls2.", "out1.", "out2."))}
    if params.config.encoder_kind == "external":
        # No pretrained embedding exists to freeze in external mode; the
        # global encoder still needs one, so it trains here instead.
        names.add("embedding")
    return names


# ---------------------------------------------------------------------------
# phase 1: encoder pretraining on independent clauses
# ---------------------------------------------------------------------------

def pretrain_local_encoder(
    train_config: TrainConfig,
    model_config: ModelConfig,
    train: Corpus,
    params: ModelParameters | None = None,
) -> tuple[ModelParameters, list[float]]:
    """Train encoder plus temporary head on clause classification.

    Returns the parameters (head included, for baseline use) and the
    per-step batch losses.
    """
    if model_config.encoder_kind != "trainable":
        raise ValueError("phase 1 not applicable: encoder is external")
    if len(train.paragraphs) == 0:
        raise ValueError("empty training split")
    if params is None:
        params = mdl.init_parameters(model_config, train_config.seed,
                                     with_head=True)
    trainable = _phase1_trainable(params)
    optimizer = Adam(
        train_config.phase1.learning_rate,
        weight_decay=train_config.phase1.weight_decay,
        decoupled_decay=True,
    )
    seeds = np.random.SeedSequence(train_config.seed).spawn(2)
    shuffle_rng = np.random.default_rng(seeds[0])
    dropout_rng = np.random.default_rng(seeds[1])
    losses: list[float] = []
    for _ in range(train_config.phase1.epochs):
        for batch_idx in make_batches(train.paragraphs, train_config.batch_size,
                                      shuffle_rng):
            batch = [train.paragraphs[i] for i in batch_idx]
            loss, grads = head_loss_and_gradients(
                params, batch, trainable, dropout_rng)
            optimizer.step(params, grads, trainable, train_config.clip_norm)
            losses.append(loss)
    return params, losses


def head_loss_and_gradients(
    params: ModelParameters,
    batch: Sequence[Paragraph],
    trainable: set[str] | None,
    rng: np.random.Generator | None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean clause-level cross entropy over all clauses of a batch."""
    config = params.config
    leaves = mdl._make_leaves(params, trainable)
    drop = mdl._Dropout(config.dropout if rng is not None else 0.0, rng)
    labels = []
    for p in batch:
        for clause in p.clauses:
            if clause.gold is None:
                raise ValueError(f"paragraph {p.id!r} has unlabeled clauses")
            labels.append(int(clause.gold))
    logits = mdl.head_logits_graph(leaves, config, batch, drop)
    total = ad.cross_entropy_with_logits(logits, np.asarray(labels))
    ad.backward(total)
    grads = {
        name: (lf.grad if lf.grad is not None else np.zeros_like(lf.value))
        for name, lf in leaves.items()
    }
    return float(total.value), grads


# ---------------------------------------------------------------------------
# phase 2: full model with frozen encoder
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    params: ModelParameters
    vocabulary: Vocabulary
    log: list[dict]
    best_epoch: int
    step_losses: list[float]
    variant: str


def _log_record(epoch: int, split: str, loss: float | None,
                accuracy: float | None, macro_f1: float | None) -> dict:
    return {
        "epoch": epoch,
        "split": split,
        "loss": loss,
        "accuracy": accuracy,
        "macro_f1": macro_f1,
    }


def _mean_eval_loss(
    params: ModelParameters, corpus: Corpus,
    clause_vectors: dict[str, np.ndarray] | None = None,
) -> float:
    total = 0.0
    count = 0
    for p in corpus.paragraphs:
        trace = mdl.forward(params, p,
                            clause_vectors=_vectors_for(clause_vectors, p))
        total += mdl.loss(trace, [c.gold for c in p.clauses],
                          params.config.aux_loss_weight)
        count += 1
    return total / count


def prepare_splits(
    train: Corpus, valid: Corpus, test: Corpus | None = None,
) -> tuple[Corpus, ...]:
    """Build the vocabulary from the training split and tokenize all splits."""
    vocab = build_vocabulary(
        c.text for p in train.paragraphs for c in p.clauses)
    out = [tokenize_corpus(train, vocab), tokenize_corpus(valid, vocab)]
    if test is not None:
        out.append(tokenize_corpus(test, vocab))
    return tuple(out)


def _check_vocab_capacity(model_config: ModelConfig, vocab: Vocabulary) -> None:
    if model_config.vocab_size < len(vocab):
        raise ValueError(
            f"vocab_size {model_config.vocab_size} is smaller than the "
            f"training vocabulary ({len(vocab)} tokens); size the model "
            "config with training.build_vocabulary on the training split")


def train_full(
    train_config: TrainConfig,
    model_config: ModelConfig,
    train: Corpus,
    valid: Corpus,
    params: ModelParameters | None = None,
    clause_vectors: dict[str, np.ndarray] | None = None,
) -> TrainResult:
    """Two-phase training; returns the best-validation-macro-F1 checkpoint.

    ``train`` and ``valid`` are untokenized corpora; the vocabulary is built
    from the training split. Pass ``params`` to reuse phase-1 weights. The
    local encoder (embedding included) is frozen throughout phase 2. With an
    external encoder, ``clause_vectors`` maps every paragraph id (train and
    valid) to its precomputed (n, 2*hidden) clause vectors; phase 1 is
    skipped and the embedding feeding the global encoder trains in phase 2.
    """
    if len(train.paragraphs) == 0:
        raise ValueError("empty training split")
    train_tok, valid_tok = prepare_splits(train, valid)
    vocab = train_tok.vocabulary
    assert vocab is not None
    _check_vocab_capacity(model_config, vocab)

    log: list[dict] = []
    if params is None:
        if model_config.encoder_kind == "trainable":
            params, phase1_losses = pretrain_local_encoder(
                train_config, model_config, train_tok)
            for e in range(train_config.phase1.epochs):
                per_epoch = len(phase1_losses) // train_config.phase1.epochs
                chunk = phase1_losses[e * per_epoch:(e + 1) * per_epoch]
                log.append(_log_record(e + 1, "train",
                                       float(np.mean(chunk)), None, None))
        else:
            params = mdl.init_parameters(model_config, train_config.seed,
                                         with_head=True)
    else:
        params = ModelParameters(
            model_config, {n: a.copy() for n, a in params.tensors.items()})

    trainable = _phase2_trainable(params)
    optimizer = Adam(train_config.phase2.learning_rate,
                     weight_decay=train_config.phase2.weight_decay)
    seeds = np.random.SeedSequence(train_config.seed + 1).spawn(2)
    shuffle_rng = np.random.default_rng(seeds[0])
    dropout_rng = np.random.default_rng(seeds[1])

    epoch_offset = train_config.phase1.epochs
    best_f1 = -1.0
    best_epoch = -1
    best_params = params.copy()
    step_losses: list[float] = []
    for epoch in range(1, train_config.phase2.epochs + 1):
        epoch_losses = []
        for batch_idx in make_batches(train_tok.paragraphs,
                                      train_config.batch_size, shuffle_rng):
            batch = [train_tok.paragraphs[i] for i in batch_idx]
            vectors = None
            if clause_vectors is not None:
                vectors = [_vectors_for(clause_vectors, p) for p in batch]
            loss, grads = mdl.loss_and_gradients(
                params, batch, trainable=trainable, rng=dropout_rng,
                clause_vectors=vectors)
            optimizer.step(params, grads, trainable, train_config.clip_norm)
            epoch_losses.append(loss)
            step_losses.append(loss)
        report = evaluate(params, valid_tok, clause_vectors=clause_vectors)
        log.append(_log_record(epoch_offset + epoch, "train",
                               float(np.mean(epoch_losses)), None, None))
        log.append(_log_record(epoch_offset + epoch, "valid",
                               _mean_eval_loss(params, valid_tok,
                                               clause_vectors),
                               report.accuracy, report.f1))
        if report.f1 > best_f1:
            best_f1 = report.f1
            best_epoch = epoch_offset + epoch
            best_params = params.copy()
    return TrainResult(best_params, vocab, log, best_epoch, step_losses, "full")


def train_clause_baseline(
    train_config: TrainConfig,
    model_config: ModelConfig,
    train: Corpus,
    valid: Corpus,
) -> TrainResult:
    """Independent-clause baseline: encoder plus linear head, no sequence
    layers, trained for the combined epoch budget of both phases."""
    train_tok, valid_tok = prepare_splits(train, valid)
    vocab = train_tok.vocabulary
    assert vocab is not None
    _check_vocab_capacity(model_config, vocab)
    params = mdl.init_parameters(model_config, train_config.seed,
                                 with_head=True)
    trainable = _phase1_trainable(params)
    optimizer = Adam(
        train_config.phase1.learning_rate,
        weight_decay=train_config.phase1.weight_decay,
        decoupled_decay=True,
    )
    seeds = np.random.SeedSequence(train_config.seed).spawn(2)
    shuffle_rng = np.random.default_rng(seeds[0])
    dropout_rng = np.random.default_rng(seeds[1])
    epochs = train_config.phase1.epochs + train_config.phase2.epochs
    best_f1 = -1.0
    best_epoch = -1
    best_params = params.copy()
    log: list[dict] = []
    step_losses: list[float] = []
    for epoch in range(1, epochs + 1):
        epoch_losses = []
        for batch_idx in make_batches(train_tok.paragraphs,
                                      train_config.batch_size, shuffle_rng):
            batch = [train_tok.paragraphs[i] for i in batch_idx]
            loss, grads = head_loss_and_gradients(
                params, batch, trainable, dropout_rng)
            optimizer.step(params, grads, trainable, train_config.clip_norm)
            epoch_losses.append(loss)
            step_losses.append(loss)
        report = evaluate(params, valid_tok, use_head=True)
        log.append(_log_record(epoch, "train",
                               float(np.mean(epoch_losses)), None, None))
        log.append(_log_record(epoch, "valid", None,
                               report.accuracy, report.f1))
        if report.f1 > best_f1:
            best_f1 = report.f1
            best_epoch = epoch
            best_params = params.copy()
    return TrainResult(best_params, vocab, log, best_epoch, step_losses,
                       "baseline")


# ---------------------------------------------------------------------------
# ablation suite
# ---------------------------------------------------------------------------

def variant_model_config(base: ModelConfig, variant: str) -> ModelConfig:
    if variant == "full":
        return base
    if variant == "no-gc":
        return ModelConfig(**{**base.to_dict(), "use_global_context": False})
    if variant == "no-lr":
        return ModelConfig(**{**base.to_dict(), "use_label_refiner": False})
    if variant == "baseline":
        return base
    raise ValueError(f"unknown variant {variant!r}")


def corpus_checksum(corpus: Corpus) -> str:
    """Stable content hash of a corpus (ids, texts, labels)."""
    h = hashlib.sha256()
    for p in corpus.paragraphs:
        h.update(p.id.encode("utf-8"))
        for c in p.clauses:
            h.update(b"\x00")
            h.update(c.text.encode("utf-8"))
            h.update(b"\x01")
            h.update(c.gold.name.encode() if c.gold is not None else b"-")
    return h.hexdigest()


def run_ablation_suite(
    train_config: TrainConfig,
    model_config: ModelConfig,
    train: Corpus,
    valid: Corpus,
    test: Corpus,
    variants: Sequence[str] = ("full", "no-gc", "no-lr", "baseline"),
) -> list[dict]:
    """Train and evaluate all variants on shared splits and seed.

    Phase-1 weights are trained once and shared by the full and ablated
    models, mirroring the shared frozen encoder they all build on.
    """
    checksum = "+".join(corpus_checksum(c) for c in (train, valid, test))
    pretrained: ModelParameters | None = None
    if model_config.encoder_kind == "trainable" and any(
            v != "baseline" for v in variants):
        train_tok, _ = prepare_splits(train, valid)
        pretrained, _ = pretrain_local_encoder(
            train_config, model_config, train_tok)
    rows = []
    for variant in variants:
        vconfig = variant_model_config(model_config, variant)
        if variant == "baseline":
            result = train_clause_baseline(train_config, vconfig, train, valid)
        else:
            seed_params = None
            if pretrained is not None:
                seed_params = ModelParameters(
                    vconfig, {n: a.copy() for n, a in pretrained.tensors.items()})
            result = train_full(train_config, vconfig, train, valid,
                                params=seed_params)
        test_tok = tokenize_corpus(test, result.vocabulary)
        report = evaluate(result.params, test_tok,
                          use_head=(variant == "baseline"))
        rows.append({
            "variant": variant,
            "accuracy": report.accuracy,
            "precision": report.precision,
            "recall": report.recall,
            "f1": report.f1,
            "best_epoch": result.best_epoch,
            "split_checksum": checksum,
        })
    return rows


def ablation_table(rows: Sequence[dict]) -> str:
    """Tab-separated comparison with accuracy/precision/recall/F1 columns."""
    lines = ["Model\tAccuracy(%)\tPrecision(%)\tRecall(%)\tF1-score(%)"]
    for row in rows:
        lines.append(
            f"{row['variant']}\t{100 * row['accuracy']:.2f}"
            f"\t{100 * row['precision']:.2f}"
            f"\t{100 * row['recall']:.2f}"
            f"\t{100 * row['f1']:.2f}"
        )
    return "\n".join(lines) + "\n"
