from __future__ import annotations

import numpy as np
import pytest

from fraudelements.corpus import Clause, Corpus, ElementLabel, Paragraph


def labeled_paragraph(pid: str, labels, texts=None) -> Paragraph:
    """Paragraph with gold labels; texts default to two-char dummies."""
    labels = [ElementLabel[l] if isinstance(l, str) else l for l in labels]
    if texts is None:
        texts = [f"x{i}" for i in range(len(labels))]
    return Paragraph(pid, tuple(
        Clause(text=t, gold=lab) for t, lab in zip(texts, labels)))


def labeled_corpus(label_lists) -> Corpus:
    return Corpus(tuple(
        labeled_paragraph(f"p{i}", labels)
        for i, labels in enumerate(label_lists)))


def tokenized_paragraph(pid: str, token_lists, labels=None) -> Paragraph:
    labels = labels or [ElementLabel.NONE] * len(token_lists)
    labels = [ElementLabel[l] if isinstance(l, str) else l for l in labels]
    return Paragraph(pid, tuple(
        Clause(text="x" * len(toks), tokens=tuple(toks), gold=lab)
        for toks, lab in zip(token_lists, labels)))


def random_tokenized_paragraph(pid, rng, vocab_size, n_clauses=None,
                               max_len=6) -> Paragraph:
    n = n_clauses or int(rng.integers(2, 6))
    token_lists = [
        [int(t) for t in rng.integers(2, vocab_size, size=rng.integers(1, max_len))]
        for _ in range(n)
    ]
    labels = [ElementLabel(int(rng.integers(0, 7))) for _ in range(n)]
    return tokenized_paragraph(pid, token_lists, labels)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
