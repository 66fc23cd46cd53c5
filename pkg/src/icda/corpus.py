"""Synthetic multi-aspect review corpus with controllable label correlations.

Each document is one sentence per aspect. Aspect 0 is the target signal: its
sentence's sentiment agrees with the document label at rate ``p_target``.
The remaining aspects agree at their ``p_spurious`` rates. Sentences are bags
of token ids drawn from pairwise-disjoint aspect vocabularies (identity words
plus per-polarity sentiment words) and a shared neutral pool, so aspect and
sentiment are decodable from tokens alone.

Aspect and sentiment annotations are ground truth for evaluation only. Code
paths that must never consult them run inside ``ground_truth_hidden()``,
which turns any annotation access into an error.
"""

from __future__ import annotations

import contextvars
import json
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from ._rng import coerce_generator

UNKNOWN_TAG = -1

_GT_HIDDEN = contextvars.ContextVar("icda_ground_truth_hidden", default=False)


class GroundTruthAccessError(RuntimeError):
    """Ground-truth annotations were read inside a hidden-annotation region."""


@contextmanager
def ground_truth_hidden():
    """Forbid reads of aspect/sentiment annotations inside the block."""
    token = _GT_HIDDEN.set(True)
    try:
        yield
    finally:
        _GT_HIDDEN.reset(token)


def _guard():
    if _GT_HIDDEN.get():
        raise GroundTruthAccessError(
            "ground-truth aspect/sentiment annotations are hidden in this context"
        )


@dataclass(frozen=True)
class CorpusSpec:
    """Generation parameters; probabilities are agreement rates with the label."""

    n_docs: int
    n_aspects: int = 3
    sentences_per_aspect: int = 1
    p_target: float = 0.95
    p_spurious: tuple[float, ...] = (0.9, 0.5)
    vocab_size_per_aspect: int = 12
    sentiment_words_per_aspect: int = 50
    neutral_words_shared: int = 30
    sentence_length: tuple[int, int] = (5, 9)
    shuffle_sentences: bool = True
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "p_spurious", tuple(float(p) for p in self.p_spurious))
        object.__setattr__(self, "sentence_length", tuple(int(v) for v in self.sentence_length))
        if self.n_docs < 1:
            raise ValueError(f"n_docs must be >= 1, got {self.n_docs}")
        if self.n_aspects < 2:
            raise ValueError(f"n_aspects must be >= 2, got {self.n_aspects}")
        if self.sentences_per_aspect != 1:
            raise ValueError("only one sentence per aspect is supported")
        if len(self.p_spurious) != self.n_aspects - 1:
            raise ValueError(
                f"p_spurious must list one rate per non-target aspect "
                f"({self.n_aspects - 1}), got {len(self.p_spurious)}"
            )
        for name, p in [("p_target", self.p_target)] + [
            (f"p_spurious[{i}]", p) for i, p in enumerate(self.p_spurious)
        ]:
            if not 0.5 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0.5, 1], got {p!r}")
        if self.vocab_size_per_aspect < 1 or self.sentiment_words_per_aspect < 1:
            raise ValueError(
                "aspect vocabularies need at least one identity word and one "
                "sentiment word per polarity to stay disjoint and decodable"
            )
        if self.neutral_words_shared < 1:
            raise ValueError("neutral pool must have at least one word")
        lo, hi = self.sentence_length
        if lo < 3 or hi < lo:
            raise ValueError(
                f"sentence_length must satisfy 3 <= lo <= hi, got ({lo}, {hi})"
            )

    @property
    def agreement_rates(self) -> tuple[float, ...]:
        return (self.p_target,) + self.p_spurious

    # --- vocabulary layout: [neutral | aspect0: ids, neg, pos | aspect1: ...]

    @property
    def aspect_block_size(self) -> int:
        return self.vocab_size_per_aspect + 2 * self.sentiment_words_per_aspect

    @property
    def total_vocab_size(self) -> int:
        return self.neutral_words_shared + self.n_aspects * self.aspect_block_size

    def aspect_word_start(self, aspect: int) -> int:
        return self.neutral_words_shared + aspect * self.aspect_block_size

    def polarity_word_start(self, aspect: int, sentiment: int) -> int:
        # negative pool first, positive second
        return (
            self.aspect_word_start(aspect)
            + self.vocab_size_per_aspect
            + sentiment * self.sentiment_words_per_aspect
        )

    def token_word(self, token_id: int) -> str:
        if 0 <= token_id < self.neutral_words_shared:
            return f"filler{token_id}"
        off = token_id - self.neutral_words_shared
        a, r = divmod(off, self.aspect_block_size)
        if a >= self.n_aspects:
            raise ValueError(f"token id {token_id} outside vocabulary")
        if r < self.vocab_size_per_aspect:
            return f"a{a}-term{r}"
        r -= self.vocab_size_per_aspect
        pol, idx = divmod(r, self.sentiment_words_per_aspect)
        return f"a{a}-{'pos' if pol else 'neg'}{idx}"

    def vocabulary(self) -> list[str]:
        return [self.token_word(t) for t in range(self.total_vocab_size)]


class Document:
    """One review: ordered sentences of token ids plus a binary label.

    ``aspect_of_sentence`` / ``sentiment_of_sentence`` are evaluation-only
    annotations guarded by ``ground_truth_hidden``.
    """

    __slots__ = (
        "doc_id",
        "sentences",
        "label",
        "is_counterfactual",
        "source_doc_id",
        "_aspects",
        "_sentiments",
    )

    def __init__(
        self,
        doc_id: int,
        sentences,
        aspects,
        sentiments,
        label: int,
        is_counterfactual: bool = False,
        source_doc_id: int | None = None,
    ):
        self.doc_id = int(doc_id)
        self.sentences = tuple(np.asarray(s, dtype=np.int32) for s in sentences)
        self._aspects = tuple(int(a) for a in aspects)
        self._sentiments = tuple(int(s) for s in sentiments)
        if len(self._aspects) != len(self.sentences) or len(self._sentiments) != len(
            self.sentences
        ):
            raise ValueError("annotation lists must match the sentence count")
        if label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {label!r}")
        self.label = int(label)
        self.is_counterfactual = bool(is_counterfactual)
        self.source_doc_id = None if source_doc_id is None else int(source_doc_id)

    @property
    def n_sentences(self) -> int:
        return len(self.sentences)

    @property
    def aspect_of_sentence(self) -> tuple[int, ...]:
        _guard()
        return self._aspects

    @property
    def sentiment_of_sentence(self) -> tuple[int, ...]:
        _guard()
        return self._sentiments

    def with_replaced_sentence(
        self, index: int, tokens, new_doc_id: int, new_label: int
    ) -> "Document":
        """Counterfactual copy: one sentence swapped, label set, provenance
        recorded. The inserted sentence's annotations are unknown by
        construction (the pipeline may not look them up)."""
        if not 0 <= index < self.n_sentences:
            raise IndexError(f"sentence index {index} out of range")
        sentences = list(self.sentences)
        sentences[index] = np.asarray(tokens, dtype=np.int32)
        aspects = list(self._aspects)
        sentiments = list(self._sentiments)
        aspects[index] = UNKNOWN_TAG
        sentiments[index] = UNKNOWN_TAG
        return Document(
            new_doc_id,
            sentences,
            aspects,
            sentiments,
            new_label,
            is_counterfactual=True,
            source_doc_id=self.doc_id,
        )

    def __repr__(self):
        kind = "counterfactual" if self.is_counterfactual else "original"
        return f"Document(id={self.doc_id}, label={self.label}, {kind}, {self.n_sentences} sentences)"


@dataclass
class Dataset:
    documents: list[Document]
    split: str
    spec: CorpusSpec | None = None

    def __len__(self) -> int:
        return len(self.documents)

    def __iter__(self):
        return iter(self.documents)

    def labels(self) -> np.ndarray:
        return np.fromiter((d.label for d in self.documents), dtype=np.int64, count=len(self))

    def class_counts(self) -> tuple[int, int]:
        lab = self.labels()
        return int(np.sum(lab == 0)), int(np.sum(lab == 1))


@dataclass(frozen=True)
class CorpusStats:
    """Empirical agreement rates and per-aspect mutual information (bits)."""

    agreement: tuple[float, ...]
    mi_bits: tuple[float, ...]
    n_documents: int

    @property
    def delta_bits(self) -> float:
        return self.mi_bits[0] - self.mi_bits[1]

    def theta(self):
        from .probmodel import ThetaSpec

        return ThetaSpec(self.agreement[0], self.agreement[1])


def _balanced_labels(n: int, gen) -> np.ndarray:
    labels = np.zeros(n, dtype=np.int64)
    labels[: n // 2] = 1
    return gen.permutation(labels)


def _generate_split(spec: CorpusSpec, n: int, id_start: int, split: str, gen) -> Dataset:
    n_asp = spec.n_aspects
    rates = np.asarray(spec.agreement_rates)
    lo, hi = spec.sentence_length

    labels = _balanced_labels(n, gen)
    agree = gen.random((n, n_asp)) < rates[None, :]
    sentiments = np.where(agree, labels[:, None], 1 - labels[:, None])
    lengths = gen.integers(lo, hi + 1, size=(n, n_asp))
    k_pol = np.maximum(1, lengths // 4)
    k_asp = np.maximum(1, lengths // 4)
    k_neu = lengths - k_pol - k_asp

    # aspect-identity tokens
    asp_base = np.array([spec.aspect_word_start(a) for a in range(n_asp)])
    flat_asp_counts = k_asp.ravel()
    asp_tokens = np.repeat(np.tile(asp_base, n), flat_asp_counts) + gen.integers(
        0, spec.vocab_size_per_aspect, int(flat_asp_counts.sum())
    )
    # polarity tokens, pool chosen by the sentence's sentiment
    pol_base = np.array(
        [[spec.polarity_word_start(a, s) for a in range(n_asp)] for s in (0, 1)]
    )
    sent_base = np.where(sentiments == 1, pol_base[1][None, :], pol_base[0][None, :])
    flat_pol_counts = k_pol.ravel()
    pol_tokens = np.repeat(sent_base.ravel(), flat_pol_counts) + gen.integers(
        0, spec.sentiment_words_per_aspect, int(flat_pol_counts.sum())
    )
    # shared neutral tokens
    flat_neu_counts = k_neu.ravel()
    neu_tokens = gen.integers(0, spec.neutral_words_shared, int(flat_neu_counts.sum()))

    if spec.shuffle_sentences:
        order = gen.permuted(np.broadcast_to(np.arange(n_asp), (n, n_asp)).copy(), axis=1)
    else:
        order = np.broadcast_to(np.arange(n_asp), (n, n_asp))

    asp_off = np.concatenate(([0], np.cumsum(flat_asp_counts)))
    pol_off = np.concatenate(([0], np.cumsum(flat_pol_counts)))
    neu_off = np.concatenate(([0], np.cumsum(flat_neu_counts)))

    docs = []
    for i in range(n):
        row = i * n_asp
        built = []
        for a in range(n_asp):
            j = row + a
            built.append(
                np.concatenate(
                    (
                        asp_tokens[asp_off[j] : asp_off[j + 1]],
                        pol_tokens[pol_off[j] : pol_off[j + 1]],
                        neu_tokens[neu_off[j] : neu_off[j + 1]],
                    )
                )
            )
        perm = order[i]
        docs.append(
            Document(
                id_start + i,
                [built[a] for a in perm],
                perm,
                sentiments[i, perm],
                int(labels[i]),
            )
        )
    return Dataset(docs, split, spec)


def generate_corpus(spec: CorpusSpec, rng=None) -> tuple[Dataset, Dataset, Dataset]:
    """Disjoint train/dev/test splits; train has ``n_docs`` documents, dev and
    test each 20% of that. Deterministic given the spec seed (or an explicit
    stream)."""
    gen = coerce_generator(spec.seed if rng is None else rng)
    n_train = spec.n_docs
    n_dev = max(1, round(0.2 * n_train))
    n_test = max(1, round(0.2 * n_train))
    train = _generate_split(spec, n_train, 0, "train", gen)
    dev = _generate_split(spec, n_dev, n_train, "dev", gen)
    test = _generate_split(spec, n_test, n_train + n_dev, "test", gen)
    return train, dev, test


def corpus_stats(ds: Dataset) -> CorpusStats:
    """Empirical agreement and mutual information per aspect. Only defined for
    generated (non-augmented) datasets with both label classes present."""
    if len(ds) == 0:
        raise ValueError("empty dataset")
    if any(d.is_counterfactual for d in ds.documents):
        raise ValueError("corpus_stats requires a generated dataset without counterfactuals")
    n_asp = max(max(d.aspect_of_sentence) for d in ds.documents) + 1
    joint = np.zeros((n_asp, 2, 2), dtype=np.int64)  # (aspect, sentiment, label)
    for d in ds.documents:
        seen = 0
        for a, s in zip(d.aspect_of_sentence, d.sentiment_of_sentence):
            if a == UNKNOWN_TAG or s == UNKNOWN_TAG:
                raise ValueError("dataset contains unknown annotations")
            joint[a, s, d.label] += 1
            seen += 1
        if seen != n_asp:
            raise ValueError("every document must carry one sentence per aspect")
    n = len(ds)
    if joint[0, :, 0].sum() == 0 or joint[0, :, 1].sum() == 0:
        raise ValueError("single-class dataset: conditional probabilities undefined")
    agreement = []
    mi = []
    for a in range(n_asp):
        tab = joint[a].astype(float) / n
        agreement.append(float(tab[0, 0] + tab[1, 1]))
        ps = tab.sum(axis=1)
        py = tab.sum(axis=0)
        if np.any(ps == 0.0):
            raise ValueError(f"aspect {a} has a single sentiment value: MI undefined")
        bits = 0.0
        for s in (0, 1):
            for y in (0, 1):
                if tab[s, y] > 0.0:
                    bits += tab[s, y] * np.log2(tab[s, y] / (ps[s] * py[y]))
        mi.append(float(bits))
    return CorpusStats(tuple(agreement), tuple(mi), n)


# --- serialization: one JSON document per line, fixed field order


def document_to_record(doc: Document) -> dict:
    return {
        "doc_id": doc.doc_id,
        "label": doc.label,
        "is_counterfactual": doc.is_counterfactual,
        "source_doc_id": doc.source_doc_id,
        "sentences": [
            {"tokens": [int(t) for t in sent], "aspect": a, "sentiment": s}
            for sent, a, s in zip(doc.sentences, doc._aspects, doc._sentiments)
        ],
    }


def record_to_document(rec: dict) -> Document:
    sents = rec["sentences"]
    return Document(
        rec["doc_id"],
        [s["tokens"] for s in sents],
        [s["aspect"] for s in sents],
        [s["sentiment"] for s in sents],
        rec["label"],
        is_counterfactual=rec.get("is_counterfactual", False),
        source_doc_id=rec.get("source_doc_id"),
    )


def write_dataset(ds: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in ds.documents:
            fh.write(json.dumps(document_to_record(doc)) + "\n")


def read_dataset(path, split: str, spec: CorpusSpec | None = None) -> Dataset:
    docs = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                docs.append(record_to_document(json.loads(line)))
    return Dataset(docs, split, spec)


def write_vocabulary(spec: CorpusSpec, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(spec.vocabulary(), fh, indent=0)
        fh.write("\n")


def render_documents(ds: Dataset, spec: CorpusSpec, path, limit: int | None = None) -> None:
    """Human-readable export: tokens rendered through the vocabulary."""
    words = spec.vocabulary()
    with open(path, "w", encoding="utf-8") as fh:
        for doc in ds.documents[: limit if limit is not None else len(ds)]:
            head = f"#{doc.doc_id} label={doc.label}"
            if doc.is_counterfactual:
                head += f" counterfactual(source={doc.source_doc_id})"
            fh.write(head + "\n")
            for sent in doc.sentences:
                fh.write("  " + " ".join(words[t] for t in sent) + "\n")


__all__ = [
    "UNKNOWN_TAG",
    "GroundTruthAccessError",
    "ground_truth_hidden",
    "CorpusSpec",
    "Document",
    "Dataset",
    "CorpusStats",
    "generate_corpus",
    "corpus_stats",
    "document_to_record",
    "record_to_document",
    "write_dataset",
    "read_dataset",
    "write_vocabulary",
    "render_documents",
]
