"""Sentence-level rationale learner.

A count-based token classifier plays both roles of the select-then-predict
scheme: per-class smoothed token tables score every sentence by its
log-likelihood ratio, the sentence with the largest magnitude is the
rationale, and its sign (plus the class prior) classifies the document.
Training is hard EM over the latent sentence choice: selections maximize the
likelihood of the observed label, token tables are re-fit on the selected
sentences only. A small exploration rate keeps training stochastic; test-time
selection is deterministic and label-free. Losses are in bits.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, replace

import numpy as np

from ._rng import coerce_generator
from .corpus import UNKNOWN_TAG, Dataset, Document

MODEL_FORMAT_VERSION = 1
LOSS_RESOLUTION = 1e-6


@dataclass(frozen=True)
class SelectorTrainConfig:
    em_rounds: int = 10
    smoothing: float = 1.0
    seed: int = 0
    exploration_rate: float = 0.05

    def __post_init__(self):
        if self.em_rounds < 0:
            raise ValueError(f"em_rounds must be >= 0, got {self.em_rounds}")
        if self.smoothing <= 0.0:
            raise ValueError(f"smoothing must be positive, got {self.smoothing}")
        if not 0.0 <= self.exploration_rate <= 1.0:
            raise ValueError(f"exploration_rate must be in [0, 1], got {self.exploration_rate}")


@dataclass
class RationaleModel:
    class_token_logprob: np.ndarray  # (2, V), log2 P(token | class)
    class_prior: np.ndarray  # (2,), log2 prior
    train_rounds: int
    dev_loss: float
    selection_temperature: float = 0.0  # placeholder; selection is always hard

    @property
    def vocab_size(self) -> int:
        return self.class_token_logprob.shape[1]

    def copy(self) -> "RationaleModel":
        return RationaleModel(
            self.class_token_logprob.copy(),
            self.class_prior.copy(),
            self.train_rounds,
            self.dev_loss,
            self.selection_temperature,
        )


@dataclass(frozen=True)
class RationaleChoice:
    doc_id: int
    sentence_index: int
    score: float  # |log-likelihood ratio| of the selected sentence
    predicted_label: int
    loss: float  # NLL of the true label, bits


class _Packed:
    """Flat token/offset arrays for a dataset with a uniform sentence count."""

    __slots__ = ("tokens", "bounds", "lengths", "n_docs", "spd", "labels")

    def __init__(self, ds: Dataset):
        docs = ds.documents
        if not docs:
            raise ValueError("empty dataset")
        spd = docs[0].n_sentences
        sentences = []
        for d in docs:
            if d.n_sentences != spd:
                raise ValueError("all documents must have the same sentence count")
            sentences.extend(d.sentences)
        self.n_docs = len(docs)
        self.spd = spd
        self.tokens = (
            np.concatenate(sentences).astype(np.int64)
            if sentences
            else np.empty(0, dtype=np.int64)
        )
        self.lengths = np.fromiter(
            (len(s) for s in sentences), dtype=np.int64, count=len(sentences)
        )
        self.bounds = np.concatenate(([0], np.cumsum(self.lengths)))
        self.labels = np.fromiter((d.label for d in docs), dtype=np.int64, count=len(docs))


def _take_ranges(values: np.ndarray, starts: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    total = int(lengths.sum())
    if total == 0:
        return values[:0]
    offsets = np.repeat(np.cumsum(lengths) - lengths, lengths)
    idx = np.arange(total) - offsets + np.repeat(starts, lengths)
    return values[idx]


def _vocab_size(ds: Dataset) -> int:
    if ds.spec is not None:
        return ds.spec.total_vocab_size
    top = 0
    for d in ds.documents:
        for s in d.sentences:
            if len(s):
                top = max(top, int(s.max()) + 1)
    return top


def _fit_tables(token_counts: np.ndarray, doc_counts: np.ndarray, smoothing: float):
    if np.any(doc_counts == 0):
        raise ValueError("a label class has no training documents")
    v = token_counts.shape[1]
    smoothed = token_counts + smoothing
    logprob = np.log2(smoothed / smoothed.sum(axis=1, keepdims=True))
    prior = np.log2(doc_counts / doc_counts.sum())
    return logprob, prior


def _sentence_raw_scores(logprob: np.ndarray, packed: _Packed) -> np.ndarray:
    """(n_docs, spd) sums of per-token log ratios toward class 1."""
    llr = logprob[1] - logprob[0]
    per_token = llr[packed.tokens]
    sums = np.add.reduceat(per_token, packed.bounds[:-1])
    return sums.reshape(packed.n_docs, packed.spd)


def _class_token_counts(packed: _Packed, selected: np.ndarray, vocab: int) -> np.ndarray:
    counts = np.zeros((2, vocab), dtype=np.float64)
    global_idx = np.arange(packed.n_docs) * packed.spd + selected
    for c in (0, 1):
        rows = global_idx[packed.labels == c]
        toks = _take_ranges(packed.tokens, packed.bounds[rows], packed.lengths[rows])
        counts[c] = np.bincount(toks, minlength=vocab)
    return counts


def _whole_document_counts(packed: _Packed, vocab: int) -> np.ndarray:
    counts = np.zeros((2, vocab), dtype=np.float64)
    doc_starts = packed.bounds[0 : packed.spd * packed.n_docs : packed.spd]
    doc_lengths = np.add.reduceat(packed.lengths, np.arange(0, len(packed.lengths), packed.spd))
    for c in (0, 1):
        rows = packed.labels == c
        toks = _take_ranges(packed.tokens, doc_starts[rows], doc_lengths[rows])
        counts[c] = np.bincount(toks, minlength=vocab)
    return counts


@dataclass
class BatchEvaluation:
    """Label-free selection plus classification for every document."""

    selected: np.ndarray  # sentence index per doc
    confidence: np.ndarray  # |raw score| of the selected sentence
    raw: np.ndarray  # signed raw score of the selected sentence
    predicted: np.ndarray  # classifier label (prior included)
    loss: np.ndarray  # NLL of the true label, bits


def evaluate_dataset(model: RationaleModel, ds: Dataset) -> BatchEvaluation:
    packed = _Packed(ds)
    raw = _sentence_raw_scores(model.class_token_logprob, packed)
    selected = np.argmax(np.abs(raw), axis=1)
    raw_sel = raw[np.arange(packed.n_docs), selected]
    margin = (model.class_prior[1] - model.class_prior[0]) + raw_sel
    predicted = (margin > 0).astype(np.int64)
    toward_label = np.where(packed.labels == 1, margin, -margin)
    loss = np.logaddexp2(0.0, -toward_label)
    return BatchEvaluation(selected, np.abs(raw_sel), raw_sel, predicted, loss)


def mean_nll_bits(model: RationaleModel, ds: Dataset) -> float:
    return float(evaluate_dataset(model, ds).loss.mean())


def train_selector(
    train_ds: Dataset,
    dev_ds: Dataset,
    cfg: SelectorTrainConfig,
    warm_start: RationaleModel | None = None,
    rng=None,
    round_data=None,
) -> RationaleModel:
    """Hard-EM training.

    Token tables start from whole documents (or from ``warm_start``). Each
    round selects, per training document, the sentence most likely under the
    observed label (overridden by a random sentence at the exploration rate)
    and re-fits the tables on the selections. ``round_data``, when given, maps
    a round index to the dataset to use that round (the augmented-data loop
    resamples counterfactual donors this way). The returned model records the
    mean dev NLL in bits under label-free select-then-predict.
    """
    gen = coerce_generator(cfg.seed if rng is None else rng)
    vocab = _vocab_size(train_ds)
    base_packed = _Packed(train_ds)
    if warm_start is not None:
        if warm_start.vocab_size != vocab:
            raise ValueError("warm start vocabulary size does not match the dataset")
        logprob = warm_start.class_token_logprob.copy()
        prior = warm_start.class_prior.copy()
    else:
        doc_counts = np.bincount(base_packed.labels, minlength=2).astype(float)
        logprob, prior = _fit_tables(_whole_document_counts(base_packed, vocab), doc_counts, cfg.smoothing)

    rounds_run = 0
    for r in range(cfg.em_rounds):
        data = train_ds if round_data is None else round_data(r)
        packed = base_packed if data is train_ds else _Packed(data)
        raw = _sentence_raw_scores(logprob, packed)
        toward_label = np.where(packed.labels[:, None] == 1, raw, -raw)
        selected = np.argmax(toward_label, axis=1)
        explore = gen.random(packed.n_docs) < cfg.exploration_rate
        n_explore = int(explore.sum())
        if n_explore:
            selected = selected.copy()
            selected[explore] = gen.integers(0, packed.spd, size=n_explore)
        doc_counts = np.bincount(packed.labels, minlength=2).astype(float)
        logprob, prior = _fit_tables(
            _class_token_counts(packed, selected, vocab), doc_counts, cfg.smoothing
        )
        rounds_run += 1

    model = RationaleModel(logprob, prior, rounds_run, dev_loss=float("nan"))
    model.dev_loss = mean_nll_bits(model, dev_ds)
    return model


def select_rationale(model: RationaleModel, doc: Document) -> RationaleChoice:
    """Label-free hard selection: the sentence with the largest |log ratio|.
    Ties break to the lowest index; the sign gives the predicted label."""
    if doc.n_sentences == 0:
        raise ValueError("document has no sentences")
    llr = model.class_token_logprob[1] - model.class_token_logprob[0]
    raw = np.array([float(llr[s].sum()) for s in doc.sentences])
    idx = int(np.argmax(np.abs(raw)))
    margin = float(model.class_prior[1] - model.class_prior[0] + raw[idx])
    toward_label = margin if doc.label == 1 else -margin
    loss = float(np.logaddexp2(0.0, -toward_label))
    return RationaleChoice(
        doc_id=doc.doc_id,
        sentence_index=idx,
        score=abs(float(raw[idx])),
        predicted_label=int(raw[idx] > 0),
        loss=loss,
    )


def predict(model: RationaleModel, doc: Document) -> tuple[int, float]:
    """Classify from the selected sentence only; loss is the NLL of the true
    label in bits."""
    choice = select_rationale(model, doc)
    llr = model.class_token_logprob[1] - model.class_token_logprob[0]
    raw = float(llr[doc.sentences[choice.sentence_index]].sum())
    margin = float(model.class_prior[1] - model.class_prior[0] + raw)
    label = int(margin > 0)
    toward_label = margin if doc.label == 1 else -margin
    loss = float(np.logaddexp2(0.0, -toward_label))
    return label, loss


def rationale_precision(model: RationaleModel, ds: Dataset) -> float:
    """Fraction of documents whose selected sentence is the target aspect."""
    ev = evaluate_dataset(model, ds)
    hits = 0
    for i, doc in enumerate(ds.documents):
        aspects = doc.aspect_of_sentence
        a = aspects[int(ev.selected[i])]
        if a == UNKNOWN_TAG:
            raise ValueError(f"document {doc.doc_id} is missing ground-truth aspect tags")
        hits += a == 0
    return hits / len(ds)


@dataclass(frozen=True)
class DegenerationReport:
    passed: bool
    class_bin_freq: np.ndarray  # (2, 10) selected-position deciles per predicted class
    max_bin_gap: float
    first_second_gap: float


def degeneration_check(model: RationaleModel, ds: Dataset) -> DegenerationReport:
    """Positional-collusion guard.

    Selected-sentence positions, normalized by document length, are binned
    into deciles separately for each predicted class. The check fails when
    any bin's class-wise frequencies differ by more than 0.20, or when that
    class-wise divergence itself differs by more than 0.20 between the first
    and second bins (early-position collusion shows up there first).
    """
    ev = evaluate_dataset(model, ds)
    labels = np.fromiter((d.label for d in ds.documents), dtype=np.int64, count=len(ds))
    if len(np.unique(labels)) < 2:
        raise ValueError("degeneration check needs both label classes in the dev split")
    if len(np.unique(ev.predicted)) < 2:
        raise ValueError("degeneration check undefined: all predictions share one class")
    n_sent = np.fromiter((d.n_sentences for d in ds.documents), dtype=np.int64, count=len(ds))
    norm = ev.selected / n_sent
    bins = np.minimum((norm * 10).astype(np.int64), 9)
    freq = np.zeros((2, 10))
    for c in (0, 1):
        member = bins[ev.predicted == c]
        freq[c] = np.bincount(member, minlength=10) / len(member)
    gap = freq[0] - freq[1]
    max_gap = float(np.max(np.abs(gap)))
    first_second = float(abs(gap[0] - gap[1]))
    passed = max_gap <= 0.20 + 1e-12 and first_second <= 0.20 + 1e-12
    return DegenerationReport(passed, freq, max_gap, first_second)


def compare_dev_losses(a: float, b: float) -> int:
    """Order two dev losses at the model-selection resolution; negative means
    a is better."""
    qa = math.floor(a / LOSS_RESOLUTION + 0.5)
    qb = math.floor(b / LOSS_RESOLUTION + 0.5)
    return (qa > qb) - (qa < qb)


def vocabulary_hash(words) -> str:
    return hashlib.sha256("\n".join(words).encode("utf-8")).hexdigest()


def save_model(model: RationaleModel, path, vocab_words=None) -> None:
    np.savez(
        path,
        format_version=np.array(MODEL_FORMAT_VERSION),
        class_token_logprob=model.class_token_logprob,
        class_prior=model.class_prior,
        train_rounds=np.array(model.train_rounds),
        dev_loss=np.array(model.dev_loss),
        vocab_hash=np.array(vocabulary_hash(vocab_words) if vocab_words is not None else ""),
    )


def load_model(path, vocab_words=None) -> RationaleModel:
    data = np.load(path, allow_pickle=False)
    version = int(data["format_version"])
    if version != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {version}")
    stored_hash = str(data["vocab_hash"])
    if vocab_words is not None and stored_hash and stored_hash != vocabulary_hash(vocab_words):
        raise ValueError("model was trained against a different vocabulary")
    return RationaleModel(
        data["class_token_logprob"],
        data["class_prior"],
        int(data["train_rounds"]),
        float(data["dev_loss"]),
    )


def dump_rationales(model: RationaleModel, ds: Dataset, path) -> None:
    ev = evaluate_dataset(model, ds)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["doc_id", "sentence_index", "score", "predicted_label"])
        for i, doc in enumerate(ds.documents):
            writer.writerow(
                [doc.doc_id, int(ev.selected[i]), repr(float(ev.confidence[i])), int(ev.predicted[i])]
            )


__all__ = [
    "LOSS_RESOLUTION",
    "SelectorTrainConfig",
    "RationaleModel",
    "RationaleChoice",
    "BatchEvaluation",
    "evaluate_dataset",
    "mean_nll_bits",
    "train_selector",
    "select_rationale",
    "predict",
    "rationale_precision",
    "DegenerationReport",
    "degeneration_check",
    "compare_dev_losses",
    "vocabulary_hash",
    "save_model",
    "load_model",
    "dump_rationales",
]
