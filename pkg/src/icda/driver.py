"""Iterative counterfactual data augmentation driver.

Each iteration trains candidate selectors on the current training data, picks
one by dev loss (subject to the degeneration guard and, later, a shrinking
rationale-set churn), rebuilds the per-class rationale donor sets from the
original corpus, and regenerates the augmented dataset for the next round.
Counterfactuals are label-flipped copies with the selected rationale sentence
swapped for a donor of the opposite class. Ground-truth annotations stay
hidden from every training-path operation; the test split is consulted only
to report precision per iteration.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ._rng import Seed, coerce_generator, derive, generator
from .corpus import Dataset, ground_truth_hidden, write_dataset
from .rationale import (
    LOSS_RESOLUTION,
    RationaleModel,
    SelectorTrainConfig,
    degeneration_check,
    evaluate_dataset,
    mean_nll_bits,
    rationale_precision,
    train_selector,
)

# stream tags
_TAG_TRAIN = 1
_TAG_CF_TRAIN = 2
_TAG_CF_DEV = 3
_TAG_RESAMPLE = 4

STOP_WARM_START = "warm_start_no_improvement"
STOP_MAX_ITERATIONS = "max_iterations"
STOP_DELTA_A = "delta_a_violation"


@dataclass(frozen=True)
class RationaleEntry:
    tokens: tuple[int, ...]
    source_doc_id: int
    sentence_index: int
    confidence: float

    @property
    def key(self) -> tuple[int, int]:
        return (self.source_doc_id, self.sentence_index)


@dataclass
class RationaleSets:
    """Per-class donor rationales plus the per-document selection map they
    were extracted with."""

    a0: list[RationaleEntry]
    a1: list[RationaleEntry]
    selections: dict[int, int] = field(default_factory=dict)

    def for_class(self, label: int) -> list[RationaleEntry]:
        return self.a1 if label == 1 else self.a0


@dataclass(frozen=True)
class ICDAConfig:
    max_iterations: int = 8
    seeds: tuple[int, ...] = (11, 22, 33)
    confidence_keep_fraction: float = 0.10
    originals_keep_rule: str = "lowest-prediction-error"
    resample_each_round: bool = True
    delta_a_required_decreasing: bool = True
    delta_a_rule: str = "decreasing"  # "decreasing" | "fixed_threshold"

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if not self.seeds:
            raise ValueError("at least one candidate seed is required")
        if not 0.0 < self.confidence_keep_fraction <= 1.0:
            raise ValueError(
                f"confidence_keep_fraction must be in (0, 1], got {self.confidence_keep_fraction}"
            )
        if self.originals_keep_rule != "lowest-prediction-error":
            raise ValueError(f"unknown originals_keep_rule {self.originals_keep_rule!r}")
        if self.delta_a_rule not in ("decreasing", "fixed_threshold"):
            raise ValueError(f"unknown delta_a_rule {self.delta_a_rule!r}")


@dataclass
class IterationRecord:
    k: int
    chosen_seed: int
    dev_loss: float
    delta_a: float
    rationale_precision_test: float
    degeneration_pass: bool
    warm_start_chosen: bool


@dataclass
class ICDATrace:
    iterations: list[IterationRecord] = field(default_factory=list)
    stop_reason: str = ""

    @property
    def precisions(self) -> list[float]:
        return [r.rationale_precision_test for r in self.iterations]

    def method_precisions(self) -> dict[str, float]:
        """Baseline mapping: iteration 0 is plain max-mutual-information
        training, iteration 1 is one augmentation pass, the last accepted
        iteration is the full iterative result."""
        p = self.precisions
        return {"MMI": p[0], "CDA": p[1] if len(p) > 1 else p[0], "ICDA": p[-1]}


def build_rationale_sets(model: RationaleModel, ds: Dataset, cfg: ICDAConfig) -> RationaleSets:
    """Donor sets: selected rationales of correctly predicted documents, the
    top ``confidence_keep_fraction`` by |log ratio| per class."""
    ev = evaluate_dataset(model, ds)
    docs = ds.documents
    selections = {doc.doc_id: int(ev.selected[i]) for i, doc in enumerate(docs)}
    labels = np.fromiter((d.label for d in docs), dtype=np.int64, count=len(docs))
    correct = ev.predicted == labels
    sets: dict[int, list[RationaleEntry]] = {}
    for c in (0, 1):
        idx = np.flatnonzero(correct & (labels == c))
        if idx.size == 0:
            raise ValueError(f"no correctly predicted documents for class {c}")
        doc_ids = np.fromiter((docs[i].doc_id for i in idx), dtype=np.int64, count=idx.size)
        order = np.lexsort((doc_ids, -ev.confidence[idx]))
        keep = max(1, round(cfg.confidence_keep_fraction * idx.size))
        entries = []
        for j in order[:keep]:
            i = int(idx[j])
            sent_idx = int(ev.selected[i])
            entries.append(
                RationaleEntry(
                    tokens=tuple(int(t) for t in docs[i].sentences[sent_idx]),
                    source_doc_id=docs[i].doc_id,
                    sentence_index=sent_idx,
                    confidence=float(ev.confidence[i]),
                )
            )
        sets[c] = entries
    return RationaleSets(a0=sets[0], a1=sets[1], selections=selections)


def infer_counterfactuals(
    ds: Dataset, sets: RationaleSets, rng, selections: dict[int, int] | None = None
) -> list:
    """Label-flipped copies with the selected rationale sentence replaced by
    a uniform donor draw from the opposite class's set."""
    if not sets.a0 or not sets.a1:
        raise ValueError("both donor sets must be nonempty")
    gen = coerce_generator(rng)
    sel = sets.selections if selections is None else selections
    out = []
    for doc in ds.documents:
        if doc.doc_id not in sel:
            raise ValueError(f"no rationale selection recorded for document {doc.doc_id}")
        flipped = 1 - doc.label
        pool = sets.for_class(flipped)
        donor = pool[int(gen.integers(0, len(pool)))]
        out.append(
            doc.with_replaced_sentence(
                sel[doc.doc_id],
                donor.tokens,
                new_doc_id=-doc.doc_id - 1,
                new_label=flipped,
            )
        )
    return out


def assemble_augmented(ds: Dataset, cfs: list, model: RationaleModel, cfg: ICDAConfig) -> Dataset:
    """Size-capped augmentation: the half of the originals with the lowest
    prediction loss (ties by doc id) plus those originals' counterfactuals.
    Output size equals the input size and is class balanced by construction."""
    n = len(ds)
    ev = evaluate_dataset(model, ds)
    doc_ids = np.fromiter((d.doc_id for d in ds.documents), dtype=np.int64, count=n)
    order = np.lexsort((doc_ids, ev.loss))
    n_keep = n - n // 2
    kept = [ds.documents[int(i)] for i in order[:n_keep]]
    by_source = {c.source_doc_id: c for c in cfs}
    paired = []
    for doc in kept[: n // 2]:
        if doc.doc_id not in by_source:
            raise ValueError(f"no counterfactual available for kept document {doc.doc_id}")
        paired.append(by_source[doc.doc_id])
    return Dataset(kept + paired, ds.split, ds.spec)


def set_change(prev: RationaleSets, cur: RationaleSets) -> float:
    """Churn of the rationale sets, keyed by (source doc, sentence index):
    |cur - prev| / |cur|, averaged over the two classes."""
    fractions = []
    for p, c in ((prev.a0, cur.a0), (prev.a1, cur.a1)):
        if not c:
            raise ValueError("current rationale set is empty")
        prev_keys = {e.key for e in p}
        cur_keys = {e.key for e in c}
        fractions.append(len(cur_keys - prev_keys) / len(cur_keys))
    return float(np.mean(fractions))


def _quantized(loss: float) -> int:
    return math.floor(loss / LOSS_RESOLUTION + 0.5)


@dataclass
class _Candidate:
    index: int
    seed_label: int
    warm: bool
    model: RationaleModel
    sets: RationaleSets
    delta_a: float
    degeneration_pass: bool


def _dev_selection_map(model: RationaleModel, ds: Dataset) -> dict[int, int]:
    ev = evaluate_dataset(model, ds)
    return {doc.doc_id: int(ev.selected[i]) for i, doc in enumerate(ds.documents)}


def run_icda(
    ds_train: Dataset,
    ds_dev: Dataset,
    ds_test: Dataset,
    cfg: ICDAConfig,
    sel_cfg: SelectorTrainConfig,
    seed: Seed | None = None,
    out_dir=None,
) -> ICDATrace:
    """Full iterative loop; see the module docstring for the flow.

    Iteration 0 trains one candidate per configured seed on the original
    corpus and keeps the lowest dev loss. Later iterations add a candidate
    warm-started from the previous winner, train on the augmented data with
    donors resampled every round (when configured), score on a frozen
    augmented dev set, require the degeneration guard, and from the second
    counterfactual iteration on require strictly shrinking rationale-set
    churn. Stops when the selected model is the warm-started candidate and
    training failed to improve its dev loss, when no candidate satisfies the
    churn constraint, or at the iteration cap.
    """
    trace = ICDATrace()
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    def train_candidate(data_train, data_dev, k, index, seed_label, warm_model, round_data):
        rng = generator(derive(seed, _TAG_TRAIN, k, index))
        cfg_c = replace(sel_cfg, seed=seed_label)
        with ground_truth_hidden():
            return train_selector(
                data_train, data_dev, cfg_c, warm_start=warm_model, rng=rng, round_data=round_data
            )

    # iteration 0: plain training on the original corpus
    models0 = [
        train_candidate(ds_train, ds_dev, 0, i, s, None, None) for i, s in enumerate(cfg.seeds)
    ]
    best_i = min(range(len(models0)), key=lambda i: (_quantized(models0[i].dev_loss), i))
    current = models0[best_i]
    current_seed = cfg.seeds[best_i]
    with ground_truth_hidden():
        current_sets = build_rationale_sets(current, ds_train, cfg)
    record = IterationRecord(
        k=0,
        chosen_seed=current_seed,
        dev_loss=current.dev_loss,
        delta_a=float("nan"),
        rationale_precision_test=rationale_precision(current, ds_test),
        degeneration_pass=degeneration_check(current, ds_dev).passed,
        warm_start_chosen=False,
    )
    trace.iterations.append(record)
    if out_path is not None:
        _write_iteration_artifacts(out_path, 0, None, current_sets)

    prev_delta = float("nan")
    stop_reason = STOP_MAX_ITERATIONS
    for k in range(1, cfg.max_iterations):
        it_seed = derive(seed, _TAG_CF_TRAIN, k)
        with ground_truth_hidden():
            cf_train = infer_counterfactuals(ds_train, current_sets, generator(it_seed, 0))
            aug_train = assemble_augmented(ds_train, cf_train, current, cfg)
            dev_sel = _dev_selection_map(current, ds_dev)
            cf_dev = infer_counterfactuals(
                ds_dev, current_sets, generator(derive(seed, _TAG_CF_DEV, k)), selections=dev_sel
            )
            # dev keeps every original plus its counterfactual: the size cap is
            # a training-cost measure and would drop exactly the hard dev docs
            # that make candidate losses comparable
            aug_dev = Dataset(ds_dev.documents + cf_dev, ds_dev.split, ds_dev.spec)
        warm_init_loss = mean_nll_bits(current, aug_dev)

        kept_originals = [d for d in aug_train.documents if not d.is_counterfactual]
        kept_ds = Dataset(kept_originals, ds_train.split, ds_train.spec)

        def make_round_data(cand_index, iteration=k, donors=current_sets, base=kept_ds):
            if not cfg.resample_each_round:
                return None

            def round_data(r):
                rng = generator(derive(seed, _TAG_RESAMPLE, iteration, cand_index, r))
                with ground_truth_hidden():
                    cfs = infer_counterfactuals(base, donors, rng)
                return Dataset(base.documents + cfs, base.split, base.spec)

            return round_data

        candidates = []
        labels_and_warm = [(s, False) for s in cfg.seeds] + [(current_seed, True)]
        for index, (seed_label, warm) in enumerate(labels_and_warm):
            model = train_candidate(
                aug_train,
                aug_dev,
                k,
                index,
                seed_label,
                current if warm else None,
                make_round_data(index),
            )
            with ground_truth_hidden():
                sets = build_rationale_sets(model, ds_train, cfg)
            candidates.append(
                _Candidate(
                    index=index,
                    seed_label=seed_label,
                    warm=warm,
                    model=model,
                    sets=sets,
                    delta_a=set_change(current_sets, sets),
                    degeneration_pass=degeneration_check(model, ds_dev).passed,
                )
            )

        eligible = candidates
        if k >= 2 and cfg.delta_a_required_decreasing:
            if cfg.delta_a_rule == "decreasing":
                eligible = [c for c in candidates if c.delta_a < prev_delta]
            else:
                eligible = [c for c in candidates if c.delta_a < 1.0]
            if not eligible:
                stop_reason = STOP_DELTA_A
                break
        chosen = min(
            eligible, key=lambda c: (not c.degeneration_pass, _quantized(c.model.dev_loss), c.index)
        )
        if not chosen.degeneration_pass:
            warnings.warn(
                f"iteration {k}: no candidate passed the degeneration guard; "
                "falling back to the lowest dev loss",
                RuntimeWarning,
                stacklevel=2,
            )
        warm_candidate = candidates[-1]
        warm_improved = warm_candidate.model.dev_loss < warm_init_loss - LOSS_RESOLUTION
        converged = chosen.warm and not warm_improved

        current = chosen.model
        current_sets = chosen.sets
        current_seed = chosen.seed_label
        prev_delta = chosen.delta_a
        trace.iterations.append(
            IterationRecord(
                k=k,
                chosen_seed=chosen.seed_label,
                dev_loss=chosen.model.dev_loss,
                delta_a=chosen.delta_a,
                rationale_precision_test=rationale_precision(chosen.model, ds_test),
                degeneration_pass=chosen.degeneration_pass,
                warm_start_chosen=chosen.warm,
            )
        )
        if out_path is not None:
            _write_iteration_artifacts(out_path, k, aug_train, current_sets)
        if converged:
            stop_reason = STOP_WARM_START
            break

    trace.stop_reason = stop_reason
    if out_path is not None:
        write_trace_csv(trace, out_path / "trace.csv")
    return trace


def _write_iteration_artifacts(out_path: Path, k: int, aug_train, sets: RationaleSets) -> None:
    it_dir = out_path / f"iter{k:02d}"
    it_dir.mkdir(parents=True, exist_ok=True)
    if aug_train is not None:
        write_dataset(aug_train, it_dir / "augmented_train.jsonl")
    with open(it_dir / "rationale_sets.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", "source_doc_id", "sentence_index", "confidence"])
        for label, entries in ((0, sets.a0), (1, sets.a1)):
            for e in entries:
                writer.writerow([label, e.source_doc_id, e.sentence_index, repr(e.confidence)])


def write_trace_csv(trace: ICDATrace, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "k",
                "seed",
                "dev_loss_bits",
                "delta_a",
                "precision_test",
                "degeneration_pass",
                "warm_start",
                "stop_reason",
            ]
        )
        last = len(trace.iterations) - 1
        for i, r in enumerate(trace.iterations):
            writer.writerow(
                [
                    r.k,
                    r.chosen_seed,
                    repr(r.dev_loss),
                    "" if math.isnan(r.delta_a) else repr(r.delta_a),
                    repr(r.rationale_precision_test),
                    str(r.degeneration_pass).lower(),
                    str(r.warm_start_chosen).lower(),
                    trace.stop_reason if i == last else "",
                ]
            )


__all__ = [
    "STOP_WARM_START",
    "STOP_MAX_ITERATIONS",
    "STOP_DELTA_A",
    "RationaleEntry",
    "RationaleSets",
    "ICDAConfig",
    "IterationRecord",
    "ICDATrace",
    "build_rationale_sets",
    "infer_counterfactuals",
    "assemble_augmented",
    "set_change",
    "run_icda",
    "write_trace_csv",
]
