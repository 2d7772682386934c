"""Corpus and task ingestion, holdout splitting, per-episode sub-task
sampling, and the planted-marker synthetic task generator.

JSON Lines schemas:
  span_qa:        {"id", "context", "qas": [{"question", "answer_start", "answer_text"}]}
  classification: {"id", "text", "label"}
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

SPAN_QA = "span_qa"
CLASSIFICATION = "classification"


@dataclass(frozen=True)
class RawContext:
    context_id: str
    text: str


@dataclass(frozen=True)
class QaExample:
    context_id: str
    question: str
    answer_start: int
    answer_text: str


@dataclass(frozen=True)
class ClsExample:
    context_id: str
    label: str


@dataclass
class TaskDataset:
    kind: str
    examples: list
    labels: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.examples)


@dataclass
class Task:
    """A full task: pretraining contexts plus train/test supervision.

    ``corpus`` lists train-side contexts first; only those are eligible
    for pretraining. Test-side contexts exist solely so their examples
    can be evaluated.
    """

    corpus: list[RawContext]
    train: TaskDataset
    test: TaskDataset | None = None
    n_train_contexts: int | None = None

    def pretrain_corpus(self) -> list[RawContext]:
        n = self.n_train_contexts if self.n_train_contexts is not None else len(self.corpus)
        return self.corpus[:n]

    def context_map(self) -> dict[str, RawContext]:
        return {c.context_id: c for c in self.corpus}


@dataclass
class SubTask:
    """An episode-sized sample: contexts to pretrain on, a capped training
    split, and the run-constant validation set."""

    context_ids: list[str]
    train: list
    val: list


# ---------------------------------------------------------------------------
# Loading and writing
# ---------------------------------------------------------------------------

def load_jsonl(path: str | Path, kind: str) -> tuple[list[RawContext], TaskDataset]:
    path = Path(path)
    if kind not in (SPAN_QA, CLASSIFICATION):
        raise ConfigError(f"unknown dataset kind {kind!r}")
    if not path.exists():
        raise DataError(f"no such file: {path}")
    corpus: list[RawContext] = []
    examples: list = []
    labels: list[str] = []
    seen_ids: set[str] = set()
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise DataError(f"{path}:{lineno}: invalid JSON ({e.msg})")
        if kind == SPAN_QA:
            _require(rec, ["id", "context", "qas"], path, lineno)
            cid = rec["id"]
            if cid in seen_ids:
                raise DataError(f"{path}:{lineno}: duplicate context id {cid!r}")
            seen_ids.add(cid)
            corpus.append(RawContext(cid, rec["context"]))
            for qa in rec["qas"]:
                _require(qa, ["question", "answer_start", "answer_text"], path, lineno)
                start, text = qa["answer_start"], qa["answer_text"]
                if not (0 <= start and start + len(text) <= len(rec["context"])):
                    raise DataError(f"{path}:{lineno}: answer span outside context")
                if rec["context"][start:start + len(text)] != text:
                    raise DataError(f"{path}:{lineno}: answer_text does not match context at answer_start")
                examples.append(QaExample(cid, qa["question"], start, text))
        else:
            _require(rec, ["id", "text", "label"], path, lineno)
            cid = rec["id"]
            if cid in seen_ids:
                raise DataError(f"{path}:{lineno}: duplicate context id {cid!r}")
            seen_ids.add(cid)
            corpus.append(RawContext(cid, rec["text"]))
            if rec["label"] not in labels:
                labels.append(rec["label"])
            examples.append(ClsExample(cid, rec["label"]))
    labels.sort()
    return corpus, TaskDataset(kind, examples, labels)


def _require(rec: dict, keys: list[str], path, lineno: int) -> None:
    for key in keys:
        if key not in rec:
            raise DataError(f"{path}:{lineno}: missing required field {key!r}")


def write_jsonl(path: str | Path, corpus: list[RawContext], dataset: TaskDataset) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    if dataset.kind == SPAN_QA:
        by_ctx: dict[str, list[QaExample]] = {c.context_id: [] for c in corpus}
        for ex in dataset.examples:
            by_ctx[ex.context_id].append(ex)
        for c in corpus:
            qas = [{"question": e.question, "answer_start": e.answer_start,
                    "answer_text": e.answer_text} for e in by_ctx[c.context_id]]
            lines.append(json.dumps({"id": c.context_id, "context": c.text, "qas": qas},
                                    sort_keys=True))
    else:
        label_by_ctx = {e.context_id: e.label for e in dataset.examples}
        for c in corpus:
            lines.append(json.dumps({"id": c.context_id, "text": c.text,
                                     "label": label_by_ctx[c.context_id]}, sort_keys=True))
    path.write_text("\n".join(lines) + "\n")


def load_task(data_dir: str | Path, kind: str) -> Task:
    """Read train.jsonl (+ optional test.jsonl) from a data directory."""
    data_dir = Path(data_dir)
    corpus, train = load_jsonl(data_dir / "train.jsonl", kind)
    n_train = len(corpus)
    test = None
    if (data_dir / "test.jsonl").exists():
        test_corpus, test = load_jsonl(data_dir / "test.jsonl", kind)
        corpus = corpus + test_corpus
    return Task(corpus=corpus, train=train, test=test, n_train_contexts=n_train)


# ---------------------------------------------------------------------------
# Splits and sub-task sampling
# ---------------------------------------------------------------------------

def split_holdout(examples: list, val_size: int, seed: int) -> tuple[list, list]:
    """Disjoint seeded split; the union equals the input."""
    if val_size >= len(examples):
        raise DataError(f"val_size {val_size} must be < dataset size {len(examples)}")
    order = np.random.default_rng([seed, 104]).permutation(len(examples))
    val_idx = set(order[:val_size].tolist())
    train = [ex for i, ex in enumerate(examples) if i not in val_idx]
    val = [examples[i] for i in order[:val_size]]
    return train, val


def sample_subtask(corpus: list[RawContext], train_pool: list, val: list,
                   pretrain_size: int, max_train_size: int,
                   rng: np.random.Generator) -> SubTask:
    """Draw the per-episode sub-task: contexts without replacement plus a
    capped training sample. The validation set is passed through fixed."""
    if pretrain_size > len(corpus):
        raise DataError(
            f"sampled pretrain size {pretrain_size} exceeds corpus size {len(corpus)}")
    ctx_idx = rng.choice(len(corpus), size=pretrain_size, replace=False)
    context_ids = [corpus[i].context_id for i in ctx_idx]
    if max_train_size < len(train_pool):
        tr_idx = rng.choice(len(train_pool), size=max_train_size, replace=False)
        train = [train_pool[i] for i in tr_idx]
    else:
        train = list(train_pool)
    return SubTask(context_ids=context_ids, train=train, val=list(val))


# ---------------------------------------------------------------------------
# Synthetic planted-marker tasks
# ---------------------------------------------------------------------------

@dataclass
class SynthConfig:
    kind: str = SPAN_QA
    n_contexts: int = 400
    context_len: int = 40
    marker_vocab_size: int = 12
    filler_vocab_size: int = 80
    markers_per_context: int = 3
    marker_repeats: int = 2
    marker_max_gap: int = 4
    questions_per_context: int = 2
    n_families: int = 4

    def validate(self) -> None:
        if self.marker_vocab_size < 2:
            raise ConfigError("marker_vocab_size must be >= 2")
        if self.kind not in (SPAN_QA, CLASSIFICATION):
            raise ConfigError(f"unknown synthetic kind {self.kind!r}")
        occupied = self.markers_per_context * self.marker_repeats
        if occupied / self.context_len >= 0.2:
            raise ConfigError(
                f"markers would occupy {occupied}/{self.context_len} >= 20% of each context")
        if self.questions_per_context > self.markers_per_context:
            raise ConfigError("questions_per_context exceeds markers_per_context")


_LETTERS = "abcdefghijklmnopqrstuvwxyz"


def _lexicon(rng: np.random.Generator, size: int, lo: int, hi: int, taken: set[str]) -> list[str]:
    out: list[str] = []
    while len(out) < size:
        n = int(rng.integers(lo, hi + 1))
        word = "".join(_LETTERS[i] for i in rng.integers(0, 26, size=n))
        if word not in taken:
            taken.add(word)
            out.append(word)
    return out


def gen_synthetic_task(cfg: SynthConfig, seed: int) -> tuple[list[RawContext], TaskDataset]:
    """Planted-signal corpus: filler text with paired marker tokens.

    Each context plants ``markers_per_context`` distinct sigil-marked
    markers, each repeated ``marker_repeats`` times within a short window,
    so a masked marker occurrence is predictable from its twin. Questions
    name a planted marker and the answer is that marker's first occurrence,
    which makes marker tokens exactly the downstream-relevant content.
    """
    cfg.validate()
    rng = np.random.default_rng([seed, 7001])
    taken: set[str] = set()
    filler = _lexicon(rng, cfg.filler_vocab_size, 3, 6, taken)
    markers = ["@" + w.capitalize() for w in _lexicon(rng, cfg.marker_vocab_size, 4, 5, taken)]

    corpus: list[RawContext] = []
    examples: list = []
    labels = [f"fam{j}" for j in range(cfg.n_families)] if cfg.kind == CLASSIFICATION else []

    for i in range(cfg.n_contexts):
        L = cfg.context_len
        words = [filler[j] for j in rng.integers(0, len(filler), size=L)]
        chosen = rng.choice(cfg.marker_vocab_size, size=cfg.markers_per_context, replace=False)
        occupied: set[int] = set()
        for mk in chosen:
            placed = False
            for _attempt in range(200):
                gap = int(rng.integers(1, cfg.marker_max_gap + 1))
                span = gap * (cfg.marker_repeats - 1)
                first = int(rng.integers(0, L - span))
                slots = [first + r * gap for r in range(cfg.marker_repeats)]
                if not any(s in occupied for s in slots):
                    occupied.update(slots)
                    for s in slots:
                        words[s] = markers[mk]
                    placed = True
                    break
            if not placed:
                raise DataError("could not place markers; context_len too small for config")

        text = " ".join(words)
        cid = f"ctx{i:05d}"
        corpus.append(RawContext(cid, text))

        if cfg.kind == SPAN_QA:
            ask = rng.choice(chosen, size=cfg.questions_per_context, replace=False)
            for mk in ask:
                surface = markers[mk]
                start = _word_char_offset(words, surface)
                examples.append(QaExample(cid, f"find {surface}", start, surface))
        else:
            fams = [int(mk) % cfg.n_families for mk in chosen]
            counts = np.bincount(fams, minlength=cfg.n_families)
            examples.append(ClsExample(cid, labels[int(np.argmax(counts))]))

    return corpus, TaskDataset(cfg.kind, examples, labels)


def _word_char_offset(words: list[str], target: str) -> int:
    offset = 0
    for w in words:
        if w == target:
            return offset
        offset += len(w) + 1
    raise AssertionError("target word not present")


def split_task_contexts(corpus: list[RawContext], dataset: TaskDataset,
                        test_fraction: float, seed: int) -> Task:
    """Partition generated contexts into train/test sides (examples follow
    their contexts)."""
    n_test = max(1, int(round(test_fraction * len(corpus))))
    if n_test >= len(corpus):
        raise ConfigError("test_fraction leaves no training contexts")
    order = np.random.default_rng([seed, 2201]).permutation(len(corpus))
    test_ids = {corpus[i].context_id for i in order[:n_test]}
    train_corpus = [c for c in corpus if c.context_id not in test_ids]
    test_corpus = [c for c in corpus if c.context_id in test_ids]
    tr_ex = [e for e in dataset.examples if e.context_id not in test_ids]
    te_ex = [e for e in dataset.examples if e.context_id in test_ids]
    return Task(corpus=train_corpus + test_corpus,
                train=TaskDataset(dataset.kind, tr_ex, dataset.labels),
                test=TaskDataset(dataset.kind, te_ex, dataset.labels),
                n_train_contexts=len(train_corpus))
