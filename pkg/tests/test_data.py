import json

import numpy as np
import pytest

from maskpolicy.data import (
    CLASSIFICATION, SPAN_QA, QaExample, SynthConfig, gen_synthetic_task,
    load_jsonl, load_task, sample_subtask, split_holdout, split_task_contexts,
    write_jsonl,
)
from maskpolicy.errors import ConfigError, DataError
from maskpolicy.vocab import build_vocab, tokenize


def _write(tmp_path, lines, name="data.jsonl"):
    p = tmp_path / name
    p.write_text("\n".join(lines) + "\n")
    return p


def test_load_valid_span_qa(tmp_path):
    lines = [json.dumps({"id": f"c{i}", "context": "alpha beta gamma",
                         "qas": [{"question": "find beta", "answer_start": 6,
                                  "answer_text": "beta"}]}) for i in range(3)]
    corpus, ds = load_jsonl(_write(tmp_path, lines), SPAN_QA)
    assert len(corpus) == 3 and len(ds) == 3
    assert ds.examples[0].answer_text == "beta"


def test_missing_field_reports_line(tmp_path):
    lines = [json.dumps({"id": "c0", "context": "x", "qas": []}),
             json.dumps({"id": "c1", "qas": []})]
    with pytest.raises(DataError) as err:
        load_jsonl(_write(tmp_path, lines), SPAN_QA)
    assert ":2:" in str(err.value) and "context" in str(err.value)


def test_span_outside_context_rejected(tmp_path):
    lines = [json.dumps({"id": "c0", "context": "short",
                         "qas": [{"question": "q", "answer_start": 10, "answer_text": "xx"}]})]
    with pytest.raises(DataError) as err:
        load_jsonl(_write(tmp_path, lines), SPAN_QA)
    assert "outside" in str(err.value)


def test_classification_records(tmp_path):
    lines = [json.dumps({"id": "c0", "text": "foo bar", "label": "pos"}),
             json.dumps({"id": "c1", "text": "baz", "label": "neg"})]
    corpus, ds = load_jsonl(_write(tmp_path, lines), CLASSIFICATION)
    assert ds.labels == ["neg", "pos"]
    assert len(corpus) == 2


def test_write_then_load_roundtrip(tmp_path):
    cfg = SynthConfig(n_contexts=20, context_len=35, questions_per_context=1)
    corpus, ds = gen_synthetic_task(cfg, seed=5)
    write_jsonl(tmp_path / "train.jsonl", corpus, ds)
    corpus2, ds2 = load_jsonl(tmp_path / "train.jsonl", SPAN_QA)
    assert [c.text for c in corpus2] == [c.text for c in corpus]
    assert ds2.examples == ds.examples


def test_split_holdout_sizes_and_determinism():
    examples = list(range(100))
    tr, val = split_holdout(examples, 20, seed=3)
    assert len(tr) == 80 and len(val) == 20
    assert sorted(tr + val) == examples
    tr2, val2 = split_holdout(examples, 20, seed=3)
    assert val == val2 and tr == tr2
    _, val3 = split_holdout(examples, 20, seed=4)
    assert val != val3


def test_split_holdout_rejects_oversize():
    with pytest.raises(DataError):
        split_holdout(list(range(10)), 10, seed=0)


def test_split_holdout_differs_across_seeds():
    examples = list(range(12))
    differing = 0
    for s in range(100):
        _, v1 = split_holdout(examples, 4, seed=2 * s)
        _, v2 = split_holdout(examples, 4, seed=2 * s + 1)
        differing += v1 != v2
    assert differing >= 99


def test_sample_subtask_sizes():
    cfg = SynthConfig(n_contexts=500, context_len=35, questions_per_context=1)
    corpus, ds = gen_synthetic_task(cfg, seed=0)
    pool, val = split_holdout(ds.examples, 100, seed=0)
    sub = sample_subtask(corpus, pool, val, pretrain_size=200, max_train_size=150,
                         rng=np.random.default_rng(0))
    assert len(sub.context_ids) == 200
    assert len(sub.train) == 150
    assert len(set(sub.context_ids)) == 200
    assert sub.val == val


def test_sample_subtask_insufficient_corpus():
    cfg = SynthConfig(n_contexts=50, context_len=35, questions_per_context=1)
    corpus, ds = gen_synthetic_task(cfg, seed=0)
    with pytest.raises(DataError) as err:
        sample_subtask(corpus, ds.examples, [], 600, 10, np.random.default_rng(0))
    assert "600" in str(err.value) and "50" in str(err.value)


def test_sample_subtask_seed_reproducible_and_varies():
    cfg = SynthConfig(n_contexts=300, context_len=35, questions_per_context=1)
    corpus, ds = gen_synthetic_task(cfg, seed=0)
    a = sample_subtask(corpus, ds.examples, [], 100, 50, np.random.default_rng(9))
    b = sample_subtask(corpus, ds.examples, [], 100, 50, np.random.default_rng(9))
    c = sample_subtask(corpus, ds.examples, [], 100, 50, np.random.default_rng(10))
    assert a.context_ids == b.context_ids
    assert a.context_ids != c.context_ids


def test_gen_synthetic_determinism_and_marker_budget():
    cfg = SynthConfig(n_contexts=100, context_len=50, marker_vocab_size=20)
    c1, d1 = gen_synthetic_task(cfg, seed=11)
    c2, d2 = gen_synthetic_task(cfg, seed=11)
    assert [c.text for c in c1] == [c.text for c in c2]
    assert d1.examples == d2.examples
    by_id = {c.context_id: c for c in c1}
    n_q = 0
    for ctx in c1:
        marker_words = [w for w in ctx.text.split() if w.startswith("@")]
        assert len(marker_words) / len(ctx.text.split()) < 0.2
    for ex in d1.examples:
        assert isinstance(ex, QaExample)
        ctx = by_id[ex.context_id]
        assert ctx.text[ex.answer_start:ex.answer_start + len(ex.answer_text)] == ex.answer_text
        assert ex.answer_text.startswith("@")
        n_q += 1
    assert n_q >= len(c1)


def test_gen_synthetic_rejects_tiny_marker_vocab():
    with pytest.raises(ConfigError):
        gen_synthetic_task(SynthConfig(marker_vocab_size=1), seed=0)


def test_classification_labels_by_majority_family():
    cfg = SynthConfig(kind=CLASSIFICATION, n_contexts=50, context_len=40,
                      markers_per_context=3, n_families=2)
    corpus, ds = gen_synthetic_task(cfg, seed=3)
    assert ds.labels == ["fam0", "fam1"]
    assert all(e.label in ds.labels for e in ds.examples)


def test_answer_spans_align_to_token_ranges():
    cfg = SynthConfig(n_contexts=40, context_len=35, questions_per_context=2)
    corpus, ds = gen_synthetic_task(cfg, seed=2)
    vocab = build_vocab([c.text for c in corpus], max_vocab=2000, min_freq=1)
    ctxs = {c.context_id: tokenize(c.text, vocab, 128, c.context_id) for c in corpus}
    for ex in ds.examples:
        ctx = ctxs[ex.context_id]
        lo, hi = ex.answer_start, ex.answer_start + len(ex.answer_text)
        hit = [i for i, (s, e) in enumerate(ctx.offsets) if s >= 0 and s < hi and e > lo]
        assert hit, "answer must map to at least one token"
        assert hit == list(range(hit[0], hit[-1] + 1)), "token range must be contiguous"
        s0, e0 = ctx.offsets[hit[0]][0], ctx.offsets[hit[-1]][1]
        assert ctx.text[s0:e0] == ex.answer_text


def test_split_task_contexts_partitions():
    cfg = SynthConfig(n_contexts=60, context_len=35, questions_per_context=1)
    corpus, ds = gen_synthetic_task(cfg, seed=1)
    task = split_task_contexts(corpus, ds, test_fraction=0.2, seed=1)
    assert len(task.pretrain_corpus()) == 48
    assert task.test is not None and len(task.test) > 0
    train_ids = {c.context_id for c in task.pretrain_corpus()}
    assert all(e.context_id in train_ids for e in task.train.examples)
    assert all(e.context_id not in train_ids for e in task.test.examples)


def test_load_task_directory(tmp_path):
    cfg = SynthConfig(n_contexts=30, context_len=35, questions_per_context=1)
    corpus, ds = gen_synthetic_task(cfg, seed=8)
    task = split_task_contexts(corpus, ds, test_fraction=0.2, seed=8)
    write_jsonl(tmp_path / "train.jsonl", task.pretrain_corpus(), task.train)
    write_jsonl(tmp_path / "test.jsonl", task.corpus[task.n_train_contexts:], task.test)
    loaded = load_task(tmp_path, SPAN_QA)
    assert len(loaded.pretrain_corpus()) == len(task.pretrain_corpus())
    assert len(loaded.test.examples) == len(task.test.examples)
