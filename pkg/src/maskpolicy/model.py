"""The tiny transformer language model: encoder, tied-embedding MLM head,
task heads, and the pretrain / fine-tune / evaluate pipeline.

The output projection IS the embedding table (single storage), so MLM
logits for position i are H_i . e(w) over the vocabulary plus a bias.
Training functions are functional: they copy the incoming checkpoint and
return a new one.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import metrics
from .autodiff import (
    Tensor, backpropagate, constant, cross_entropy, dropout, gather_rows,
    gelu, layer_norm, matmul, reshape, softmax, transpose,
)
from .data import CLASSIFICATION, SPAN_QA, ClsExample, QaExample
from .errors import ConfigError, DataError
from .masking import MaskedContext
from .optim import ParameterSet, adamw_step, init_normal, init_ones, init_zeros
from .seeding import rng_from
from .vocab import PAD, SEP, TokenizedContext, Vocab, tokenize_question

NEG_INF = -1e9


@dataclass
class LmConfig:
    layers: int = 2
    heads: int = 2
    model_dim: int = 64
    ff_dim: int = 128
    max_seq_len: int = 128
    vocab_size: int = 0
    dropout: float = 0.1

    def validate(self) -> None:
        if self.model_dim % self.heads != 0:
            raise ConfigError(
                f"model_dim {self.model_dim} not divisible by heads {self.heads}")
        if self.vocab_size < 6:
            raise ConfigError("vocab_size must cover the special tokens")

    def to_json(self) -> dict:
        return self.__dict__.copy()

    @classmethod
    def from_json(cls, d: dict) -> "LmConfig":
        return cls(**d)


@dataclass
class LmCheckpoint:
    params: ParameterSet
    config: LmConfig
    episode: int = 0

    def content_hash(self) -> str:
        return self.params.content_hash()

    def copy(self) -> "LmCheckpoint":
        return LmCheckpoint(self.params.copy(), replace(self.config), self.episode)


def init_lm(config: LmConfig, seed) -> LmCheckpoint:
    config.validate()
    rng = rng_from(seed, 11)
    ps = ParameterSet()
    init_normal(ps, "tok_emb", (config.vocab_size, config.model_dim), rng)
    init_normal(ps, "pos_emb", (config.max_seq_len, config.model_dim), rng)
    init_ones(ps, "emb_ln_g", (config.model_dim,))
    init_zeros(ps, "emb_ln_b", (config.model_dim,))
    init_zeros(ps, "out_bias", (config.vocab_size,))
    d, f = config.model_dim, config.ff_dim
    for l in range(config.layers):
        for name in ("wq", "wk", "wv", "wo"):
            init_normal(ps, f"l{l}.{name}", (d, d), rng)
            init_zeros(ps, f"l{l}.b{name[1]}", (d,))
        init_ones(ps, f"l{l}.ln1_g", (d,))
        init_zeros(ps, f"l{l}.ln1_b", (d,))
        init_normal(ps, f"l{l}.ff_w1", (d, f), rng)
        init_zeros(ps, f"l{l}.ff_b1", (f,))
        init_normal(ps, f"l{l}.ff_w2", (f, d), rng)
        init_zeros(ps, f"l{l}.ff_b2", (d,))
        init_ones(ps, f"l{l}.ln2_g", (d,))
        init_zeros(ps, f"l{l}.ln2_b", (d,))
    return LmCheckpoint(ps, config)


def pad_batch(id_arrays: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Stack variable-length id sequences into (ids, real-position mask)."""
    n = max(len(a) for a in id_arrays)
    ids = np.full((len(id_arrays), n), PAD, dtype=np.int64)
    mask = np.zeros((len(id_arrays), n), dtype=bool)
    for b, a in enumerate(id_arrays):
        ids[b, : len(a)] = a
        mask[b, : len(a)] = True
    return ids, mask


def encode(ckpt: LmCheckpoint, ids: np.ndarray, pad_mask: np.ndarray,
           train: bool = False, dropout_rng: np.random.Generator | None = None) -> Tensor:
    """Contextualized representations, shape (B, N, model_dim).

    Deterministic in eval mode; dropout only fires when ``train`` is set.
    """
    cfg = ckpt.config
    p = ckpt.params
    if ids.max() >= cfg.vocab_size:
        raise DataError(
            f"token id {int(ids.max())} outside checkpoint vocab ({cfg.vocab_size})")
    B, N = ids.shape
    if N > cfg.max_seq_len:
        raise DataError(f"sequence length {N} exceeds max_seq_len {cfg.max_seq_len}")

    def drop(t: Tensor) -> Tensor:
        if train and cfg.dropout > 0.0:
            return dropout(t, cfg.dropout, dropout_rng)
        return t

    x = gather_rows(p["tok_emb"], ids) + gather_rows(p["pos_emb"], np.arange(N))
    x = drop(layer_norm(x, p["emb_ln_g"], p["emb_ln_b"]))

    dh = cfg.model_dim // cfg.heads
    key_bias = constant(np.where(pad_mask, 0.0, NEG_INF)[:, None, None, :])
    scale = 1.0 / np.sqrt(dh)

    def split_heads(t: Tensor) -> Tensor:
        return transpose(reshape(t, (B, N, cfg.heads, dh)), (0, 2, 1, 3))

    for l in range(cfg.layers):
        q = split_heads(matmul(x, p[f"l{l}.wq"]) + p[f"l{l}.bq"])
        k = split_heads(matmul(x, p[f"l{l}.wk"]) + p[f"l{l}.bk"])
        v = split_heads(matmul(x, p[f"l{l}.wv"]) + p[f"l{l}.bv"])
        scores = matmul(q, transpose(k, (0, 1, 3, 2))) * scale + key_bias
        ctxv = matmul(softmax(scores), v)
        merged = reshape(transpose(ctxv, (0, 2, 1, 3)), (B, N, cfg.model_dim))
        attn_out = drop(matmul(merged, p[f"l{l}.wo"]) + p[f"l{l}.bo"])
        x = layer_norm(x + attn_out, p[f"l{l}.ln1_g"], p[f"l{l}.ln1_b"])
        h = matmul(gelu(matmul(x, p[f"l{l}.ff_w1"]) + p[f"l{l}.ff_b1"]), p[f"l{l}.ff_w2"])
        x = layer_norm(x + drop(h + p[f"l{l}.ff_b2"]), p[f"l{l}.ln2_g"], p[f"l{l}.ln2_b"])
    return x


def mlm_loss(ckpt: LmCheckpoint, masked, train: bool = False,
             dropout_rng: np.random.Generator | None = None) -> Tensor:
    """Mean over contexts of the per-context mean NLL at masked positions.

    Only masked positions contribute; the targets are the recovery labels.
    """
    batch = [masked] if isinstance(masked, MaskedContext) else list(masked)
    if not batch or any(not mc.labels for mc in batch):
        raise DataError("mlm_loss requires at least one masked position per context")
    ids, pad_mask = pad_batch([mc.ids for mc in batch])
    h = encode(ckpt, ids, pad_mask, train=train, dropout_rng=dropout_rng)
    B, N = ids.shape
    flat_idx, targets, weights = [], [], []
    for b, mc in enumerate(batch):
        t_b = len(mc.labels)
        for pos in sorted(mc.labels):
            flat_idx.append(b * N + pos)
            targets.append(mc.labels[pos])
            weights.append(1.0 / (B * t_b))
    sel = gather_rows(reshape(h, (B * N, ckpt.config.model_dim)), np.array(flat_idx))
    logits = matmul(sel, transpose(ckpt.params["tok_emb"], (1, 0))) + ckpt.params["out_bias"]
    return cross_entropy(logits, targets, weights=weights)


def mlm_eval_loss(ckpt: LmCheckpoint, masked_contexts, batch_size: int = 32) -> float:
    """Deterministic mean MLM loss over a masked corpus (no dropout)."""
    total, n = 0.0, 0
    for i in range(0, len(masked_contexts), batch_size):
        chunk = masked_contexts[i: i + batch_size]
        total += mlm_loss(ckpt, chunk).item() * len(chunk)
        n += len(chunk)
    return total / n


def pretrain_mlm(ckpt: LmCheckpoint, masked_contexts, epochs: int, lr: float,
                 batch_size: int, seed, weight_decay: float = 0.01) -> LmCheckpoint:
    """Gradient-descend the MLM objective on masked contexts.

    ``masked_contexts`` is either a fixed list (episode semantics: one mask
    per context for the whole run) or a callable epoch -> list for
    re-sampled baseline masking. The input checkpoint is not modified.
    """
    out = ckpt.copy()
    out.params.moments = {}
    out.params.step_count = 0
    rng = rng_from(seed, 17)
    for epoch in range(epochs):
        data = masked_contexts(epoch) if callable(masked_contexts) else masked_contexts
        order = rng.permutation(len(data))
        for i in range(0, len(order), batch_size):
            chunk = [data[j] for j in order[i: i + batch_size]]
            out.params.zero_grads()
            loss = mlm_loss(out, chunk, train=True, dropout_rng=rng)
            backpropagate(loss)
            adamw_step(out.params, lr=lr, weight_decay=weight_decay)
    out.params.zero_grads()
    return out


# ---------------------------------------------------------------------------
# Task heads and fine-tuning
# ---------------------------------------------------------------------------

@dataclass
class TaskHead:
    kind: str
    params: ParameterSet
    labels: list[str] = field(default_factory=list)


def init_head(kind: str, config: LmConfig, seed, labels: list[str] | None = None) -> TaskHead:
    rng = rng_from(seed, 31)
    ps = ParameterSet()
    d = config.model_dim
    if kind == SPAN_QA:
        init_normal(ps, "w_start", (d, 1), rng)
        init_normal(ps, "w_end", (d, 1), rng)
        init_zeros(ps, "b_start", (1,))
        init_zeros(ps, "b_end", (1,))
        return TaskHead(kind, ps)
    if kind == CLASSIFICATION:
        if not labels:
            raise ConfigError("classification head needs the label list")
        init_normal(ps, "w", (d, len(labels)), rng)
        init_zeros(ps, "b", (len(labels),))
        return TaskHead(kind, ps, list(labels))
    raise ConfigError(f"unknown task kind {kind!r}")


@dataclass
class QaBatch:
    ids: np.ndarray
    pad_mask: np.ndarray
    answer_mask: np.ndarray      # positions eligible as answer start/end
    starts: np.ndarray
    ends: np.ndarray


def _answer_token_range(ctx: TokenizedContext, ex: QaExample) -> tuple[int, int]:
    lo, hi = ex.answer_start, ex.answer_start + len(ex.answer_text)
    hit = [i for i, (s, e) in enumerate(ctx.offsets) if s >= 0 and s < hi and e > lo]
    if not hit:
        raise DataError(
            f"answer span for context {ex.context_id} does not map to tokens "
            "(possibly truncated)")
    return hit[0], hit[-1]


def build_qa_batch(examples: list[QaExample], ctxs: dict[str, TokenizedContext],
                   vocab: Vocab, max_seq_len: int, with_targets: bool = True) -> QaBatch:
    seqs, answer_masks, starts, ends = [], [], [], []
    for ex in examples:
        ctx = ctxs[ex.context_id]
        q_ids = tokenize_question(ex.question, vocab)
        seq = np.concatenate([ctx.ids, np.array(q_ids + [SEP], dtype=np.int64)])
        if len(seq) > max_seq_len:
            raise DataError(
                f"context+question length {len(seq)} exceeds max_seq_len {max_seq_len}")
        amask = np.zeros(len(seq), dtype=bool)
        amask[1: len(ctx) - 1] = True
        seqs.append(seq)
        answer_masks.append(amask)
        if with_targets:
            s, e = _answer_token_range(ctx, ex)
            starts.append(s)
            ends.append(e)
    ids, pad_mask = pad_batch(seqs)
    am = np.zeros_like(pad_mask)
    for b, m in enumerate(answer_masks):
        am[b, : len(m)] = m
    return QaBatch(ids, pad_mask, am,
                   np.array(starts, dtype=np.int64), np.array(ends, dtype=np.int64))


def _position_logits(h: Tensor, w: Tensor, b: Tensor, batch_shape) -> Tensor:
    B, N = batch_shape
    flat = reshape(h, (B * N, h.shape[-1]))
    return reshape(matmul(flat, w), (B, N)) + b


def qa_logits(ckpt: LmCheckpoint, head: TaskHead, batch: QaBatch,
              train: bool = False, rng=None) -> tuple[Tensor, Tensor]:
    h = encode(ckpt, batch.ids, batch.pad_mask, train=train, dropout_rng=rng)
    bias = constant(np.where(batch.answer_mask, 0.0, NEG_INF))
    start = _position_logits(h, head.params["w_start"], head.params["b_start"], batch.ids.shape) + bias
    end = _position_logits(h, head.params["w_end"], head.params["b_end"], batch.ids.shape) + bias
    return start, end


def cls_logits(ckpt: LmCheckpoint, head: TaskHead, ids: np.ndarray, pad_mask: np.ndarray,
               train: bool = False, rng=None) -> Tensor:
    h = encode(ckpt, ids, pad_mask, train=train, dropout_rng=rng)
    B, N = ids.shape
    cls_vec = gather_rows(reshape(h, (B * N, h.shape[-1])), np.arange(B) * N)
    return matmul(cls_vec, head.params["w"]) + head.params["b"]


def fine_tune(ckpt: LmCheckpoint, kind: str, examples: list, ctxs: dict,
              vocab: Vocab, epochs: int, lr: float, batch_size: int, seed,
              labels: list[str] | None = None,
              weight_decay: float = 0.01) -> tuple[LmCheckpoint, TaskHead]:
    """Supervised fine-tuning from a fresh seeded head.

    The head never carries over between runs; the encoder copy and the
    head train jointly.
    """
    if not examples:
        raise DataError("fine_tune requires a non-empty training set")
    out = ckpt.copy()
    out.params.moments = {}
    out.params.step_count = 0
    head = init_head(kind, ckpt.config, seed, labels)
    rng = rng_from(seed, 37)
    for _ in range(epochs):
        order = rng.permutation(len(examples))
        for i in range(0, len(order), batch_size):
            chunk = [examples[j] for j in order[i: i + batch_size]]
            out.params.zero_grads()
            head.params.zero_grads()
            if kind == SPAN_QA:
                batch = build_qa_batch(chunk, ctxs, vocab, ckpt.config.max_seq_len)
                s_logits, e_logits = qa_logits(out, head, batch, train=True, rng=rng)
                loss = cross_entropy(s_logits, batch.starts) + cross_entropy(e_logits, batch.ends)
            else:
                ids, pad_mask = pad_batch([ctxs[ex.context_id].ids for ex in chunk])
                logits = cls_logits(out, head, ids, pad_mask, train=True, rng=rng)
                targets = [head.labels.index(ex.label) for ex in chunk]
                loss = cross_entropy(logits, targets)
            backpropagate(loss)
            adamw_step(out.params, lr=lr, weight_decay=weight_decay)
            adamw_step(head.params, lr=lr, weight_decay=weight_decay)
    out.params.zero_grads()
    head.params.zero_grads()
    return out, head


def predict_spans(ckpt: LmCheckpoint, head: TaskHead, examples: list, ctxs: dict,
                  vocab: Vocab, batch_size: int = 32, max_answer_len: int = 8) -> list[str]:
    preds: list[str] = []
    for i in range(0, len(examples), batch_size):
        chunk = examples[i: i + batch_size]
        batch = build_qa_batch(chunk, ctxs, vocab, ckpt.config.max_seq_len, with_targets=False)
        s_logits, e_logits = qa_logits(ckpt, head, batch)
        s_np, e_np = s_logits.data, e_logits.data
        for b, ex in enumerate(chunk):
            valid = np.flatnonzero(batch.answer_mask[b])
            best, best_pair = -np.inf, (valid[0], valid[0])
            for s in valid:
                hi = min(s + max_answer_len, valid[-1] + 1)
                e_slice = e_np[b, s:hi]
                if e_slice.size == 0:
                    continue
                e_rel = int(np.argmax(e_slice))
                score = s_np[b, s] + e_slice[e_rel]
                if score > best:
                    best, best_pair = score, (int(s), int(s + e_rel))
            ctx = ctxs[ex.context_id]
            lo = ctx.offsets[best_pair[0]][0]
            hi = ctx.offsets[best_pair[1]][1]
            preds.append(ctx.text[lo:hi])
    return preds


def predict_labels(ckpt: LmCheckpoint, head: TaskHead, examples: list, ctxs: dict,
                   batch_size: int = 32) -> list[str]:
    preds: list[str] = []
    for i in range(0, len(examples), batch_size):
        chunk = examples[i: i + batch_size]
        ids, pad_mask = pad_batch([ctxs[ex.context_id].ids for ex in chunk])
        logits = cls_logits(ckpt, head, ids, pad_mask)
        preds.extend(head.labels[int(k)] for k in np.argmax(logits.data, axis=-1))
    return preds


def evaluate_task(ckpt: LmCheckpoint, head: TaskHead, examples: list, ctxs: dict,
                  vocab: Vocab, batch_size: int = 32) -> dict[str, float]:
    """EM/F1 for span tasks, accuracy for classification."""
    if not examples:
        raise DataError("evaluate_task requires a non-empty dataset")
    if head.kind == SPAN_QA:
        preds = predict_spans(ckpt, head, examples, ctxs, vocab, batch_size)
        return metrics.span_scores(preds, [ex.answer_text for ex in examples])
    preds = predict_labels(ckpt, head, examples, ctxs, batch_size)
    return {"acc": metrics.accuracy(preds, [ex.label for ex in examples])}


def task_score(scores: dict[str, float], kind: str) -> float:
    """The scalar fed to the reward: F1 for QA, accuracy otherwise."""
    return scores["f1"] if kind == SPAN_QA else scores["acc"]
