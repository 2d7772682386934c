"""Mask plans and the rule-based masking strategies.

Every strategy picks exactly T = max(1, floor(p * M)) distinct maskable
positions (M = maskable count), except span masking which may overshoot
to T + max_span - 1. Corruption is pure [MASK] substitution by default;
BERT-style 80/10/10 corruption is available behind a flag.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .vocab import ENTITY, MASK, PUNCTUATION, TokenizedContext, Vocab

SPAN_GEOM_Q = 0.2
SPAN_MAX_LEN = 10

STRATEGY_NAMES = ("none", "random", "whole", "span", "entity", "punct", "neural")


@dataclass(frozen=True)
class MaskPlan:
    """Strictly increasing maskable positions chosen for one context."""

    context_id: str
    positions: tuple[int, ...]
    p: float

    def __post_init__(self):
        if list(self.positions) != sorted(set(self.positions)):
            raise ConfigError("mask plan positions must be strictly increasing")

    @property
    def count(self) -> int:
        return len(self.positions)


@dataclass
class MaskedContext:
    """The corrupted token sequence plus recovery labels."""

    context_id: str
    ids: np.ndarray
    labels: dict[int, int] = field(default_factory=dict)


def mask_count(m: int, p: float) -> int:
    if m < 1:
        raise DataError("nothing maskable: context has no maskable positions")
    if not 0.0 < p < 1.0:
        raise ConfigError(f"masking probability must lie in (0,1), got {p}")
    return max(1, math.floor(p * m))


def apply_mask_plan(ctx: TokenizedContext, plan: MaskPlan) -> MaskedContext:
    maskable = ctx.maskable()
    ids = ctx.ids.copy()
    labels: dict[int, int] = {}
    for pos in plan.positions:
        if pos < 0 or pos >= len(ids) or not maskable[pos]:
            raise DataError(f"plan position {pos} is not maskable in context {ctx.context_id}")
        labels[pos] = int(ids[pos])
        ids[pos] = MASK
    return MaskedContext(context_id=ctx.context_id, ids=ids, labels=labels)


def restore(masked: MaskedContext) -> np.ndarray:
    ids = masked.ids.copy()
    for pos, tok in masked.labels.items():
        ids[pos] = tok
    return ids


def corrupt_bert_style(ctx: TokenizedContext, plan: MaskPlan, vocab_size: int,
                       rng: np.random.Generator) -> MaskedContext:
    """Optional 80/10/10 corruption: [MASK] / random token / unchanged."""
    masked = apply_mask_plan(ctx, plan)
    for pos in plan.positions:
        roll = rng.random()
        if roll < 0.8:
            continue
        elif roll < 0.9:
            masked.ids[pos] = int(rng.integers(5, vocab_size))
        else:
            masked.ids[pos] = masked.labels[pos]
    return masked


def _maskable_positions(ctx: TokenizedContext) -> np.ndarray:
    return np.flatnonzero(ctx.maskable())


def random_mask(ctx: TokenizedContext, p: float, rng: np.random.Generator) -> MaskPlan:
    positions = _maskable_positions(ctx)
    t = mask_count(len(positions), p)
    picked = rng.choice(positions, size=t, replace=False)
    return MaskPlan(ctx.context_id, tuple(sorted(int(i) for i in picked)), p)


def whole_word_mask(ctx: TokenizedContext, p: float, rng: np.random.Generator) -> MaskPlan:
    """Sample whole words until the budget is filled.

    Words whose full piece list no longer fits the remaining budget are
    passed over; if only oversized words remain, the last one is trimmed
    so the plan still lands on exactly T positions.
    """
    positions = _maskable_positions(ctx)
    t = mask_count(len(positions), p)
    groups: list[list[int]] = []
    for pos in positions:
        if ctx.word_start[pos] or not groups:
            groups.append([int(pos)])
        else:
            groups[-1].append(int(pos))
    order = rng.permutation(len(groups))
    chosen: list[int] = []
    budget = t
    skipped: list[int] = []
    for gi in order:
        if budget == 0:
            break
        g = groups[gi]
        if len(g) <= budget:
            chosen.extend(g)
            budget -= len(g)
        else:
            skipped.append(gi)
    for gi in skipped:
        if budget == 0:
            break
        take = groups[gi][:budget]
        chosen.extend(take)
        budget -= len(take)
    return MaskPlan(ctx.context_id, tuple(sorted(chosen)), p)


def span_mask(ctx: TokenizedContext, p: float, rng: np.random.Generator) -> MaskPlan:
    """Consecutive-token spans with clamped-geometric lengths; spans never
    cross a non-maskable position."""
    positions = _maskable_positions(ctx)
    t = mask_count(len(positions), p)
    maskable = ctx.maskable()
    chosen: set[int] = set()
    guard = 0
    while len(chosen) < t:
        guard += 1
        if guard > 10000 * t:
            for pos in positions:
                if len(chosen) >= t:
                    break
                chosen.add(int(pos))
            break
        start = int(positions[rng.integers(0, len(positions))])
        length = min(int(rng.geometric(SPAN_GEOM_Q)), SPAN_MAX_LEN)
        for pos in range(start, start + length):
            if pos >= len(maskable) or not maskable[pos]:
                break
            chosen.add(pos)
    return MaskPlan(ctx.context_id, tuple(sorted(chosen)), p)


def priority_mask(ctx: TokenizedContext, p: float, rng: np.random.Generator,
                  priority_class: str) -> MaskPlan:
    """Fill the plan with tokens of the priority class first, then random."""
    if priority_class not in (ENTITY, PUNCTUATION):
        raise ConfigError(f"unsupported priority class {priority_class!r}")
    positions = _maskable_positions(ctx)
    t = mask_count(len(positions), p)
    pri = [int(i) for i in positions if ctx.token_class[i] == priority_class]
    rest = [int(i) for i in positions if ctx.token_class[i] != priority_class]
    chosen = [pri[i] for i in rng.permutation(len(pri))[:t]]
    if len(chosen) < t:
        fill = rng.permutation(len(rest))[: t - len(chosen)]
        chosen.extend(rest[i] for i in fill)
    return MaskPlan(ctx.context_id, tuple(sorted(chosen)), p)


def heuristic_mask(strategy: str, ctx: TokenizedContext, p: float,
                   rng: np.random.Generator) -> MaskPlan:
    """Dispatch by CLI-facing strategy name (excluding none/neural)."""
    if strategy == "random":
        return random_mask(ctx, p, rng)
    if strategy == "whole":
        return whole_word_mask(ctx, p, rng)
    if strategy == "span":
        return span_mask(ctx, p, rng)
    if strategy == "entity":
        return priority_mask(ctx, p, rng, ENTITY)
    if strategy == "punct":
        return priority_mask(ctx, p, rng, PUNCTUATION)
    raise ConfigError(
        f"unknown masking strategy {strategy!r}; valid: {', '.join(STRATEGY_NAMES)}")


def mask_stats(plans, ctxs: dict[str, TokenizedContext], vocab: Vocab | None = None,
               top_k: int = 10) -> dict:
    """Histogram of masked token classes plus the most-masked surfaces."""
    class_counts: Counter = Counter()
    surface_counts: Counter = Counter()
    for plan in plans:
        ctx = ctxs[plan.context_id]
        for pos in plan.positions:
            class_counts[ctx.token_class[pos]] += 1
            if vocab is not None:
                surface_counts[vocab.token_of(int(ctx.ids[pos]))] += 1
    return {
        "class_counts": dict(sorted(class_counts.items())),
        "top_surfaces": surface_counts.most_common(top_k),
        "total": sum(class_counts.values()),
    }
