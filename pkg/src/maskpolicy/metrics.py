"""Span and classification scoring.

EM is exact string match after whitespace/case normalization. F1 is the
per-example token-overlap harmonic mean: precision = overlap / |pred|,
recall = overlap / |gold|, overlap counted over token multisets.
"""

from __future__ import annotations

from collections import Counter


def normalize_text(s: str) -> str:
    return " ".join(s.lower().split())


def exact_match(prediction: str, gold: str) -> float:
    return float(normalize_text(prediction) == normalize_text(gold))


def token_f1(prediction: str, gold: str) -> float:
    pred_tokens = normalize_text(prediction).split()
    gold_tokens = normalize_text(gold).split()
    if not pred_tokens or not gold_tokens:
        return float(pred_tokens == gold_tokens)
    overlap = sum((Counter(pred_tokens) & Counter(gold_tokens)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred_tokens)
    recall = overlap / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


def span_scores(predictions: list[str], golds: list[str]) -> dict[str, float]:
    if not predictions or len(predictions) != len(golds):
        raise ValueError("predictions and golds must be same-length non-empty lists")
    em = sum(exact_match(p, g) for p, g in zip(predictions, golds)) / len(golds)
    f1 = sum(token_f1(p, g) for p, g in zip(predictions, golds)) / len(golds)
    return {"em": em, "f1": f1}


def accuracy(predictions: list, golds: list) -> float:
    if not predictions or len(predictions) != len(golds):
        raise ValueError("predictions and golds must be same-length non-empty lists")
    return sum(p == g for p, g in zip(predictions, golds)) / len(golds)
