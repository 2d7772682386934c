"""The learned masking agent: a policy network scoring every token
position of a context and a value network estimating the episode reward.

Both read frozen language-model hidden states; gradients never reach the
LM (the states enter as constants). The policy is one self-attention
block configured like an LM encoder layer (no feed-forward sublayer),
followed by two affine maps with gelu; the value network applies the same
affine stack to the mean-pooled hidden states.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Tensor, constant, gather_rows, gelu, layer_norm, log, matmul, mean_pool,
    mul, reduce_sum, reshape, softmax, transpose,
)
from .errors import ConfigError, DataError
from .optim import ParameterSet, init_normal, init_ones, init_zeros
from .seeding import rng_from

NEG_INF = -1e9
POLICY_HIDDEN = 128


@dataclass
class AgentParams:
    params: ParameterSet
    model_dim: int
    heads: int
    hidden: int = POLICY_HIDDEN

    def content_hash(self) -> str:
        return self.params.content_hash()

    def copy(self) -> "AgentParams":
        return AgentParams(self.params.copy(), self.model_dim, self.heads, self.hidden)


def init_agent(model_dim: int, heads: int, seed, hidden: int = POLICY_HIDDEN) -> AgentParams:
    if model_dim % heads != 0:
        raise ConfigError(f"model_dim {model_dim} not divisible by heads {heads}")
    rng = rng_from(seed, 23)
    ps = ParameterSet()
    d = model_dim
    for name in ("wq", "wk", "wv", "wo"):
        init_normal(ps, f"attn.{name}", (d, d), rng)
        init_zeros(ps, f"attn.b{name[1]}", (d,))
    init_ones(ps, "attn.ln_g", (d,))
    init_zeros(ps, "attn.ln_b", (d,))
    for prefix in ("pol", "val"):
        init_normal(ps, f"{prefix}.w1", (d, hidden), rng)
        init_zeros(ps, f"{prefix}.b1", (hidden,))
        init_normal(ps, f"{prefix}.w2", (hidden, 1), rng)
        init_zeros(ps, f"{prefix}.b2", (1,))
    return AgentParams(ps, model_dim, heads, hidden)


@dataclass
class PolicyOutput:
    """Per-position logits and the masked softmax over maskable positions.

    ``probs`` rows sum to one over maskable positions and are exactly zero
    elsewhere.
    """

    logits: Tensor          # (B, N)
    probs: Tensor           # (B, N)
    maskable: np.ndarray    # (B, N) bool

    def row_probs(self, b: int = 0) -> np.ndarray:
        return self.probs.data[b]


def policy_forward(agent: AgentParams, hidden, maskable: np.ndarray,
                   pad_mask: np.ndarray | None = None) -> PolicyOutput:
    """Score maskable positions given frozen LM states.

    ``hidden`` may be a Tensor from encode() or a raw array; either way it
    enters the policy graph as a constant, so no gradient can reach the LM.
    """
    h = hidden.detach() if isinstance(hidden, Tensor) else constant(hidden)
    if h.data.ndim == 2:
        h = reshape(h, (1,) + h.shape)
    maskable = np.atleast_2d(maskable)
    if (~maskable.any(axis=1)).any():
        raise DataError("a context with zero maskable positions cannot be masked")
    if pad_mask is None:
        pad_mask = np.ones(maskable.shape, dtype=bool)
    B, N, d = h.shape
    p = agent.params
    dh = d // agent.heads

    def split_heads(t):
        return transpose(reshape(t, (B, N, agent.heads, dh)), (0, 2, 1, 3))

    q = split_heads(matmul(h, p["attn.wq"]) + p["attn.bq"])
    k = split_heads(matmul(h, p["attn.wk"]) + p["attn.bk"])
    v = split_heads(matmul(h, p["attn.wv"]) + p["attn.bv"])
    key_bias = constant(np.where(pad_mask, 0.0, NEG_INF)[:, None, None, :])
    scores = matmul(q, transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(dh)) + key_bias
    ctxv = reshape(transpose(matmul(softmax(scores), v), (0, 2, 1, 3)), (B, N, d))
    x = layer_norm(h + matmul(ctxv, p["attn.wo"]) + p["attn.bo"], p["attn.ln_g"], p["attn.ln_b"])

    flat = reshape(x, (B * N, d))
    z = matmul(gelu(matmul(flat, p["pol.w1"]) + p["pol.b1"]), p["pol.w2"]) + p["pol.b2"]
    logits = reshape(z, (B, N))
    masked_logits = logits + constant(np.where(maskable, 0.0, NEG_INF))
    return PolicyOutput(logits=logits, probs=softmax(masked_logits), maskable=maskable)


def value_forward(agent: AgentParams, hidden, real_mask: np.ndarray | None = None) -> Tensor:
    """Scalar state-value estimates, shape (B,). Pools the frozen LM
    states over real positions, then two affine maps with gelu."""
    h = hidden.detach() if isinstance(hidden, Tensor) else constant(hidden)
    if h.data.ndim == 2:
        h = reshape(h, (1,) + h.shape)
    B, N, d = h.shape
    if real_mask is None:
        real_mask = np.ones((B, N), dtype=bool)
    pooled = mean_pool(h, real_mask)
    p = agent.params
    v = matmul(gelu(matmul(pooled, p["val.w1"]) + p["val.b1"]), p["val.w2"]) + p["val.b2"]
    return reshape(v, (B,))


def sample_actions(probs: np.ndarray, t: int, rng: np.random.Generator) -> tuple[list[int], list[float]]:
    """Draw T distinct positions sequentially without replacement.

    Recorded behavior probabilities are those of the ORIGINAL distribution
    (before any renormalization), matching the independent-product reading
    of the joint action probability.
    """
    probs = np.asarray(probs, dtype=float)
    support = int((probs > 0).sum())
    if t > support:
        raise DataError(f"cannot draw {t} distinct actions from {support} maskable positions")
    live = probs.copy()
    actions: list[int] = []
    behavior: list[float] = []
    for _ in range(t):
        i = int(rng.choice(len(live), p=live / live.sum()))
        actions.append(i)
        behavior.append(float(probs[i]))
        live[i] = 0.0
    return actions, behavior


def greedy_actions(probs: np.ndarray, t: int) -> list[int]:
    """Top-T probability positions; ties break toward the lower index."""
    probs = np.asarray(probs, dtype=float)
    support = int((probs > 0).sum())
    if t > support:
        raise DataError(f"cannot pick {t} actions from {support} maskable positions")
    order = np.lexsort((np.arange(len(probs)), -probs))
    return [int(i) for i in order[:t]]


def policy_entropy(policy: PolicyOutput, row: int = 0) -> Tensor:
    """Entropy of one context's action distribution over maskable
    positions (0 log 0 := 0 via restriction to the support)."""
    idx = np.flatnonzero(policy.maskable[row])
    p = gather_rows(reshape(policy.probs, (-1,)), row * policy.maskable.shape[1] + idx)
    return -reduce_sum(mul(p, log(p)))


def entropy_np(probs: np.ndarray) -> float:
    p = probs[probs > 0]
    return float(-(p * np.log(p)).sum())


def uniform_policy_probs(maskable: np.ndarray) -> np.ndarray:
    """The exploration/opponent-psi action distribution."""
    m = maskable.astype(float)
    return m / m.sum(axis=-1, keepdims=True)
