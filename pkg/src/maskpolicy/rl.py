"""Rewards, the prioritized replay buffer, and the off-policy
actor-critic update for the masking agent.

Rewards are score-difference signs assigned only to actions that
discriminate between agents within an episode. Replay priority is
|reward - value| damped by the square root of the masked token's
frequency inside its own context; sampling is proportional to priority
(exponent 1) with a uniform fallback when every priority is zero.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .agent import AgentParams, policy_forward, value_forward
from .autodiff import (
    Tensor, backpropagate, constant, gather_rows, log, mul, reduce_sum,
    reshape,
)
from .errors import ConfigError, DataError
from .model import LmCheckpoint, encode, pad_batch
from .optim import adamw_step
from .vocab import TokenizedContext

# episode-buffer entry: (context_id, action position, behavior prob)
EpisodeEntry = tuple[str, int, float]


@dataclass
class Replay:
    context_id: str
    position: int
    reward: int
    pi_old: float
    priority: float = 0.0
    token_id: int = -1

    def __post_init__(self):
        if self.reward not in (-1, 0, 1):
            raise ConfigError(f"reward must be a sign value, got {self.reward}")
        if not 0.0 < self.pi_old <= 1.0:
            raise ConfigError(f"behavior probability must lie in (0,1], got {self.pi_old}")


@dataclass
class ReplayBuffer:
    capacity: int = 50000
    items: list[Replay] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.items)

    def push(self, replays: list[Replay]) -> None:
        self.items.extend(replays)
        if len(self.items) > self.capacity:
            self.items = self.items[len(self.items) - self.capacity:]

    def to_jsonl(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w") as fh:
            for r in self.items:
                fh.write(json.dumps({
                    "context_id": r.context_id, "position": r.position,
                    "token": r.token_id, "R": r.reward, "pi_old": r.pi_old,
                    "priority": r.priority}, sort_keys=True) + "\n")

    @classmethod
    def from_jsonl(cls, path: str | Path, capacity: int) -> "ReplayBuffer":
        buf = cls(capacity=capacity)
        for line in Path(path).read_text().splitlines():
            d = json.loads(line)
            buf.items.append(Replay(d["context_id"], d["position"], d["R"],
                                    d["pi_old"], d["priority"], d["token"]))
        return buf


def compute_reward(r: float, b: float) -> int:
    """Sign of the score difference; exact ties give 0."""
    return (r > b) - (r < b)


def assign_disjoint_rewards(e_self: list[EpisodeEntry], e_rand: list[EpisodeEntry],
                            e_opp: list[EpisodeEntry], r_self: float, r_rand: float,
                            r_opp: float) -> list[Replay]:
    """Credit the agent's actions against whichever rivals did NOT pick them.

    Per action of the updating agent: picked by neither rival -> the
    conservative min of both score signs; shared with the random rival
    only -> sign vs the opponent; shared with the opponent only -> sign vs
    the random rival; shared with both -> dropped.
    """
    ctx_sets = [{c for c, _, _ in e} for e in (e_self, e_rand, e_opp)]
    if not (ctx_sets[0] == ctx_sets[1] == ctx_sets[2]):
        raise DataError("episode buffers cover different context sets")
    in_rand = {(c, a) for c, a, _ in e_rand}
    in_opp = {(c, a) for c, a, _ in e_opp}
    out: list[Replay] = []
    for c, a, pi_old in e_self:
        key = (c, a)
        if key not in in_opp and key not in in_rand:
            reward = min(compute_reward(r_self, r_rand), compute_reward(r_self, r_opp))
        elif key not in in_opp:
            reward = compute_reward(r_self, r_opp)
        elif key not in in_rand:
            reward = compute_reward(r_self, r_rand)
        else:
            continue
        out.append(Replay(c, a, reward, pi_old))
    return out


def token_frequency(ctx: TokenizedContext, position: int) -> int:
    """Occurrences of the token at `position` within its own context."""
    return int((ctx.ids == ctx.ids[position]).sum())


def push_replays(buffer: ReplayBuffer, replays: list[Replay],
                 values: dict[str, float], ctxs: dict[str, TokenizedContext]) -> None:
    """Set insertion-time priorities |R - V(s)| / sqrt(freq) and append."""
    for r in replays:
        ctx = ctxs[r.context_id]
        freq = token_frequency(ctx, r.position)
        r.token_id = int(ctx.ids[r.position])
        r.priority = abs(r.reward - values[r.context_id]) / np.sqrt(freq)
    buffer.push(replays)


def sample_minibatch(buffer: ReplayBuffer, batch_size: int,
                     rng: np.random.Generator) -> list[Replay]:
    """Priority-proportional sampling with replacement (uniform fallback
    when all priorities are zero)."""
    if not buffer.items:
        raise DataError("cannot sample from an empty replay buffer")
    pri = np.array([r.priority for r in buffer.items], dtype=float)
    total = pri.sum()
    p = None if total == 0.0 else pri / total
    idx = rng.choice(len(buffer.items), size=batch_size, replace=True, p=p)
    return [buffer.items[i] for i in idx]


# ---------------------------------------------------------------------------
# Frozen-LM hidden-state cache
# ---------------------------------------------------------------------------

class HiddenCache:
    """Eval-mode LM states per context, computed lazily in batches.

    Valid only for the checkpoint it was built with; the meta loop builds
    a fresh cache whenever the carried LM changes.
    """

    def __init__(self, lm: LmCheckpoint, ctxs: dict[str, TokenizedContext],
                 batch_size: int = 32):
        self.lm = lm
        self.ctxs = ctxs
        self.batch_size = batch_size
        self._store: dict[str, np.ndarray] = {}

    def get_many(self, context_ids: list[str]) -> dict[str, np.ndarray]:
        missing = sorted({c for c in context_ids if c not in self._store})
        for i in range(0, len(missing), self.batch_size):
            chunk = missing[i: i + self.batch_size]
            ids, pad = pad_batch([self.ctxs[c].ids for c in chunk])
            h = encode(self.lm, ids, pad).data
            for b, cid in enumerate(chunk):
                self._store[cid] = h[b, : len(self.ctxs[cid])]
        return {c: self._store[c] for c in context_ids}


def stack_hidden(h_by_ctx: dict[str, np.ndarray], order: list[str],
                  ctxs: dict[str, TokenizedContext]):
    n = max(h_by_ctx[c].shape[0] for c in order)
    d = next(iter(h_by_ctx.values())).shape[1]
    h = np.zeros((len(order), n, d))
    pad = np.zeros((len(order), n), dtype=bool)
    maskable = np.zeros((len(order), n), dtype=bool)
    for b, cid in enumerate(order):
        k = h_by_ctx[cid].shape[0]
        h[b, :k] = h_by_ctx[cid]
        pad[b, :k] = True
        maskable[b, :k] = ctxs[cid].maskable()
    return h, pad, maskable


def policy_loss(agent: AgentParams, batch: list[Replay], alpha: float,
                h_by_ctx: dict[str, np.ndarray],
                ctxs: dict[str, TokenizedContext]) -> Tensor:
    """Importance-weighted advantage loss with entropy regularization.

    The advantage (R - V(s)) enters as a constant: the critic is read but
    not differentiated here, so the policy term cannot move value weights.
    The entropy bonus is applied once per replay over its state's action
    distribution.
    """
    for r in batch:
        if r.pi_old <= 0.0:
            raise ConfigError("behavior probability must be positive")
    order = sorted({r.context_id for r in batch})
    row = {c: i for i, c in enumerate(order)}
    h, pad, maskable = stack_hidden(h_by_ctx, order, ctxs)
    out = policy_forward(agent, h, maskable, pad_mask=pad)
    v_sev = value_forward(agent, h, pad).data  # constant inside this loss

    n = maskable.shape[1]
    flat_probs = reshape(out.probs, (-1,))
    flat_idx = np.array([row[r.context_id] * n + r.position for r in batch])
    pi = gather_rows(flat_probs, flat_idx)
    coeff = np.array([-(r.reward - v_sev[row[r.context_id]]) / r.pi_old for r in batch])
    loss = reduce_sum(mul(pi, constant(coeff)))

    if alpha != 0.0:
        counts = np.zeros(len(order))
        for r in batch:
            counts[row[r.context_id]] += 1.0
        for i, cid in enumerate(order):
            idx = np.flatnonzero(maskable[i])
            p = gather_rows(flat_probs, i * n + idx)
            loss = loss + reduce_sum(mul(p, log(p))) * (alpha * counts[i])
    return loss


def value_loss(agent: AgentParams, batch: list[Replay],
               h_by_ctx: dict[str, np.ndarray],
               ctxs: dict[str, TokenizedContext]) -> Tensor:
    """Half squared error between signed rewards and state values."""
    order = sorted({r.context_id for r in batch})
    row = {c: i for i, c in enumerate(order)}
    h, pad, _ = stack_hidden(h_by_ctx, order, ctxs)
    v = value_forward(agent, h, pad)
    v_per = gather_rows(v, np.array([row[r.context_id] for r in batch]))
    diff = constant(np.array([float(r.reward) for r in batch])) - v_per
    return reduce_sum(mul(diff, diff)) * 0.5


def update_agent(agent: AgentParams, buffer: ReplayBuffer, cache: HiddenCache,
                 ctxs: dict[str, TokenizedContext], epochs: int, batch_size: int,
                 lr: float, alpha: float, rng: np.random.Generator) -> tuple[AgentParams, dict]:
    """Run prioritized minibatch updates; returns the updated agent and
    mean loss components. An empty buffer is a no-op."""
    if len(buffer) == 0:
        return agent, {"policy_loss": 0.0, "value_loss": 0.0, "updates": 0}
    out = agent.copy()
    p_losses, v_losses = [], []
    for _ in range(epochs):
        batch = sample_minibatch(buffer, batch_size, rng)
        h_by_ctx = cache.get_many([r.context_id for r in batch])
        out.params.zero_grads()
        p_loss = policy_loss(out, batch, alpha, h_by_ctx, ctxs)
        v_loss = value_loss(out, batch, h_by_ctx, ctxs)
        backpropagate(p_loss + v_loss)
        adamw_step(out.params, lr=lr, weight_decay=0.0)
        p_losses.append(p_loss.item())
        v_losses.append(v_loss.item())
    out.params.zero_grads()
    return out, {"policy_loss": float(np.mean(p_losses)),
                 "value_loss": float(np.mean(v_losses)), "updates": epochs}


def vanilla_a2c_loss(agent: AgentParams, batch: list[Replay],
                     h_by_ctx: dict[str, np.ndarray],
                     ctxs: dict[str, TokenizedContext]) -> float:
    """Independent on-policy reference: sum over replays of
    -(R - V(s)), the value the off-policy loss must reproduce when the
    behavior and target policies coincide (ratio 1) and alpha = 0."""
    order = sorted({r.context_id for r in batch})
    row = {c: i for i, c in enumerate(order)}
    h, pad, _ = stack_hidden(h_by_ctx, order, ctxs)
    v = value_forward(agent, h, pad).data
    return float(sum(-(r.reward - v[row[r.context_id]]) for r in batch))
