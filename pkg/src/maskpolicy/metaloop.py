"""Episode orchestration: the inner pretrain/fine-tune/score loop, the
outer reward-assignment and agent update, the full self-play meta-training
run with checkpoint/resume, and meta-testing.

Within an episode all competing policies pretrain from the same starting
checkpoint and fine-tune/evaluate with the same seed on the same splits,
so score differences are attributable to masking alone. The carried
checkpoint is always the primary agent's post-pretraining LM.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .agent import (
    AgentParams, entropy_np, greedy_actions, init_agent, policy_forward,
    sample_actions, uniform_policy_probs, value_forward,
)
from .config import RunConfig
from .data import SubTask, Task, sample_subtask, split_holdout
from .errors import ConfigError, DataError
from .masking import MaskPlan, apply_mask_plan, corrupt_bert_style, heuristic_mask, mask_count, mask_stats
from .model import (
    LmCheckpoint, LmConfig, fine_tune, evaluate_task, init_lm, pretrain_mlm,
    task_score,
)
from .optim import load_params, save_params
from .rl import (
    EpisodeEntry, HiddenCache, ReplayBuffer, assign_disjoint_rewards,
    compute_reward, push_replays, stack_hidden, update_agent,
)
from .seeding import rng_from, seed_list
from .vocab import Vocab, TokenizedContext, build_vocab, tokenize

METRIC_CSV_COLUMNS = ["episode", "r_neural", "r_random", "r_opponent", "reward",
                      "entropy", "policy_loss", "value_loss", "cum_regret"]

# policy specs
UNIFORM = ("uniform",)
NONE = ("none",)


def neural_policy(agent: AgentParams, stochastic: bool = True):
    return ("neural", agent, stochastic)


def heuristic_policy(name: str):
    return ("heuristic", name)


@dataclass
class InnerSettings:
    p: float
    pretrain_epochs: int
    pretrain_lr: float
    pretrain_batch: int
    ft_epochs: int
    ft_lr: float
    ft_batch: int
    weight_decay: float = 0.01
    eval_batch: int = 32
    resample_each_epoch: bool = False    # heuristic strategies only
    bert_corruption: bool = False


@dataclass
class InnerResult:
    score: float
    scores: dict
    entries: list[EpisodeEntry]
    lm_out: LmCheckpoint
    mask_class_hist: dict


def plan_masks(policy, context_ids: list[str], ctxs: dict[str, TokenizedContext],
               cache: HiddenCache | None, p: float, rng: np.random.Generator,
               batch_size: int = 32) -> tuple[dict[str, MaskPlan], list[EpisodeEntry]]:
    """Choose mask positions for every context under the given policy.

    Returns per-context plans plus the episode-buffer entries
    (context, position, behavior prob); heuristic plans carry no entries.
    """
    kind = policy[0]
    plans: dict[str, MaskPlan] = {}
    entries: list[EpisodeEntry] = []
    if kind == "none":
        return plans, entries
    if kind == "heuristic":
        for cid in context_ids:
            plans[cid] = heuristic_mask(policy[1], ctxs[cid], p, rng)
        return plans, entries

    for i in range(0, len(context_ids), batch_size):
        chunk = context_ids[i: i + batch_size]
        if kind == "neural":
            h_by_ctx = cache.get_many(chunk)
            h, pad, maskable = stack_hidden(h_by_ctx, chunk, ctxs)
            probs = policy_forward(policy[1], h, maskable, pad_mask=pad).probs.data
        else:  # uniform
            _, _, maskable = _masks_only(chunk, ctxs)
            probs = uniform_policy_probs(maskable)
        for b, cid in enumerate(chunk):
            row = probs[b]
            m = int(ctxs[cid].maskable().sum())
            t = mask_count(m, p)
            if kind == "neural" and not policy[2]:
                actions = greedy_actions(row, t)
                behavior = [float(row[a]) for a in actions]
            else:
                actions, behavior = sample_actions(row, t, rng)
            plans[cid] = MaskPlan(cid, tuple(sorted(actions)), p)
            entries.extend((cid, a, pi) for a, pi in zip(actions, behavior))
    return plans, entries


def _masks_only(chunk, ctxs):
    n = max(len(ctxs[c]) for c in chunk)
    maskable = np.zeros((len(chunk), n), dtype=bool)
    for b, cid in enumerate(chunk):
        maskable[b, : len(ctxs[cid])] = ctxs[cid].maskable()
    return None, None, maskable


def policy_state_metrics(agent: AgentParams, cache: HiddenCache, context_ids: list[str],
                         ctxs: dict[str, TokenizedContext], batch_size: int = 32) -> dict:
    """Mean action-distribution entropy and per-token-class probability
    mass (with the uniform baseline) over a set of contexts."""
    entropies: list[float] = []
    mass: dict[str, list[float]] = {}
    uniform: dict[str, list[float]] = {}
    for i in range(0, len(context_ids), batch_size):
        chunk = context_ids[i: i + batch_size]
        h_by_ctx = cache.get_many(chunk)
        h, pad, maskable = stack_hidden(h_by_ctx, chunk, ctxs)
        probs = policy_forward(agent, h, maskable, pad_mask=pad).probs.data
        for b, cid in enumerate(chunk):
            ctx = ctxs[cid]
            row = probs[b, : len(ctx)]
            entropies.append(entropy_np(row))
            live = ctx.maskable()
            m = live.sum()
            classes = np.array(ctx.token_class)
            for cls in np.unique(classes[live]):
                sel = live & (classes == cls)
                mass.setdefault(cls, []).append(float(row[sel].sum()))
                uniform.setdefault(cls, []).append(float(sel.sum() / m))
    return {
        "entropy": float(np.mean(entropies)),
        "class_mass": {k: float(np.mean(v)) for k, v in sorted(mass.items())},
        "class_uniform": {k: float(np.mean(v)) for k, v in sorted(uniform.items())},
    }


def inner_loop(lm: LmCheckpoint, policy, sub: SubTask, ctxs: dict, vocab: Vocab,
               kind: str, labels: list[str], settings: InnerSettings,
               mask_seed, train_seed, ft_seed,
               cache: HiddenCache | None = None) -> InnerResult:
    """Mask, pretrain, fine-tune, and score one policy on a sub-task.

    Returns the post-pretraining checkpoint; the fine-tuned weights are
    used only for scoring and then discarded.
    """
    mask_rng = rng_from(mask_seed, 0)
    plans, entries = plan_masks(policy, sub.context_ids, ctxs, cache, settings.p, mask_rng)

    if policy[0] == "none" or settings.pretrain_epochs == 0:
        lm_out = lm.copy()
    else:
        def realize(plan_map, rng):
            if settings.bert_corruption:
                return [corrupt_bert_style(ctxs[c], plan_map[c], lm.config.vocab_size, rng)
                        for c in sub.context_ids]
            return [apply_mask_plan(ctxs[c], plan_map[c]) for c in sub.context_ids]

        if settings.resample_each_epoch and policy[0] == "heuristic":
            def masked_for_epoch(epoch: int):
                rng = rng_from(mask_seed, 1, epoch)
                if epoch == 0:
                    return realize(plans, rng)
                fresh, _ = plan_masks(policy, sub.context_ids, ctxs, cache, settings.p, rng)
                return realize(fresh, rng)
            masked = masked_for_epoch
        else:
            masked = realize(plans, rng_from(mask_seed, 1, 0))
        lm_out = pretrain_mlm(lm, masked, settings.pretrain_epochs, settings.pretrain_lr,
                              settings.pretrain_batch, train_seed, settings.weight_decay)

    tuned, head = fine_tune(lm_out, kind, sub.train, ctxs, vocab, settings.ft_epochs,
                            settings.ft_lr, settings.ft_batch, ft_seed, labels,
                            settings.weight_decay)
    scores = evaluate_task(tuned, head, sub.val, ctxs, vocab, settings.eval_batch)
    return InnerResult(
        score=task_score(scores, kind), scores=scores, entries=entries, lm_out=lm_out,
        mask_class_hist=mask_stats(list(plans.values()), ctxs)["class_counts"],
    )


def outer_loop(buffer: ReplayBuffer, agent: AgentParams,
               e_self: list[EpisodeEntry], r_self: float,
               e_rand: list[EpisodeEntry], r_rand: float,
               e_opp: list[EpisodeEntry], r_opp: float,
               cache: HiddenCache, ctxs: dict, cfg: RunConfig,
               rng: np.random.Generator) -> tuple[AgentParams, dict]:
    """Assign disjoint rewards, push prioritized replays, update the agent."""
    replays = assign_disjoint_rewards(e_self, e_rand, e_opp, r_self, r_rand, r_opp)
    if replays:
        ids = sorted({r.context_id for r in replays})
        h_by_ctx = cache.get_many(ids)
        h, pad, _ = stack_hidden(h_by_ctx, ids, ctxs)
        v = value_forward(agent, h, pad).data
        push_replays(buffer, replays, {cid: float(v[i]) for i, cid in enumerate(ids)}, ctxs)
    updated, info = update_agent(agent, buffer, cache, ctxs,
                                 epochs=cfg.rl.number_of_epochs,
                                 batch_size=cfg.rl.minibatch_size,
                                 lr=cfg.rl.learning_rate,
                                 alpha=cfg.rl.entropy_regularization, rng=rng)
    info["new_replays"] = len(replays)
    return updated, info


def cumulative_regret(results: list[dict]) -> np.ndarray:
    """Running count of episodes where the learned policy scored strictly
    below the random policy (ties are not defeats)."""
    losses = [1 if rec["r_neural"] < rec["r_random"] else 0 for rec in results]
    return np.cumsum(losses)


# ---------------------------------------------------------------------------
# Meta-training with persistence
# ---------------------------------------------------------------------------

@dataclass
class RunState:
    run_dir: Path
    cfg: RunConfig
    vocab: Vocab
    ctxs: dict[str, TokenizedContext]
    lm0: LmCheckpoint
    lm: LmCheckpoint
    agent: AgentParams
    opponent: AgentParams
    buffer: ReplayBuffer
    buffer_op: ReplayBuffer
    train_pool: list
    d_val: list
    episode_next: int = 0
    cum_regret: int = 0
    records: list[dict] = field(default_factory=list)


def _inner_settings(cfg: RunConfig) -> InnerSettings:
    mt = cfg.meta_train
    return InnerSettings(
        p=mt.pre_training_masking_probability,
        pretrain_epochs=mt.pre_training_epoch,
        pretrain_lr=mt.pre_training_learning_rate,
        pretrain_batch=mt.pre_training_batch_size,
        ft_epochs=mt.fine_tuning_epoch,
        ft_lr=mt.fine_tuning_learning_rate,
        ft_batch=mt.fine_tuning_batch_size,
        weight_decay=cfg.training.weight_decay,
        eval_batch=cfg.training.eval_batch_size,
        bert_corruption=cfg.training.bert_corruption,
    )


def _validate_task_against(cfg: RunConfig, task: Task) -> None:
    corpus = task.pretrain_corpus()
    if cfg.meta_train.sampled_pre_training_dataset_size > len(corpus):
        raise ConfigError(
            f"sampled_pre_training_dataset_size {cfg.meta_train.sampled_pre_training_dataset_size} "
            f"exceeds the {len(corpus)}-context corpus")
    if cfg.meta_train.validation_set_size >= len(task.train.examples):
        raise ConfigError(
            f"validation_set_size {cfg.meta_train.validation_set_size} must be smaller "
            f"than the training set ({len(task.train.examples)} examples)")
    if task.train.kind != cfg.data.kind:
        raise ConfigError(f"task kind {task.train.kind!r} != config kind {cfg.data.kind!r}")


def setup_run(task: Task, cfg: RunConfig, run_dir: str | Path) -> RunState:
    cfg.validate()
    _validate_task_against(cfg, task)
    run_dir = Path(run_dir)
    (run_dir / "checkpoints").mkdir(parents=True, exist_ok=True)

    vocab = build_vocab([c.text for c in task.corpus], cfg.data.max_vocab, cfg.data.min_freq)
    ctxs = {c.context_id: tokenize(c.text, vocab, cfg.model.max_seq_len, c.context_id)
            for c in task.corpus}
    lm_cfg = LmConfig(layers=cfg.model.layers, heads=cfg.model.heads,
                      model_dim=cfg.model.model_dim, ff_dim=cfg.model.ff_dim,
                      max_seq_len=cfg.model.max_seq_len, vocab_size=len(vocab),
                      dropout=cfg.model.dropout)
    lm0 = init_lm(lm_cfg, seed_list(cfg.seed, 1))
    agent = init_agent(lm_cfg.model_dim, lm_cfg.heads, seed_list(cfg.seed, 2))
    opponent = init_agent(lm_cfg.model_dim, lm_cfg.heads, seed_list(cfg.seed, 3))
    train_pool, d_val = split_holdout(task.train.examples,
                                      cfg.meta_train.validation_set_size, cfg.seed)

    (run_dir / "config.json").write_text(json.dumps(cfg.to_json(), indent=1, sort_keys=True))
    (run_dir / "vocab.json").write_text(json.dumps(vocab.to_json()))
    save_params(lm0.params, run_dir / "checkpoints" / "lm-init",
                meta={"lm_config": lm_cfg.to_json(), "episode": -1})
    return RunState(run_dir=run_dir, cfg=cfg, vocab=vocab, ctxs=ctxs, lm0=lm0,
                    lm=lm0.copy(), agent=agent, opponent=opponent,
                    buffer=ReplayBuffer(cfg.rl.replay_buffer_size),
                    buffer_op=ReplayBuffer(cfg.rl.replay_buffer_size),
                    train_pool=train_pool, d_val=d_val)


def resume_run(task: Task, cfg: RunConfig, run_dir: str | Path) -> RunState:
    run_dir = Path(run_dir)
    state_path = run_dir / "state.json"
    if not state_path.exists():
        raise ConfigError(f"nothing to resume: {state_path} missing")
    saved_cfg = json.loads((run_dir / "config.json").read_text())
    if saved_cfg != cfg.to_json():
        raise ConfigError("config does not match the run directory snapshot")
    meta = json.loads(state_path.read_text())
    _validate_task_against(cfg, task)

    vocab = Vocab.from_json(json.loads((run_dir / "vocab.json").read_text()))
    ctxs = {c.context_id: tokenize(c.text, vocab, cfg.model.max_seq_len, c.context_id)
            for c in task.corpus}
    lm_cfg = LmConfig.from_json(json.loads(
        (run_dir / "checkpoints" / "lm-init.json").read_text())["meta"]["lm_config"])

    def load_lm(tag):
        params, m = load_params(run_dir / "checkpoints" / tag)
        return LmCheckpoint(params, lm_cfg, episode=m.get("episode", 0))

    def load_agent(tag):
        params, _ = load_params(run_dir / "checkpoints" / tag)
        return AgentParams(params, lm_cfg.model_dim, lm_cfg.heads)

    e = meta["episode_next"]
    lm0 = load_lm("lm-init")
    state = RunState(
        run_dir=run_dir, cfg=cfg, vocab=vocab, ctxs=ctxs, lm0=lm0,
        lm=load_lm(f"lm-{e - 1}") if e > 0 else lm0.copy(),
        agent=load_agent(f"agent-{e - 1}") if e > 0 else
        init_agent(lm_cfg.model_dim, lm_cfg.heads, seed_list(cfg.seed, 2)),
        opponent=load_agent(f"opponent-{e - 1}") if e > 0 else
        init_agent(lm_cfg.model_dim, lm_cfg.heads, seed_list(cfg.seed, 3)),
        buffer=ReplayBuffer.from_jsonl(run_dir / "replays.jsonl", cfg.rl.replay_buffer_size)
        if (run_dir / "replays.jsonl").exists() else ReplayBuffer(cfg.rl.replay_buffer_size),
        buffer_op=ReplayBuffer.from_jsonl(run_dir / "replays-op.jsonl", cfg.rl.replay_buffer_size)
        if (run_dir / "replays-op.jsonl").exists() else ReplayBuffer(cfg.rl.replay_buffer_size),
        train_pool=split_holdout(task.train.examples, cfg.meta_train.validation_set_size,
                                 cfg.seed)[0],
        d_val=split_holdout(task.train.examples, cfg.meta_train.validation_set_size,
                            cfg.seed)[1],
        episode_next=e, cum_regret=meta["cum_regret"],
    )
    metrics_path = run_dir / "metrics.jsonl"
    if metrics_path.exists():
        lines = metrics_path.read_text().splitlines()
        kept = [ln for ln in lines if json.loads(ln)["episode"] < e]
        metrics_path.write_text("".join(ln + "\n" for ln in kept))
        state.records = [json.loads(ln) for ln in kept]
    return state


def _persist_episode(state: RunState, episode: int, record: dict) -> None:
    run_dir = state.run_dir
    ck = run_dir / "checkpoints"
    save_params(state.lm.params, ck / f"lm-{episode}",
                meta={"lm_config": state.lm.config.to_json(), "episode": episode})
    save_params(state.agent.params, ck / f"agent-{episode}",
                meta={"episode": episode, "role": "primary"})
    save_params(state.opponent.params, ck / f"opponent-{episode}",
                meta={"episode": episode, "role": "opponent"})
    state.buffer.to_jsonl(run_dir / "replays.jsonl")
    state.buffer_op.to_jsonl(run_dir / "replays-op.jsonl")
    with (run_dir / "metrics.jsonl").open("a") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")
    tmp = run_dir / "state.json.tmp"
    tmp.write_text(json.dumps({"episode_next": episode + 1,
                               "cum_regret": state.cum_regret}, sort_keys=True))
    os.replace(tmp, run_dir / "state.json")
    keep = state.cfg.training.keep_checkpoints
    if keep > 0:
        stale = episode - keep
        for tag in ("lm", "agent", "opponent"):
            for suffix in (".bin", ".json", ".opt.bin"):
                p = ck / f"{tag}-{stale}{suffix}"
                if p.exists():
                    p.unlink()


def run_episode(state: RunState, task: Task, episode: int) -> dict:
    cfg = state.cfg
    seed = cfg.seed
    settings = _inner_settings(cfg)
    corpus = task.pretrain_corpus()
    kind = task.train.kind
    labels = task.train.labels

    sub = sample_subtask(corpus, state.train_pool, state.d_val,
                         cfg.meta_train.sampled_pre_training_dataset_size,
                         cfg.meta_train.maximum_training_set_size,
                         rng_from(seed, episode, 100))
    cache = HiddenCache(state.lm, state.ctxs, batch_size=cfg.training.eval_batch_size)
    explore = episode < cfg.training.warmup_episodes
    train_seed = seed_list(seed, episode, 101)
    ft_seed = seed_list(seed, episode, 102)

    start = time.time()
    res_rand = inner_loop(state.lm, UNIFORM, sub, state.ctxs, state.vocab, kind, labels,
                          settings, seed_list(seed, episode, 103), train_seed, ft_seed, cache)
    if cfg.training.self_play:
        pol_op = UNIFORM if explore else neural_policy(state.opponent)
        res_op = inner_loop(state.lm, pol_op, sub, state.ctxs, state.vocab, kind, labels,
                            settings, seed_list(seed, episode, 104), train_seed, ft_seed, cache)
    else:
        res_op = res_rand
    pol = UNIFORM if explore else neural_policy(state.agent)
    res = inner_loop(state.lm, pol, sub, state.ctxs, state.vocab, kind, labels,
                     settings, seed_list(seed, episode, 105), train_seed, ft_seed, cache)

    pol_stats = policy_state_metrics(state.agent, cache, sub.context_ids, state.ctxs,
                                     cfg.training.eval_batch_size)

    if cfg.training.self_play:
        state.opponent, info_op = outer_loop(
            state.buffer_op, state.opponent, res_op.entries, res_op.score,
            res_rand.entries, res_rand.score, res.entries, res.score,
            cache, state.ctxs, cfg, rng_from(seed, episode, 106))
    else:
        info_op = {"policy_loss": 0.0, "value_loss": 0.0, "new_replays": 0}
    state.agent, info = outer_loop(
        state.buffer, state.agent, res.entries, res.score,
        res_rand.entries, res_rand.score, res_op.entries, res_op.score,
        cache, state.ctxs, cfg, rng_from(seed, episode, 107))

    lm_start_hash = state.lm.content_hash()
    state.lm = res.lm_out if cfg.training.continual else state.lm0.copy()
    state.lm.episode = episode + 1
    state.cum_regret += 1 if res.score < res_rand.score else 0

    record = {
        "episode": episode,
        "r_neural": res.score,
        "r_random": res_rand.score,
        "r_opponent": res_op.score if cfg.training.self_play else None,
        "reward": compute_reward(res.score, res_rand.score),
        "reward_vs_opponent": compute_reward(res.score, res_op.score)
        if cfg.training.self_play else None,
        "entropy": pol_stats["entropy"],
        "class_mass": pol_stats["class_mass"],
        "class_uniform": pol_stats["class_uniform"],
        "policy_loss": info["policy_loss"],
        "value_loss": info["value_loss"],
        "opponent_policy_loss": info_op["policy_loss"],
        "opponent_value_loss": info_op["value_loss"],
        "new_replays": info["new_replays"],
        "cum_regret": state.cum_regret,
        "explore": explore,
        "mask_hist_neural": res.mask_class_hist,
        "mask_hist_random": res_rand.mask_class_hist,
        "scores_neural": res.scores,
        "lm_hash_start": lm_start_hash,
        "lm_hash_end": state.lm.content_hash(),
        "wall_time": time.time() - start,
    }
    return record


def meta_train(task: Task, cfg: RunConfig, run_dir: str | Path,
               resume: bool = False, max_episodes: int | None = None,
               progress=None) -> RunState:
    """Algorithms: self-play episodes with continual checkpoint carrying.

    ``max_episodes`` overrides cfg.rl.maximum_episodes (useful for
    partial runs); resuming continues from the last persisted episode.
    """
    state = resume_run(task, cfg, run_dir) if resume else setup_run(task, cfg, run_dir)
    total = cfg.rl.maximum_episodes if max_episodes is None else max_episodes
    for episode in range(state.episode_next, total):
        record = run_episode(state, task, episode)
        state.records.append(record)
        state.episode_next = episode + 1
        _persist_episode(state, episode, record)
        if progress is not None:
            progress(record)
    return state


# ---------------------------------------------------------------------------
# Meta-testing
# ---------------------------------------------------------------------------

def meta_test(task: Task, vocab: Vocab, lm: LmCheckpoint, cfg: RunConfig, seed,
              agent: AgentParams | None = None, strategy: str = "neural") -> dict:
    """One inner loop on the full task with test-time hyperparameters,
    scored on the held-out test set."""
    if task.test is None or not task.test.examples:
        raise DataError("meta_test needs a test split")
    mt = cfg.meta_test
    neural = strategy == "neural"
    if neural and agent is None:
        raise ConfigError("strategy 'neural' needs a trained agent")
    ctxs = {c.context_id: tokenize(c.text, vocab, cfg.model.max_seq_len, c.context_id)
            for c in task.corpus}
    settings = InnerSettings(
        p=mt.pre_training_masking_probability if neural else mt.baseline_masking_probability,
        pretrain_epochs=mt.pre_training_epoch if neural else mt.baseline_pre_training_epoch,
        pretrain_lr=mt.pre_training_learning_rate,
        pretrain_batch=mt.pre_training_batch_size,
        ft_epochs=mt.fine_tuning_epoch,
        ft_lr=mt.fine_tuning_learning_rate,
        ft_batch=mt.fine_tuning_batch_size,
        weight_decay=cfg.training.weight_decay,
        eval_batch=cfg.training.eval_batch_size,
        resample_each_epoch=not cfg.training.freeze_masks,
        bert_corruption=cfg.training.bert_corruption,
    )
    if strategy == "none":
        policy = NONE
    elif neural:
        policy = neural_policy(agent, stochastic=False)   # greedy at test time
    else:
        policy = heuristic_policy(strategy)
    corpus = task.pretrain_corpus()
    sub = SubTask(context_ids=[c.context_id for c in corpus],
                  train=list(task.train.examples), val=list(task.test.examples))
    cache = HiddenCache(lm, ctxs, cfg.training.eval_batch_size)
    res = inner_loop(lm, policy, sub, ctxs, vocab, task.train.kind, task.train.labels,
                     settings, seed_list(seed, 900), seed_list(seed, 901),
                     seed_list(seed, 902), cache)
    return {"strategy": strategy, "seed": seed, **res.scores,
            "score": res.score, "mask_hist": res.mask_class_hist,
            "n_test": len(task.test.examples)}


def export_curves_csv(records: list[dict], path: str | Path) -> None:
    """Fixed-column learning-curve export."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(METRIC_CSV_COLUMNS)]
    for rec in records:
        lines.append(",".join(
            "" if rec.get(col) is None else repr(rec[col]) if isinstance(rec[col], float)
            else str(rec[col]) for col in METRIC_CSV_COLUMNS))
    path.write_text("\n".join(lines) + "\n")
