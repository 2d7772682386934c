import json

import numpy as np
import pytest

from maskpolicy.config import config_from_dict
from maskpolicy.data import SynthConfig, gen_synthetic_task, split_task_contexts
from maskpolicy.errors import ConfigError, DataError
from maskpolicy.metaloop import (
    UNIFORM, InnerSettings, cumulative_regret, export_curves_csv,
    heuristic_policy, inner_loop, meta_test, meta_train, neural_policy,
    plan_masks, run_episode, setup_run,
)
from maskpolicy.rl import HiddenCache
from maskpolicy.seeding import seed_list, rng_from


def small_cfg(**over):
    base = {
        "seed": 0,
        "model": {"layers": 1, "heads": 2, "model_dim": 32, "ff_dim": 64,
                  "max_seq_len": 64},
        "rl": {"maximum_episodes": 4, "number_of_epochs": 2, "minibatch_size": 8},
        "meta_train": {"pre_training_learning_rate": 1e-3, "pre_training_epoch": 1,
                       "sampled_pre_training_dataset_size": 20,
                       "pre_training_batch_size": 8,
                       "fine_tuning_learning_rate": 1e-3, "fine_tuning_epoch": 1,
                       "maximum_training_set_size": 30, "validation_set_size": 40,
                       "fine_tuning_batch_size": 8},
        "training": {"warmup_episodes": 1, "keep_checkpoints": 0},
    }
    for key, sub in over.items():
        base.setdefault(key, {}).update(sub)
    return config_from_dict(base)


@pytest.fixture(scope="module")
def small_task():
    corpus, ds = gen_synthetic_task(
        SynthConfig(n_contexts=60, context_len=32, marker_vocab_size=8,
                    filler_vocab_size=30, markers_per_context=3,
                    questions_per_context=2), seed=4)
    return split_task_contexts(corpus, ds, 0.2, seed=4)


@pytest.fixture(scope="module")
def ready(small_task, tmp_path_factory):
    cfg = small_cfg()
    state = setup_run(small_task, cfg, tmp_path_factory.mktemp("run"))
    return state, small_task


def _settings():
    return InnerSettings(p=0.15, pretrain_epochs=1, pretrain_lr=1e-3, pretrain_batch=8,
                         ft_epochs=1, ft_lr=1e-3, ft_batch=8)


def test_plan_masks_uniform_records_original_probs(ready):
    state, task = ready
    ids = [c.context_id for c in task.pretrain_corpus()[:5]]
    plans, entries = plan_masks(UNIFORM, ids, state.ctxs, None, 0.15,
                                np.random.default_rng(0))
    assert set(plans) == set(ids)
    for cid, pos, pi in entries:
        m = state.ctxs[cid].maskable().sum()
        assert pi == pytest.approx(1.0 / m)
        assert pos in plans[cid].positions


def test_plan_masks_neural_matches_policy_support(ready):
    state, task = ready
    ids = [c.context_id for c in task.pretrain_corpus()[:4]]
    cache = HiddenCache(state.lm, state.ctxs)
    plans, entries = plan_masks(neural_policy(state.agent), ids, state.ctxs, cache,
                                0.15, np.random.default_rng(1))
    for cid, pos, pi in entries:
        assert state.ctxs[cid].maskable()[pos]
        assert 0.0 < pi <= 1.0


def test_inner_loop_uniform_reproducible(ready):
    state, task = ready
    from maskpolicy.data import sample_subtask
    sub = sample_subtask(task.pretrain_corpus(), state.train_pool, state.d_val,
                         10, 20, rng_from(1, 0))
    args = (state.lm, UNIFORM, sub, state.ctxs, state.vocab, "span_qa", [], _settings(),
            seed_list(5, 1), seed_list(5, 2), seed_list(5, 3))
    a = inner_loop(*args)
    b = inner_loop(*args)
    assert a.score == b.score
    assert a.entries == b.entries
    assert a.lm_out.content_hash() == b.lm_out.content_hash()
    assert a.lm_out.content_hash() != state.lm.content_hash()


def test_inner_loop_zero_pretrain_scores_equal_across_policies(ready):
    state, task = ready
    from maskpolicy.data import sample_subtask
    sub = sample_subtask(task.pretrain_corpus(), state.train_pool, state.d_val,
                         10, 20, rng_from(1, 1))
    s = _settings()
    s.pretrain_epochs = 0
    a = inner_loop(state.lm, UNIFORM, sub, state.ctxs, state.vocab, "span_qa", [], s,
                   seed_list(6, 1), seed_list(6, 2), seed_list(6, 3))
    b = inner_loop(state.lm, heuristic_policy("entity"), sub, state.ctxs, state.vocab,
                   "span_qa", [], s, seed_list(7, 1), seed_list(7, 2), seed_list(6, 3))
    assert a.score == b.score  # same checkpoint, same fine-tune seed
    assert a.lm_out.content_hash() == state.lm.content_hash()


def test_run_episode_produces_record(ready):
    state, task = ready
    rec = run_episode(state, task, episode=0)
    assert 0.0 <= rec["r_neural"] <= 1.0
    assert rec["reward"] in (-1, 0, 1)
    assert rec["lm_hash_start"] != rec["lm_hash_end"]  # continual carrying
    assert rec["explore"] is True
    assert set(rec["class_mass"]) == set(rec["class_uniform"])


def test_meta_train_persists_and_is_deterministic(small_task, tmp_path):
    cfg = small_cfg()
    s1 = meta_train(small_task, cfg, tmp_path / "a", max_episodes=2)
    s2 = meta_train(small_task, cfg, tmp_path / "b", max_episodes=2)
    assert s1.lm.content_hash() == s2.lm.content_hash()
    assert s1.agent.content_hash() == s2.agent.content_hash()
    lines = (tmp_path / "a" / "metrics.jsonl").read_text().splitlines()
    assert len(lines) == 2
    for e, ln in enumerate(lines):
        assert json.loads(ln)["episode"] == e
    assert (tmp_path / "a" / "checkpoints" / "lm-1.bin").exists()
    assert (tmp_path / "a" / "state.json").exists()


def _strip_wall(path):
    out = []
    for ln in path.read_text().splitlines():
        d = json.loads(ln)
        d.pop("wall_time")
        out.append(json.dumps(d, sort_keys=True))
    return out


def test_meta_train_resume_matches_uninterrupted(small_task, tmp_path):
    cfg = small_cfg()
    meta_train(small_task, cfg, tmp_path / "full", max_episodes=4)
    meta_train(small_task, cfg, tmp_path / "part", max_episodes=2)
    meta_train(small_task, cfg, tmp_path / "part", resume=True, max_episodes=4)
    assert _strip_wall(tmp_path / "full" / "metrics.jsonl") == \
        _strip_wall(tmp_path / "part" / "metrics.jsonl")


def test_meta_train_continual_off_resets_checkpoint(small_task, tmp_path):
    cfg = small_cfg(training={"continual": False, "warmup_episodes": 1,
                              "keep_checkpoints": 0})
    state = meta_train(small_task, cfg, tmp_path / "c", max_episodes=3)
    hashes = {json.loads(ln)["lm_hash_start"]
              for ln in (tmp_path / "c" / "metrics.jsonl").read_text().splitlines()}
    assert len(hashes) == 1  # every episode starts from the initial model


def test_meta_train_rejects_oversized_subtask(small_task, tmp_path):
    cfg = small_cfg(meta_train={"sampled_pre_training_dataset_size": 10_000})
    with pytest.raises(ConfigError):
        meta_train(small_task, cfg, tmp_path / "d", max_episodes=1)


def test_meta_train_self_play_off(small_task, tmp_path):
    cfg = small_cfg(training={"self_play": False, "warmup_episodes": 1,
                              "keep_checkpoints": 0})
    state = meta_train(small_task, cfg, tmp_path / "e", max_episodes=2)
    rec = state.records[-1]
    assert rec["r_opponent"] is None
    assert rec["reward_vs_opponent"] is None


def test_meta_test_strategies(small_task, tmp_path):
    cfg = small_cfg()
    state = meta_train(small_task, cfg, tmp_path / "f", max_episodes=1)
    neural = meta_test(small_task, state.vocab, state.lm, cfg, seed=0,
                       agent=state.agent, strategy="neural")
    rand = meta_test(small_task, state.vocab, state.lm, cfg, seed=0, strategy="random")
    nopt = meta_test(small_task, state.vocab, state.lm, cfg, seed=0, strategy="none")
    for rep in (neural, rand, nopt):
        assert {"em", "f1", "strategy"} <= set(rep)
    assert nopt["mask_hist"] == {}
    # identical seeds, no pretraining -> strategy-independent scores
    nopt2 = meta_test(small_task, state.vocab, state.lm, cfg, seed=0, strategy="none")
    assert nopt2["f1"] == nopt["f1"]
    with pytest.raises(ConfigError):
        meta_test(small_task, state.vocab, state.lm, cfg, seed=0, strategy="neural",
                  agent=None)


def test_meta_test_requires_test_split(small_task):
    cfg = small_cfg()
    from maskpolicy.data import Task
    bare = Task(corpus=small_task.corpus, train=small_task.train, test=None)
    from maskpolicy.model import LmConfig, init_lm
    from maskpolicy.vocab import build_vocab
    vocab = build_vocab([c.text for c in bare.corpus], 2000, 1)
    lm = init_lm(LmConfig(layers=1, heads=2, model_dim=32, ff_dim=64, max_seq_len=64,
                          vocab_size=len(vocab)), seed=0)
    with pytest.raises(DataError):
        meta_test(bare, vocab, lm, cfg, seed=0, strategy="random")


def test_cumulative_regret_rules():
    recs = [{"r_neural": a, "r_random": b}
            for a, b in [(0.5, 0.4), (0.3, 0.4), (0.4, 0.4), (0.1, 0.9)]]
    assert cumulative_regret(recs).tolist() == [0, 1, 1, 2]
    wins = [{"r_neural": 1.0, "r_random": 0.0}] * 3
    assert cumulative_regret(wins).tolist() == [0, 0, 0]
    losses = [{"r_neural": 0.0, "r_random": 1.0}] * 3
    assert cumulative_regret(losses).tolist() == [1, 2, 3]


def test_export_curves_csv(tmp_path):
    recs = [{"episode": 0, "r_neural": 0.5, "r_random": 0.25, "r_opponent": None,
             "reward": 1, "entropy": 3.21, "policy_loss": -0.5, "value_loss": 0.1,
             "cum_regret": 0}]
    export_curves_csv(recs, tmp_path / "curves.csv")
    lines = (tmp_path / "curves.csv").read_text().splitlines()
    assert lines[0] == "episode,r_neural,r_random,r_opponent,reward,entropy,policy_loss,value_loss,cum_regret"
    assert lines[1].startswith("0,0.5,0.25,,1,")
