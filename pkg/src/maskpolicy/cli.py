"""Command-line entry points.

Commands: gen-corpus, meta-train, meta-test, baseline, analyze.
Exit codes: 0 success, 1 usage/config error, 2 data validation error,
3 runtime numeric failure.

Any config key can be overridden from the environment, e.g.
MASKPOLICY_RL__LEARNING_RATE=0.001.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="JSON run config")
    common.add_argument("--seed", type=int, default=None, help="override config seed")
    common.add_argument("--run-dir", type=Path, default=None, help="run directory")
    common.add_argument("--threads", type=int, default=None,
                        help="BLAS thread cap (set before numpy loads)")

    p = argparse.ArgumentParser(prog="maskpolicy",
                                description="Learned masking policies for task-adaptive "
                                            "MLM pretraining")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-corpus", parents=[common], help="generate a synthetic task")
    g.add_argument("--out-dir", type=Path, required=True)

    t = sub.add_parser("meta-train", parents=[common], help="run meta-training")
    t.add_argument("--data-dir", type=Path, required=True)
    t.add_argument("--resume", action="store_true")
    t.add_argument("--episodes", type=int, default=None,
                   help="stop after this many episodes (partial run)")
    t.add_argument("--quiet", action="store_true")

    m = sub.add_parser("meta-test", parents=[common],
                       help="evaluate a trained run on the test split")
    m.add_argument("--data-dir", type=Path, required=True)
    m.add_argument("--strategy", default="neural")
    m.add_argument("--out", type=Path, default=None)

    b = sub.add_parser("baseline", parents=[common],
                       help="rule-based masking strategies from a fresh model")
    b.add_argument("--data-dir", type=Path, required=True)
    b.add_argument("--strategy", default="all",
                   help="one strategy name or 'all'")
    b.add_argument("--seeds", default=None, help="comma-separated seeds")
    b.add_argument("--out", type=Path, default=None)

    a = sub.add_parser("analyze", parents=[common],
                       help="export curves and mask statistics for a run")
    return p


def _apply_threads(n: int | None) -> None:
    if n is None:
        return
    if n < 1:
        raise SystemExit("--threads must be >= 1")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def _load_run_config(args):
    from .config import load_config
    return load_config(args.config, seed_override=args.seed)


def _synth_config(cfg):
    from .data import SynthConfig
    return SynthConfig(kind=cfg.data.kind, **cfg.data.gen)


def _print_rows(rows: list[dict], columns: list[str]) -> None:
    widths = {c: max(len(c), *(len(_fmt(r.get(c))) for r in rows)) for c in columns}
    print("  ".join(c.ljust(widths[c]) for c in columns))
    for r in rows:
        print("  ".join(_fmt(r.get(c)).ljust(widths[c]) for c in columns))


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.4f}"
    return "" if v is None else str(v)


def cmd_gen_corpus(args) -> int:
    from .data import gen_synthetic_task, split_task_contexts, write_jsonl
    cfg = _load_run_config(args)
    synth = _synth_config(cfg)
    corpus, dataset = gen_synthetic_task(synth, cfg.seed)
    task = split_task_contexts(corpus, dataset, cfg.data.test_fraction, cfg.seed)
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    write_jsonl(out / "train.jsonl", task.pretrain_corpus(), task.train)
    write_jsonl(out / "test.jsonl", task.corpus[task.n_train_contexts:], task.test)
    (out / "gen-config.json").write_text(
        json.dumps({"seed": cfg.seed, "kind": synth.kind, "gen": cfg.data.gen,
                    "test_fraction": cfg.data.test_fraction}, indent=1, sort_keys=True))
    print(f"wrote {len(task.pretrain_corpus())} train / "
          f"{len(task.corpus) - task.n_train_contexts} test contexts to {out}")
    return 0


def cmd_meta_train(args) -> int:
    from .data import load_task
    from .metaloop import export_curves_csv, meta_train
    cfg = _load_run_config(args)
    if args.run_dir is None:
        raise SystemExit("meta-train needs --run-dir")
    task = load_task(args.data_dir, cfg.data.kind)

    def progress(rec):
        if not args.quiet:
            opp = "" if rec["r_opponent"] is None else f" r_op={rec['r_opponent']:.3f}"
            print(f"episode {rec['episode']:4d}  r={rec['r_neural']:.3f} "
                  f"r_rand={rec['r_random']:.3f}{opp}  entropy={rec['entropy']:.2f}  "
                  f"regret={rec['cum_regret']}", flush=True)

    state = meta_train(task, cfg, args.run_dir, resume=args.resume,
                       max_episodes=args.episodes, progress=progress)
    export_curves_csv(state.records, args.run_dir / "curves.csv")
    report = {
        "episodes": state.episode_next,
        "final_lm_hash": state.lm.content_hash(),
        "final_agent_hash": state.agent.content_hash(),
        "cum_regret": state.cum_regret,
        "replay_buffer_size": len(state.buffer),
    }
    (args.run_dir / "report.json").write_text(json.dumps(report, indent=1, sort_keys=True))
    print(json.dumps(report, sort_keys=True))
    return 0


def _load_run_artifacts(run_dir: Path):
    from .agent import AgentParams
    from .config import config_from_dict
    from .model import LmCheckpoint, LmConfig
    from .optim import load_params
    from .vocab import Vocab
    cfg = config_from_dict(json.loads((run_dir / "config.json").read_text()))
    vocab = Vocab.from_json(json.loads((run_dir / "vocab.json").read_text()))
    state = json.loads((run_dir / "state.json").read_text())
    last = state["episode_next"] - 1
    lm_cfg = LmConfig.from_json(json.loads(
        (run_dir / "checkpoints" / "lm-init.json").read_text())["meta"]["lm_config"])
    lm_params, _ = load_params(run_dir / "checkpoints" / f"lm-{last}")
    agent_params, _ = load_params(run_dir / "checkpoints" / f"agent-{last}")
    lm = LmCheckpoint(lm_params, lm_cfg, episode=last + 1)
    agent = AgentParams(agent_params, lm_cfg.model_dim, lm_cfg.heads)
    return cfg, vocab, lm, agent


def cmd_meta_test(args) -> int:
    from .data import load_task
    from .metaloop import meta_test
    if args.run_dir is None:
        raise SystemExit("meta-test needs --run-dir")
    cfg, vocab, lm, agent = _load_run_artifacts(args.run_dir)
    seed = cfg.seed if args.seed is None else args.seed
    task = load_task(args.data_dir, cfg.data.kind)
    report = meta_test(task, vocab, lm, cfg, seed, agent=agent, strategy=args.strategy)
    out = args.out or (args.run_dir / f"meta-test-{args.strategy}.json")
    out.write_text(json.dumps(report, indent=1, sort_keys=True))
    cols = ["strategy", "seed"] + [k for k in ("em", "f1", "acc") if k in report]
    _print_rows([report], cols)
    return 0


def cmd_baseline(args) -> int:
    from .data import load_task
    from .masking import STRATEGY_NAMES
    from .metaloop import meta_test
    from .model import LmConfig, init_lm
    from .seeding import seed_list
    from .vocab import build_vocab
    from .errors import ConfigError
    cfg = _load_run_config(args)
    names = [s for s in STRATEGY_NAMES if s != "neural"] if args.strategy == "all" \
        else [args.strategy]
    for name in names:
        if name not in STRATEGY_NAMES or name == "neural":
            raise ConfigError(
                f"unknown baseline strategy {name!r}; valid: "
                f"{', '.join(s for s in STRATEGY_NAMES if s != 'neural')}")
    seeds = [cfg.seed] if args.seeds is None else [int(s) for s in args.seeds.split(",")]
    task = load_task(args.data_dir, cfg.data.kind)
    vocab = build_vocab([c.text for c in task.corpus], cfg.data.max_vocab, cfg.data.min_freq)
    rows = []
    for seed in seeds:
        lm_cfg = LmConfig(layers=cfg.model.layers, heads=cfg.model.heads,
                          model_dim=cfg.model.model_dim, ff_dim=cfg.model.ff_dim,
                          max_seq_len=cfg.model.max_seq_len, vocab_size=len(vocab),
                          dropout=cfg.model.dropout)
        lm = init_lm(lm_cfg, seed_list(seed, 1))
        for name in names:
            rows.append(meta_test(task, vocab, lm, cfg, seed, strategy=name))
    out = args.out or Path("baseline-report.json")
    out.write_text(json.dumps(rows, indent=1, sort_keys=True))
    cols = ["strategy", "seed"] + [k for k in ("em", "f1", "acc") if k in rows[0]]
    _print_rows(rows, cols)
    return 0


def cmd_analyze(args) -> int:
    from .metaloop import METRIC_CSV_COLUMNS, cumulative_regret, export_curves_csv
    from .errors import DataError
    if args.run_dir is None:
        raise SystemExit("analyze needs --run-dir")
    metrics_path = args.run_dir / "metrics.jsonl"
    if not metrics_path.exists():
        raise DataError(f"no metrics at {metrics_path}")
    records = [json.loads(ln) for ln in metrics_path.read_text().splitlines()]
    if not records:
        raise DataError("metrics file is empty")
    export_curves_csv(records, args.run_dir / "curves.csv")

    def total_hist(key):
        out: dict[str, int] = {}
        for rec in records:
            for cls, n in rec[key].items():
                out[cls] = out.get(cls, 0) + n
        return dict(sorted(out.items()))

    neural, random_ = total_hist("mask_hist_neural"), total_hist("mask_hist_random")
    classes = sorted(set(neural) | set(random_))
    differential = {c: neural.get(c, 0) - random_.get(c, 0) for c in classes}
    analysis = {
        "episodes": len(records),
        "mask_class_counts_neural": neural,
        "mask_class_counts_random": random_,
        "mask_class_differential": differential,
        "total_masked_neural": sum(neural.values()),
        "total_masked_random": sum(random_.values()),
        "final_cum_regret": int(cumulative_regret(records)[-1]),
        "mean_entropy_last_20": float(
            sum(r["entropy"] for r in records[-20:]) / min(20, len(records))),
    }
    (args.run_dir / "analysis.json").write_text(json.dumps(analysis, indent=1, sort_keys=True))
    print(f"wrote {args.run_dir / 'curves.csv'} and {args.run_dir / 'analysis.json'}")
    rows = [{"class": c, "neural": neural.get(c, 0), "random": random_.get(c, 0),
             "difference": differential[c]} for c in classes]
    _print_rows(rows, ["class", "neural", "random", "difference"])
    return 0


COMMANDS = {
    "gen-corpus": cmd_gen_corpus,
    "meta-train": cmd_meta_train,
    "meta-test": cmd_meta_test,
    "baseline": cmd_baseline,
    "analyze": cmd_analyze,
}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    _apply_threads(getattr(args, "threads", None))
    from .errors import ConfigError, DataError, NumericError
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
