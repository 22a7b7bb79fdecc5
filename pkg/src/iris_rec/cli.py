"""Command-line entry point: ``iris {train,evaluate,recommend,explain,gradcheck}``.

Exit status: 0 on success, 1 on validation errors (bad config, unknown
user, checkpoint/config mismatch), 2 on runtime errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

import numpy as np

from .activations import sigmoid
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, load_config
from .dataset import (
    DatasetError,
    leave_one_out_split,
    load_interactions,
    sample_train_negatives,
    sample_train_triples,
)
from .evaluation import evaluate, model_scorer
from .features import FeatureFormatError, load_feature_store, zero_fill_modality
from .gradients import finite_difference_check
from .model import interest_relevance, score
from .training import initialize, train

log = logging.getLogger("iris_rec")


class UsageError(ValueError):
    """Invalid request detected before any work is done."""


def _pipeline(cfg: RunConfig):
    data = load_interactions(cfg.interactions, cfg.min_user_interactions)
    split = leave_one_out_split(data, cfg.hp.seed)
    store = None
    if cfg.variant.uses_features:
        store = load_feature_store(cfg.visual_features, cfg.textual_features, data,
                                   textual_dim=cfg.feature_hidden_dim)
        if cfg.zero_fill != "none":
            store = zero_fill_modality(store, cfg.zero_fill)
    return data, split, store


def _load_run(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _load_model(cfg: RunConfig, args, split):
    path = args.checkpoint or cfg.checkpoint_path
    params, hp, header = load_checkpoint(path)
    if params.variant is not cfg.variant:
        raise UsageError(f"checkpoint variant {params.variant.value} does not match config variant {cfg.variant.value}")
    if params.num_items != split.num_items:
        raise UsageError(f"checkpoint has {params.num_items} items, dataset has {split.num_items}")
    if "b_user" in params.tensors and params["b_user"].size != split.num_users:
        raise UsageError("checkpoint user count does not match the dataset")
    # evaluation settings come from the run config; model settings from the checkpoint
    return params, replace(hp, top_n=cfg.hp.top_n, seed=cfg.hp.seed)


def cmd_train(args) -> int:
    cfg = _load_run(args)
    _, split, store = _pipeline(cfg)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    params, report = train(split, store, cfg.hp, cfg.variant, cfg.loss, cfg.max_epochs, cfg.patience,
                           checkpoint_path=cfg.checkpoint_path, threads=args.threads)
    if report.best_epoch is None:
        save_checkpoint(cfg.checkpoint_path, params, cfg.hp, cfg.loss, meta={"best_epoch": 0})
    cfg.report_path.write_text(report.to_csv(), encoding="utf-8")
    print(f"best epoch {report.best_epoch} ({report.stop_reason}); checkpoint {cfg.checkpoint_path}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_run(args)
    _, split, store = _pipeline(cfg)
    params, hp = _load_model(cfg, args, split)
    report = evaluate(split, store, params, hp, "test", threads=args.threads)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    text = report.to_csv()
    cfg.metrics_path.write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def _user(data, raw):
    if raw is None:
        raise UsageError("--user is required")
    try:
        return data.user_index(raw)
    except KeyError:
        raise UsageError(f"unknown user {raw!r}") from None


def cmd_recommend(args) -> int:
    cfg = _load_run(args)
    data, split, store = _pipeline(cfg)
    params, hp = _load_model(cfg, args, split)
    u = _user(data, args.user)
    mask = np.ones(split.num_items, bool)
    mask[data.positives[u]] = False
    pool = np.flatnonzero(mask)
    n = args.n
    if n < 1:
        raise UsageError("--n must be positive")
    if n > pool.size:
        log.warning("requested %d items but only %d are available; returning %d", n, pool.size, pool.size)
        n = pool.size
    scores = model_scorer(params, hp, split, store)(np.full(pool.size, u), pool)
    order = np.lexsort((pool, -scores))[:n]
    probs = sigmoid(scores[order])
    print("rank,item_id,probability")
    for rank, (item, p) in enumerate(zip(pool[order].tolist(), probs.tolist()), start=1):
        print(f"{rank},{data.item_ids[item]},{p:.6f}")
    return 0


def cmd_explain(args) -> int:
    cfg = _load_run(args)
    data, split, store = _pipeline(cfg)
    params, hp = _load_model(cfg, args, split)
    if not params.variant.has_attention:
        raise UsageError(f"variant {params.variant.value} has no attention; nothing to explain")
    u = _user(data, args.user)
    if args.item is None:
        raise UsageError("--item is required")
    try:
        j = data.item_index(args.item)
    except KeyError:
        raise UsageError(f"unknown item {args.item!r}") from None
    if args.top_m < 0:
        raise UsageError("--top-m must be >= 0")
    prob = float(sigmoid(score(params, hp, split, [u], [j], store=store))[0])
    att = interest_relevance(u, j, params, hp, split, store, top_m=args.top_m)
    print(f"# user={args.user} target={args.item} probability={prob:.6f}")
    print("history_item,alpha")
    for item, w in zip(att.history, att.weights.tolist()):
        print(f"{data.item_ids[item]},{w:.6f}")
    return 0


def cmd_gradcheck(args) -> int:
    cfg = _load_run(args)
    _, split, store = _pipeline(cfg)
    # probe away from the tiny-gradient regime of the production init scale
    hp = replace(cfg.hp, activation="softplus", init_std=max(cfg.hp.init_std, 0.1))
    if args.checkpoint:
        params, _ = _load_model(cfg, args, split)
    else:
        params = initialize(hp, split.num_users, split.num_items, cfg.variant,
                            visual_dim=store.visual_dim if store else 0,
                            textual_dim=store.textual_dim if store else 0)
    sampler = sample_train_triples if cfg.loss == "bpr" else sample_train_negatives
    batch = sampler(split, hp.K, hp.seed, 0)[:args.batch]
    report = finite_difference_check(params, hp, split, batch, store, cfg.loss, tolerance=args.tolerance,
                                     seed=hp.seed)
    print(report.format())
    if not report.passed:
        print(f"gradient check failed for: {', '.join(report.failed)}", file=sys.stderr)
        return 2
    return 0


COMMANDS = {
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "recommend": cmd_recommend,
    "explain": cmd_explain,
    "gradcheck": cmd_gradcheck,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="iris", description="Interest-related item similarity recommender")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--checkpoint")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("-v", "--verbose", action="store_true")
        if name in ("recommend", "explain"):
            p.add_argument("--user")
        if name == "recommend":
            p.add_argument("--n", type=int, default=10)
        if name == "explain":
            p.add_argument("--item")
            p.add_argument("--top-m", type=int, default=3)
        if name == "gradcheck":
            p.add_argument("--batch", type=int, default=32)
            p.add_argument("--tolerance", type=float, default=1e-4)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 1
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, UsageError, DatasetError, FeatureFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (CheckpointError, FloatingPointError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
