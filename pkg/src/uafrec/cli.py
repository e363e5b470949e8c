"""Command-line entry point.

    uafrec <command> [--config FILE] [--key value ...] --out DIR

Commands: pretrain, finetune, evaluate, policy-viz, generate. Every command
writes the resolved configuration to ``DIR/config.txt``.

Exit codes: 0 success, 2 config/usage error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys

import numpy as np

from . import checkpoint as ckpt
from .autodiff import NonFiniteError
from .backbone import BackboneConfig, PretrainConfig, pretrain
from .config import ConfigError, RunConfig
from .data import (DataError, SyntheticConfig, generate_synthetic, load_dataset, split_dataset,
                   subsample_training, write_dataset)
from .evaluation import (evaluate, policy_decisions, utilization_profile, write_curves_csv,
                         write_metrics_csv, write_utilization_csv)
from .finetune import FinetuneConfig, FinetuneError, UafModel, run_baseline, run_uaf
from .policy import PolicyError, write_decisions_csv

log = logging.getLogger("uafrec")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
COMMANDS = ("pretrain", "finetune", "evaluate", "policy-viz", "generate")


class UsageError(Exception):
    pass


# -- helpers -------------------------------------------------------------------------

def _parse_overrides(extra):
    """``["--lr", "0.1", "--seed=3"]`` -> ``{"lr": "0.1", "seed": "3"}``."""
    out = {}
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or tok == "--":
            raise UsageError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, val = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise UsageError(f"missing value for --{key}")
            val = extra[i + 1]
            i += 2
        out[key] = val
    return out


def _backbone_config(cfg, vocab):
    return BackboneConfig(vocab_size=vocab, embed_dim=cfg.embed_dim, dilations=cfg.dilations,
                          kernel_size=cfg.kernel_size, seq_len=cfg.seq_len)


def _finetune_config(cfg):
    return FinetuneConfig(lr=cfg.lr, batch_size=cfg.batch_size, epochs=cfg.epochs, seed=cfg.seed,
                          tau=cfg.tau, tau_decay=cfg.tau_decay, gamma=cfg.gamma, beta=cfg.beta,
                          metric_n=cfg.metric_n)


def _need(cfg, *keys):
    for k in keys:
        if not getattr(cfg, k):
            raise ConfigError(f"missing required config key {k!r}")


def _load_data(cfg):
    _need(cfg, "source_path", "target_path")
    for p in (cfg.source_path, cfg.target_path):
        if not os.path.exists(p):
            raise DataError(f"data file not found: {p}")
    return load_dataset(cfg.source_path, cfg.target_path, cfg.source_vocab or None,
                        cfg.target_vocab or None, cfg.seq_len)


def _load_checkpoint(path, loader):
    if not path:
        raise ConfigError("missing required config key 'checkpoint'")
    if not os.path.exists(path):
        raise DataError(f"checkpoint not found: {path}")
    return loader(path)


def _split(cfg, ds):
    return subsample_training(split_dataset(ds, cfg.seed), cfg.train_fraction, cfg.seed)


def _policy_users(ds, indices):
    return np.unique(ds.target_users[indices])


# -- commands ------------------------------------------------------------------------

def cmd_pretrain(cfg, out):
    ds = _load_data(cfg)
    _, corpus = ds.source_matrix()
    bcfg = _backbone_config(cfg, ds.source_vocab)
    model, losses = pretrain(corpus, bcfg, PretrainConfig(cfg.pretrain_epochs, cfg.batch_size,
                                                          cfg.pretrain_lr, cfg.seed))
    ckpt.save_backbone(os.path.join(out, "backbone.ckpt"), model)
    with open(os.path.join(out, "pretrain_loss.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        for e, v in enumerate(losses, 1):
            w.writerow([e, f"{v:.6g}"])
    return model


def _write_policy_outputs(out, model, ds, users):
    gates = policy_decisions(model, ds, users)
    write_decisions_csv(os.path.join(out, "decisions.csv"), users, gates)
    write_utilization_csv(os.path.join(out, "utilization.csv"), utilization_profile(model, ds, users))


def cmd_finetune(cfg, out):
    ds = _load_data(cfg)
    split = _split(cfg, ds)
    fc = _finetune_config(cfg)
    if cfg.strategy == "none" and cfg.regime == "zero":
        if cfg.checkpoint:
            log.warning("regime 'zero' trains from scratch; ignoring checkpoint %s", cfg.checkpoint)
        model, res = run_baseline("zero", ds, split, fc, config=_backbone_config(cfg, ds.source_vocab))
    else:
        backbone = _load_checkpoint(cfg.checkpoint, ckpt.load_backbone)
        if backbone.config.seq_len != ds.seq_len:
            raise FinetuneError("sequence length mismatch between checkpoint and data")
        if cfg.strategy == "none":
            model, res = run_baseline(cfg.regime, ds, split, fc, backbone=backbone)
        else:
            model, res = run_uaf(cfg.strategy, ds, split, fc, backbone,
                                 tune_embeddings=cfg.tune_embeddings, policy_dim=cfg.policy_dim or None)
    tag = cfg.strategy if cfg.strategy != "none" else cfg.regime
    res.best_val.tag = res.test.tag = tag
    res.best_val.seed = res.test.seed = cfg.seed
    ckpt.save_finetuned(os.path.join(out, "finetuned.ckpt"), model,
                        {"best_epoch": res.best_epoch, "split_seed": cfg.seed})
    write_curves_csv(os.path.join(out, "curves.csv"), res.history)
    write_metrics_csv(os.path.join(out, "metrics.csv"), [res.test], split="test")
    write_metrics_csv(os.path.join(out, "val_metrics.csv"), [res.best_val], split="val")
    if isinstance(model, UafModel):
        _write_policy_outputs(out, model, ds, _policy_users(ds, split.test))
    return model, res


def cmd_evaluate(cfg, out):
    model, meta = _load_checkpoint(cfg.checkpoint, ckpt.load_finetuned)
    ds = _load_data(cfg)
    if model.config.vocab_size != ds.source_vocab or model.head.weight.shape[1] != ds.target_vocab:
        raise FinetuneError("vocabulary mismatch between checkpoint and data")
    split = _split(cfg, ds)
    idx = getattr(split, cfg.eval_split)
    tag = meta.get("strategy") if meta.get("kind") == "uaf" else meta.get("regime")
    report = evaluate(model, ds, idx, cfg.metric_n, tag=tag, seed=cfg.seed)
    write_metrics_csv(os.path.join(out, "metrics.csv"), [report], split=cfg.eval_split)
    return report


def cmd_policy_viz(cfg, out):
    model, _ = _load_checkpoint(cfg.checkpoint, ckpt.load_finetuned)
    if not isinstance(model, UafModel):
        raise ConfigError("policy-viz needs a checkpoint fine-tuned with a gating strategy")
    ds = _load_data(cfg)
    split = _split(cfg, ds)
    users = _policy_users(ds, getattr(split, cfg.eval_split))
    _write_policy_outputs(out, model, ds, users)
    return utilization_profile(model, ds, users)


def cmd_generate(cfg, out):
    try:
        sc = SyntheticConfig(num_users=cfg.num_users, source_vocab=cfg.gen_source_vocab,
                             target_vocab=cfg.gen_target_vocab, seq_len=cfg.seq_len,
                             factor_dim=cfg.factor_dim, rho=cfg.rho,
                             interactions=(cfg.min_interactions, cfg.max_interactions),
                             source_len=(cfg.min_source_len, cfg.max_source_len),
                             source_sharpness=cfg.source_sharpness,
                             target_sharpness=cfg.target_sharpness, seed=cfg.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    ds = generate_synthetic(sc)
    write_dataset(ds, os.path.join(out, "source.tsv"), os.path.join(out, "target.tsv"))
    return ds


HANDLERS = {"pretrain": cmd_pretrain, "finetune": cmd_finetune, "evaluate": cmd_evaluate,
            "policy-viz": cmd_policy_viz, "generate": cmd_generate}


# -- entry point ---------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="uafrec", description=__doc__.split("\n")[0],
                                epilog="Any RunConfig key may be overridden with --key value.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve_config(config_path, overrides):
    base = RunConfig.from_file(config_path) if config_path else RunConfig()
    return RunConfig.from_mapping(overrides, base=base) if overrides else base


def main(argv=None):
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args.config, _parse_overrides(extra))
        os.makedirs(args.out, exist_ok=True)
        cfg.write(os.path.join(args.out, "config.txt"))
        HANDLERS[args.command](cfg, args.out)
    except (ConfigError, UsageError) as exc:
        print(f"uafrec: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ckpt.CheckpointError, FinetuneError, FileNotFoundError) as exc:
        print(f"uafrec: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NonFiniteError, FloatingPointError, PolicyError) as exc:
        print(f"uafrec: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
