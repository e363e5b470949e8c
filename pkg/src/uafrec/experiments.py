"""Multi-seed synthetic experiments comparing fine-tuning regimes and gating
strategies. Used by the acceptance suite; also runnable directly::

    python -m uafrec.experiments --seeds 0,1,2 --out results/
"""

from __future__ import annotations

import argparse
import logging
import os
import time
from dataclasses import dataclass, replace

import numpy as np

from .backbone import DESK_DILATIONS, BackboneConfig, PretrainConfig, pretrain
from .data import SyntheticConfig, generate_synthetic, split_dataset, subsample_training
from .evaluation import utilization_profile, write_curves_csv, write_metrics_csv
from .finetune import REGIMES, FinetuneConfig, run_baseline, run_uaf

log = logging.getLogger(__name__)

METHODS = ("zero", "all", "hard", "soft", "rl")


@dataclass
class DeskSetup:
    """Desk-scale hyperparameters for the synthetic comparison."""

    num_users: int = 5000
    source_vocab: int = 1000
    target_vocab: int = 200
    rho: float = 0.9
    sharpness: float = 4.0
    embed_dim: int = 32
    dilations: tuple = DESK_DILATIONS
    pretrain_epochs: int = 10
    pretrain_lr: float = 1e-2
    lr: float = 3e-3
    batch_size: int = 256
    epochs: int = 8
    train_fraction: float = 1.0


@dataclass
class MethodRun:
    method: str
    seed: int
    test_hr: float
    best_val_hr: float
    best_epoch: int
    val_curve: list
    utilization: np.ndarray = None
    seconds: float = 0.0


_BACKBONES = {}


def prepare(setup, seed):
    """Synthetic dataset, split and pre-trained backbone for one seed (cached)."""
    sc = SyntheticConfig(num_users=setup.num_users, source_vocab=setup.source_vocab,
                         target_vocab=setup.target_vocab, rho=setup.rho,
                         source_sharpness=setup.sharpness, target_sharpness=setup.sharpness, seed=seed)
    key = (sc.num_users, sc.source_vocab, sc.target_vocab, sc.rho, sc.source_sharpness,
           setup.embed_dim, tuple(setup.dilations), setup.pretrain_epochs, setup.pretrain_lr,
           setup.batch_size, seed)
    if key not in _BACKBONES:
        ds = generate_synthetic(sc)
        _, corpus = ds.source_matrix()
        cfg = BackboneConfig(vocab_size=ds.source_vocab, embed_dim=setup.embed_dim,
                             dilations=setup.dilations, seq_len=ds.seq_len)
        bb, _ = pretrain(corpus, cfg, PretrainConfig(setup.pretrain_epochs, setup.batch_size,
                                                     setup.pretrain_lr, seed))
        _BACKBONES[key] = (ds, bb)
    ds, bb = _BACKBONES[key]
    split = subsample_training(split_dataset(ds, seed), setup.train_fraction, seed)
    return ds, split, bb


def run_method(method, setup, seed, out_dir=None):
    ds, split, bb = prepare(setup, seed)
    fc = FinetuneConfig(lr=setup.lr, batch_size=setup.batch_size, epochs=setup.epochs, seed=seed)
    t0 = time.perf_counter()
    if method in REGIMES:
        model, res = run_baseline(method, ds, split, fc, backbone=bb)
    else:
        model, res = run_uaf(method, ds, split, fc, bb)
    util = None
    if method not in REGIMES:
        util = utilization_profile(model, ds, np.unique(ds.target_users[split.test])).values
    run = MethodRun(method, seed, res.test.hr, res.best_val.hr, res.best_epoch, res.curve("val_hr"),
                    util, time.perf_counter() - t0)
    if out_dir is not None:
        d = os.path.join(out_dir, f"{method}-seed{seed}")
        os.makedirs(d, exist_ok=True)
        res.test.tag, res.test.seed = method, seed
        write_curves_csv(os.path.join(d, "curves.csv"), res.history)
        write_metrics_csv(os.path.join(d, "metrics.csv"), [res.test])
    log.info("%s seed %d: test HR %.4f best val %.4f (%.0fs)", method, seed, run.test_hr,
             run.best_val_hr, run.seconds)
    return run


def run_grid(setup, seeds, methods=METHODS, out_dir=None):
    """``{method: [MethodRun per seed]}``."""
    out = {m: [] for m in methods}
    for seed in seeds:
        for m in methods:
            out[m].append(run_method(m, setup, seed, out_dir))
    return out


def mean_of(runs, attr):
    return float(np.mean([getattr(r, attr) for r in runs]))


def peak_minus_final(curve):
    c = np.asarray(curve, dtype=np.float64)
    return float(c.max() - c[-1])


def main(argv=None):
    p = argparse.ArgumentParser(description="synthetic regime/strategy comparison")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--methods", default=",".join(METHODS))
    p.add_argument("--train-fraction", type=float, default=1.0)
    p.add_argument("--epochs", type=int, default=8)
    p.add_argument("--out", default=None)
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    setup = replace(DeskSetup(), train_fraction=args.train_fraction, epochs=args.epochs)
    grid = run_grid(setup, [int(s) for s in args.seeds.split(",")], args.methods.split(","), args.out)
    for m, runs in grid.items():
        print(f"{m:6s} test HR@5 {mean_of(runs, 'test_hr'):.4f}  best val {mean_of(runs, 'best_val_hr'):.4f}")


if __name__ == "__main__":
    main()
