"""Top-N metrics over the full target catalog and policy utilization."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .autodiff import no_grad

PAD_ID = 0


@dataclass
class MetricReport:
    mrr: float
    hr: float
    n: int
    ranks: np.ndarray
    count: int
    tag: str = ""
    seed: int = 0
    gates: np.ndarray = None

    def __post_init__(self):
        if not (0.0 <= self.mrr <= self.hr <= 1.0):
            raise ValueError(f"invalid metrics MRR={self.mrr} HR={self.hr}")

    @property
    def reciprocal_ranks(self):
        rr = 1.0 / self.ranks
        return np.where(self.ranks <= self.n, rr, 0.0)


@dataclass
class UtilizationProfile:
    values: np.ndarray      # per-block mean gate, length N

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if np.any(v < 0) or np.any(v > 1):
            raise ValueError("utilization entries must lie in [0, 1]")
        self.values = v


def rank_of_target(scores, target):
    """1-based rank of ``target`` among real items (ids >= 1).

    Items scoring strictly higher rank above it; equal scores are ordered by
    ascending item id.
    """
    s = np.asarray(scores)
    real = s[1:]
    ids = np.arange(1, len(s))
    st = s[target]
    return int(1 + np.sum(real > st) + np.sum((real == st) & (ids < target)))


def ranks_for(scores, targets):
    """Vectorized :func:`rank_of_target` over rows of ``scores``."""
    s = np.asarray(scores)[:, 1:]
    t = np.asarray(targets, dtype=np.int64)
    st = s[np.arange(len(t)), t - 1][:, None]
    ids = np.arange(1, s.shape[1] + 1)[None, :]
    higher = np.sum(s > st, axis=1)
    ties = np.sum((s == st) & (ids < t[:, None]), axis=1)
    return 1 + higher + ties


def mrr_at_n(ranks, N=5):
    r = np.asarray(ranks, dtype=np.float64)
    if r.size == 0:
        raise ValueError("no ranks to average")
    if np.any(r < 1):
        raise ValueError("ranks are 1-based")
    return float(np.mean(np.where(r <= N, 1.0 / r, 0.0)))


def hr_at_n(ranks, N=5):
    r = np.asarray(ranks, dtype=np.float64)
    if r.size == 0:
        raise ValueError("no ranks to average")
    if np.any(r < 1):
        raise ValueError("ranks are 1-based")
    return float(np.mean(r <= N))


def evaluate(model, ds, indices, N=5, batch_size=512, tag="", seed=0):
    """Score the full catalog for each target record in ``indices``."""
    idx = np.asarray(indices, dtype=np.int64)
    ranks = []
    gates = []
    for s in range(0, len(idx), batch_size):
        sel = idx[s:s + batch_size]
        users = ds.target_users[sel]
        src = ds.padded_source(users)
        g = model.eval_gates(src, users)
        with no_grad():
            sc = model.forward(src, g).data
        ranks.append(ranks_for(sc, ds.target_items[sel]))
        if g is not None:
            gates.append(np.asarray(g, dtype=np.float64))
    ranks = np.concatenate(ranks) if ranks else np.zeros(0, dtype=np.int64)
    return MetricReport(mrr_at_n(ranks, N), hr_at_n(ranks, N), N, ranks, len(ranks), tag, seed,
                        np.concatenate(gates) if gates else None)


def policy_decisions(model, ds, users, batch_size=512):
    """Evaluation-time gates ``[len(users), N]`` for the given users."""
    users = np.asarray(users, dtype=np.int64)
    out = []
    for s in range(0, len(users), batch_size):
        u = users[s:s + batch_size]
        out.append(np.asarray(model.eval_gates(ds.padded_source(u), u), dtype=np.float64))
    return np.concatenate(out) if out else np.zeros((0, model.num_blocks))


def utilization_profile(model, ds, users):
    """Per-block mean gate over ``users`` under the serving-time policy."""
    users = np.asarray(users)
    if len(users) == 0:
        raise ValueError("need at least one user")
    return UtilizationProfile(policy_decisions(model, ds, users).mean(axis=0))


def _fmt(v):
    return f"{v:.6g}"


METRIC_HEADER = ["tag", "seed", "split", "examples", "N", "mrr", "hr"]


def write_metrics_csv(path, reports, split="test"):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_HEADER)
        for r in reports:
            w.writerow([r.tag, r.seed, split, r.count, r.n, _fmt(r.mrr), _fmt(r.hr)])


def write_utilization_csv(path, profile):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["block", "utilization"])
        for i, v in enumerate(profile.values):
            w.writerow([i + 1, _fmt(v)])


def read_utilization_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return np.array([float(r[1]) for r in rows])


def write_curves_csv(path, history):
    if not history:
        raise ValueError("empty history")
    keys = list(history[0].keys())
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys)
        for row in history:
            w.writerow([row[k] if isinstance(row[k], (int, np.integer)) else _fmt(row[k]) for k in keys])
