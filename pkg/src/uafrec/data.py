"""Cross-domain datasets: TSV ingestion, padding, splits, negative sampling
and a synthetic generator with a tunable source/target correlation.

Ids follow one convention in both domains: a vocabulary of size ``V`` holds
ids ``0 .. V-1`` and id 0 is the padding slot, so ``V - 1`` real items.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

PAD_ID = 0


class DataError(ValueError):
    pass


@dataclass
class CrossDomainDataset:
    source: dict            # user id -> list of source item ids (oldest first)
    target_users: np.ndarray
    target_items: np.ndarray
    source_vocab: int
    target_vocab: int
    seq_len: int = 20

    def __post_init__(self):
        self.target_users = np.asarray(self.target_users, dtype=np.int64)
        self.target_items = np.asarray(self.target_items, dtype=np.int64)
        self.validate()

    def validate(self):
        if len(self.target_items) == 0:
            raise DataError("no target interactions")
        if self.target_users.shape != self.target_items.shape:
            raise DataError("target users/items length mismatch")
        missing = set(np.unique(self.target_users).tolist()) - set(self.source)
        if missing:
            u = min(missing)
            raise DataError(f"target user {u} has no source sequence ({len(missing)} such users)")
        for u, seq in self.source.items():
            if len(seq) == 0:
                raise DataError(f"user {u} has an empty source sequence")
            if min(seq) < 1 or max(seq) >= self.source_vocab:
                raise DataError(f"user {u}: source id outside [1, {self.source_vocab})")
        if self.target_items.min() < 1 or self.target_items.max() >= self.target_vocab:
            raise DataError(f"target id outside [1, {self.target_vocab})")

    def __len__(self):
        return len(self.target_items)

    @property
    def num_target_items(self):
        return self.target_vocab - 1

    def padded_source(self, users):
        """``[len(users), seq_len]`` left-padded source sequences."""
        cache = self.__dict__.get("_padded")
        if cache is None:
            order = sorted(self.source)
            rows = {u: r for r, u in enumerate(order)}
            mat = np.zeros((len(order), self.seq_len), dtype=np.int64)
            for r, u in enumerate(order):
                mat[r] = pad_sequence(self.source[u], self.seq_len)
            cache = self.__dict__["_padded"] = (rows, mat)
        rows, mat = cache
        return mat[[rows[u] for u in np.asarray(users).tolist()]]

    def source_matrix(self):
        """All source sequences, padded, in ascending user order."""
        users = sorted(self.source)
        return np.asarray(users, dtype=np.int64), self.padded_source(users)

    def equals(self, other):
        return (self.source_vocab == other.source_vocab
                and self.target_vocab == other.target_vocab
                and self.seq_len == other.seq_len
                and {u: list(s) for u, s in self.source.items()} == {u: list(s) for u, s in other.source.items()}
                and np.array_equal(self.target_users, other.target_users)
                and np.array_equal(self.target_items, other.target_items))


def pad_sequence(items, n):
    """Left-pad with 0 to length ``n``; longer inputs keep the last ``n`` items."""
    items = list(items)
    if not items:
        raise DataError("cannot pad an empty sequence")
    if len(items) >= n:
        return np.asarray(items[-n:], dtype=np.int64)
    return np.asarray([PAD_ID] * (n - len(items)) + items, dtype=np.int64)


# -- files ------------------------------------------------------------------------

def _parse_int(tok, path, lineno):
    try:
        v = int(tok)
    except ValueError:
        raise DataError(f"{path}:{lineno}: malformed id {tok!r}") from None
    if str(v) != tok or v < 0:
        raise DataError(f"{path}:{lineno}: malformed id {tok!r}")
    return v


def _lines(path):
    with open(path, "r", encoding="utf-8", newline="\n") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if line == "":
                continue
            yield lineno, line


def load_dataset(source_path, target_path, source_vocab=None, target_vocab=None, seq_len=20):
    """Read a source TSV (``user<TAB>item item ...``) and a target TSV
    (``user<TAB>item``).

    Vocabulary sizes default to ``max id + 1``; when given, ids at or beyond
    them are rejected.
    """
    source = {}
    for lineno, line in _lines(source_path):
        parts = line.split("\t")
        if len(parts) != 2 or not parts[1].strip():
            raise DataError(f"{source_path}:{lineno}: expected 'user<TAB>items'")
        u = _parse_int(parts[0], source_path, lineno)
        if u in source:
            raise DataError(f"{source_path}:{lineno}: duplicate user {u}")
        items = [_parse_int(t, source_path, lineno) for t in parts[1].split(" ")]
        if min(items) < 1:
            raise DataError(f"{source_path}:{lineno}: item ids must be positive")
        if source_vocab is not None and max(items) >= source_vocab:
            raise DataError(f"{source_path}:{lineno}: item id out of range")
        source[u] = items

    users, items = [], []
    for lineno, line in _lines(target_path):
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataError(f"{target_path}:{lineno}: expected 'user<TAB>item'")
        u = _parse_int(parts[0], target_path, lineno)
        y = _parse_int(parts[1], target_path, lineno)
        if y < 1:
            raise DataError(f"{target_path}:{lineno}: item ids must be positive")
        if target_vocab is not None and y >= target_vocab:
            raise DataError(f"{target_path}:{lineno}: item id out of range")
        if u not in source:
            raise DataError(f"{target_path}:{lineno}: target user {u} absent from source")
        users.append(u)
        items.append(y)
    if not items:
        raise DataError("no target interactions")
    if not source:
        raise DataError("no source sequences")
    if source_vocab is None:
        source_vocab = max(max(s) for s in source.values()) + 1
    if target_vocab is None:
        target_vocab = max(items) + 1
    return CrossDomainDataset(source, users, items, source_vocab, target_vocab, seq_len)


def write_dataset(ds, source_path, target_path):
    with open(source_path, "w", encoding="utf-8", newline="\n") as fh:
        for u in sorted(ds.source):
            fh.write(f"{u}\t{' '.join(str(i) for i in ds.source[u])}\n")
    with open(target_path, "w", encoding="utf-8", newline="\n") as fh:
        for u, y in zip(ds.target_users.tolist(), ds.target_items.tolist()):
            fh.write(f"{u}\t{y}\n")


# -- splits -----------------------------------------------------------------------

@dataclass
class Split:
    """Index arrays into the target records of a dataset."""

    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    seed: int = 0

    def sizes(self):
        return len(self.train), len(self.val), len(self.test)


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def split_dataset(ds, seed=0, proportions=(0.8, 0.05, 0.15)):
    """Random 80/5/15 partition of the target records."""
    n = len(ds) if not isinstance(ds, int) else ds
    if n < 3:
        raise DataError("need at least 3 target records to split")
    perm = np.random.default_rng([seed, 7]).permutation(n)
    n_train = _round_half_up(proportions[0] * n)
    n_val = _round_half_up(proportions[1] * n)
    n_train = min(n_train, n - 1)
    n_val = min(n_val, n - n_train - 1)
    return Split(np.sort(perm[:n_train]), np.sort(perm[n_train:n_train + n_val]),
                 np.sort(perm[n_train + n_val:]), seed)


def subsample_training(split, fraction, seed=0):
    """Keep ``ceil(fraction * |train|)`` training records; val/test untouched."""
    if not (0 < fraction <= 1):
        raise DataError(f"train fraction must be in (0, 1], got {fraction}")
    if fraction == 1:
        return split
    k = math.ceil(fraction * len(split.train) - 1e-9)
    pick = np.random.default_rng([seed, 11]).choice(len(split.train), size=k, replace=False)
    return Split(np.sort(split.train[pick]), split.val, split.test, split.seed)


def sample_negative(positive, vocab, rng):
    """Uniform draw from the real items other than ``positive``.

    ``positive`` may be an int or an integer array (one draw per entry).
    """
    if vocab - 1 < 2:
        raise DataError("negative sampling needs at least two real items")
    pos = np.asarray(positive, dtype=np.int64)
    r = rng.integers(1, vocab - 1, size=pos.shape)
    r = r + (r >= pos)
    return int(r) if r.ndim == 0 else r


# -- synthetic data -----------------------------------------------------------------

@dataclass
class SyntheticConfig:
    num_users: int = 5000
    source_vocab: int = 1000
    target_vocab: int = 200
    seq_len: int = 20
    factor_dim: int = 16
    rho: float = 0.9
    interactions: tuple = (1, 5)
    source_len: tuple = (10, 20)
    source_sharpness: float = 4.0
    target_sharpness: float = 4.0
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.rho <= 1.0):
            raise ValueError(f"rho must lie in [0, 1], got {self.rho}")
        lo, hi = self.interactions
        if not (1 <= lo <= hi):
            raise ValueError("interactions range must satisfy 1 <= lo <= hi")
        if hi > self.target_vocab - 1:
            raise ValueError("more interactions per user than target items")
        a, b = self.source_len
        if not (1 <= a <= b):
            raise ValueError("source_len range must satisfy 1 <= lo <= hi")


def _unit_rows(rng, n, d):
    m = rng.standard_normal((n, d))
    return m / np.linalg.norm(m, axis=1, keepdims=True)


def _gumbel_topk(rng, logits, k):
    g = rng.gumbel(size=logits.shape)
    return np.argsort(-(logits + g), kind="stable")[:k]


def generate_synthetic(cfg):
    """Sample a cross-domain dataset from a shared latent user factor.

    Each user has a latent ``z``. Source items are drawn (with replacement)
    from ``softmax(s_src * A z)``; target items are drawn without replacement
    from ``softmax(s_tgt * B t)`` with ``t = rho z + sqrt(1 - rho^2) z'`` and
    ``z'`` independent of ``z``. Item factor rows have unit norm.
    """
    rng = np.random.default_rng([cfg.seed, 2024])
    d = cfg.factor_dim
    A = _unit_rows(rng, cfg.source_vocab - 1, d)
    B = _unit_rows(rng, cfg.target_vocab - 1, d)
    z = rng.standard_normal((cfg.num_users, d))
    z_ind = rng.standard_normal((cfg.num_users, d))
    t = cfg.rho * z + math.sqrt(max(0.0, 1.0 - cfg.rho ** 2)) * z_ind

    source = {}
    users, items = [], []
    lo_s, hi_s = cfg.source_len
    lo_t, hi_t = cfg.interactions
    for u in range(cfg.num_users):
        uid = u + 1
        logit_s = cfg.source_sharpness * (A @ z[u])
        p = np.exp(logit_s - logit_s.max())
        p /= p.sum()
        length = int(rng.integers(lo_s, hi_s + 1))
        seq = rng.choice(cfg.source_vocab - 1, size=length, p=p) + 1
        source[uid] = seq.tolist()
        m = int(rng.integers(lo_t, hi_t + 1))
        logit_t = cfg.target_sharpness * (B @ t[u])
        picked = _gumbel_topk(rng, logit_t, m) + 1
        users.extend([uid] * m)
        items.extend(picked.tolist())
    ds = CrossDomainDataset(source, users, items, cfg.source_vocab, cfg.target_vocab, cfg.seq_len)
    ds.latent = {"source_factors": A, "target_factors": B, "user": z, "target_user": t}
    return ds


@dataclass
class Batch:
    users: np.ndarray
    source: np.ndarray          # [B, n] padded source ids
    positives: np.ndarray
    negatives: np.ndarray = field(default=None)


def make_batches(ds, indices, batch_size, rng, shuffle=True, with_negatives=True):
    """Yield training batches over target records ``indices``."""
    idx = np.asarray(indices)
    if shuffle:
        idx = idx[rng.permutation(len(idx))]
    for s in range(0, len(idx), batch_size):
        sel = idx[s:s + batch_size]
        users = ds.target_users[sel]
        pos = ds.target_items[sel]
        neg = sample_negative(pos, ds.target_vocab, rng) if with_negatives else None
        yield Batch(users, ds.padded_source(users), pos, neg)
