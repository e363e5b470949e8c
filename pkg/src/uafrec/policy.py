"""Per-user policy network deciding, for each residual block, whether to use
the frozen pre-trained block or its fine-tuned copy.

Three ways of turning the network output into gates:

* hard -- Gumbel-max sample in the forward pass, Gumbel-softmax gradient in
  the backward pass (straight-through);
* soft -- sigmoid of an affine head, a continuous mixing weight;
* rl   -- categorical sample trained with a self-critical policy gradient.

Index 0 of every two-way output means "freeze", index 1 "fine-tune".
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, ops, parameter
from .autodiff.tensor import default_dtype
from .backbone import ResidualBlock, truncated_normal

POLICY_DILATIONS = (1, 2, 4, 8)
HARD, SOFT, RL, RANDOM = "hard", "soft", "rl", "random"
STRATEGIES = (HARD, SOFT, RL, RANDOM)


class PolicyError(ValueError):
    pass


@dataclass
class RewardConfig:
    gamma: float = 1.0
    num_blocks: int = 8

    def __post_init__(self):
        if self.gamma < 0:
            raise PolicyError("gamma must be >= 0")


@dataclass
class PolicyDecision:
    """Gate values for one or more users, shape ``[N]`` or ``[B, N]``."""

    values: np.ndarray
    mode: str
    sampled: np.ndarray = None
    greedy: np.ndarray = None

    def __post_init__(self):
        v = np.asarray(self.values)
        if self.mode in (HARD, RL, RANDOM):
            if not np.all((v == 0) | (v == 1)):
                raise PolicyError(f"{self.mode} gates must be exactly 0 or 1")
        elif self.mode == SOFT:
            if v.size and not np.all((v > 0) & (v < 1)):
                raise PolicyError("soft gates must lie strictly inside (0, 1)")

    def __len__(self):
        return self.values.shape[-1]


class PolicyNetwork:
    """Lightweight dilated-CNN over the source sequence with a gate head.

    ``mode="categorical"`` emits ``[B, N, 2]`` logits (hard / rl);
    ``mode="sigmoid"`` emits ``[B, N]`` pre-sigmoid values (soft).
    """

    def __init__(self, embedding, blocks, head_weight, head_bias, num_blocks, mode):
        self.embedding = embedding
        self.blocks = list(blocks)
        self.head_weight = head_weight
        self.head_bias = head_bias
        self.num_blocks = num_blocks
        self.mode = mode

    @classmethod
    def init(cls, vocab_size, dim, num_blocks, mode="categorical", dilations=POLICY_DILATIONS,
             kernel_size=3, seed=0):
        if mode not in ("categorical", "sigmoid"):
            raise PolicyError(f"unknown policy mode {mode!r}")
        if len(dilations) % 2:
            raise PolicyError("policy dilation schedule needs an even length")
        rng = np.random.default_rng([seed, 5])
        emb = parameter(truncated_normal(rng, (vocab_size, dim)), name="embedding")
        blocks = [ResidualBlock.init(rng, dim, kernel_size, dilations[2 * i:2 * i + 2])
                  for i in range(len(dilations) // 2)]
        width = num_blocks * 2 if mode == "categorical" else num_blocks
        W = parameter(truncated_normal(rng, (dim, width)), name="head.weight")
        b = parameter(np.zeros(width, default_dtype()), name="head.bias")
        return cls(emb, blocks, W, b, num_blocks, mode)

    def hidden(self, src):
        """Final-position hidden state ``h_p``, shape ``[B, dim]``."""
        h = ops.embedding(self.embedding, np.asarray(src))
        for blk in self.blocks:
            h = blk(h)
        return h[..., -1, :]

    def __call__(self, src):
        out = ops.add(ops.matmul(self.hidden(src), self.head_weight), self.head_bias)
        if self.mode == "categorical":
            return out.reshape(*out.shape[:-1], self.num_blocks, 2)
        return out

    def named_parameters(self):
        out = {"embedding": self.embedding}
        for i, blk in enumerate(self.blocks):
            for name in ResidualBlock.PARAM_NAMES:
                out[f"blocks.{i}.{name}"] = blk.params[name]
        out["head.weight"] = self.head_weight
        out["head.bias"] = self.head_bias
        return out

    def parameters(self):
        return list(self.named_parameters().values())


def policy_forward(source_sequence, policy_net):
    """All per-block logits for one padded source sequence (or a batch)."""
    return policy_net(np.asarray(source_sequence, dtype=np.int64))


# -- Gumbel -----------------------------------------------------------------------

def gumbel_noise(u):
    """Inverse-CDF transform ``-log(-log u)`` of uniform samples in (0, 1)."""
    u = np.asarray(u, dtype=np.float64)
    if np.any((u <= 0) | (u >= 1)):
        raise PolicyError("uniform sample must lie in the open interval (0, 1)")
    g = -np.log(-np.log(u))
    return float(g) if g.ndim == 0 else g


def sample_gumbel(rng, shape):
    u = rng.random(shape)
    u = np.clip(u, np.finfo(np.float64).tiny, np.nextafter(1.0, 0.0))
    return gumbel_noise(u)


def gumbel_hard_sample(log_pi, g):
    """One-hot of ``argmax(g + log_pi)`` over the last axis; ties pick index 0."""
    s = np.asarray(log_pi, dtype=np.float64) + np.asarray(g, dtype=np.float64)
    if not np.all(np.isfinite(s)):
        raise PolicyError("non-finite logits")
    idx = np.argmax(s, axis=-1)
    return np.eye(s.shape[-1], dtype=np.float64)[idx]


def gumbel_softmax_relax(log_pi, g, tau):
    """Relaxed sample ``softmax((log_pi + g) / tau)`` as a differentiable Tensor."""
    if tau <= 0:
        raise PolicyError(f"temperature must be positive, got {tau}")
    if not isinstance(log_pi, Tensor):
        log_pi = Tensor(log_pi)
    scaled = ops.mul(ops.add(log_pi, np.asarray(g, dtype=log_pi.dtype)), 1.0 / tau)
    return ops.softmax(scaled, axis=-1)


def hard_gates(logits, g, tau):
    """Straight-through gates from ``[..., N, 2]`` policy logits.

    Forward value: the fine-tune component of the Gumbel-max one-hot.
    Gradient: that of the relaxed Gumbel-softmax component at the same noise.
    """
    log_pi = ops.log_softmax(logits, axis=-1)
    z = gumbel_hard_sample(log_pi.data, g)
    alpha = gumbel_softmax_relax(log_pi, g, tau)
    return ops.straight_through(z[..., 1], alpha[..., 1])


def greedy_gates(logits):
    """Noise-free argmax decision (ties to freeze), as a 0/1 array."""
    x = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    return (np.argmax(x, axis=-1) == 1).astype(np.float64)


# -- soft -------------------------------------------------------------------------

def soft_gate(h_p, head_weight, head_bias):
    """``sigmoid(h_p @ W_p + b_p)``: one mixing weight per block."""
    return ops.sigmoid(ops.add(ops.matmul(h_p, head_weight), head_bias))


# -- RL ---------------------------------------------------------------------------

def reward(actions, correct, cfg):
    """Per-rollout reward: ``1 - (fine-tuned fraction)^2`` if correct, else ``-gamma``.

    ``actions`` is ``[N]`` or ``[B, N]`` of 0/1; ``correct`` a bool or ``[B]``.
    """
    a = np.asarray(actions, dtype=np.float64)
    if a.shape[-1] != cfg.num_blocks:
        raise PolicyError(f"expected {cfg.num_blocks} actions, got {a.shape[-1]}")
    N = cfg.num_blocks
    frac = a.sum(axis=-1) / N if N else np.zeros(a.shape[:-1])
    r = np.where(np.asarray(correct, dtype=bool), 1.0 - frac ** 2, -float(cfg.gamma))
    return float(r) if r.ndim == 0 else r


def rl_actions(logits, rng):
    """``(sampled, greedy)`` 0/1 action arrays from ``[..., N, 2]`` logits."""
    x = logits.data if isinstance(logits, Tensor) else np.asarray(logits, dtype=np.float64)
    x = x.astype(np.float64)
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    p = e / e.sum(axis=-1, keepdims=True)
    sampled = (rng.random(p.shape[:-1]) < p[..., 1]).astype(np.float64)
    return sampled, greedy_gates(x)


def rl_actions_from_probs(probs, rng):
    p = np.asarray(probs, dtype=np.float64)
    if np.any(p < 0) or not np.allclose(p.sum(axis=-1), 1.0):
        raise PolicyError("invalid probabilities")
    sampled = (rng.random(p.shape[:-1]) < p[..., 1]).astype(np.float64)
    greedy = (np.argmax(p, axis=-1) == 1).astype(np.float64)
    return sampled, greedy


def scst_from_rewards(log_p_sampled, r_sampled, r_greedy):
    """``mean_b -sum_l log p(a^s_l) * (R(a^s) - R(a_hat))``.

    Rewards enter as constants, so gradient flows only through
    ``log_p_sampled`` (``[B, N]`` or ``[N]``).
    """
    if np.any(np.isneginf(log_p_sampled.data)):
        raise PolicyError("sampled action has zero probability")
    adv = np.asarray(r_sampled, dtype=np.float64) - np.asarray(r_greedy, dtype=np.float64)
    adv = adv.astype(log_p_sampled.dtype)
    if log_p_sampled.ndim == 1:
        return ops.neg(ops.sum(ops.mul(log_p_sampled, float(adv))))
    per = ops.sum(ops.mul(log_p_sampled, adv[:, None]), axis=1)
    return ops.neg(ops.mean(per))


def scst_loss(logits, sampled, greedy, correct_sampled, correct_greedy, cfg):
    """Self-critical loss from policy logits and the two rollouts' outcomes."""
    log_pi = ops.log_softmax(logits, axis=-1)
    idx = np.asarray(sampled, dtype=np.int64)[..., None]
    picked = ops.gather(log_pi, idx, axis=-1)
    lp = picked.reshape(picked.shape[:-1])
    if np.any(np.exp(lp.data.astype(np.float64)) == 0.0):
        raise PolicyError("sampled action has zero probability")
    r_s = reward(sampled, correct_sampled, cfg)
    r_g = reward(greedy, correct_greedy, cfg)
    return scst_from_rewards(lp, r_s, r_g), r_s, r_g


# -- random policy ------------------------------------------------------------------

class RandomPolicy:
    """Bernoulli(0.5) gates keyed by ``(seed, user)``.

    The same user always receives the same gates for a given seed, at train
    and at evaluation time.
    """

    def __init__(self, seed, num_blocks):
        self.seed = int(seed)
        self.num_blocks = int(num_blocks)
        self._cache = {}

    def gates(self, users):
        out = np.zeros((len(users), self.num_blocks))
        for r, u in enumerate(np.asarray(users).tolist()):
            row = self._cache.get(u)
            if row is None:
                row = random_policy(self.seed, self.num_blocks, user=u).values
                self._cache[u] = row
            out[r] = row
        return out


def random_policy(seed, N, user=None):
    key = [int(seed)] if user is None else [int(seed), int(user)]
    rng = np.random.default_rng(key)
    vals = (rng.random(N) < 0.5).astype(np.float64)
    return PolicyDecision(vals, RANDOM)


# -- export -----------------------------------------------------------------------

def write_decisions_csv(path, users, gates):
    """One row per user: ``user_id, gate_1 .. gate_N`` (6 significant digits)."""
    gates = np.asarray(gates)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user_id"] + [f"block_{i + 1}" for i in range(gates.shape[1])])
        for u, row in zip(np.asarray(users).tolist(), gates):
            w.writerow([u] + [f"{v:.6g}" for v in row])


def read_decisions_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    users = np.array([int(r[0]) for r in rows[1:]], dtype=np.int64)
    gates = np.array([[float(v) for v in r[1:]] for r in rows[1:]], dtype=np.float64)
    return users, gates

