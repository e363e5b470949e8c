"""Target-domain fine-tuning.

:class:`UafModel` keeps every pre-trained residual block frozen next to a
trainable copy and mixes the two residual mappings with a per-user gate
produced by a policy. :class:`BaselineModel` covers the conventional regimes
(train from scratch, head only, last K blocks, everything).
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import policy as pol
from .autodiff import Adam, Tensor, no_grad, ops, parameter
from .autodiff.tensor import default_dtype
from .backbone import BackboneConfig, BackboneModel, truncated_normal
from .data import make_batches
from .evaluation import evaluate

log = logging.getLogger(__name__)

REGIMES = ("zero", "cls", "last1", "last2", "all")


class FinetuneError(ValueError):
    pass


class TargetHead:
    """New softmax layer over the target catalog: ``o = h @ W_n + b_n``."""

    def __init__(self, weight, bias):
        self.weight = weight
        self.bias = bias

    @classmethod
    def init(cls, dim, vocab, seed=0):
        rng = np.random.default_rng([seed, 3])
        W = parameter(truncated_normal(rng, (dim, vocab)), name="target-head/weight")
        b = parameter(np.zeros(vocab, default_dtype()), name="target-head/bias")
        return cls(W, b)

    def __call__(self, h):
        return ops.add(ops.matmul(h, self.weight), self.bias)

    def parameters(self):
        return [self.weight, self.bias]


def _gate_shape(gate, x):
    """Reshape per-example gates ``[B]`` to broadcast over ``[B, n, k]``."""
    if isinstance(gate, Tensor):
        g = gate
    else:
        g = Tensor(np.asarray(gate, dtype=x.dtype))
    if g.ndim == 0 or x.ndim == 2:
        return g
    return g.reshape(g.shape[0], 1, 1)


def gated_block_forward(E_prev, frozen, tuned, gate):
    """``I * tuned(E) + (1 - I) * frozen(E) + E`` (residual mappings only).

    ``gate`` is a scalar, a ``[B]`` array, or a ``[B]`` Tensor with values
    in ``[0, 1]``.
    """
    gv = gate.data if isinstance(gate, Tensor) else np.asarray(gate)
    if np.any(gv < 0) or np.any(gv > 1):
        raise FinetuneError("gate values must lie in [0, 1]")
    I = _gate_shape(gate, E_prev)
    mixed = ops.add(ops.mul(I, tuned.residual(E_prev)),
                    ops.mul(ops.sub(1.0, I), frozen.residual(E_prev)))
    return ops.add(mixed, E_prev)


def bpr_loss(o_pos, o_neg):
    """Mean of ``-log sigmoid(o_pos - o_neg)``."""
    if not isinstance(o_pos, Tensor):
        o_pos = Tensor(np.asarray(o_pos, dtype=np.float64))
    if not isinstance(o_neg, Tensor):
        o_neg = Tensor(np.asarray(o_neg, dtype=o_pos.dtype))
    return ops.neg(ops.mean(ops.log_sigmoid(ops.sub(o_pos, o_neg))))


def _pair_scores(scores, pos, neg):
    o_pos = ops.gather(scores, np.asarray(pos)[:, None], axis=-1)
    o_neg = ops.gather(scores, np.asarray(neg)[:, None], axis=-1)
    return o_pos, o_neg


class _TargetModelBase:
    head: TargetHead

    def forward(self, src, gates=None):
        raise NotImplementedError

    def eval_gates(self, src, users):
        return None

    def scores(self, src, users):
        """Evaluation-time scores ``[B, target_vocab]`` as a numpy array."""
        with no_grad():
            gates = self.eval_gates(src, users)
            return self.forward(src, gates).data

    def frozen_parameters(self):
        return [p for p in self.all_parameters().values() if not p.requires_grad]

    def trainable_parameters(self):
        return [p for p in self.all_parameters().values() if p.requires_grad]

    def frozen_digest(self):
        """SHA-256 over the bytes of every frozen parameter, in name order."""
        import hashlib
        h = hashlib.sha256()
        for name, p in sorted(self.all_parameters().items()):
            if not p.requires_grad:
                h.update(name.encode())
                h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()


class BaselineModel(_TargetModelBase):
    """Backbone copy plus a new target head, trained under a fixed mask."""

    def __init__(self, config, regime, embedding, blocks, head):
        if regime not in REGIMES:
            raise FinetuneError(f"unknown regime {regime!r}")
        self.config = config
        self.regime = regime
        self.embedding = embedding
        self.blocks = list(blocks)
        self.head = head
        self.apply_mask()

    @classmethod
    def build(cls, regime, target_vocab, backbone=None, config=None, seed=0):
        if regime == "zero":
            cfg = config or (backbone.config if backbone is not None else None)
            if cfg is None:
                raise FinetuneError("zero regime needs a backbone config")
            src = BackboneModel.init(cfg, seed=seed + 1009)
        else:
            if backbone is None:
                raise FinetuneError(f"regime {regime!r} needs a pre-trained backbone")
            src = backbone
            cfg = backbone.config
        emb = Tensor(src.embedding.data.copy(), requires_grad=True, name="embedding")
        blocks = [b.clone(requires_grad=True) for b in src.blocks]
        head = TargetHead.init(cfg.embed_dim, target_vocab, seed)
        return cls(cfg, regime, emb, blocks, head)

    def apply_mask(self):
        r = self.regime
        n = len(self.blocks)
        self.embedding.requires_grad = r in ("zero", "all")
        for i, blk in enumerate(self.blocks):
            if r in ("zero", "all"):
                on = True
            elif r == "cls":
                on = False
            else:
                on = i >= n - int(r[-1])
            blk.set_requires_grad(on)
        for p in self.head.parameters():
            p.requires_grad = True

    def hidden(self, src):
        h = ops.embedding(self.embedding, np.asarray(src))
        for blk in self.blocks:
            h = blk(h)
        return h[..., -1, :]

    def forward(self, src, gates=None):
        return self.head(self.hidden(src))

    def all_parameters(self):
        out = {"embedding": self.embedding}
        for i, blk in enumerate(self.blocks):
            for name in blk.PARAM_NAMES:
                out[f"blocks/{i}/{name}"] = blk.params[name]
        out["target-head/weight"] = self.head.weight
        out["target-head/bias"] = self.head.bias
        return out


class UafModel(_TargetModelBase):
    """Frozen pre-trained blocks, trainable copies, a policy and a new head."""

    def __init__(self, config, strategy, embedding, frozen_blocks, tuned_blocks, head,
                 policy=None, tau=10.0, seed=0):
        if strategy not in pol.STRATEGIES:
            raise FinetuneError(f"unknown strategy {strategy!r}")
        self.config = config
        self.strategy = strategy
        self.embedding = embedding
        self.frozen_blocks = list(frozen_blocks)
        self.tuned_blocks = list(tuned_blocks)
        self.head = head
        self.tau = tau
        self.seed = seed
        if strategy == pol.RANDOM:
            self.policy = pol.RandomPolicy(seed, len(self.frozen_blocks))
        else:
            self.policy = policy

    @classmethod
    def build(cls, backbone, strategy, target_vocab, seed=0, tau=10.0, tune_embeddings=False,
              policy_dim=None, policy_dilations=pol.POLICY_DILATIONS):
        cfg = backbone.config
        emb = Tensor(backbone.embedding.data.copy(), requires_grad=tune_embeddings, name="embedding")
        frozen = [b.clone(requires_grad=False) for b in backbone.blocks]
        tuned = [b.clone(requires_grad=True) for b in backbone.blocks]
        head = TargetHead.init(cfg.embed_dim, target_vocab, seed)
        policy = None
        if strategy in (pol.HARD, pol.SOFT, pol.RL):
            mode = "sigmoid" if strategy == pol.SOFT else "categorical"
            policy = pol.PolicyNetwork.init(cfg.vocab_size, policy_dim or cfg.embed_dim,
                                            cfg.num_blocks, mode=mode, dilations=policy_dilations,
                                            kernel_size=cfg.kernel_size, seed=seed)
        return cls(cfg, strategy, emb, frozen, tuned, head, policy, tau, seed)

    @property
    def num_blocks(self):
        return len(self.frozen_blocks)

    @property
    def gate_mode(self):
        return "continuous" if self.strategy == pol.SOFT else "binary"

    def forward(self, src, gates):
        """Target scores ``[B, |Y|]`` with ``gates`` of shape ``[B, N]``."""
        src = np.asarray(src)
        if np.any(np.all(src == 0, axis=-1)):
            raise FinetuneError("empty (all-padding) source sequence")
        h = ops.embedding(self.embedding, src)
        for l, (frozen, tuned) in enumerate(zip(self.frozen_blocks, self.tuned_blocks)):
            g = gates[..., l] if isinstance(gates, Tensor) else np.asarray(gates)[..., l]
            h = gated_block_forward(h, frozen, tuned, g)
        return self.head(h[..., -1, :])

    def policy_output(self, src):
        return self.policy(np.asarray(src))

    def eval_gates(self, src, users):
        """Deterministic serving-time gates: argmax for hard/rl, sigmoid for soft."""
        if self.strategy == pol.RANDOM:
            return self.policy.gates(users)
        with no_grad():
            out = self.policy_output(src)
        if self.strategy == pol.SOFT:
            return ops.sigmoid(out).data.astype(np.float64)
        return pol.greedy_gates(out)

    def all_parameters(self):
        out = {"embedding": self.embedding}
        for i, blk in enumerate(self.frozen_blocks):
            for name in blk.PARAM_NAMES:
                out[f"frozen-blocks/{i}/{name}"] = blk.params[name]
        for i, blk in enumerate(self.tuned_blocks):
            for name in blk.PARAM_NAMES:
                out[f"trainable-blocks/{i}/{name}"] = blk.params[name]
        if isinstance(self.policy, pol.PolicyNetwork):
            for k, v in self.policy.named_parameters().items():
                out[f"policy-net/{k}"] = v
        out["target-head/weight"] = self.head.weight
        out["target-head/bias"] = self.head.bias
        return out


# -- single steps -------------------------------------------------------------------

def _bpr_step_loss(model, batch, gates):
    scores = model.forward(batch.source, gates)
    o_pos, o_neg = _pair_scores(scores, batch.positives, batch.negatives)
    return bpr_loss(o_pos, o_neg), (o_pos.data - o_neg.data)[:, 0]


def _apply(loss, opt):
    opt.zero_grad()
    loss.backward()
    opt.step()


def finetune_step_fixed(batch, model, opt, gates=None):
    """BPR step with externally fixed gates (baselines, random policy)."""
    loss, _ = _bpr_step_loss(model, batch, gates)
    _apply(loss, opt)
    return float(loss.data)


def finetune_step_hard(batch, model, opt, rng, tau=None):
    tau = model.tau if tau is None else tau
    logits = model.policy_output(batch.source)
    g = pol.sample_gumbel(rng, logits.shape)
    gates = pol.hard_gates(logits, g, tau)
    loss, _ = _bpr_step_loss(model, batch, gates)
    _apply(loss, opt)
    return float(loss.data)


def finetune_step_soft(batch, model, opt):
    gates = ops.sigmoid(model.policy_output(batch.source))
    loss, _ = _bpr_step_loss(model, batch, gates)
    _apply(loss, opt)
    return float(loss.data)


def rl_losses(batch, model, rng, beta=1.0, gamma=1.0):
    """Build ``(L_bpr, L_rl, L, info)`` for one batch without stepping."""
    logits = model.policy_output(batch.source)
    sampled, greedy = pol.rl_actions(logits, rng)
    l_bpr, margin_s = _bpr_step_loss(model, batch, sampled)
    margin_g = margin_s.copy()
    differ = np.any(sampled != greedy, axis=1)
    if differ.any():
        with no_grad():
            sc = model.forward(batch.source[differ], greedy[differ]).data
        r = np.arange(int(differ.sum()))
        margin_g[differ] = sc[r, batch.positives[differ]] - sc[r, batch.negatives[differ]]
    cfg = pol.RewardConfig(gamma=gamma, num_blocks=model.num_blocks)
    l_rl, r_s, r_g = pol.scst_loss(logits, sampled, greedy, margin_s > 0, margin_g > 0, cfg)
    total = ops.add(l_bpr, ops.mul(l_rl, float(beta)))
    info = {"sampled": sampled, "greedy": greedy, "reward_sampled": r_s, "reward_greedy": r_g}
    return l_bpr, l_rl, total, info


def finetune_step_rl(batch, model, opt, rng, beta=1.0, gamma=1.0):
    l_bpr, l_rl, total, _ = rl_losses(batch, model, rng, beta, gamma)
    _apply(total, opt)
    return float(l_bpr.data), float(l_rl.data), float(total.data)


# -- training loops -----------------------------------------------------------------

@dataclass
class FinetuneConfig:
    lr: float = 1e-4
    batch_size: int = 256
    epochs: int = 10
    seed: int = 0
    tau: float = 10.0
    tau_decay: float = 1.0      # multiplicative per epoch; 1.0 = no annealing
    gamma: float = 1.0
    beta: float = 1.0
    metric_n: int = 5


@dataclass
class FitResult:
    history: list = field(default_factory=list)     # one dict per epoch
    best_epoch: int = 0
    best_val: object = None
    test: object = None
    seconds: float = 0.0

    def curve(self, key="val_hr"):
        return [row[key] for row in self.history]


def _snapshot(params):
    return [p.data.copy() for p in params]


def _restore(params, snap):
    for p, d in zip(params, snap):
        p.data[...] = d


def fit(model, ds, split, cfg, on_epoch=None):
    """Train ``model`` on ``split.train`` and keep the best-validation epoch.

    Validation and test metrics are recorded every epoch; on return the
    model's trainable parameters are those of the epoch with the highest
    validation HR (earliest on ties).
    """
    params = model.trainable_parameters()
    opt = Adam(params, lr=cfg.lr)
    strategy = getattr(model, "strategy", None)
    t0 = time.perf_counter()
    result = FitResult()
    best_hr, best_snap = -1.0, None
    tau = cfg.tau
    for epoch in range(1, cfg.epochs + 1):
        rng = np.random.default_rng([cfg.seed, 17, epoch])
        losses = []
        for batch in make_batches(ds, split.train, cfg.batch_size, rng):
            if strategy == pol.HARD:
                losses.append(finetune_step_hard(batch, model, opt, rng, tau))
            elif strategy == pol.SOFT:
                losses.append(finetune_step_soft(batch, model, opt))
            elif strategy == pol.RL:
                losses.append(finetune_step_rl(batch, model, opt, rng, cfg.beta, cfg.gamma)[2])
            elif strategy == pol.RANDOM:
                losses.append(finetune_step_fixed(batch, model, opt, model.policy.gates(batch.users)))
            else:
                losses.append(finetune_step_fixed(batch, model, opt))
        tau *= cfg.tau_decay
        val = evaluate(model, ds, split.val, cfg.metric_n)
        test = evaluate(model, ds, split.test, cfg.metric_n)
        row = {"epoch": epoch, "train_loss": float(np.mean(losses)),
               "val_mrr": val.mrr, "val_hr": val.hr, "test_mrr": test.mrr, "test_hr": test.hr}
        if isinstance(model, UafModel):
            row["mean_gate"] = float(np.mean(val.gates)) if val.gates is not None else float("nan")
        result.history.append(row)
        log.info("epoch %d loss %.4f val HR %.4f test HR %.4f", epoch, row["train_loss"], val.hr, test.hr)
        if val.hr > best_hr:
            best_hr = val.hr
            result.best_epoch, result.best_val, result.test = epoch, val, test
            best_snap = _snapshot(params)
        if on_epoch is not None:
            on_epoch(epoch, row, model)
    if best_snap is not None:
        _restore(params, best_snap)
    result.seconds = time.perf_counter() - t0
    return result


def _check_vocab(ds, backbone):
    if backbone is not None and backbone.config.vocab_size != ds.source_vocab:
        raise FinetuneError(
            f"source vocab mismatch: checkpoint {backbone.config.vocab_size}, data {ds.source_vocab}")


def run_baseline(regime, ds, split, cfg, backbone=None, config=None):
    """Train one of the conventional regimes; ``zero`` ignores ``backbone``."""
    if regime not in REGIMES:
        raise FinetuneError(f"unknown regime {regime!r}")
    if regime == "zero":
        config = config or (backbone.config if backbone is not None else None)
        backbone = None
    else:
        _check_vocab(ds, backbone)
    model = BaselineModel.build(regime, ds.target_vocab, backbone=backbone, config=config, seed=cfg.seed)
    return model, fit(model, ds, split, cfg)


def run_uaf(strategy, ds, split, cfg, backbone, tune_embeddings=False, policy_dim=None):
    _check_vocab(ds, backbone)
    model = UafModel.build(backbone, strategy, ds.target_vocab, seed=cfg.seed, tau=cfg.tau,
                           tune_embeddings=tune_embeddings, policy_dim=policy_dim)
    return model, fit(model, ds, split, cfg)


def check_config_matches(backbone_cfg: BackboneConfig, ds):
    if backbone_cfg.vocab_size != ds.source_vocab:
        raise FinetuneError("source vocab mismatch between checkpoint and data")
    if backbone_cfg.seq_len != ds.seq_len:
        raise FinetuneError("sequence length mismatch between checkpoint and data")
