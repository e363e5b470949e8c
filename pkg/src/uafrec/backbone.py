"""NextItNet-style backbone: item embeddings, stacked dilated causal residual
blocks and a softmax head trained autoregressively on source sequences."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .autodiff import Adam, Tensor, no_grad, ops, parameter
from .autodiff.tensor import default_dtype

log = logging.getLogger(__name__)

DESK_DILATIONS = (1, 2, 4, 8, 1, 2, 4, 8)
FULL_DILATIONS = (1, 2, 4, 8) * 4
PAD_ID = 0


class EmptySequenceError(ValueError):
    pass


@dataclass
class BackboneConfig:
    """Architecture of a backbone.

    ``vocab_size`` counts every id including the padding slot 0.
    """

    vocab_size: int
    embed_dim: int = 128
    dilations: tuple = DESK_DILATIONS
    kernel_size: int = 3
    seq_len: int = 20
    pad_id: int = PAD_ID

    def __post_init__(self):
        self.dilations = tuple(int(d) for d in self.dilations)
        if self.vocab_size < 2:
            raise ValueError("vocab_size must include padding plus at least one item")
        if self.embed_dim <= 0:
            raise ValueError("embed_dim must be positive")
        if len(self.dilations) % 2:
            raise ValueError("dilation schedule needs an even length (two convs per block)")
        if any(d < 1 for d in self.dilations):
            raise ValueError("dilations must be >= 1")
        if self.kernel_size < 2:
            raise ValueError("kernel_size must be >= 2")
        if self.pad_id != PAD_ID:
            raise ValueError("padding id is fixed at 0")

    @property
    def num_blocks(self):
        return len(self.dilations) // 2


def truncated_normal(rng, shape, std=0.02, dtype=None):
    """Zero-mean normal samples redrawn until they fall within two std."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return (out * std).astype(dtype or default_dtype())


class ResidualBlock:
    """Two dilated causal convs, each followed by layer norm and ReLU."""

    PARAM_NAMES = ("conv1.weight", "conv1.bias", "ln1.gain", "ln1.bias",
                   "conv2.weight", "conv2.bias", "ln2.gain", "ln2.bias")

    def __init__(self, params, dilations):
        self.params = dict(params)
        self.dilations = tuple(dilations)

    @classmethod
    def init(cls, rng, dim, kernel_size, dilations):
        dt = default_dtype()
        p = {
            "conv1.weight": parameter(truncated_normal(rng, (kernel_size, dim, dim))),
            "conv1.bias": parameter(np.zeros(dim, dt)),
            "ln1.gain": parameter(np.ones(dim, dt)),
            "ln1.bias": parameter(np.zeros(dim, dt)),
            "conv2.weight": parameter(truncated_normal(rng, (kernel_size, dim, dim))),
            "conv2.bias": parameter(np.zeros(dim, dt)),
            "ln2.gain": parameter(np.ones(dim, dt)),
            "ln2.bias": parameter(np.zeros(dim, dt)),
        }
        for k, t in p.items():
            t.name = k
        return cls(p, dilations)

    def residual(self, x):
        """The residual mapping alone: relu(LN2(conv2(relu(LN1(conv1(x))))))."""
        p = self.params
        h = ops.causal_conv1d(x, p["conv1.weight"], p["conv1.bias"], self.dilations[0])
        h = ops.relu(ops.layer_norm(h, p["ln1.gain"], p["ln1.bias"]))
        h = ops.causal_conv1d(h, p["conv2.weight"], p["conv2.bias"], self.dilations[1])
        return ops.relu(ops.layer_norm(h, p["ln2.gain"], p["ln2.bias"]))

    def __call__(self, x):
        return ops.add(self.residual(x), x)

    def parameters(self):
        return [self.params[k] for k in self.PARAM_NAMES]

    def clone(self, requires_grad=True):
        p = {k: Tensor(v.data.copy(), requires_grad=requires_grad, name=k)
             for k, v in self.params.items()}
        return ResidualBlock(p, self.dilations)

    def set_requires_grad(self, flag):
        for t in self.params.values():
            t.requires_grad = flag
            t.grad = None


def residual_block_forward(E_prev, block):
    return block(E_prev)


def causal_conv(x, weight, bias, dilation):
    return ops.causal_conv1d(x, weight, bias, dilation)


class BackboneModel:
    """Embedding table, residual blocks and the source-domain softmax head."""

    def __init__(self, config, embedding, blocks, out_weight, out_bias):
        self.config = config
        self.embedding = embedding
        self.blocks = list(blocks)
        self.out_weight = out_weight
        self.out_bias = out_bias
        if len(self.blocks) != config.num_blocks:
            raise ValueError("block count must equal len(dilations) / 2")

    @classmethod
    def init(cls, config, seed=0):
        rng = np.random.default_rng(seed)
        k, V = config.embed_dim, config.vocab_size
        emb = parameter(truncated_normal(rng, (V, k)), name="embedding")
        d = config.dilations
        blocks = [ResidualBlock.init(rng, k, config.kernel_size, d[2 * i:2 * i + 2])
                  for i in range(config.num_blocks)]
        W = parameter(truncated_normal(rng, (k, V)), name="out.weight")
        b = parameter(np.zeros(V, default_dtype()), name="out.bias")
        return cls(config, emb, blocks, W, b)

    def embed(self, ids):
        ids = np.asarray(ids)
        return ops.embedding(self.embedding, ids)

    def hidden(self, ids):
        h = self.embed(ids)
        for block in self.blocks:
            h = block(h)
        return h

    def logits(self, ids):
        return sequence_logits(self.hidden(ids), self)

    def named_parameters(self):
        out = {"embedding": self.embedding}
        for i, blk in enumerate(self.blocks):
            for name in ResidualBlock.PARAM_NAMES:
                out[f"blocks.{i}.{name}"] = blk.params[name]
        out["out.weight"] = self.out_weight
        out["out.bias"] = self.out_bias
        return out

    def parameters(self):
        return list(self.named_parameters().values())


def embed_sequence(items, model):
    """``[n, k]`` embedding matrix for one item-id sequence."""
    items = np.asarray(items, dtype=np.int64)
    if items.ndim != 1:
        raise ValueError("expected a 1-D item sequence")
    return model.embed(items)


def sequence_logits(E_last, model):
    """Per-position next-item logits ``E_last @ W + b`` (softmax deferred)."""
    return ops.add(ops.matmul(E_last, model.out_weight), model.out_bias)


def _nll_terms(model, seqs):
    seqs = np.asarray(seqs, dtype=np.int64)
    if seqs.ndim == 1:
        seqs = seqs[None]
    targets = seqs[:, 1:]
    mask = targets != PAD_ID
    counts = mask.sum(axis=1)
    if np.any(counts == 0):
        raise EmptySequenceError("sequence has no non-padding targets")
    logits = model.logits(seqs[:, :-1])
    return ops.cross_entropy(logits, targets, mask)


def sequence_nll(model, seqs):
    """Per-sequence negative log-likelihood, shape ``[B]``."""
    return ops.sum(_nll_terms(model, seqs), axis=1)


def autoregressive_nll(items, model):
    """Summed next-item NLL of one left-padded sequence.

    Position ``t`` predicts item ``t + 1``; targets equal to the padding id
    contribute nothing.
    """
    items = np.asarray(items, dtype=np.int64)
    if items.ndim != 1:
        raise ValueError("expected a 1-D item sequence")
    return ops.sum(_nll_terms(model, items[None]))


def corpus_nll(model, corpus, batch_size=256):
    """Mean per-sequence NLL over ``corpus`` (``[N, n]`` padded ids)."""
    corpus = np.asarray(corpus, dtype=np.int64)
    total = 0.0
    with no_grad():
        for s in range(0, len(corpus), batch_size):
            total += float(sequence_nll(model, corpus[s:s + batch_size]).data.astype(np.float64).sum())
    return total / len(corpus)


@dataclass
class PretrainConfig:
    epochs: int = 10
    batch_size: int = 256
    lr: float = 1e-4
    seed: int = 0


def pretrain(corpus, config, train=None, model=None, on_epoch=None):
    """Fit a backbone on padded source sequences by minimizing mean NLL.

    Returns ``(model, losses)`` where ``losses[e]`` is the mean training loss
    over the batches of epoch ``e``. Deterministic for a given seed.
    """
    train = train or PretrainConfig()
    corpus = np.asarray(corpus, dtype=np.int64)
    if corpus.size == 0 or len(corpus) == 0:
        raise ValueError("empty corpus")
    if corpus.shape[1] != config.seq_len:
        raise ValueError(f"corpus sequences have length {corpus.shape[1]}, config says {config.seq_len}")
    keep = (corpus[:, 1:] != PAD_ID).any(axis=1)
    if not keep.all():
        log.warning("dropping %d sequences with fewer than two positions", int((~keep).sum()))
        corpus = corpus[keep]
    if model is None:
        model = BackboneModel.init(config, seed=train.seed)
    opt = Adam(model.parameters(), lr=train.lr)
    rng = np.random.default_rng([train.seed, 1])
    losses = []
    for epoch in range(train.epochs):
        order = rng.permutation(len(corpus))
        tot, nb = 0.0, 0
        for s in range(0, len(order), train.batch_size):
            batch = corpus[order[s:s + train.batch_size]]
            loss = ops.mean(sequence_nll(model, batch))
            opt.zero_grad()
            loss.backward()
            opt.step()
            tot += float(loss.data)
            nb += 1
        losses.append(tot / nb)
        log.info("pretrain epoch %d loss %.4f", epoch + 1, losses[-1])
        if on_epoch is not None:
            on_epoch(epoch, losses[-1], model)
    return model, losses
