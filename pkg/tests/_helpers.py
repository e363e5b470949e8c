"""Shared fixtures for the test suite."""

import numpy as np

from uafrec.backbone import BackboneConfig, BackboneModel
from uafrec.data import SyntheticConfig, generate_synthetic

# criterion number -> (passed, detail); printed by conftest after the run
ACCEPTANCE = {}


def record(n, ok, detail=""):
    ACCEPTANCE[n] = (bool(ok), detail)
    return bool(ok)


def small_dataset(num_users=120, seed=0, rho=0.9, source_vocab=40, target_vocab=25, seq_len=12):
    return generate_synthetic(SyntheticConfig(num_users=num_users, source_vocab=source_vocab,
                                              target_vocab=target_vocab, seq_len=seq_len,
                                              source_len=(4, 12), rho=rho, seed=seed,
                                              source_sharpness=4.0, target_sharpness=4.0))


def small_backbone(vocab=40, dim=8, dilations=(1, 2, 1, 2), seq_len=12, seed=0):
    return BackboneModel.init(BackboneConfig(vocab_size=vocab, embed_dim=dim, dilations=dilations,
                                             seq_len=seq_len), seed=seed)


def causality_violations(model, pairs, seq_len, rng, std=1.0):
    """Count positions t <= t0 whose logits change when items after t0 change.

    Also returns how many perturbations changed some later logit, to show the
    probe is not vacuous.
    """
    V = model.config.vocab_size
    for p in model.parameters():
        p.data[...] = rng.standard_normal(p.shape).astype(p.dtype) * std
    seqs = rng.integers(1, V, size=(pairs, seq_len))
    t0 = rng.integers(0, seq_len - 1, size=pairs)
    pert = seqs.copy()
    for i in range(pairs):
        tail = slice(t0[i] + 1, seq_len)
        pert[i, tail] = (seqs[i, tail] + rng.integers(1, V - 1, size=seq_len - t0[i] - 1) - 1) % (V - 1) + 1
    a = model.logits(seqs).data
    b = model.logits(pert).data
    violations = 0
    moved = 0
    for i in range(pairs):
        k = t0[i] + 1
        if not np.array_equal(a[i, :k], b[i, :k]):
            violations += 1
        if not np.array_equal(a[i, k:], b[i, k:]):
            moved += 1
    return violations, moved
