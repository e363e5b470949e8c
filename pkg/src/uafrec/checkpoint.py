"""Named-tensor checkpoint container.

Layout::

    UAFREC-CKPT 1
    meta <key> <value>
    ...
    tensor <name> <d0>x<d1>x... <offset> <nbytes>
    ...
    end
    <raw little-endian float32 payload>

Offsets are relative to the first payload byte. Names and meta values may
not contain whitespace/newlines respectively.
"""

from __future__ import annotations

import hashlib

import numpy as np

from . import policy as pol
from .autodiff import Tensor
from .backbone import BackboneConfig, BackboneModel, ResidualBlock
from .finetune import BaselineModel, TargetHead, UafModel

MAGIC = "UAFREC-CKPT"
VERSION = 1
_LE_F32 = np.dtype("<f4")


class CheckpointError(ValueError):
    pass


def save_tensors(path, tensors, meta=None):
    """Write ``{name: array}`` plus string ``meta`` to ``path``."""
    meta = meta or {}
    lines = [f"{MAGIC} {VERSION}"]
    for k, v in meta.items():
        v = str(v)
        if " " in k or "\n" in v:
            raise CheckpointError(f"bad meta entry {k!r}")
        lines.append(f"meta {k} {v}")
    payload = []
    offset = 0
    for name, arr in tensors.items():
        if any(c.isspace() for c in name):
            raise CheckpointError(f"tensor name {name!r} contains whitespace")
        a = np.asarray(arr, dtype=_LE_F32, order="C")
        shape = "x".join(str(d) for d in a.shape) or "scalar"
        lines.append(f"tensor {name} {shape} {offset} {a.nbytes}")
        payload.append(a.tobytes())
        offset += a.nbytes
    lines.append("end")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("utf-8"))
        for b in payload:
            fh.write(b)


def load_tensors(path):
    """Inverse of :func:`save_tensors`: returns ``(tensors, meta)``."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    end = raw.find(b"\nend\n")
    if end < 0:
        raise CheckpointError("missing header terminator")
    header = raw[:end].decode("utf-8").split("\n")
    body = raw[end + len(b"\nend\n"):]
    first = header[0].split(" ")
    if len(first) != 2 or first[0] != MAGIC:
        raise CheckpointError("not a checkpoint file")
    if int(first[1]) != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {first[1]}")
    meta, tensors = {}, {}
    for line in header[1:]:
        kind, _, rest = line.partition(" ")
        if kind == "meta":
            k, _, v = rest.partition(" ")
            meta[k] = v
        elif kind == "tensor":
            name, shape, off, nbytes = rest.split(" ")
            off, nbytes = int(off), int(nbytes)
            dims = () if shape == "scalar" else tuple(int(d) for d in shape.split("x"))
            if off + nbytes > len(body):
                raise CheckpointError(f"tensor {name} truncated")
            arr = np.frombuffer(body, dtype=_LE_F32, count=nbytes // 4, offset=off)
            tensors[name] = arr.reshape(dims).astype(np.float32)
        else:
            raise CheckpointError(f"unknown header line {line!r}")
    return tensors, meta


def file_digest(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def _ints(text):
    return tuple(int(x) for x in text.split(","))


def _config_meta(cfg):
    return {
        "vocab_size": cfg.vocab_size,
        "embed_dim": cfg.embed_dim,
        "dilations": ",".join(str(d) for d in cfg.dilations),
        "kernel_size": cfg.kernel_size,
        "seq_len": cfg.seq_len,
    }


def _config_from(meta):
    return BackboneConfig(vocab_size=int(meta["vocab_size"]), embed_dim=int(meta["embed_dim"]),
                          dilations=_ints(meta["dilations"]), kernel_size=int(meta["kernel_size"]),
                          seq_len=int(meta["seq_len"]))


def _block(tensors, prefix, dilations, trainable):
    params = {n: Tensor(tensors[f"{prefix}{n}"], requires_grad=trainable, name=n)
              for n in ResidualBlock.PARAM_NAMES}
    return ResidualBlock(params, dilations)


def save_backbone(path, model):
    tensors = {k: v.data for k, v in model.named_parameters().items()}
    save_tensors(path, tensors, {"kind": "backbone", **_config_meta(model.config)})


def load_backbone(path):
    tensors, meta = load_tensors(path)
    if meta.get("kind") != "backbone":
        raise CheckpointError(f"expected a backbone checkpoint, got kind={meta.get('kind')}")
    try:
        return _build_backbone(tensors, meta)
    except KeyError as exc:
        raise CheckpointError(f"checkpoint lacks tensor or field {exc}") from None


def _build_backbone(tensors, meta):
    cfg = _config_from(meta)
    d = cfg.dilations
    blocks = [_block(tensors, f"blocks.{i}.", d[2 * i:2 * i + 2], True) for i in range(cfg.num_blocks)]
    return BackboneModel(cfg, Tensor(tensors["embedding"], requires_grad=True, name="embedding"), blocks,
                         Tensor(tensors["out.weight"], requires_grad=True, name="out.weight"),
                         Tensor(tensors["out.bias"], requires_grad=True, name="out.bias"))


def save_finetuned(path, model, extra_meta=None):
    """Write a fine-tuned model; section prefixes name the parameter groups."""
    tensors = {k: v.data for k, v in model.all_parameters().items()}
    meta = {**_config_meta(model.config), "target_vocab": model.head.weight.shape[1]}
    if isinstance(model, UafModel):
        meta.update(kind="uaf", strategy=model.strategy, gate_mode=model.gate_mode,
                    tau=repr(float(model.tau)), seed=model.seed,
                    tune_embeddings=int(model.embedding.requires_grad))
        if isinstance(model.policy, pol.PolicyNetwork):
            p = model.policy
            meta["policy_dilations"] = ",".join(str(d) for blk in p.blocks for d in blk.dilations)
            meta["policy_dim"] = p.embedding.shape[1]
    else:
        meta.update(kind="baseline", regime=model.regime, strategy="none", gate_mode="none")
    meta.update(extra_meta or {})
    save_tensors(path, tensors, meta)


def load_finetuned(path):
    tensors, meta = load_tensors(path)
    kind = meta.get("kind")
    if kind not in ("baseline", "uaf"):
        raise CheckpointError(f"expected a fine-tuned checkpoint, got kind={kind}")
    try:
        return _build_finetuned(tensors, meta)
    except KeyError as exc:
        raise CheckpointError(f"checkpoint lacks tensor or field {exc}") from None


def _build_finetuned(tensors, meta):
    kind = meta["kind"]
    cfg = _config_from(meta)
    d = cfg.dilations
    head = TargetHead(Tensor(tensors["target-head/weight"], requires_grad=True, name="target-head/weight"),
                      Tensor(tensors["target-head/bias"], requires_grad=True, name="target-head/bias"))
    if kind == "baseline":
        blocks = [_block(tensors, f"blocks/{i}/", d[2 * i:2 * i + 2], True) for i in range(cfg.num_blocks)]
        emb = Tensor(tensors["embedding"], requires_grad=True, name="embedding")
        return BaselineModel(cfg, meta["regime"], emb, blocks, head), meta
    strategy = meta["strategy"]
    frozen = [_block(tensors, f"frozen-blocks/{i}/", d[2 * i:2 * i + 2], False) for i in range(cfg.num_blocks)]
    tuned = [_block(tensors, f"trainable-blocks/{i}/", d[2 * i:2 * i + 2], True) for i in range(cfg.num_blocks)]
    emb = Tensor(tensors["embedding"], requires_grad=bool(int(meta.get("tune_embeddings", "0"))), name="embedding")
    policy = None
    if strategy in (pol.HARD, pol.SOFT, pol.RL):
        pd = _ints(meta["policy_dilations"])
        pblocks = [_block(tensors, f"policy-net/blocks.{i}.", pd[2 * i:2 * i + 2], True)
                   for i in range(len(pd) // 2)]
        policy = pol.PolicyNetwork(
            Tensor(tensors["policy-net/embedding"], requires_grad=True, name="embedding"), pblocks,
            Tensor(tensors["policy-net/head.weight"], requires_grad=True, name="head.weight"),
            Tensor(tensors["policy-net/head.bias"], requires_grad=True, name="head.bias"),
            cfg.num_blocks, "sigmoid" if strategy == pol.SOFT else "categorical")
    model = UafModel(cfg, strategy, emb, frozen, tuned, head, policy,
                     tau=float(meta.get("tau", 10.0)), seed=int(meta.get("seed", 0)))
    return model, meta
