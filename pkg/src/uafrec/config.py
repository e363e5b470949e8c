"""Flat ``key=value`` run configuration shared by every CLI command."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields

from .backbone import FULL_DILATIONS


class ConfigError(ValueError):
    pass


def _ints(text):
    try:
        return tuple(int(t) for t in str(text).replace(" ", "").split(",") if t != "")
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from None


def _bool(text):
    s = str(text).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


@dataclass
class RunConfig:
    # model
    embed_dim: int = 128
    dilations: tuple = FULL_DILATIONS
    kernel_size: int = 3
    seq_len: int = 20
    # optimization
    lr: float = 1e-4
    pretrain_lr: float = 1e-4
    batch_size: int = 256
    epochs: int = 10
    pretrain_epochs: int = 10
    seed: int = 0
    # fine-tuning
    strategy: str = "none"          # none | hard | soft | rl | random
    regime: str = "all"             # zero | cls | last1 | last2 | all (used when strategy=none)
    tau: float = 10.0
    tau_decay: float = 1.0
    gamma: float = 1.0
    beta: float = 1.0
    tune_embeddings: bool = False   # UAF only; the shared embedding belongs to the frozen backbone
    policy_dim: int = 0             # 0 = same as embed_dim
    metric_n: int = 5
    train_fraction: float = 1.0
    eval_split: str = "test"
    # data
    source_path: str = ""
    target_path: str = ""
    source_vocab: int = 0           # 0 = infer from the files
    target_vocab: int = 0
    # checkpoints
    checkpoint: str = ""            # pre-trained backbone (finetune) or fine-tuned model (evaluate, policy-viz)
    # synthetic generator
    num_users: int = 5000
    gen_source_vocab: int = 1000
    gen_target_vocab: int = 200
    rho: float = 0.9
    factor_dim: int = 16
    source_sharpness: float = 4.0
    target_sharpness: float = 4.0
    min_interactions: int = 1
    max_interactions: int = 5
    min_source_len: int = 10
    max_source_len: int = 20

    def __post_init__(self):
        self.validate()

    def validate(self):
        from .finetune import REGIMES
        from .policy import STRATEGIES
        if self.strategy not in ("none",) + STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.regime not in REGIMES:
            raise ConfigError(f"unknown regime {self.regime!r}")
        if self.eval_split not in ("train", "val", "test"):
            raise ConfigError(f"eval_split must be train, val or test, got {self.eval_split!r}")
        if not (0.0 <= self.rho <= 1.0):
            raise ConfigError(f"rho must lie in [0, 1], got {self.rho}")
        if not (0.0 < self.train_fraction <= 1.0):
            raise ConfigError(f"train_fraction must lie in (0, 1], got {self.train_fraction}")
        if len(self.dilations) == 0 or len(self.dilations) % 2 or min(self.dilations) < 1:
            raise ConfigError(f"dilations must be an even-length list of positive ints, got {self.dilations}")
        for name in ("embed_dim", "kernel_size", "seq_len", "batch_size", "epochs", "metric_n"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("lr", "pretrain_lr", "tau"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")
        if self.gamma < 0 or self.beta < 0:
            raise ConfigError("gamma and beta must be >= 0")

    # -- text form -------------------------------------------------------------

    @classmethod
    def keys(cls):
        return [f.name for f in fields(cls)]

    @classmethod
    def from_mapping(cls, values, base=None):
        """Build a config from ``{key: text}``; unknown keys are rejected."""
        known = {f.name: f for f in fields(cls)}
        out = dataclasses.asdict(base) if base is not None else {}
        for raw_key, raw in values.items():
            key = raw_key.replace("-", "_")
            if key not in known:
                raise ConfigError(f"unknown config key {raw_key!r}")
            out[key] = _coerce(known[key], raw)
        try:
            return cls(**out)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_text(cls, text, source="<config>"):
        values = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected key=value")
            k, _, v = line.partition("=")
            k = k.strip()
            if k in values:
                raise ConfigError(f"{source}:{lineno}: duplicate key {k!r}")
            values[k] = v.strip()
        return cls.from_mapping(values)

    @classmethod
    def from_file(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_text(text, str(path))

    def to_text(self):
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    def write(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_text())


def _coerce(f, raw):
    if not isinstance(raw, str):
        return tuple(raw) if f.type == "tuple" else raw
    try:
        if f.type == "int":
            return int(raw)
        if f.type == "float":
            return float(raw)
        if f.type == "bool":
            return _bool(raw)
        if f.type == "tuple":
            return _ints(raw)
    except ValueError:
        raise ConfigError(f"bad value for {f.name}: {raw!r}") from None
    return raw
