"""Training configuration and its flat ``key=value`` file format."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .nn import INIT_SCHEMES

# rows of the ablation ladder: (key_value memory, write gate, response gate)
ABLATION_LADDER = {
    "baseline": (False, False, False),
    "+M": (True, False, False),
    "+M+WG": (True, True, False),
    "+M+WG+RG": (True, True, True),
}


@dataclass
class TrainConfig:
    # feature widths
    word_dim: int = 32
    feat_dim: int = 16
    mem_dim: int = 32
    z_dim: int = 16
    code_dim: int = 16
    embed_dim: int = 16
    g_width: int = 32
    d_width: int = 16
    enc_width: int = 16
    max_len: int = 8
    # pipeline
    base_res: int = 16
    n_stages: int = 3
    n_res: int = 2
    init: str = "fan_in"        # "normal" is N(0, 0.02) everywhere
    # objective
    lambda_ca: float = 1.0
    lambda_match: float = 5.0
    gamma: float = 10.0
    mismatch_term: bool = False
    # ADAM
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    # schedule
    batch_size: int = 10
    epochs: int = 1
    train_count: int = 4800
    max_steps: int = 0          # 0 means epochs × ceil(train_count / batch_size)
    checkpoint_every: int = 200
    seed: int = 0
    data_seed: int = 1234
    # ablation switches
    memory: bool = True
    write_gate: bool = True
    response_gate: bool = True
    share_memory: bool = False
    freeze_encoder: bool = False

    def __post_init__(self):
        if self.n_stages < 1:
            raise ValueError("n_stages must be ≥ 1")
        if self.init not in INIT_SCHEMES:
            raise ValueError(f"init must be one of {INIT_SCHEMES}")
        if self.lambda_ca < 0 or self.lambda_match < 0:
            raise ValueError("loss weights must be non-negative")

    @property
    def final_res(self) -> int:
        return self.base_res * 2 ** (self.n_stages - 1)

    @property
    def steps_per_epoch(self) -> int:
        return -(-self.train_count // self.batch_size)

    @property
    def total_steps(self) -> int:
        return self.max_steps or self.epochs * self.steps_per_epoch

    def variant(self, name: str) -> "TrainConfig":
        m, wg, rg = ABLATION_LADDER[name]
        return replace(self, memory=m, write_gate=wg, response_gate=rg)

    @property
    def variant_name(self) -> str:
        for name, flags in ABLATION_LADDER.items():
            if flags == (self.memory, self.write_gate, self.response_gate):
                return name
        return "custom"

    def to_text(self) -> str:
        return "".join(f"{k}={_fmt(v)}\n" for k, v in asdict(self).items())

    def save(self, path):
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def from_text(cls, text: str) -> "TrainConfig":
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, raw = line.partition("=")
            key, raw = key.strip(), raw.strip()
            if not sep or key not in types:
                raise ValueError(f"line {lineno}: unknown or malformed entry {line!r}")
            values[key] = _parse(raw, types[key], key)
        return cls(**values)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return v if isinstance(v, str) else repr(v)


def _parse(raw: str, typ, key):
    typ = typ if isinstance(typ, str) else typ.__name__
    if typ == "bool":
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {raw!r}")
    if typ == "str":
        return raw
    return int(raw) if typ == "int" else float(raw)
