"""Model and training configuration with desk and paper-scale presets."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .graph import EDGE_ROLES

CONFIG_ENV = "SMA_CONFIG"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Config:
    d: int = 64
    k: int = 5
    n_max: int = 36
    m_max: int = 50
    t_max: int = 20
    L: int = 12
    layers: int = 4
    heads: int = 4
    encoder: bool = True
    edge_roles: tuple[str, ...] = EDGE_ROLES
    lr: float = 1e-4
    lr_milestones: tuple[int, ...] = ()
    lr_decay: float = 0.1
    batch_size: int = 8
    seed: int = 0
    feature_seed: int = 0
    question_vocab: str | None = None
    answer_vocab: str | None = None
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        problems = []
        for name in ("d", "k", "L", "layers", "heads", "batch_size", "t_max", "n_max", "m_max"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be >= 1")
        if self.heads >= 1 and self.d % self.heads:
            problems.append(f"heads={self.heads} must divide d={self.d}")
        bad = [r for r in self.edge_roles if r not in EDGE_ROLES]
        if bad:
            problems.append(f"unknown edge roles {bad}")
        if self.lr <= 0:
            problems.append("lr must be positive")
        if list(self.lr_milestones) != sorted(self.lr_milestones):
            problems.append("lr_milestones must be ascending")
        if problems:
            raise ConfigError("; ".join(problems))

    def lr_at(self, step: int) -> float:
        """Learning rate for 0-based ``step`` after the milestone decays."""
        return self.lr * self.lr_decay ** sum(step >= m for m in self.lr_milestones)

    def with_(self, **changes) -> "Config":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        out = asdict(self)
        out.pop("extra")
        out["edge_roles"] = list(self.edge_roles)
        out["lr_milestones"] = list(self.lr_milestones)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, raw: dict) -> "Config":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)} - {"extra"}
        unknown = sorted(set(raw) - known - {"preset"})
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        preset = raw.get("preset", "desk")
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
        base = PRESETS[preset]
        vals = {k: v for k, v in raw.items() if k != "preset"}
        for key in ("edge_roles", "lr_milestones"):
            if key in vals:
                vals[key] = tuple(vals[key])
        try:
            return replace(base, **vals)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


def load_config(path=None) -> Config:
    """Read a JSON config; falls back to ``$SMA_CONFIG`` and then the desk preset."""
    path = path or os.environ.get(CONFIG_ENV)
    if not path:
        return DESK
    if path in PRESETS:
        return PRESETS[path]
    p = Path(path)
    try:
        raw = json.loads(p.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {p}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    return Config.from_dict(raw)


DESK = Config()
# full-scale values; not trainable end to end at desk scale
PAPER = Config(d=768, heads=12, lr=1e-4, lr_milestones=(14000, 19000), batch_size=96)
GRADCHECK = Config(d=8, k=2, heads=2, layers=1, L=3, n_max=3, m_max=3)
PRESETS = {"desk": DESK, "paper": PAPER, "gradcheck": GRADCHECK}
