"""Training configuration and its flat ``key = value`` file format."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    env: str = "cartpole"
    buffer_size: int = 1000
    batch_size: int = 256
    learning_rate: float = 1e-3
    rollout_steps: int = 1
    # "episodes": rollout_steps whole episodes per iteration;
    # "steps": whole episodes until at least rollout_steps env steps
    rollout_unit: str = "episodes"
    training_steps: int = 5
    total_steps: int = 200_000
    gamma: float = 0.99
    entropy_coef: float = 0.0
    beta: float = 0.0
    head: str = "auto"
    sigma: float = 0.3
    hidden: int = 64
    seed: int = 0
    # stop early once the rolling-100 return reaches this value
    target_return: float | None = None
    record_wallclock: bool = True
    trace_every: int = 0
    # distributed mode
    distributed: bool = False
    n_actors: int = 4
    n_workers: int = 8
    ring_buffer: bool = False
    ring_capacity: int = 100_000
    ring_threshold: float = 1.0

    def validate(self) -> "TrainConfig":
        for name in ("buffer_size", "batch_size", "rollout_steps", "training_steps", "hidden",
                     "n_actors", "n_workers", "ring_capacity"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.total_steps < 0:
            raise ConfigError("total_steps must be >= 0")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.beta < 0:
            raise ConfigError("beta must be >= 0")
        if self.sigma <= 0:
            raise ConfigError("sigma must be > 0")
        if not 0 < self.gamma <= 1:
            raise ConfigError("gamma must lie in (0, 1]")
        if self.rollout_unit not in ("episodes", "steps"):
            raise ConfigError(f"rollout_unit must be 'episodes' or 'steps', got {self.rollout_unit!r}")
        if self.head not in ("auto", "categorical", "gaussian-mean"):
            raise ConfigError(f"unknown head {self.head!r}")
        if self.trace_every < 0:
            raise ConfigError("trace_every must be >= 0")
        return self

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


def _coerce(field_type: str, key: str, raw: str):
    raw = raw.strip()
    try:
        if field_type == "bool":
            lowered = raw.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if field_type == "int":
            return int(float(raw)) if "e" in raw.lower() else int(raw)
        if field_type == "float":
            return float(raw)
        if field_type == "float | None":
            return None if raw.lower() in ("", "none") else float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


_FIELDS = {f.name: f.type for f in fields(TrainConfig)}


def parse_config(text: str, base: TrainConfig | None = None) -> TrainConfig:
    """Read ``key = value`` lines on top of ``base``; ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(_FIELDS[key], key, raw)
    return dataclasses.replace(base or TrainConfig(), **values)


def load_config(path, base: TrainConfig | None = None) -> TrainConfig:
    return parse_config(Path(path).read_text(), base)


def format_config(config: TrainConfig) -> str:
    return "".join(f"{f.name} = {getattr(config, f.name)}\n" for f in fields(config))


CONFIG_DIR = Path(__file__).parent / "configs"


def shipped_config(name: str) -> TrainConfig:
    """Load one of the bundled configs by file stem (``cartpole``, ``taxi``...)."""
    path = CONFIG_DIR / f"{name}.cfg"
    if not path.exists():
        raise ConfigError(f"no shipped config {name!r}")
    return load_config(path)
