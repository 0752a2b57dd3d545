"""Run configuration: plain ``key=value`` text, one setting per line, ``#`` comments."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from fcoh.errors import ConfigError
from fcoh.metrics import DEFAULT_KS
from fcoh.model import PRESETS, Hyperparams


@dataclass
class RunConfig:
    dataset: str = ""
    format: str = ""
    method: str = "fcoh"
    r: int = 32
    seed: int = 0
    n_t: int = 100
    lambda1: float = 0.1
    lambda2: float = 0.01
    mu: float = 0.01
    train_size: int = 20000
    query_per_class: int = 0
    query_total: int = 0
    database_size: int = 0
    eval_every: int = 20
    ks: tuple[int, ...] = DEFAULT_KS
    map_cutoff: int = 0
    center: bool = False
    freeze_per_batch: bool = False
    output_dir: str = "run"

    def validate(self, check_files: bool = True) -> "RunConfig":
        if not self.dataset:
            raise ConfigError("dataset path is required")
        if check_files and not Path(self.dataset).exists():
            raise ConfigError(f"dataset file not found: {self.dataset}")
        if self.method not in ("fcoh", "lsh"):
            raise ConfigError(f"method must be fcoh or lsh, got {self.method!r}")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")
        if self.r < 1 or self.train_size < 1:
            raise ConfigError("r and train_size must be >= 1")
        if bool(self.query_per_class) == bool(self.query_total):
            raise ConfigError("set exactly one of query_per_class and query_total")
        if not self.ks or min(self.ks) < 1:
            raise ConfigError("ks must be a nonempty list of positive integers")
        try:
            self.hyperparams()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return self

    def hyperparams(self) -> Hyperparams:
        return Hyperparams(self.lambda1, self.lambda2, self.mu, self.n_t)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _convert(key: str, raw: str):
    f = _FIELDS[key]
    kind = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
    raw = raw.strip()
    try:
        if kind == "bool":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind.startswith("tuple"):
            return tuple(int(x) for x in raw.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def apply_settings(cfg: RunConfig, settings: dict[str, str]) -> RunConfig:
    updates = {}
    # A preset only fills hyperparameters; explicit keys still win.
    if "preset" in settings:
        name = settings["preset"].strip().lower()
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        updates.update(dataclasses.asdict(PRESETS[name]))
    for key, raw in settings.items():
        if key == "preset":
            continue
        key = key.strip().replace("-", "_")
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
        updates[key] = _convert(key, raw)
    return dataclasses.replace(cfg, **updates)


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return apply_settings(base or RunConfig(), parse_config_text(path.read_text(), str(path)))
