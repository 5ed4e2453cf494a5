"""Run configuration: a small TOML file mirroring the library's config dataclasses.

Example::

    seed = 0

    [source_domain]
    beta_range = [0.4, 1.0]

    [adapt_optim]
    lr = 1e-4
    epochs = 10

    [loss]
    lambda_p = 1.0

Every section is optional; missing keys take library defaults. Unknown
sections or keys are rejected.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, fields, replace

from .haze_sim import DomainConfig, source_domain, target_domain
from .image_ops import ClaheConfig, ConfigError
from .losses import LossWeights
from .models import TAP_NAMES
from .train import OptimConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass(frozen=True)
class DataConfig:
    """Sizes of the generated desk-scale datasets."""
    n_source: int = 300
    n_target: int = 200
    n_heldout: int = 40
    # held-out samples are drawn from indices that training never touches
    heldout_start: int = 10_000

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 1:
                raise ConfigError(f"data.{f.name} must be >= 1")


@dataclass(frozen=True)
class AdaptConfig:
    insertion_points: tuple = TAP_NAMES
    dcp_patch: int = 15
    angular_phase: bool = False
    use_drn: bool = True
    net_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "insertion_points", tuple(self.insertion_points))
        bad = [p for p in self.insertion_points if p not in TAP_NAMES]
        if bad:
            raise ConfigError(f"unknown insertion points {bad}; choose from {list(TAP_NAMES)}")
        if self.dcp_patch < 1 or self.dcp_patch % 2 == 0:
            raise ConfigError(f"dcp_patch must be odd and >= 1, got {self.dcp_patch}")


def _source_optim() -> OptimConfig:
    # supervised source training runs from scratch, so it uses a larger step
    return OptimConfig(lr=1e-3)


@dataclass
class RunConfig:
    seed: int = 0
    source_domain: DomainConfig = field(default_factory=source_domain)
    target_domain: DomainConfig = field(default_factory=target_domain)
    source_optim: OptimConfig = field(default_factory=_source_optim)
    adapt_optim: OptimConfig = field(default_factory=OptimConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    clahe: ClaheConfig = field(default_factory=ClaheConfig)
    data: DataConfig = field(default_factory=DataConfig)
    adapt: AdaptConfig = field(default_factory=AdaptConfig)

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    def echo(self) -> str:
        """Resolved configuration as canonical JSON."""
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def digest(self, *extra) -> str:
        h = hashlib.sha256(json.dumps([self.to_dict(), _plain(list(extra))], sort_keys=True).encode())
        return h.hexdigest()[:12]

    def with_seed(self, seed: int) -> "RunConfig":
        """Key every random stream by ``seed``, keeping the source/target domains distinct."""
        return replace(
            self, seed=seed,
            source_domain=replace(self.source_domain, seed=2 * seed),
            target_domain=replace(self.target_domain, seed=2 * seed + 1),
            source_optim=replace(self.source_optim, seed=seed),
            adapt_optim=replace(self.adapt_optim, seed=seed),
        )


_SECTIONS = {f.name: f for f in fields(RunConfig) if f.name != "seed"}


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _build(section: str, cls, defaults, values: dict):
    if not isinstance(values, dict):
        raise ConfigError(f"[{section}] must be a table")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(unknown)}")
    try:
        return replace(defaults, **values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}]: {exc}") from exc


def from_mapping(raw: dict) -> RunConfig:
    unknown = sorted(k for k in raw if k != "seed" and k not in _SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(unknown)}")
    cfg = RunConfig()
    if "seed" in raw:
        if not isinstance(raw["seed"], int):
            raise ConfigError("seed must be an integer")
        cfg = cfg.with_seed(raw["seed"])
    updates = {}
    for name, values in raw.items():
        if name == "seed":
            continue
        current = getattr(cfg, name)
        updates[name] = _build(name, type(current), current, values)
    return replace(cfg, **updates)


def loads(text: str) -> RunConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config is not valid TOML: {exc}") from exc
    return from_mapping(raw)


def load(path) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            text = fh.read().decode("utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return loads(text)
