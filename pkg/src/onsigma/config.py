"""Run configuration: TOML parsing, validation, defaults and overrides.

The canonical config is a TOML document; every run embeds its fully
resolved config (defaults filled) in the output metadata, and CSV files
carry the sha256 of that resolved form, so outputs are self-describing
and runs replayable.
"""

from __future__ import annotations

import hashlib
import json
import re
import sys
from dataclasses import dataclass, field

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

EXPERIMENTS = (
    "gff-check",
    "simulate",
    "spectrum",
    "o2",
    "scaling",
    "meanfield",
    "coupling",
    "ds-check",
    "chaos",
)


class ConfigError(ValueError):
    """Malformed or out-of-range configuration."""


@dataclass
class GridConfig:
    M: int = 16
    m: float = 1.0
    project_zero_mode: bool = False


@dataclass
class DynamicsConfig:
    N: object = 8  # int, or list of ints for sweep experiments
    lam: float = 1.0
    mode: str = "ddd"
    dealias: bool = False
    dt: float | None = None     # default 1e-3 * (4/m)
    t_burn: float | None = None  # default 10/m
    t_sample: float = 100.0
    thin: float = 0.1
    replicas: int = 1


@dataclass
class MeanFieldConfig:
    m_ens: int = 64
    flavor: str = "plain"
    x_init_scale: float = 1.0


@dataclass
class SnapshotConfig:
    enabled: bool = False
    interval: float = 1.0


@dataclass
class RunConfig:
    experiment: str = "simulate"
    seed: int = 0
    out: str | None = None
    threads: int = 1
    grid: GridConfig = field(default_factory=GridConfig)
    dynamics: DynamicsConfig = field(default_factory=DynamicsConfig)
    meanfield: MeanFieldConfig = field(default_factory=MeanFieldConfig)
    snapshots: SnapshotConfig = field(default_factory=SnapshotConfig)

    def resolved(self):
        """Config with the documented dt / t_burn defaults filled in."""
        d = self.to_dict()
        m = self.grid.m
        if d["dynamics"]["dt"] is None:
            d["dynamics"]["dt"] = 1e-3 * (4.0 / m) if m > 0 else 4e-3
        if d["dynamics"]["t_burn"] is None:
            d["dynamics"]["t_burn"] = 10.0 / m if m > 0 else 10.0
        return d

    def to_dict(self):
        return {
            "experiment": self.experiment,
            "seed": self.seed,
            "out": self.out,
            "threads": self.threads,
            "grid": vars(self.grid).copy(),
            "dynamics": vars(self.dynamics).copy(),
            "meanfield": vars(self.meanfield).copy(),
            "snapshots": vars(self.snapshots).copy(),
        }

    def sha256(self):
        """Hash of the resolved config, excluding execution-only knobs
        (threads, out) so outputs are invariant to how the run is scheduled."""
        d = self.resolved()
        d.pop("threads", None)
        d.pop("out", None)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def n_list(self):
        n = self.dynamics.N
        return [int(v) for v in n] if isinstance(n, (list, tuple)) else [int(n)]


_SECTIONS = {
    None: ("experiment", "seed", "out", "threads"),
    "grid": ("M", "m", "project_zero_mode"),
    "dynamics": ("N", "lam", "mode", "dealias", "dt", "t_burn", "t_sample", "thin", "replicas"),
    "meanfield": ("m_ens", "flavor", "x_init_scale"),
    "snapshots": ("enabled", "interval"),
}

_KEY_RE = re.compile(r"^\s*([A-Za-z0-9_.-]+)\s*=")
_TABLE_RE = re.compile(r"^\s*\[([^\]]+)\]\s*(#.*)?$")


def _reject_duplicate_keys(text):
    seen = set()
    section = None
    for line in text.splitlines():
        tm = _TABLE_RE.match(line)
        if tm:
            section = tm.group(1).strip()
            continue
        km = _KEY_RE.match(line)
        if km:
            key = (section, km.group(1))
            if key in seen:
                name = f"{section}.{km.group(1)}" if section else km.group(1)
                raise ConfigError(f"duplicate key '{name}'")
            seen.add(key)


def parse_config(text: str) -> RunConfig:
    """Parse and validate; unknown keys and duplicates are rejected by name."""
    _reject_duplicate_keys(text)
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"malformed TOML: {e}") from None
    cfg = RunConfig()
    _apply_dict(cfg, raw)
    validate_config(cfg)
    return cfg


def _apply_dict(cfg: RunConfig, raw: dict):
    for key, value in raw.items():
        if key in _SECTIONS[None]:
            setattr(cfg, key, value)
        elif key in ("grid", "dynamics", "meanfield", "snapshots"):
            if not isinstance(value, dict):
                raise ConfigError(f"'{key}' must be a table")
            target = getattr(cfg, key)
            for sub, sval in value.items():
                if sub not in _SECTIONS[key]:
                    raise ConfigError(f"unknown key '{key}.{sub}'")
                setattr(target, sub, sval)
        else:
            raise ConfigError(f"unknown key '{key}'")


def apply_overrides(cfg: RunConfig, overrides):
    """Dotted-path overrides 'section.key=value', applied before validation."""
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override '{item}' must look like key=value")
        path, _, raw_val = item.partition("=")
        try:
            value = tomllib.loads(f"v = {raw_val}")["v"]
        except tomllib.TOMLDecodeError:
            value = raw_val
        parts = path.strip().split(".")
        if len(parts) == 1:
            if parts[0] not in _SECTIONS[None]:
                raise ConfigError(f"unknown key '{parts[0]}'")
            setattr(cfg, parts[0], value)
        elif len(parts) == 2 and parts[0] in ("grid", "dynamics", "meanfield", "snapshots"):
            if parts[1] not in _SECTIONS[parts[0]]:
                raise ConfigError(f"unknown key '{path}'")
            setattr(getattr(cfg, parts[0]), parts[1], value)
        else:
            raise ConfigError(f"unknown key '{path}'")
    return cfg


def validate_config(cfg: RunConfig):
    if cfg.experiment not in EXPERIMENTS:
        raise ConfigError(
            f"experiment must be one of {', '.join(EXPERIMENTS)}; got '{cfg.experiment}'"
        )
    if not isinstance(cfg.seed, int) or not 0 <= cfg.seed < 2**64:
        raise ConfigError("seed must be an integer in [0, 2^64)")
    if not isinstance(cfg.threads, int) or cfg.threads < 1:
        raise ConfigError("threads must be >= 1")
    g = cfg.grid
    if not isinstance(g.M, int) or g.M < 2 or g.M % 2:
        raise ConfigError(f"grid.M must be even and >= 2; got {g.M}")
    if g.m < 0:
        raise ConfigError("grid.m must be >= 0")
    if g.m == 0 and not g.project_zero_mode:
        raise ConfigError("grid.m = 0 requires grid.project_zero_mode = true")
    d = cfg.dynamics
    for n in cfg.n_list():
        if n < 1:
            raise ConfigError("dynamics.N must be >= 1")
    if d.lam < 0:
        raise ConfigError("dynamics.lam must be >= 0")
    if d.mode not in ("ddd", "direct"):
        raise ConfigError(f"dynamics.mode must be 'ddd' or 'direct'; got '{d.mode}'")
    if d.dt is not None and d.dt <= 0:
        raise ConfigError(f"dynamics.dt must be > 0; got {d.dt}")
    if d.t_burn is not None and d.t_burn < 0:
        raise ConfigError("dynamics.t_burn must be >= 0")
    if d.t_sample < 0:
        raise ConfigError("dynamics.t_sample must be >= 0")
    if d.thin <= 0:
        raise ConfigError("dynamics.thin must be > 0")
    if d.replicas < 1:
        raise ConfigError("dynamics.replicas must be >= 1")
    mf = cfg.meanfield
    if mf.m_ens < 1:
        raise ConfigError("meanfield.m_ens must be >= 1")
    if mf.flavor not in ("plain", "leave-one-out"):
        raise ConfigError("meanfield.flavor must be 'plain' or 'leave-one-out'")
    if cfg.snapshots.interval <= 0:
        raise ConfigError("snapshots.interval must be > 0")
    return cfg
