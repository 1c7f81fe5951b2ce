"""Pipeline configuration: defaults, ``key = value`` config files and validation."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

from .errors import InvalidParams
from .ingest import ADFA_LAYOUT, DEFAULT_MAX_ID
from .ocsvm import NU_GRID_ALT, NU_GRID_TABLES, OcsvmParams

NU_PRESETS = {"tables": NU_GRID_TABLES, "alt": NU_GRID_ALT}


@dataclass(frozen=True)
class PipelineConfig:
    root: str | None = None
    layout: tuple[str, ...] = ADFA_LAYOUT
    recursive: bool = True
    synthetic: str | None = None  # path of a synthetic-corpus parameter file
    kmax_probe: int = 15
    nu_grid: tuple[float, ...] = NU_GRID_TABLES
    kmax_nu: float = 0.01  # nu whose DR/FAR column fixes K_max
    combination_nus: tuple[float, ...] | None = None  # None -> nu_grid
    gamma: float | None = None
    kkt_tolerance: float = 1e-3
    max_iterations: int = 10_000_000
    epsilon: float = 0.001
    split_fraction: float = 0.5
    seed: int = 0
    jobs: int = 1
    out: str = "lkgram-out"
    validation_split: bool = False
    validation_fraction: float = 0.5
    max_id: int = DEFAULT_MAX_ID

    def __post_init__(self):
        if self.kmax_probe < 2:
            raise InvalidParams("probe range N must be at least 2")
        if not self.nu_grid or any(not 0 < v <= 1 for v in self.nu_grid):
            raise InvalidParams(f"nu grid values must lie in (0, 1]: {self.nu_grid}")
        if self.kmax_nu not in self.nu_grid:
            raise InvalidParams(f"kmax_nu {self.kmax_nu} is not in the nu grid {self.nu_grid}")
        if self.combination_nus is not None and any(not 0 < v <= 1 for v in self.combination_nus):
            raise InvalidParams("combination nu values must lie in (0, 1]")
        if self.jobs < 1:
            raise InvalidParams("parallelism must be at least 1")
        if self.epsilon < 0:
            raise InvalidParams("epsilon must be non-negative")
        if not 0 < self.validation_fraction < 1:
            raise InvalidParams("validation fraction must lie in (0, 1)")

    @property
    def combination_nu_grid(self) -> tuple[float, ...]:
        return self.nu_grid if self.combination_nus is None else self.combination_nus

    def ocsvm_params(self, nu: float) -> OcsvmParams:
        return OcsvmParams(nu=nu, gamma=self.gamma, kkt_tolerance=self.kkt_tolerance,
                           max_iterations=self.max_iterations)

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any], base: "PipelineConfig | None" = None) -> "PipelineConfig":
        base = base or cls()
        fields = {f.name: f for f in dataclasses.fields(cls)}
        changes = {}
        for raw_key, raw in values.items():
            key = raw_key.strip().replace("-", "_")
            if key not in fields:
                raise InvalidParams(f"unknown config key {raw_key!r}")
            changes[key] = _coerce(key, raw)
        return dataclasses.replace(base, **changes)

    @classmethod
    def from_file(cls, path: str | Path, base: "PipelineConfig | None" = None) -> "PipelineConfig":
        return cls.from_mapping(read_kv_file(path), base)


def read_kv_file(path: str | Path) -> dict[str, str]:
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise InvalidParams(f"{path}:{n}: expected 'key = value'")
        out[key.strip()] = value.strip()
    return out


def parse_nu_grid(text: str) -> tuple[float, ...]:
    text = text.strip()
    if text in NU_PRESETS:
        return NU_PRESETS[text]
    return tuple(float(v) for v in text.split(",") if v.strip())


def _bool(v) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise InvalidParams(f"not a boolean: {v!r}")


def _optional(conv):
    def f(v):
        if v is None or (isinstance(v, str) and v.strip().lower() in ("", "none", "auto")):
            return None
        return conv(v)
    return f


def _layout(v):
    if isinstance(v, str):
        return tuple(s.strip() for s in v.split(",") if s.strip())
    return tuple(v)


def _grid(v):
    return parse_nu_grid(v) if isinstance(v, str) else tuple(float(x) for x in v)


_CONVERTERS = {
    "root": _optional(str),
    "layout": _layout,
    "recursive": _bool,
    "synthetic": _optional(str),
    "kmax_probe": int,
    "nu_grid": _grid,
    "kmax_nu": float,
    "combination_nus": _optional(_grid),
    "gamma": _optional(float),
    "kkt_tolerance": float,
    "max_iterations": int,
    "epsilon": float,
    "split_fraction": float,
    "seed": int,
    "jobs": int,
    "out": str,
    "validation_split": _bool,
    "validation_fraction": float,
    "max_id": int,
}


def _coerce(key: str, value):
    try:
        return _CONVERTERS[key](value)
    except (TypeError, ValueError) as exc:
        raise InvalidParams(f"bad value for {key}: {value!r} ({exc})") from None
