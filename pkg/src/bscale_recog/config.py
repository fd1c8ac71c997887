"""Run configuration shared by the command line and the evaluation harness."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .bscale import DEFAULT_KMAX, DEFAULT_PERCENTILE, DEFAULT_TS, KMAX_HARD_CAP
from .recognition import DEFAULT_SKIN_CUTOFF
from .rotations import EULER_TAG
from .shape_model import DEFAULT_LANDMARKS, DEFAULT_VARIANCE_KEPT
from .training import WBsSettings


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Config:
    sigma: float | None = None
    ts: float = DEFAULT_TS
    kmax: int = DEFAULT_KMAX
    percentile: float = DEFAULT_PERCENTILE
    interval: tuple[float, float] | None = None
    landmarks: dict[str, tuple[int, int]] = field(default_factory=lambda: dict(DEFAULT_LANDMARKS))
    variance_kept: float = DEFAULT_VARIANCE_KEPT
    skin_cutoff: float = DEFAULT_SKIN_CUTOFF
    euler_convention: str = EULER_TAG
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if not 0.0 < self.ts <= 1.0:
            raise ConfigError(f"ts must lie in (0, 1], got {self.ts}")
        if not 1 <= self.kmax <= KMAX_HARD_CAP:
            raise ConfigError(f"kmax must lie in [1, {KMAX_HARD_CAP}], got {self.kmax}")
        if not 0.0 <= self.percentile <= 100.0:
            raise ConfigError(f"percentile must lie in [0, 100], got {self.percentile}")
        if self.sigma is not None and not self.sigma > 0:
            raise ConfigError(f"sigma must be positive, got {self.sigma}")
        if self.interval is not None:
            lo, hi = self.interval
            if lo > hi:
                raise ConfigError(f"empty threshold interval {self.interval}")
        if not 0.0 < self.variance_kept <= 1.0:
            raise ConfigError(f"variance_kept must lie in (0, 1], got {self.variance_kept}")
        if not 0.0 <= self.skin_cutoff < 1.0:
            raise ConfigError(f"skin_cutoff must lie in [0, 1), got {self.skin_cutoff}")
        if self.euler_convention != EULER_TAG:
            raise ConfigError(f"unsupported Euler convention {self.euler_convention!r}")
        for label, (m, ns) in self.landmarks.items():
            if m < 3 or ns < 1:
                raise ConfigError(f"landmark counts for {label} must be >= (3, 1), got {(m, ns)}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["landmarks"] = {k: list(v) for k, v in self.landmarks.items()}
        if self.interval is not None:
            d["interval"] = list(self.interval)
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Config":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls().merged(d)

    @classmethod
    def from_json(cls, path: str | os.PathLike) -> "Config":
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        return cls.from_dict(d)

    def merged(self, overrides: Mapping[str, Any]) -> "Config":
        """Copy with every non-None entry of ``overrides`` applied."""
        upd = {k: v for k, v in overrides.items() if v is not None}
        if "interval" in upd:
            upd["interval"] = tuple(float(v) for v in upd["interval"])
        if "landmarks" in upd:
            upd["landmarks"] = {**self.landmarks, **{k: tuple(int(x) for x in v) for k, v in upd["landmarks"].items()}}
        try:
            return dataclasses.replace(self, **upd)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def wbs_settings(self) -> WBsSettings:
        return WBsSettings(self.sigma, self.ts, self.kmax, self.percentile, self.interval, self.threads)
