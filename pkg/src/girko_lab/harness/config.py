"""Experiment configuration: a flat TOML file with a canonical hashed form.

Example::

    experiment = "clt"
    ensemble = "complex-ginibre"
    n_list = [256]
    seeds = 500
    base_seed = 20240601
    output_dir = "results/clt"

    [parameters]
    z0 = "0"
    a = 0.25

Complex parameters may be given as numbers, as strings such as
``"0.3+0.1j"``, or as ``[re, im]`` pairs.  Parameters not set in the file
take the experiment defaults, which are merged in before hashing.  Two
configurations with the same effective settings therefore hash
identically.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):  # pragma: no cover
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from ..ensembles import EnsembleKind

__all__ = ["EXPERIMENT_NAMES", "ConfigError", "ExperimentConfig", "load_config", "parse_complex"]

EXPERIMENT_NAMES = (
    "clt",
    "local-law-scan",
    "two-resolvent-scan",
    "overlap-decay",
    "flow-check",
    "girko-consistency",
    "dyson-table",
    "stab-table",
    "resolvent-clt",
)


class ConfigError(ValueError):
    """Invalid experiment configuration."""


def parse_complex(v: Any) -> complex:
    """Accept ``1``, ``0.5``, ``"0.3+0.1j"`` or ``[re, im]``."""
    if isinstance(v, (list, tuple)):
        if len(v) != 2:
            raise ConfigError(f"complex pair must have two entries, got {v!r}")
        return complex(float(v[0]), float(v[1]))
    if isinstance(v, str):
        try:
            return complex(v.replace(" ", "").replace("i", "j"))
        except ValueError as exc:
            raise ConfigError(f"cannot parse complex number {v!r}") from exc
    return complex(v)


def _canon(v: Any) -> Any:
    if isinstance(v, complex):
        return [v.real, v.imag]
    if isinstance(v, Mapping):
        return {str(k): _canon(x) for k, x in sorted(v.items())}
    if isinstance(v, (list, tuple)):
        return [_canon(x) for x in v]
    return v


@dataclass(frozen=True)
class ExperimentConfig:
    """Settings of one experiment run."""

    experiment: str
    ensemble: EnsembleKind = EnsembleKind.COMPLEX_GINIBRE
    n_list: tuple[int, ...] = (256,)
    seeds: int = 1
    base_seed: int = 0
    parameters: Mapping[str, Any] = field(default_factory=dict)
    output_dir: str = "results"

    def __post_init__(self) -> None:
        if self.experiment not in EXPERIMENT_NAMES:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {', '.join(EXPERIMENT_NAMES)}")
        try:
            object.__setattr__(self, "ensemble", EnsembleKind(self.ensemble))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        n_list = tuple(int(n) for n in self.n_list)
        if not n_list or any(n < 2 for n in n_list):
            raise ConfigError(f"n_list must contain integers >= 2, got {self.n_list!r}")
        object.__setattr__(self, "n_list", n_list)
        if int(self.seeds) < 1:
            raise ConfigError("seeds must be positive")
        object.__setattr__(self, "seeds", int(self.seeds))
        object.__setattr__(self, "base_seed", int(self.base_seed))
        object.__setattr__(self, "parameters", dict(self.parameters))

    def canonical_dict(self) -> dict:
        """Everything that influences the rows (``output_dir`` excluded)."""
        return {
            "experiment": self.experiment,
            "ensemble": self.ensemble.value,
            "n_list": list(self.n_list),
            "seeds": self.seeds,
            "base_seed": self.base_seed,
            "parameters": _canon(self.parameters),
        }

    def canonical(self) -> str:
        return json.dumps(self.canonical_dict(), sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def with_overrides(self, **kw: Any) -> "ExperimentConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw)

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "ExperimentConfig":
        known = {"experiment", "ensemble", "n_list", "seeds", "base_seed", "parameters", "output_dir"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
        if "experiment" not in data:
            raise ConfigError("missing 'experiment'")
        data = dict(data)
        if "n_list" in data and isinstance(data["n_list"], int):
            data["n_list"] = [data["n_list"]]
        return cls(**data)


def load_config(path: str | Path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return ExperimentConfig.from_mapping(data)
