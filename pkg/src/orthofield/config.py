"""TOML experiment configuration with key-path error reporting."""
from __future__ import annotations

import sys
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .fieldmodels import (
    InnovationSpec,
    LinearFieldSpec,
    OrthoMDSpec,
    VolterraFieldSpec,
)
from .lattice import MAX_DIM


class ConfigError(Exception):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


def load_config(path: Optional[str]) -> Dict[str, Any]:
    if path is None:
        return {}
    p = Path(path)
    try:
        with p.open("rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError("--config", f"file {path} not found")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("--config", f"invalid TOML: {exc}")


def lookup(cfg: Mapping, key: str, default: Any = None) -> Any:
    node: Any = cfg
    for part in key.split("."):
        if not isinstance(node, Mapping) or part not in node:
            return default
        node = node[part]
    return node


def get_int(cfg: Mapping, key: str, default: Optional[int] = None, lo: Optional[int] = None) -> int:
    v = lookup(cfg, key, default)
    if v is None:
        raise ConfigError(key, "required integer is missing")
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(key, f"expected an integer, got {v!r}")
    if lo is not None and v < lo:
        raise ConfigError(key, f"must be ≥ {lo}, got {v}")
    return v


def get_float(cfg: Mapping, key: str, default: Optional[float] = None, positive: bool = False) -> float:
    v = lookup(cfg, key, default)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(key, f"expected a number, got {v!r}")
    if positive and not v > 0:
        raise ConfigError(key, f"must be positive, got {v}")
    return float(v)


def get_str(cfg: Mapping, key: str, default: Optional[str] = None, choices: Optional[Sequence[str]] = None) -> str:
    v = lookup(cfg, key, default)
    if not isinstance(v, str):
        raise ConfigError(key, f"expected a string, got {v!r}")
    if choices is not None and v not in choices:
        raise ConfigError(key, f"expected one of {', '.join(choices)}, got {v!r}")
    return v


def as_index(v: Any, key: str, d: Optional[int] = None) -> tuple:
    if isinstance(v, int) and not isinstance(v, bool):
        v = [v] * (d or 1)
    if isinstance(v, str):
        try:
            v = [int(x) for x in v.split(",")]
        except ValueError:
            raise ConfigError(key, f"expected comma-separated integers, got {v!r}")
    if not isinstance(v, list) or not all(isinstance(x, int) and not isinstance(x, bool) for x in v):
        raise ConfigError(key, f"expected a list of integers, got {v!r}")
    if d is not None and len(v) != d:
        raise ConfigError(key, f"expected {d} coordinates, got {len(v)}")
    return tuple(v)


def get_index(cfg: Mapping, key: str, d: int, default: Any = None) -> tuple:
    v = lookup(cfg, key, default)
    if v is None:
        raise ConfigError(key, "required multi-index is missing")
    return as_index(v, key, d)


def get_int_list(cfg: Mapping, key: str, default: Sequence[int]) -> List[int]:
    v = lookup(cfg, key, list(default))
    if not isinstance(v, list) or not all(isinstance(x, int) and not isinstance(x, bool) for x in v):
        raise ConfigError(key, f"expected a list of integers, got {v!r}")
    return list(v)


def innovation_from(cfg: Mapping, prefix: str = "field.innovation") -> InnovationSpec:
    law = get_str(cfg, f"{prefix}.law", "standard-normal", ("standard-normal", "rademacher", "centered-uniform"))
    sd = get_float(cfg, f"{prefix}.sd", 1.0, positive=True)
    return InnovationSpec(law, sd)


def field_from(cfg: Mapping, d_override: Optional[int] = None, default_kind: str = "linear"):
    """Build a field spec from the [field] table."""
    kind = get_str(cfg, "field.kind", default_kind, ("linear", "orthomd", "volterra"))
    d = d_override if d_override is not None else get_int(cfg, "field.dimension", None if kind != "orthomd" else 1, lo=1)
    if d > MAX_DIM:
        raise ConfigError("field.dimension", f"must be ≤ {MAX_DIM}, got {d}")
    innov = innovation_from(cfg)
    if kind == "orthomd":
        mod = get_str(cfg, "field.modulation", "none", ("none", "sign"))
        return OrthoMDSpec(d, innov, mod, get_float(cfg, "field.scale", 1.0))
    if kind == "volterra":
        rows = lookup(cfg, "field.pairs")
        if not isinstance(rows, list) or not rows:
            raise ConfigError("field.pairs", "expected a non-empty list of {i, j, value} tables")
        pairs = {}
        for p, row in enumerate(rows):
            key = f"field.pairs[{p}]"
            if not isinstance(row, Mapping):
                raise ConfigError(key, "expected a table with i, j, value")
            i = as_index(row.get("i"), f"{key}.i", d)
            j = as_index(row.get("j"), f"{key}.j", d)
            if i == j:
                raise ConfigError(key, "diagonal pairs are not allowed")
            pairs[(i, j)] = get_float(row, "value")
        return VolterraFieldSpec(d, pairs, innov)
    rows = lookup(cfg, "field.coefficients")
    if rows is None:
        return LinearFieldSpec.delta(d, innov)
    if not isinstance(rows, list):
        raise ConfigError("field.coefficients", "expected a list of {index, value} tables")
    coeffs: Dict[tuple, float] = {}
    for p, row in enumerate(rows):
        key = f"field.coefficients[{p}]"
        if not isinstance(row, Mapping) or "index" not in row or "value" not in row:
            raise ConfigError(key, "expected a table with index and value")
        idx = as_index(row["index"], f"{key}.index", d)
        try:
            val = float(row["value"])
        except (TypeError, ValueError):
            raise ConfigError(f"{key}.value", f"expected a number, got {row['value']!r}")
        coeffs[idx] = coeffs.get(idx, 0.0) + val
    return LinearFieldSpec(d, coeffs, innov)
