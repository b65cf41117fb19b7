"""Stationary random-field models driven by i.i.d. innovations on Z^d."""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from . import lattice as lt
from . import rng as crng
from .exactsys import EmbeddedSystem, TooLarge
from .lattice import Box, MultiIndex

LAWS = ("standard-normal", "rademacher", "centered-uniform")
MAX_SITES = 10 ** 8


class WindowTooLarge(Exception):
    pass


@dataclass(frozen=True)
class InnovationSpec:
    law: str = "standard-normal"
    sd: float = 1.0

    def __post_init__(self):
        if self.law not in LAWS:
            raise ValueError(f"unknown innovation law {self.law!r}; expected one of {', '.join(LAWS)}")
        if not (self.sd > 0 and math.isfinite(self.sd)):
            raise ValueError(f"innovation sd must be positive, got {self.sd!r}")

    def draw(self, seed: int, keys: np.ndarray) -> np.ndarray:
        if self.law == "standard-normal":
            z = crng.site_normal(seed, keys)
        elif self.law == "rademacher":
            z = crng.site_rademacher(seed, keys)
        else:
            z = math.sqrt(3.0) * (2.0 * crng.site_uniform(seed, keys, 4) - 1.0)
        return self.sd * z

    def to_json(self) -> dict:
        return {"law": self.law, "sd": self.sd}


def innovations(innov: InnovationSpec, box: Box, seed: int) -> np.ndarray:
    """Innovations ε_s for every site s of ``box``, shape ``box.shape``."""
    if box.volume > MAX_SITES:
        raise WindowTooLarge(f"{box.volume} innovation sites exceed the limit of {MAX_SITES}")
    keys = crng.pack_sites(crng.box_coords(box.lo, box.shape))
    return innov.draw(seed, keys)


def _clean(coeffs: Mapping) -> Dict[MultiIndex, float]:
    return {tuple(int(c) for c in k): float(v) for k, v in coeffs.items() if abs(float(v)) >= 1e-15}


@dataclass(frozen=True)
class LinearFieldSpec:
    """f = Σ_i a_i ε_{-i}; the value at site k is Σ_i a_i ε_{k-i}."""

    d: int
    coeffs: Dict[MultiIndex, float]
    innovation: InnovationSpec = InnovationSpec()
    truncation_radius: Optional[int] = None

    def __post_init__(self):
        lt.check_dim(self.d)
        c = _clean(self.coeffs)
        for k in c:
            if len(k) != self.d:
                raise ValueError(f"coefficient index {k} does not have dimension {self.d}")
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def delta(cls, d: int, innovation: InnovationSpec = InnovationSpec()) -> "LinearFieldSpec":
        return cls(d, {lt.zeros(d): 1.0}, innovation)

    @classmethod
    def product_form(cls, decays: Sequence[float], innovation: InnovationSpec = InnovationSpec(), scale: float = 1.0) -> "LinearFieldSpec":
        """a_i = scale·Π_q r_q^{i_q} for i ⪰ 0, truncated where |a_i| < 1e-15."""
        d = len(decays)
        radius = 0
        for r in decays:
            if not 0 <= abs(r) < 1:
                raise ValueError("decay rates must lie in (-1, 1)")
            if r != 0:
                radius = max(radius, int(math.ceil(math.log(1e-15 / max(abs(scale), 1e-300)) / math.log(abs(r)))))
        coeffs = {}
        for i in lt.iterate_box(Box(lt.zeros(d), (radius,) * d)):
            v = scale * math.prod(r ** c for r, c in zip(decays, i))
            if abs(v) >= 1e-15:
                coeffs[i] = v
        return cls(d, coeffs, innovation, truncation_radius=radius)

    def with_coeffs(self, coeffs: Mapping) -> "LinearFieldSpec":
        return LinearFieldSpec(self.d, dict(coeffs), self.innovation)

    def scaled(self, c: float) -> "LinearFieldSpec":
        return self.with_coeffs({k: c * v for k, v in self.coeffs.items()})

    @property
    def is_zero(self) -> bool:
        return not self.coeffs

    def support_box(self) -> Optional[Box]:
        if not self.coeffs:
            return None
        return lt.bounding_box(self.coeffs.keys())

    def radius(self) -> int:
        return max((max(abs(c) for c in k) for k in self.coeffs), default=0)

    def coeff_sum(self) -> float:
        return math.fsum(self.coeffs.values())

    def norm(self) -> float:
        return self.innovation.sd * math.sqrt(math.fsum(v * v for v in self.coeffs.values()))

    def to_json(self) -> dict:
        return {
            "d": self.d,
            "coefficients": [{"index": list(k), "value": v} for k, v in sorted(self.coeffs.items())],
            "innovation": self.innovation.to_json(),
        }

    def coeff_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join([f"i{q + 1}" for q in range(self.d)] + ["value"]) + "\n")
        for k, v in sorted(self.coeffs.items()):
            buf.write(",".join([str(c) for c in k] + [repr(float(v))]) + "\n")
        return buf.getvalue()


MODULATIONS = ("none", "sign")


@dataclass(frozen=True)
class OrthoMDSpec:
    """m = ε_0·v(ε_{-1}) with -1 = (-1,…,-1); v is 1 or sign."""

    d: int
    innovation: InnovationSpec = InnovationSpec()
    modulation: str = "none"
    scale: float = 1.0

    def __post_init__(self):
        lt.check_dim(self.d)
        if self.modulation not in MODULATIONS:
            raise ValueError(f"unknown modulation {self.modulation!r}")

    def norm(self) -> float:
        # |v| = 1 for both modulations
        return abs(self.scale) * self.innovation.sd


@dataclass(frozen=True)
class VolterraFieldSpec:
    """Value at site k is Σ c_{i,j} ε_{k-i} ε_{k-j} over off-diagonal pairs."""

    d: int
    pairs: Dict[Tuple[MultiIndex, MultiIndex], float]
    innovation: InnovationSpec = InnovationSpec()

    def __post_init__(self):
        lt.check_dim(self.d)
        clean = {}
        for (i, j), v in self.pairs.items():
            i, j = tuple(i), tuple(j)
            if i == j:
                raise ValueError(f"diagonal pair {i} not allowed")
            if len(i) != self.d or len(j) != self.d:
                raise ValueError("pair indices must have the field dimension")
            if abs(v) >= 1e-15:
                clean[(i, j)] = float(v)
        object.__setattr__(self, "pairs", clean)

    def norm(self) -> float:
        # distinct unordered pairs are orthogonal
        acc: Dict[frozenset, float] = {}
        for (i, j), v in self.pairs.items():
            key = frozenset((i, j))
            acc[key] = acc.get(key, 0.0) + v
        return self.innovation.sd ** 2 * math.sqrt(math.fsum(v * v for v in acc.values()))


FieldSpec = Union[LinearFieldSpec, OrthoMDSpec, VolterraFieldSpec]


@dataclass
class Realization:
    window: Box
    values: np.ndarray
    seed: int

    def restrict(self, sub: Box) -> np.ndarray:
        off = lt.sub(sub.lo, self.window.lo)
        return self.values[tuple(slice(o, o + n) for o, n in zip(off, sub.shape))]

    def to_csv(self) -> str:
        buf = io.StringIO()
        d = self.window.d
        buf.write(",".join([f"k{q + 1}" for q in range(d)] + ["value"]) + "\n")
        for k in self.window:
            v = self.values[lt.sub(k, self.window.lo)]
            buf.write(",".join([str(c) for c in k] + [repr(float(v))]) + "\n")
        return buf.getvalue()


def _lagged_sum(eps: np.ndarray, pad_lo: MultiIndex, window: Box, lags: Dict[MultiIndex, float]) -> np.ndarray:
    out = np.zeros(window.shape)
    for i, a in lags.items():
        start = lt.sub(lt.sub(window.lo, i), pad_lo)
        out += a * eps[tuple(slice(s, s + n) for s, n in zip(start, window.shape))]
    return out


def _pad_for(window: Box, lags: Sequence[MultiIndex]) -> Box:
    lags = list(lags) or [lt.zeros(window.d)]
    sb = lt.bounding_box(lags)
    return Box(lt.sub(window.lo, sb.hi), lt.sub(window.hi, sb.lo))


def sample_window(spec: FieldSpec, window: Box, seed: int) -> Realization:
    """Field values f∘T^k for k in ``window``; bit-exact given (spec, window, seed)."""
    if spec.d != window.d:
        raise ValueError(f"window dimension {window.d} does not match field dimension {spec.d}")
    if isinstance(spec, LinearFieldSpec):
        pad = _pad_for(window, spec.coeffs.keys())
        eps = innovations(spec.innovation, pad, seed)
        vals = _lagged_sum(eps, pad.lo, window, spec.coeffs)
    elif isinstance(spec, OrthoMDSpec):
        past = lt.neg(lt.ones(spec.d))
        pad = _pad_for(window, [lt.zeros(spec.d), lt.ones(spec.d)])
        eps = innovations(spec.innovation, pad, seed)
        e0 = _lagged_sum(eps, pad.lo, window, {lt.zeros(spec.d): 1.0})
        if spec.modulation == "sign":
            e1 = _lagged_sum(eps, pad.lo, window, {lt.neg(past): 1.0})
            e0 = e0 * np.where(e1 >= 0, 1.0, -1.0)
        vals = spec.scale * e0
    elif isinstance(spec, VolterraFieldSpec):
        lags = [i for pair in spec.pairs for i in pair]
        pad = _pad_for(window, lags)
        eps = innovations(spec.innovation, pad, seed)
        vals = np.zeros(window.shape)
        for (i, j), c in spec.pairs.items():
            vals += c * _lagged_sum(eps, pad.lo, window, {i: 1.0}) * _lagged_sum(eps, pad.lo, window, {j: 1.0})
    else:
        raise TypeError(f"cannot sample {type(spec).__name__}")
    return Realization(window, vals, seed)


# ---------------------------------------------------------------------------
# Bridge to the exact engine
# ---------------------------------------------------------------------------

def embed_vector(system: EmbeddedSystem, spec: LinearFieldSpec) -> np.ndarray:
    """The linear field as a function of the window innovations (ω scaled by sd)."""
    f = np.zeros(system.size)
    for i, a in spec.coeffs.items():
        site = lt.neg(i)
        if site not in system.window:
            raise TooLarge(f"coefficient index {i} lies outside the embedding window")
        f += a * system.omega(site)
    return spec.innovation.sd * f


def exact_embed(spec: LinearFieldSpec, radius: int = 1, window: Optional[Box] = None) -> EmbeddedSystem:
    """Finite product space of ±1 innovations on [-radius, radius]^d (or ``window``).

    The returned system carries the field as ``system.observable``.
    """
    if spec.innovation.law != "rademacher":
        raise ValueError("exact embedding needs rademacher innovations")
    if spec.radius() > radius and window is None:
        raise ValueError(f"coefficient support radius {spec.radius()} exceeds embedding radius {radius}")
    if window is None:
        window = Box((-radius,) * spec.d, (radius,) * spec.d)
    if window.volume > 16:
        raise TooLarge(f"window with {window.volume} sites exceeds 2^16 atoms")
    system = EmbeddedSystem(window)
    system.observable = embed_vector(system, spec)
    return system
