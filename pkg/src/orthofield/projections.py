"""Closed-form P_E^i and Hannan projectors on linear fields.

With the product filtration F_0 = σ(ε_s : s ⪯ 0), conditioning a linear
field on F_{∞1_J} keeps the innovations at sites s with s_q ≤ 0 for q ∉ J.
The inclusion-exclusion in P_E^i then keeps exactly the sites with s_q ≥ 1
for q ∈ E and s_q ≤ 0 otherwise.  In coefficient form (site -k carries a_k)
the image of a under P_E^i is

    c_k = a_{k + i·ε(E)}  for k_q ≤ -1 (q ∈ E) and k_q ≥ 0 (q ∉ E).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Mapping, Sequence

from . import lattice as lt
from .fieldmodels import LinearFieldSpec
from .lattice import Box, DirectionSet, MultiIndex

DROP = 1e-15


@dataclass(frozen=True)
class ProjectedField:
    field: LinearFieldSpec
    lineage: str

    @property
    def coeffs(self) -> Dict[MultiIndex, float]:
        return self.field.coeffs

    def norm(self) -> float:
        return self.field.norm()

    def coeff_csv(self) -> str:
        return self.field.coeff_csv()


def _as_field(f) -> LinearFieldSpec:
    return f.field if isinstance(f, ProjectedField) else f


def _lineage(f) -> str:
    return f.lineage if isinstance(f, ProjectedField) else "f"


def admissible(k: Sequence[int], E: DirectionSet) -> bool:
    return all((c <= -1) if q in E else (c >= 0) for q, c in enumerate(k))


def pe_coeffs(coeffs: Mapping[MultiIndex, float], E: DirectionSet, i: Sequence[int], d: int) -> Dict[MultiIndex, float]:
    shift = lt.mul(tuple(i), lt.eps_sign(E, d))
    out = {}
    for l, a in coeffs.items():
        k = lt.sub(l, shift)
        if admissible(k, E):
            out[k] = a
    return out


def linear_PE(field, E: DirectionSet, i: Sequence[int]) -> ProjectedField:
    f = _as_field(field)
    i = tuple(int(c) for c in i)
    if not lt.preceq(lt.zeros(f.d), i):
        raise ValueError(f"P_E^i needs i ⪰ 0, got {i}")
    coeffs = pe_coeffs(f.coeffs, E, i, f.d)
    return ProjectedField(f.with_coeffs(coeffs), f"P_{lt.dirset_label(E)}^{i}({_lineage(field)})")


def linear_pi(field, j: Sequence[int]) -> float:
    """Coefficient of ε_j in f, that is a_{-j}."""
    f = _as_field(field)
    return f.coeffs.get(lt.neg(tuple(j)), 0.0)


def add_coeffs(acc: Dict[MultiIndex, float], more: Mapping[MultiIndex, float], c: float = 1.0) -> None:
    for k, v in more.items():
        acc[k] = acc.get(k, 0.0) + c * v


def prune(coeffs: Mapping[MultiIndex, float]) -> Dict[MultiIndex, float]:
    return {k: v for k, v in coeffs.items() if abs(v) >= DROP}


def sum_PE_box(field, E: DirectionSet, lo: Sequence[int], hi: Sequence[int]) -> LinearFieldSpec:
    """Σ_{lo⪯i⪯hi} P_E^i f as a linear field."""
    f = _as_field(field)
    acc: Dict[MultiIndex, float] = {}
    for i in lt.iterate_box(Box(tuple(lo), tuple(hi))):
        add_coeffs(acc, pe_coeffs(f.coeffs, E, i, f.d))
    return f.with_coeffs(prune(acc))


def coeff_norm(coeffs: Mapping[MultiIndex, float], sd: float) -> float:
    return sd * math.sqrt(math.fsum(v * v for v in coeffs.values()))


def sum_PE_norm(field, E: DirectionSet, n: Sequence[int]) -> float:
    """‖Σ_{0⪯i⪯n-1} P_E^i f‖ for n ⪰ 1."""
    f = _as_field(field)
    n = tuple(int(c) for c in n)
    if not lt.preceq(lt.ones(f.d), n):
        raise ValueError(f"n must satisfy n ⪰ 1, got {n}")
    g = sum_PE_box(f, E, lt.zeros(f.d), lt.sub(n, lt.ones(f.d)))
    return coeff_norm(g.coeffs, f.innovation.sd)


def sum_PE_norm_box(field, E: DirectionSet, lo: Sequence[int], hi: Sequence[int]) -> float:
    f = _as_field(field)
    return coeff_norm(sum_PE_box(f, E, lo, hi).coeffs, f.innovation.sd)
