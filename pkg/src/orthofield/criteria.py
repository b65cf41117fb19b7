"""Hannan and Maxwell–Woodroofe criteria for finitely supported linear fields."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.special import zeta

from . import lattice as lt
from .fieldmodels import LinearFieldSpec
from .lattice import Box, DirectionSet
from .projections import sum_PE_norm

SATISFIED, VIOLATED, INCONCLUSIVE = "satisfied", "violated", "inconclusive"


@dataclass
class EntryReport:
    E: DirectionSet
    partial_sum: float
    tail_bound: float
    total: float
    verdict: str

    def to_json(self) -> dict:
        return {
            "E": lt.dirset_to_json(self.E),
            "partial_sum": self.partial_sum,
            "tail_bound": self.tail_bound,
            "total": self.total,
            "verdict": self.verdict,
        }


@dataclass
class CriterionReport:
    name: str
    entries: List[EntryReport]
    truncation: Optional[int]
    verdict: str
    notes: List[str] = field(default_factory=list)

    @property
    def satisfied(self) -> bool:
        return self.verdict == SATISFIED

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "truncation": self.truncation,
            "verdict": self.verdict,
            "entries": [e.to_json() for e in self.entries],
            "notes": list(self.notes),
        }

    def rows(self) -> List[List]:
        return [[lt.dirset_label(e.E), e.partial_sum, e.tail_bound, e.verdict] for e in self.entries]


def hannan_check(f: LinearFieldSpec) -> CriterionReport:
    """Σ_j ‖π_j f‖ = sd·Σ|a_i|, exact for finite support."""
    total = f.innovation.sd * math.fsum(abs(v) for v in f.coeffs.values())
    notes = []
    if f.truncation_radius is not None:
        notes.append(f"coefficients truncated at radius {f.truncation_radius} (|a_i| < 1e-15 dropped)")
    entry = EntryReport(frozenset(), total, 0.0, total, SATISFIED)
    return CriterionReport("hannan", [entry], None, SATISFIED, notes)


def delta_En(f: LinearFieldSpec, E: DirectionSet, n: Sequence[int]) -> float:
    """Δ_{E,n} = Σ_j (Σ_{0⪯k⪯n-1} a_{(k+j)·ε(E)})² over j with j_q ≥ 1 on E, j_q ≥ 0 off E."""
    d = f.d
    n = tuple(int(c) for c in n)
    if not lt.preceq(lt.ones(d), n):
        raise ValueError(f"n must satisfy n ⪰ 1, got {n}")
    eps = lt.eps_sign(E, d)
    inner: Dict[tuple, float] = {}
    for l, a in f.coeffs.items():
        m = lt.mul(l, eps)  # (k + j) = l·ε(E)
        # admissible splittings m = k + j, 0 ⪯ k ⪯ n-1, j_q ≥ [q ∈ E]
        ranges = []
        for q in range(d):
            jmin = 1 if q in E else 0
            ranges.append(range(max(jmin, m[q] - (n[q] - 1)), m[q] + 1))
        for j in _product(ranges):
            k = lt.sub(m, j)
            if all(0 <= k[q] <= n[q] - 1 for q in range(d)):
                inner[j] = inner.get(j, 0.0) + a
    return math.fsum(v * v for v in inner.values())


def _product(ranges):
    if not ranges:
        yield ()
        return
    for x in ranges[0]:
        for rest in _product(ranges[1:]):
            yield (x,) + rest


def _weights(R: int, N: int) -> tuple:
    """Per-coordinate weights: exact n^{-3/2} for n ≤ R, Hurwitz tail at R+1."""
    full = np.array([m ** -1.5 for m in range(1, R + 1)] + [float(zeta(1.5, R + 1))])
    part = np.array([m ** -1.5 if m <= N else 0.0 for m in range(1, R + 1)]
                    + [float(zeta(1.5, R + 1) - zeta(1.5, N + 1)) if N >= R + 1 else 0.0])
    return full, part


def mw_check(f: LinearFieldSpec, N_max: int = 64) -> CriterionReport:
    """Σ_{n⪰1} |n|^{-3/2}·‖Σ_{0⪯i⪯n-1} P_E^i f‖ for each E.

    For support inside [-R, R]^d the norm depends on n only through
    min(n_q, R+1), so the series equals a finite sum with per-coordinate
    weights n^{-3/2} (n ≤ R) and ζ(3/2, R+1) at n = R+1.  The truncated
    partial sum over n ⪯ N_max·1 is evaluated with the same closed form;
    the tail is the exact difference.
    """
    if N_max < 4:
        raise ValueError("N_max must be at least 4")
    d = f.d
    R = f.radius()
    # partial sums at n ⪯ N_max need norms up to min(N_max, R+1)
    top = R + 1
    wfull, wpart = _weights(R, N_max)
    entries = []
    for E in lt.subsets(d):
        total = partial = 0.0
        if not f.is_zero:
            for m in lt.iterate_box(Box(lt.ones(d), (top,) * d)):
                g = sum_PE_norm(f, E, m)
                if g == 0.0:
                    continue
                total += g * math.prod(wfull[c - 1] for c in m)
                partial += g * math.prod(wpart[c - 1] for c in m)
        tail = max(total - partial, 0.0)
        verdict = SATISFIED if math.isfinite(total) else VIOLATED
        entries.append(EntryReport(E, partial, tail, total, verdict))
    verdict = SATISFIED if all(e.verdict == SATISFIED for e in entries) else VIOLATED
    notes = [f"support radius R={R}; norms constant once every n_q ≥ {R + 1}; tail summed with Hurwitz zeta"]
    return CriterionReport("maxwell-woodroofe", entries, N_max, verdict, notes)


def mw_partial_bruteforce(f: LinearFieldSpec, E: DirectionSet, N: int) -> float:
    """Direct Σ_{1⪯n⪯N·1} |n|^{-3/2}‖Σ P_E^i f‖ (cross-check; O(N^d) norms)."""
    d = f.d
    return math.fsum(
        lt.volume(n) ** -1.5 * sum_PE_norm(f, E, n) for n in lt.iterate_box(Box(lt.ones(d), (N,) * d))
    )
