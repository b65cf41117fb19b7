"""Blocking operator B_k and the approximating orthomartingale m_k."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from . import exactsys as ex
from . import lattice as lt
from .fieldmodels import LinearFieldSpec
from .lattice import Box, DirectionSet
from .projections import add_coeffs, pe_coeffs, prune


class CertificationFailed(Exception):
    pass


@dataclass
class BlockedField:
    """B_k(f) with its orthomartingale part.

    For linear fields ``result`` and ``martingale_part`` are LinearFieldSpec;
    on finite systems they are vectors and ``parts`` holds the full
    decomposition of B_k(f).
    """

    k: int
    result: Union[LinearFieldSpec, np.ndarray]
    martingale_part: Optional[Union[LinearFieldSpec, np.ndarray]] = None
    parts: Optional[Dict[DirectionSet, np.ndarray]] = None
    residual: Optional[float] = None
    system: Optional[ex.FiniteSystem] = None

    @property
    def mk_coefficient(self) -> float:
        if not isinstance(self.martingale_part, LinearFieldSpec):
            raise TypeError("scalar coefficient only exists for linear fields")
        return self.martingale_part.coeffs.get(lt.zeros(self.martingale_part.d), 0.0)


def _blocking_linear(f: LinearFieldSpec, k: int) -> LinearFieldSpec:
    d = f.d
    acc: Dict[tuple, float] = {}
    for E in lt.subsets(d):
        base = pe_coeffs(f.coeffs, E, lt.zeros(d), d)
        if not base:
            continue
        for i in lt.iterate_box(Box(lt.ones(d), (k,) * d)):
            g = dict(base)
            for q in range(d):
                step = pe_coeffs(g, E, lt.scale(i[q], lt.unit(q, d)), d)
                g = dict(g)
                add_coeffs(g, step, -1.0)
                g = prune(g)
            add_coeffs(acc, g)
    scale = float(k) ** -d
    return f.with_coeffs(prune({key: scale * v for key, v in acc.items()}))


def _blocking_exact(sys: ex.FiniteSystem, f: np.ndarray, k: int) -> np.ndarray:
    d = sys.d
    out = np.zeros(sys.size)
    for E in lt.subsets(d):
        base = ex.apply_PE(sys, E, lt.zeros(d), f)
        if not np.any(np.abs(base) > 1e-15):
            continue
        for i in lt.iterate_box(Box(lt.ones(d), (k,) * d)):
            g = base
            for q in range(d):
                g = g - ex.apply_PE(sys, E, lt.scale(i[q], lt.unit(q, d)), g)
            out += g
    return out / float(k) ** d


def blocking(target, k: int) -> BlockedField:
    """B_k(f) = k^{-d} Σ_{1⪯i⪯k1} Σ_E Π_q (I - P_E^{i_q e_q}) P_E^0 f.

    ``target`` is a LinearFieldSpec or a pair (system, vector).
    """
    if k < 1:
        raise ValueError("block size k must be ≥ 1")
    if isinstance(target, LinearFieldSpec):
        return BlockedField(k, _blocking_linear(target, k))
    sys, f = target
    f = np.asarray(f, dtype=float)
    if abs(sys.mean(f)) > 1e-10:
        raise ValueError("f is not centered")
    blk = BlockedField(k, _blocking_exact(sys, f, k))
    blk.system = sys
    blk._source = f
    return blk


def martingale_part(blocked: BlockedField, tol: float = 1e-12):
    """Fill in and return m_k.

    Linear fields: m_k = (Σ_j b_j)·ε_0 for the coefficients b of B_k(f).
    Finite systems: on H_E, Π_q (I - A_q^{i_q}) = Π_q (I - A_q)·Σ_{l<i_q} A_q^l
    with A_q = P_E^{e_q}, so B_k(f) = Σ_E Π_q (I - A_q) h_E with h_E the
    Cesàro average of the A-powers of P_E^0 f; each term is expanded by the
    decomposition chain and m_k is the part with no coboundary direction.
    """
    if isinstance(blocked.result, LinearFieldSpec):
        b = blocked.result
        c = math.fsum(b.coeffs.values())
        blocked.martingale_part = b.with_coeffs({lt.zeros(b.d): c})
        return blocked.martingale_part
    sys = blocked.system
    f = blocked._source
    d = sys.d
    parts = {L: np.zeros(sys.size) for L in lt.subsets(d)}
    for E in lt.subsets(d):
        F = ex.apply_PE(sys, E, lt.zeros(d), f)
        if not np.any(np.abs(F) > 1e-15):
            continue
        h = ex.cesaro_solution(sys, E, F, blocked.k)
        for L, m in ex.chain_parts(sys, E, h).items():
            parts[L] += m
    blocked.parts = parts
    blocked.residual = sys.norm(blocked.result - ex.coboundary_sum(sys, parts))
    m = parts[frozenset()]
    cert = ex.certify_part(sys, frozenset(), m)
    if cert.worst() > tol:
        raise CertificationFailed(f"m_k fails the orthomartingale-difference property by {cert.worst():.3g}")
    blocked.martingale_part = m
    return m


def martingale_norm_gap(a, b, sys: Optional[ex.FiniteSystem] = None) -> float:
    if isinstance(a, LinearFieldSpec):
        d = a.d
        ca = a.coeffs.get(lt.zeros(d), 0.0)
        cb = b.coeffs.get(lt.zeros(d), 0.0)
        return abs(ca - cb) * a.innovation.sd
    return sys.norm(np.asarray(a) - np.asarray(b))


@dataclass
class CauchyTable:
    ks: List[int]
    distances: List[List[float]]

    def doubling(self) -> List[tuple]:
        """(k, ‖m_k - m_{2k}‖) for every k whose double is also listed."""
        pos = {k: p for p, k in enumerate(self.ks)}
        return [(k, self.distances[pos[k]][pos[2 * k]]) for k in self.ks if 2 * k in pos]

    def doubling_non_increasing(self, tol: float = 1e-12) -> bool:
        seq = [v for _, v in self.doubling()]
        return all(b <= a + tol for a, b in zip(seq, seq[1:]))

    def to_json(self) -> dict:
        return {"k": self.ks, "distances": self.distances, "doubling": self.doubling()}


def cauchy_diagnostics(target, k_list: Sequence[int]) -> CauchyTable:
    ks = list(k_list)
    if ks != sorted(ks):
        raise ValueError("k_list must be sorted ascending")
    sys = None if isinstance(target, LinearFieldSpec) else target[0]
    ms = []
    for k in ks:
        blk = blocking(target, k)
        ms.append(martingale_part(blk))
    dist = [[martingale_norm_gap(a, b, sys) for b in ms] for a in ms]
    return CauchyTable(ks, dist)
