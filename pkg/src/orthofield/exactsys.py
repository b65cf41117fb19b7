"""Exact finite-model engine.

A :class:`FiniteSystem` is a finite probability space with ``d`` commuting
measure-preserving permutations ``T_q`` and a base partition realizing the
sigma-algebra ``F_0``.  The filtration is ``F_k = T^{-k} F_0`` and every
conditional expectation is an exact weighted average over partition cells.

On a finite space a bijection maps a partition onto a partition with the
same number of cells, so ``F_0 ⊂ T_q^{-1} F_0`` forces equality: the
filtration of a generic finite system is constant.  Non-degenerate
martingale structure lives on :class:`EmbeddedSystem`, the product space of
±1 innovations on a lattice window, whose sigma-algebras are generated by
sets of sites of Z^d and whose shifts refuse to wrap around the window.
Inside that guard every operator agrees with the infinite Bernoulli shift.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import lattice as lt
from .lattice import Box, DirectionSet, MultiIndex

TOL = 1e-12


class ExactSysError(Exception):
    pass


class NonCommuting(ExactSysError):
    pass


class NotMeasurePreserving(ExactSysError):
    pass


class FiltrationNotIncreasing(ExactSysError):
    pass


class Unstabilized(ExactSysError):
    pass


class WrapAround(ExactSysError):
    """A shift would move the support of a function out of the lattice window."""


class TooLarge(ExactSysError):
    pass


@dataclass(frozen=True)
class SigmaSpec:
    """The sigma-algebra ``F_{offset + ∞·1_inf}``.

    ``SigmaSpec.finite(j)`` is ``F_j`` and ``SigmaSpec.limit(J, d)`` is
    ``F_{∞1_J}``.  Coordinates listed in ``inf`` are sent to +∞ and the
    offset is ignored there.
    """

    offset: MultiIndex
    inf: DirectionSet = frozenset()

    def __post_init__(self):
        off = tuple(0 if q in self.inf else int(c) for q, c in enumerate(self.offset))
        object.__setattr__(self, "offset", off)
        object.__setattr__(self, "inf", frozenset(self.inf))

    @classmethod
    def finite(cls, j: Sequence[int]) -> "SigmaSpec":
        return cls(tuple(j), frozenset())

    @classmethod
    def limit(cls, J: DirectionSet, d: int) -> "SigmaSpec":
        return cls(lt.zeros(d), frozenset(J))

    def label(self) -> str:
        parts = ["inf" if q in self.inf else str(c) for q, c in enumerate(self.offset)]
        return "F(" + ",".join(parts) + ")"


def _canonical(labels: np.ndarray) -> np.ndarray:
    _, inv = np.unique(labels, return_inverse=True)
    return inv.reshape(-1).astype(np.int64)


def _join(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return _canonical(a * (int(b.max()) + 1) + b)


def _perm_power(p: np.ndarray, k: int) -> np.ndarray:
    n = p.shape[0]
    out = np.arange(n)
    base = p if k >= 0 else np.argsort(p)
    for _ in range(abs(k)):
        out = base[out]
    return out


class FiniteSystem:
    """Finite measure-preserving Z^d-action with a completely commuting filtration.

    Parameters
    ----------
    weights : (N,) positive probabilities.
    perms : d integer arrays, ``perms[q][a]`` is the image ``T_q(a)``.
    base_partition : (N,) cell labels of ``F_0``.
    """

    def __init__(self, weights, perms, base_partition, *, validate: bool = True):
        self.weights = np.asarray(weights, dtype=float)
        self.perms = [np.asarray(p, dtype=np.int64) for p in perms]
        self.base_partition = _canonical(np.asarray(base_partition))
        self.size = int(self.weights.shape[0])
        self.d = lt.check_dim(len(self.perms))
        self._inv = [np.argsort(p) for p in self.perms]
        self._sigma_cache: Dict[SigmaSpec, np.ndarray] = {}
        self._shift_cache: Dict[MultiIndex, np.ndarray] = {}
        if validate:
            self._validate()

    # -- validation ---------------------------------------------------------
    def _validate(self):
        N = self.size
        if self.weights.ndim != 1 or np.any(self.weights <= 0):
            raise ExactSysError("weights must be a vector of strictly positive numbers")
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise ExactSysError(f"weights sum to {self.weights.sum()!r}, not 1")
        if self.base_partition.shape != (N,):
            raise ExactSysError("base partition must label every atom")
        for q, p in enumerate(self.perms):
            if p.shape != (N,) or not np.array_equal(np.sort(p), np.arange(N)):
                raise ExactSysError(f"perms[{q}] is not a permutation of the {N} atoms")
        for q, r in itertools.combinations(range(self.d), 2):
            if not np.array_equal(self.perms[q][self.perms[r]], self.perms[r][self.perms[q]]):
                raise NonCommuting(f"T_{q + 1} and T_{r + 1} do not commute")
        for q, p in enumerate(self.perms):
            if np.max(np.abs(self.weights[p] - self.weights)) > 1e-12:
                raise NotMeasurePreserving(f"T_{q + 1} does not preserve the weights")
        self._validate_filtration()

    def _validate_filtration(self):
        base = self.base_partition
        for q in range(self.d):
            pulled = self.partition(SigmaSpec.finite(lt.unit(q, self.d)))
            if len(np.unique(_join(base, pulled))) != len(np.unique(pulled)):
                raise FiltrationNotIncreasing(f"F_0 is not contained in T_{q + 1}^-1 F_0")

    # -- shifts -------------------------------------------------------------
    def shift_index(self, i: Sequence[int]) -> np.ndarray:
        """Index array of T^i, so that (U^i f)[a] = f[T^i a]."""
        i = tuple(int(c) for c in i)
        idx = self._shift_cache.get(i)
        if idx is None:
            idx = np.arange(self.size)
            for q, k in enumerate(i):
                if k:
                    idx = _perm_power(self.perms[q], k)[idx]
            self._shift_cache[i] = idx
        return idx

    def shift(self, f: np.ndarray, i: Sequence[int]) -> np.ndarray:
        """U^i f = f ∘ T^i."""
        f = np.asarray(f, dtype=float)
        if not any(i):
            return f.copy()
        return f[self.shift_index(i)]

    # -- sigma-algebras -----------------------------------------------------
    def partition(self, s: SigmaSpec) -> np.ndarray:
        """Cell labels of the partition realizing ``s``."""
        lab = self._sigma_cache.get(s)
        if lab is not None:
            return lab
        if not s.inf:
            lab = _canonical(self.base_partition[self.shift_index(s.offset)])
        else:
            step = lt.indicator(s.inf, self.d)
            lab = _canonical(self.base_partition[self.shift_index(s.offset)])
            ncells = len(np.unique(lab))
            for n in range(1, 4 * self.size + 1):
                nxt = _join(lab, self.base_partition[self.shift_index(lt.add(s.offset, lt.scale(n, step)))])
                nc = len(np.unique(nxt))
                lab = nxt
                if nc == ncells:
                    break
                ncells = nc
            else:
                raise Unstabilized(f"{s.label()} did not stabilize")
        self._sigma_cache[s] = lab
        return lab

    def cond_exp(self, s: SigmaSpec, f: np.ndarray) -> np.ndarray:
        """E[f | s]; f may be (N,) or (N, m)."""
        lab = self.partition(s)
        f = np.asarray(f, dtype=float)
        ncell = int(lab.max()) + 1
        wsum = np.bincount(lab, weights=self.weights, minlength=ncell)
        if f.ndim == 1:
            tot = np.bincount(lab, weights=self.weights * f, minlength=ncell)
            return (tot / wsum)[lab]
        tot = np.zeros((ncell,) + f.shape[1:])
        np.add.at(tot, lab, self.weights[:, None] * f)
        return (tot / wsum[:, None])[lab]

    def is_measurable(self, s: SigmaSpec, f: np.ndarray, tol: float = TOL) -> float:
        """Worst deviation of f from its conditional expectation (0 iff measurable)."""
        return float(np.max(np.abs(f - self.cond_exp(s, f)), initial=0.0))

    # -- Hilbert structure --------------------------------------------------
    def mean(self, f: np.ndarray) -> float:
        return float(np.dot(self.weights, f))

    def inner(self, f: np.ndarray, g: np.ndarray) -> float:
        return float(np.dot(self.weights, np.asarray(f) * np.asarray(g)))

    def norm(self, f: np.ndarray) -> float:
        return math.sqrt(max(self.inner(f, f), 0.0))

    def operator_matrix(self, op: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        """Matrix of a linear map, columns = images of the atom indicators."""
        if self.size > 4096:
            raise TooLarge(f"{self.size} atoms is too many for dense operators")
        eye = np.eye(self.size)
        return np.column_stack([op(eye[:, a]) for a in range(self.size)])

    # -- serialization ------------------------------------------------------
    def to_json(self) -> dict:
        return {
            "d": self.d,
            "weights": [float(w) for w in self.weights],
            "perms": [[int(x) for x in p] for p in self.perms],
            "partition": [int(x) for x in self.base_partition],
        }

    def __repr__(self):
        return f"{type(self).__name__}(d={self.d}, atoms={self.size})"


def build_system(weights, perms, base_partition) -> FiniteSystem:
    """Validated finite system; raises NonCommuting, NotMeasurePreserving or
    FiltrationNotIncreasing."""
    return FiniteSystem(weights, perms, base_partition, validate=True)


def _normalize_perm(p: Sequence[int]) -> List[int]:
    p = [int(x) for x in p]
    if p and min(p) == 1 and max(p) == len(p):
        return [x - 1 for x in p]
    return p


def load_system(doc) -> FiniteSystem:
    """Build a system from ``{d, weights[], perms[][], partition[]}``.

    Permutations may list images 0-based or 1-based.
    """
    if isinstance(doc, (str, bytes)):
        doc = json.loads(doc)
    for key in ("d", "weights", "perms", "partition"):
        if key not in doc:
            raise KeyError(key)
    perms = [_normalize_perm(p) for p in doc["perms"]]
    if len(perms) != int(doc["d"]):
        raise ExactSysError(f"d={doc['d']} but {len(perms)} permutations given")
    return build_system(doc["weights"], perms, doc["partition"])


# ---------------------------------------------------------------------------
# Embedded Bernoulli system
# ---------------------------------------------------------------------------

def orthant_past(site: Sequence[int]) -> bool:
    return all(c <= 0 for c in site)


class EmbeddedSystem(FiniteSystem):
    """±1 innovations on the sites of a lattice window, uniform weights.

    Atoms are configurations ``ω ∈ {+1,-1}^window``; ``T_q`` is the cyclic
    shift of the window torus.  The sigma-algebra ``F_{k+∞1_J}`` is generated
    by the innovations at sites ``s`` of the window with ``s - k - N·1_J`` in
    the past set for some ``N ≥ 0``.  Shifts check that the support of the
    function stays inside the window, so results coincide with the
    infinite-lattice Bernoulli shift.

    ``past`` must be a down-closed predicate on Z^d; the default is the
    orthant ``{s ⪯ 0}``, which gives the product filtration.
    """

    def __init__(self, window: Box, past: Callable[[Sequence[int]], bool] = orthant_past):
        self.window = window
        self.sites: List[MultiIndex] = list(window)
        self.nsites = len(self.sites)
        if self.nsites > 16:
            raise TooLarge(f"window with {self.nsites} sites exceeds 2^16 atoms")
        self.site_pos = {s: p for p, s in enumerate(self.sites)}
        self.past = past
        self.tshape = (2,) * self.nsites
        N = 2 ** self.nsites
        d = window.d
        self._site_cache: Dict[SigmaSpec, Tuple[int, ...]] = {}
        perms = [self._torus_perm(lt.unit(q, d)) for q in range(d)]
        base = self._labels_from_sites(self._sites_of(SigmaSpec.finite(lt.zeros(d))), N)
        super().__init__(np.full(N, 1.0 / N), perms, base, validate=True)

    # configurations -------------------------------------------------------
    def omega(self, site: Sequence[int]) -> np.ndarray:
        """The coordinate function ω ↦ ω_site as a vector over atoms."""
        pos = self.site_pos[tuple(site)]
        shape = [1] * self.nsites
        shape[pos] = 2
        return np.broadcast_to(np.array([1.0, -1.0]).reshape(shape), self.tshape).reshape(-1).copy()

    def _wrap(self, s: Sequence[int]) -> MultiIndex:
        lo, shp = self.window.lo, self.window.shape
        return tuple(lo[q] + (s[q] - lo[q]) % shp[q] for q in range(len(s)))

    def _axes_for_shift(self, i: Sequence[int]) -> List[int]:
        return [self.site_pos[self._wrap(lt.sub(s, i))] for s in self.sites]

    def _torus_perm(self, i: Sequence[int]) -> np.ndarray:
        N = 2 ** self.nsites
        return np.transpose(np.arange(N).reshape(self.tshape), self._axes_for_shift(i)).reshape(-1)

    def support(self, f: np.ndarray, tol: float = TOL) -> List[MultiIndex]:
        """Sites whose innovation the function actually depends on."""
        t = np.asarray(f, dtype=float).reshape(self.tshape)
        out = []
        for p, s in enumerate(self.sites):
            if np.max(np.abs(t - np.flip(t, axis=p))) > tol:
                out.append(s)
        return out

    def shift(self, f: np.ndarray, i: Sequence[int]) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        if not any(i):
            return f.copy()
        for s in self.support(f):
            if lt.add(s, i) not in self.window:
                raise WrapAround(f"shift by {tuple(i)} moves site {s} outside {self.window.lo}..{self.window.hi}")
        return np.transpose(f.reshape(self.tshape), self._axes_for_shift(i)).reshape(-1)

    # sigma-algebras -------------------------------------------------------
    def _sites_of(self, s: SigmaSpec) -> Tuple[int, ...]:
        hit = self._site_cache.get(s)
        if hit is not None:
            return hit
        d = self.window.d
        step = lt.indicator(s.inf, d)
        span = sum(self.window.shape) + sum(abs(c) for c in s.offset) + 1
        nmax = span if s.inf else 0
        keep = []
        for p, site in enumerate(self.sites):
            for n in range(nmax + 1):
                if self.past(lt.sub(lt.sub(site, s.offset), lt.scale(n, step))):
                    keep.append(p)
                    break
        out = tuple(keep)
        self._site_cache[s] = out
        return out

    def sites_of(self, s: SigmaSpec) -> List[MultiIndex]:
        return [self.sites[p] for p in self._sites_of(s)]

    def _labels_from_sites(self, keep: Sequence[int], N: int) -> np.ndarray:
        bits = np.arange(N)
        lab = np.zeros(N, dtype=np.int64)
        for p in keep:
            lab = lab * 2 + ((bits >> (self.nsites - 1 - p)) & 1)
        return lab

    def partition(self, s: SigmaSpec) -> np.ndarray:
        lab = self._sigma_cache.get(s)
        if lab is None:
            lab = _canonical(self._labels_from_sites(self._sites_of(s), self.size))
            self._sigma_cache[s] = lab
        return lab

    def cond_exp(self, s: SigmaSpec, f: np.ndarray) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        keep = set(self._sites_of(s))
        drop = tuple(p for p in range(self.nsites) if p not in keep)
        if f.ndim == 1:
            t = f.reshape(self.tshape)
            return np.broadcast_to(t.mean(axis=drop, keepdims=True), self.tshape).reshape(-1).copy()
        m = f.shape[1]
        t = f.reshape(self.tshape + (m,))
        return np.broadcast_to(t.mean(axis=drop, keepdims=True), self.tshape + (m,)).reshape(-1, m).copy()

    def _validate_filtration(self):
        d = self.window.d
        base = set(self._sites_of(SigmaSpec.finite(lt.zeros(d))))
        for q in range(d):
            if not base <= set(self._sites_of(SigmaSpec.finite(lt.unit(q, d)))):
                raise FiltrationNotIncreasing(f"F_0 is not contained in T_{q + 1}^-1 F_0")

    def to_json(self) -> dict:
        doc = super().to_json()
        doc["window"] = self.window.to_json()
        return doc


# ---------------------------------------------------------------------------
# Operators
# ---------------------------------------------------------------------------

def cond_exp(sys: FiniteSystem, s: SigmaSpec, f: np.ndarray) -> np.ndarray:
    return sys.cond_exp(s, f)


def _cond_inf(sys: FiniteSystem, J: DirectionSet, f: np.ndarray, offset: Optional[Sequence[int]] = None) -> np.ndarray:
    """E[f | F_{offset + ∞1_J}], with J = [d] meaning no conditioning at all."""
    if len(J) == sys.d:
        return np.asarray(f, dtype=float).copy()
    off = lt.zeros(sys.d) if offset is None else tuple(offset)
    return sys.cond_exp(SigmaSpec(off, J), f)


def apply_PE(sys: FiniteSystem, E: DirectionSet, i: Sequence[int], f: np.ndarray) -> np.ndarray:
    """P_E^i f = Σ_{J⊆E} (-1)^{|J|+|E|} E[U^{i·ε(E)} f | F_{∞1_J}].

    For E = [d] the J = [d] term is U^{-i} f itself.
    """
    i = tuple(int(c) for c in i)
    if not lt.preceq(lt.zeros(sys.d), i):
        raise ValueError(f"P_E^i needs i ⪰ 0, got {i}")
    g = sys.shift(f, lt.mul(i, lt.eps_sign(E, sys.d)))
    out = np.zeros_like(g)
    for J in lt.subsets_of(E):
        sign = -1.0 if (len(E) - len(J)) % 2 else 1.0
        out += sign * _cond_inf(sys, J, g)
    return out


def projector_HE(sys: FiniteSystem, E: DirectionSet, f: np.ndarray) -> np.ndarray:
    """Orthogonal projection onto H_E (P_E^0 followed by centering when E = ∅)."""
    out = apply_PE(sys, E, lt.zeros(sys.d), f)
    if not E:
        out = out - sys.mean(out)
    return out


@dataclass
class Membership:
    member: bool
    worst: float

    def __bool__(self):
        return self.member


def member_HE(sys: FiniteSystem, E: DirectionSet, f: np.ndarray, tol: float = TOL) -> Membership:
    """Test f ∈ H_E; ``worst`` is the largest violated quantity."""
    f = np.asarray(f, dtype=float)
    d = sys.d
    viol = []
    if len(E) < d:
        viol.append(abs(sys.mean(f)))
        viol.append(sys.is_measurable(SigmaSpec.limit(E, d), f))
    for Ep in lt.proper_subsets(E):
        viol.append(float(np.max(np.abs(sys.cond_exp(SigmaSpec.limit(Ep, d), f)), initial=0.0)))
    worst = max(viol, default=0.0)
    return Membership(worst <= tol, worst)


# ---------------------------------------------------------------------------
# Coboundary equation Π_q (I - A_q) h = F with A_q = P_E^{e_q}
# ---------------------------------------------------------------------------

def coboundary_operator(sys: FiniteSystem, E: DirectionSet, h: np.ndarray) -> np.ndarray:
    """Π_q (I - P_E^{e_q}) h."""
    out = np.asarray(h, dtype=float)
    for q in range(sys.d):
        out = out - apply_PE(sys, E, lt.unit(q, sys.d), out)
    return out


@dataclass
class CoboundarySolution:
    h: np.ndarray
    residual: float
    method: str

    @property
    def solvable(self) -> bool:
        return self.residual <= 1e-10


def _lstsq_solution(sys: FiniteSystem, E: DirectionSet, F: np.ndarray) -> np.ndarray:
    sw = np.sqrt(sys.weights)
    P = sys.operator_matrix(lambda v: projector_HE(sys, E, v))
    Ps = (sw[:, None] * P) / sw[None, :]
    Ps = 0.5 * (Ps + Ps.T)
    vals, vecs = np.linalg.eigh(Ps)
    Q = vecs[:, vals > 0.5]
    if Q.shape[1] == 0:
        return np.zeros(sys.size)
    basis = Q / sw[:, None]
    MB = np.column_stack([coboundary_operator(sys, E, basis[:, c]) for c in range(basis.shape[1])])
    # singular values of Π(I - A_q) are products of |1 - ζ| over roots of
    # unity ζ, so anything near machine precision is an exact zero
    u, sv, vt = np.linalg.svd(sw[:, None] * MB, full_matrices=False)
    keep = sv > 1e-9
    c = vt[keep].T @ ((u[:, keep].T @ (sw * F)) / sv[keep])
    return basis @ c


def neumann_solution(sys: FiniteSystem, E: DirectionSet, F: np.ndarray, max_terms: int = 64) -> np.ndarray:
    """h = Σ_{i ⪰ 0} A^i F, stopping once every further term vanishes.

    Used on embedded systems, where A_q is nilpotent on functions of finitely
    many innovations.
    """
    d = sys.d
    layer = {lt.zeros(d): np.asarray(F, dtype=float)}
    total = np.asarray(F, dtype=float).copy()
    for _ in range(max_terms * d):
        nxt: Dict[MultiIndex, np.ndarray] = {}
        for i, v in layer.items():
            for q in range(d):
                j = lt.add(i, lt.unit(q, d))
                if j in nxt:
                    continue
                # A^j F computed from the predecessor with the smallest last move
                w = apply_PE(sys, E, lt.unit(q, d), v)
                if np.max(np.abs(w)) > 1e-14:
                    nxt[j] = w
        if not nxt:
            return total
        for w in nxt.values():
            total += w
        layer = nxt
    raise Unstabilized("Neumann series did not terminate")


def cesaro_solution(sys: FiniteSystem, E: DirectionSet, F: np.ndarray, n: int) -> np.ndarray:
    """h_n = n^{-d} Σ_{1⪯k⪯n1} Σ_{0⪯i⪯k-1} A^i F (Cesàro averages of partial sums)."""
    d = sys.d
    # A^i F on the box [0, n-1]^d
    powers: Dict[MultiIndex, np.ndarray] = {lt.zeros(d): np.asarray(F, dtype=float)}
    for i in lt.iterate_box(Box(lt.zeros(d), (n - 1,) * d)):
        if i in powers:
            continue
        q = max(p for p in range(d) if i[p] > 0)
        powers[i] = apply_PE(sys, E, lt.unit(q, d), powers[lt.sub(i, lt.unit(q, d))])
    # weight of A^i F: number of k in [1,n]^d with i ⪯ k - 1
    total = np.zeros(sys.size)
    for i, v in powers.items():
        wgt = 1
        for c in i:
            wgt *= n - c
        total += wgt * v
    return total / n ** d


def coboundary_solve(sys: FiniteSystem, E: DirectionSet, F: np.ndarray, method: str = "auto") -> CoboundarySolution:
    """Solve Π_q (I - P_E^{e_q}) h = F for h ∈ H_E.

    ``lstsq`` gives the minimal-norm least-squares solution on the whole
    space; ``neumann`` sums A^i F.  ``auto`` uses Neumann on embedded systems
    (their guarded shifts are not defined on every vector) and least squares
    otherwise.
    """
    F = np.asarray(F, dtype=float)
    if method == "auto":
        method = "neumann" if isinstance(sys, EmbeddedSystem) else "lstsq"
    if method == "lstsq":
        h = _lstsq_solution(sys, E, F)
    elif method == "neumann":
        try:
            h = neumann_solution(sys, E, F)
        except Unstabilized:
            h = np.zeros_like(F)
    else:
        raise ValueError(f"unknown method {method!r}")
    res = sys.norm(coboundary_operator(sys, E, h) - F)
    return CoboundarySolution(h, res, method)


# ---------------------------------------------------------------------------
# Orthomartingale-coboundary decomposition
# ---------------------------------------------------------------------------

def chain_parts(sys: FiniteSystem, E: DirectionSet, h: np.ndarray) -> Dict[DirectionSet, np.ndarray]:
    """Parts m_L with Π_q (I - P_E^{e_q}) h = Σ_L Π_{q∈L}(I - U_q) m_L, for h ∈ H_E.

    Writes the left side as Σ_{J⊆E} ± E[Π_q (I-U_q) H | F_{∞1_J}] with
    H = (-1)^{|E|} U^{-1_E} h, pulls (I-U_q), q ∈ J, out of the conditional
    expectation and splits each remaining factor as in the simplified
    decomposition: for K' ⊆ J^c the part of L = J ∪ K' is
    Π_{q∉L} (I - E[·|F_{∞1_J - e_q}]) E[H | F_{∞1_J - 1_{K'}}].
    """
    d = sys.d
    parts = {L: np.zeros(sys.size) for L in lt.subsets(d)}
    H = sys.shift(h, lt.neg(lt.indicator(E, d)))
    if len(E) % 2:
        H = -H
    for J in lt.subsets_of(E):
        sign = -1.0 if (len(E) - len(J)) % 2 else 1.0
        if len(J) == d:
            parts[J] += sign * H
            continue
        Jc = lt.complement(J, d)
        for Kp in lt.subsets_of(Jc):
            v = _cond_inf(sys, J, H, offset=lt.neg(lt.indicator(Kp, d)))
            for q in sorted(Jc - Kp):
                v = v - _cond_inf(sys, J, v, offset=lt.neg(lt.unit(q, d)))
            parts[J | Kp] += sign * v
    return parts


def coboundary_sum(sys: FiniteSystem, parts: Dict[DirectionSet, np.ndarray]) -> np.ndarray:
    """Σ_L Π_{q∈L} (I - U_q) m_L."""
    total = np.zeros(sys.size)
    for L, m in parts.items():
        v = np.asarray(m, dtype=float)
        for q in sorted(L):
            v = v - sys.shift(v, lt.unit(q, sys.d))
        total += v
    return total


@dataclass
class PartCertificate:
    measurability: float
    projections: Dict[str, float]

    def worst(self) -> float:
        return max([self.measurability] + list(self.projections.values()))


def certify_part(sys: FiniteSystem, L: DirectionSet, m: np.ndarray) -> PartCertificate:
    """For L ≠ [d]: m is F_{∞1_L}-measurable and E[m | F_{∞1_L - e_q}] = 0 for q ∉ L.

    That is, (m ∘ T^{i_{L^c}}) is an orthomartingale difference field in the
    directions outside L; for L = ∅ this is the usual orthomartingale
    difference property.
    """
    d = sys.d
    if len(L) == d:
        return PartCertificate(0.0, {})
    meas = sys.is_measurable(SigmaSpec.limit(L, d), m)
    proj = {}
    for q in sorted(lt.complement(L, d)):
        s = SigmaSpec(lt.neg(lt.unit(q, d)), L)
        proj[s.label()] = float(np.max(np.abs(sys.cond_exp(s, m)), initial=0.0))
    return PartCertificate(meas, proj)


@dataclass
class DecompositionParts:
    """f = Σ_J Π_{q∈J}(I - U_q) m_J up to ``residual``."""

    parts: Dict[DirectionSet, np.ndarray]
    residual: float
    solve_residuals: Dict[DirectionSet, float]
    certificates: Dict[DirectionSet, PartCertificate]
    tol: float = 1e-9

    @property
    def solvable(self) -> bool:
        return self.residual <= self.tol

    @property
    def certified(self) -> bool:
        return all(c.worst() <= TOL for c in self.certificates.values())

    def martingale_part(self) -> np.ndarray:
        return self.parts[frozenset()]

    def to_json(self) -> dict:
        return {
            "residual": self.residual,
            "solvable": self.solvable,
            "certified": self.certified,
            "solve_residuals": {lt.dirset_label(E): r for E, r in self.solve_residuals.items()},
            "parts": [
                {
                    "J": lt.dirset_to_json(J),
                    "values": [float(x) for x in m],
                    "measurability": self.certificates[J].measurability,
                    "projections": self.certificates[J].projections,
                }
                for J, m in self.parts.items()
            ],
        }


def omc_decompose(sys: FiniteSystem, f: np.ndarray, method: str = "auto", tol: float = 1e-9) -> DecompositionParts:
    """Orthomartingale-coboundary decomposition of a centered f.

    Splits f = Σ_E P_E^0 f, solves the coboundary equation in each H_E and
    expands Π_q (I - P_E^{e_q}) h_E into parts with :func:`chain_parts`.
    The reconstruction residual is reported; when some P_E^0 f is not in the
    range of the coboundary operator the residual is large and
    ``solvable`` is False.
    """
    f = np.asarray(f, dtype=float)
    if abs(sys.mean(f)) > 1e-10:
        raise ValueError(f"f is not centered (mean {sys.mean(f):.3g})")
    d = sys.d
    parts = {L: np.zeros(sys.size) for L in lt.subsets(d)}
    solve_res = {}
    for E in lt.subsets(d):
        F = apply_PE(sys, E, lt.zeros(d), f)
        if not np.any(np.abs(F) > 1e-15):
            solve_res[E] = 0.0
            continue
        sol = coboundary_solve(sys, E, F, method=method)
        solve_res[E] = sol.residual
        for L, m in chain_parts(sys, E, sol.h).items():
            parts[L] += m
    residual = sys.norm(f - coboundary_sum(sys, parts))
    certs = {L: certify_part(sys, L, m) for L, m in parts.items()}
    return DecompositionParts(parts, residual, solve_res, certs, tol)


def synthesize_part(sys: FiniteSystem, L: DirectionSet, g: np.ndarray) -> np.ndarray:
    """Project an arbitrary g onto the functions allowed as part m_L."""
    d = sys.d
    if len(L) == d:
        return np.asarray(g, dtype=float).copy()
    v = sys.cond_exp(SigmaSpec.limit(L, d), g)
    for q in sorted(lt.complement(L, d)):
        v = v - sys.cond_exp(SigmaSpec(lt.neg(lt.unit(q, d)), L), v)
    return v


# ---------------------------------------------------------------------------
# Equivalence check: bounded partial sums of P_E^i f versus solvability
# ---------------------------------------------------------------------------

def pe_partial_sum_norms(sys: FiniteSystem, E: DirectionSet, f: np.ndarray, n_max: int) -> np.ndarray:
    """Array over 0 ⪯ n ⪯ n_max·1 of ‖Σ_{0⪯i⪯n} P_E^i f‖."""
    d = sys.d
    shape = (n_max + 1,) * d
    f = np.asarray(f, dtype=float)
    if isinstance(sys, EmbeddedSystem):
        vals = np.zeros(shape + (sys.size,))
        for i in np.ndindex(*shape):
            vals[i] = apply_PE(sys, E, i, f)
    else:
        eps = lt.eps_sign(E, d)
        tables = [np.stack([_perm_power(sys.perms[q], eps[q] * k) for k in range(n_max + 1)]) for q in range(d)]
        idx = np.broadcast_to(np.arange(sys.size), shape + (sys.size,))
        for q in range(d):
            sh = [1] * d + [sys.size]
            sh[q] = n_max + 1
            tab = tables[q].reshape(sh)
            idx = np.take_along_axis(np.broadcast_to(tab, shape + (sys.size,)), idx, axis=-1)
        g = f[idx].reshape(-1, sys.size)
        acc = np.zeros_like(g)
        for J in lt.subsets_of(E):
            sign = -1.0 if (len(E) - len(J)) % 2 else 1.0
            if len(J) == d:
                acc += sign * g
            else:
                acc += sign * sys.cond_exp(SigmaSpec.limit(J, d), g.T).T
        vals = acc.reshape(shape + (sys.size,))
    for q in range(d):
        vals = np.cumsum(vals, axis=q)
    return np.sqrt(np.maximum(np.tensordot(vals ** 2, sys.weights, axes=([-1], [0])), 0.0))


def growth_exponent(seq: Sequence[float]) -> float:
    """Log-log slope of a positive sequence s_n against n+1 over its second half."""
    s = np.asarray(seq, dtype=float)
    n = np.arange(1, len(s) + 1, dtype=float)
    lo = len(s) // 2
    x, y = np.log(n[lo:]), np.log(np.maximum(s[lo:], 1e-300))
    if np.ptp(x) == 0 or np.max(s) < 1e-12:
        return 0.0
    return float(np.polyfit(x, y, 1)[0])


@dataclass
class EquivalenceReport:
    sups: Dict[DirectionSet, float]
    diagonal_growth: Dict[DirectionSet, float]
    axis_growth: Dict[DirectionSet, List[float]]
    decomposition: DecompositionParts
    bounded: bool
    solvable: bool

    @property
    def agree(self) -> bool:
        return self.bounded == self.solvable

    def to_json(self) -> dict:
        return {
            "sups": {lt.dirset_label(E): v for E, v in self.sups.items()},
            "diagonal_growth": {lt.dirset_label(E): v for E, v in self.diagonal_growth.items()},
            "axis_growth": {lt.dirset_label(E): v for E, v in self.axis_growth.items()},
            "bounded": self.bounded,
            "solvable": self.solvable,
            "agree": self.agree,
            "residual": self.decomposition.residual,
        }


def verify_equivalence(sys: FiniteSystem, f: np.ndarray, n_max: int = 64, growth_tol: float = 0.5) -> EquivalenceReport:
    """Partial-sum sups of P_E^i f over 0 ⪯ n ⪯ n_max·1 beside the decomposition residual."""
    d = sys.d
    sups, diag, axis = {}, {}, {}
    bounded = True
    for E in lt.subsets(d):
        norms = pe_partial_sum_norms(sys, E, f, n_max)
        sups[E] = float(norms.max())
        running = norms
        for q in range(d):
            running = np.maximum.accumulate(running, axis=q)
        diag_seq = [running[(k,) * d] for k in range(n_max + 1)]
        diag[E] = growth_exponent(diag_seq)
        axis[E] = []
        for q in range(d):
            sl = [n_max] * d
            sl[q] = slice(None)
            axis[E].append(growth_exponent(running[tuple(sl)]))
        if diag[E] > growth_tol:
            bounded = False
    dec = omc_decompose(sys, f)
    return EquivalenceReport(sups, diag, axis, dec, bounded, dec.solvable)


# ---------------------------------------------------------------------------
# Complete commutativity
# ---------------------------------------------------------------------------

@dataclass
class CommutingReport:
    pairs_checked: int
    violations: List[Tuple[MultiIndex, MultiIndex, float]]

    @property
    def passed(self) -> bool:
        return not self.violations


def check_completely_commuting(sys: FiniteSystem, radius: int = 2, tol: float = TOL) -> CommutingReport:
    """E[E[Y|F_l] | F_k] = E[Y|F_{k∧l}] over indicators Y and |k_q|, |l_q| ≤ radius."""
    d = sys.d
    grid = list(lt.iterate_box(Box((-radius,) * d, (radius,) * d)))
    eye = np.eye(sys.size)
    cache: Dict[MultiIndex, np.ndarray] = {}

    def mat(k):
        if k not in cache:
            cache[k] = sys.cond_exp(SigmaSpec.finite(k), eye)
        return cache[k]

    violations = []
    count = 0
    for k in grid:
        for l in grid:
            count += 1
            lhs = sys.cond_exp(SigmaSpec.finite(k), mat(l))
            err = float(np.max(np.abs(lhs - mat(lt.meet(k, l)))))
            if err > tol:
                violations.append((k, l, err))
    return CommutingReport(count, violations)


# ---------------------------------------------------------------------------
# Random systems
# ---------------------------------------------------------------------------

def _divisors(n: int) -> List[int]:
    return [k for k in range(1, n + 1) if n % k == 0]


def random_system(rng: np.random.Generator, d: int, max_atoms: int = 64) -> FiniteSystem:
    """A random valid system: disjoint tori Z_{L_1}×…×Z_{L_d} translated
    coordinatewise, cells given by residues modulo divisors of the side
    lengths, randomly relabelled atoms."""
    lt.check_dim(d)
    blocks = []
    total = 0
    for _ in range(int(rng.integers(1, 4))):
        shape = tuple(int(rng.integers(1, 4)) for _ in range(d))
        if total + lt.volume(shape) > max_atoms:
            continue
        blocks.append(shape)
        total += lt.volume(shape)
    if not blocks:
        blocks = [(2,) + (1,) * (d - 1)]
        total = 2
    perms = [np.zeros(total, dtype=np.int64) for _ in range(d)]
    labels, weights = [], []
    start = 0
    bw = rng.dirichlet(np.ones(len(blocks)))
    for b, shape in enumerate(blocks):
        mods = [int(rng.choice(_divisors(L))) for L in shape]
        coords = list(np.ndindex(*shape))
        index = {c: start + p for p, c in enumerate(coords)}
        for c in coords:
            for q in range(d):
                img = list(c)
                img[q] = (img[q] + 1) % shape[q]
                perms[q][index[c]] = index[tuple(img)]
            labels.append((b,) + tuple(c[q] % mods[q] for q in range(d)))
            weights.append(bw[b] / len(coords))
        start += len(coords)
    relabel = rng.permutation(total)  # new index of old atom a
    inv = np.argsort(relabel)
    new_perms = [relabel[p[inv]] for p in perms]
    lab_ids = {lab: k for k, lab in enumerate(sorted(set(labels)))}
    lab_arr = np.array([lab_ids[x] for x in labels])[inv]
    w = np.array(weights)[inv]
    w = w / w.sum()
    return build_system(w, new_perms, lab_arr)


def rotation_system(n: int, step: int = 1, weights: Optional[Sequence[float]] = None, partition: Optional[Sequence[int]] = None) -> FiniteSystem:
    """Rotation x ↦ x + step on Z_n (d = 1); F_0 defaults to the atomic partition."""
    perm = (np.arange(n) + step) % n
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float)
    part = np.arange(n) if partition is None else np.asarray(partition)
    return build_system(w, [perm], part)


def product_rotation_system(sides: Sequence[int], steps: Optional[Sequence[int]] = None) -> FiniteSystem:
    """Commuting rotations on Z_{n_1} × … × Z_{n_d}, uniform weights, atomic F_0."""
    d = len(sides)
    steps = [1] * d if steps is None else list(steps)
    coords = list(np.ndindex(*sides))
    index = {c: p for p, c in enumerate(coords)}
    perms = []
    for q in range(d):
        p = np.zeros(len(coords), dtype=np.int64)
        for c in coords:
            img = list(c)
            img[q] = (img[q] + steps[q]) % sides[q]
            p[index[c]] = index[tuple(img)]
        perms.append(p)
    N = len(coords)
    return build_system(np.full(N, 1.0 / N), perms, np.arange(N))


def hannan_projector(sys: FiniteSystem, j: Sequence[int], f: np.ndarray) -> np.ndarray:
    """π_j f = Σ_{J⊆[d]} (-1)^{|J|} E[f | F_{j - 1_J}]."""
    d = sys.d
    out = np.zeros(sys.size)
    for J in lt.subsets(d):
        sign = -1.0 if len(J) % 2 else 1.0
        out += sign * sys.cond_exp(SigmaSpec.finite(lt.sub(tuple(j), lt.indicator(J, d))), f)
    return out
