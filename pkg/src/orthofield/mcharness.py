"""Monte Carlo harness: partial sums, maxima, inequality checks, FCLT tests."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.stats import ks_2samp

from . import lattice as lt
from . import rng as crng
from .approximation import blocking, martingale_part
from .criteria import mw_check
from .exactsys import member_HE
from .fieldmodels import (
    FieldSpec,
    InnovationSpec,
    LinearFieldSpec,
    OrthoMDSpec,
    Realization,
    exact_embed,
    sample_window,
)
from .lattice import Box, DirectionSet, MultiIndex
from .projections import sum_PE_norm_box


class DegenerateScale(Exception):
    pass


class MembershipFailed(Exception):
    pass


@dataclass(frozen=True)
class MCEstimate:
    mean: float
    std_error: float
    reps: int
    seed: int

    @property
    def rel_se(self) -> float:
        return self.std_error / self.mean if self.mean > 0 else 0.0

    def to_json(self) -> dict:
        return {"mean": self.mean, "std_error": self.std_error, "reps": self.reps, "seed": self.seed}


def _n(n: Union[int, Sequence[int]], d: Optional[int] = None) -> MultiIndex:
    if isinstance(n, int):
        return (n,) * (d or 1)
    return tuple(int(c) for c in n)


# ---------------------------------------------------------------------------
# Partial sums and the path process
# ---------------------------------------------------------------------------

def prefix_sums(values: np.ndarray) -> np.ndarray:
    s = np.asarray(values, dtype=float)
    for q in range(s.ndim):
        s = np.cumsum(s, axis=q)
    return s


def partial_sums_all(r: Realization, n: Sequence[int]) -> np.ndarray:
    """S_i for 1 ⪯ i ⪯ n; entry [i-1] sums the first i sites of the window in each axis."""
    n = _n(n, r.window.d)
    if any(a > b for a, b in zip(n, r.window.shape)):
        raise ValueError(f"window {r.window.shape} does not cover n={n}")
    return prefix_sums(r.values[tuple(slice(0, c) for c in n)])


def overlap_weights(n: int, t: np.ndarray) -> np.ndarray:
    """W[g, i-1] = λ([0, n t_g] ∩ [i-1, i]) = clamp(n t_g - (i-1), 0, 1)."""
    t = np.asarray(t, dtype=float)
    return np.clip(n * t[:, None] - np.arange(n)[None, :], 0.0, 1.0)


@dataclass
class PathProcess:
    n: MultiIndex
    grid: List[np.ndarray]
    values: np.ndarray
    normalizer: float


def _grid_axes(grid, d: int) -> List[np.ndarray]:
    if isinstance(grid, int):
        if grid < 2:
            raise ValueError("grid needs at least 2 points per coordinate")
        return [np.linspace(0.0, 1.0, grid)] * d
    axes = [np.asarray(g, dtype=float) for g in grid]
    if len(axes) != d:
        raise ValueError("one grid axis per dimension required")
    return axes


def path_values(values: np.ndarray, grid_axes: Sequence[np.ndarray]) -> np.ndarray:
    out = np.asarray(values, dtype=float)
    for q, t in enumerate(grid_axes):
        W = overlap_weights(out.shape[q], t)
        out = np.moveaxis(np.tensordot(W, out, axes=([1], [q])), 0, q)
    return out


def path_process(r: Realization, n: Sequence[int], grid=5, normalizer: float = 1.0) -> PathProcess:
    """S_n(f, t) = Σ_i λ([0, n·t] ∩ R_i) f∘T^i on a product grid of t."""
    n = _n(n, r.window.d)
    axes = _grid_axes(grid, r.window.d)
    vals = r.values[tuple(slice(0, c) for c in n)]
    return PathProcess(n, axes, path_values(vals, axes) / normalizer, normalizer)


# ---------------------------------------------------------------------------
# Replicated estimates
# ---------------------------------------------------------------------------

def _window(n: MultiIndex) -> Box:
    return Box(lt.ones(len(n)), n)


def max_sq_samples(spec: FieldSpec, n: Sequence[int], reps: int, seed: int) -> np.ndarray:
    """Y_r = max_{1⪯i⪯n}|S_i|² / |n| for replications r = 0..reps-1."""
    n = _n(n, spec.d)
    win = _window(n)
    out = np.empty(reps)
    for r in range(reps):
        real = sample_window(spec, win, crng.derive_seed(seed, r))
        out[r] = np.max(np.abs(prefix_sums(real.values))) ** 2
    return out / lt.volume(n)


def _l2_estimate(y: np.ndarray, seed: int) -> MCEstimate:
    """sqrt(mean Y) with the delta-method standard error."""
    reps = len(y)
    mu = float(np.mean(y))
    if mu <= 0:
        return MCEstimate(0.0, 0.0, reps, seed)
    se_mu = float(np.std(y, ddof=1)) / math.sqrt(reps)
    return MCEstimate(math.sqrt(mu), se_mu / (2.0 * math.sqrt(mu)), reps, seed)


def estimate_max_norm(spec: FieldSpec, n: Sequence[int], reps: int, seed: int) -> MCEstimate:
    """‖max_{1⪯i⪯n}|S_i|‖ / sqrt(|n|)."""
    if reps < 2:
        raise ValueError("reps must be at least 2")
    return _l2_estimate(max_sq_samples(spec, n, reps, seed), seed)


def plus_norm_profile(spec: FieldSpec, p_range: Sequence[int], reps: int, seed: int) -> List[Tuple[int, MCEstimate]]:
    """Estimates along n = 2^p·1; the finite profile whose limsup defines ‖f‖_+."""
    ps = list(p_range)
    if ps != sorted(ps):
        raise ValueError("p_range must be ascending")
    return [(p, estimate_max_norm(spec, (2 ** p,) * spec.d, reps, crng.derive_seed(seed, 1000 + p))) for p in ps]


@dataclass
class DoobReport:
    d: int
    n: MultiIndex
    estimate: MCEstimate
    m_norm: float
    bound: float
    tolerance_bound: float

    @property
    def passed(self) -> bool:
        return self.estimate.mean <= self.tolerance_bound

    def to_json(self) -> dict:
        return {
            "d": self.d,
            "n": list(self.n),
            "estimate": self.estimate.to_json(),
            "m_norm": self.m_norm,
            "bound": self.bound,
            "tolerance_bound": self.tolerance_bound,
            "passed": self.passed,
        }


def verify_doob(mspec: OrthoMDSpec, n: Sequence[int], reps: int, seed: int) -> DoobReport:
    """‖max|S_i|‖/sqrt|n| ≤ 2^d ‖m‖, with slack (1 + 4·relative SE)."""
    n = _n(n, mspec.d)
    est = estimate_max_norm(mspec, n, reps, seed)
    bound = 2 ** mspec.d * mspec.norm()
    return DoobReport(mspec.d, n, est, mspec.norm(), bound, bound * (1 + 4 * est.rel_se))


@dataclass
class UITable:
    n_list: List[MultiIndex]
    R_list: List[float]
    values: List[List[float]]
    std_errors: List[List[float]]

    def envelope(self) -> List[float]:
        return [max(row[c] for row in self.values) for c in range(len(self.R_list))]

    def monotone_in_R(self) -> bool:
        return all(all(b <= a for a, b in zip(row, row[1:])) for row in self.values)

    def envelope_decreasing(self) -> bool:
        env = self.envelope()
        return all(b <= a for a, b in zip(env, env[1:]))

    def to_json(self) -> dict:
        return {
            "n": [list(n) for n in self.n_list],
            "R": self.R_list,
            "values": self.values,
            "std_errors": self.std_errors,
            "envelope": self.envelope(),
        }


def ui_diagnostic(mspec: FieldSpec, n_list: Sequence, R_list: Sequence[float], reps: int, seed: int) -> UITable:
    """E[Y_n 1{Y_n > R}] for Y_n = max_{i⪯n}|S_i|²/|n|."""
    ns = [_n(n, mspec.d) for n in n_list]
    Rs = [float(R) for R in R_list]
    vals, ses = [], []
    for p, n in enumerate(ns):
        y = max_sq_samples(mspec, n, reps, crng.derive_seed(seed, 2000 + p))
        row, srow = [], []
        for R in Rs:
            z = np.where(y > R, y, 0.0) if R > 0 else y
            row.append(float(np.mean(z)))
            srow.append(float(np.std(z, ddof=1)) / math.sqrt(reps))
        vals.append(row)
        ses.append(srow)
    return UITable(ns, Rs, vals, ses)


# ---------------------------------------------------------------------------
# Dyadic maximal inequality
# ---------------------------------------------------------------------------

def recursive_constants(d: int, K1: float = 6.0, C1: float = 6.0) -> Tuple[float, Dict[DirectionSet, float]]:
    """K(d) and C(d, J), ∅ ≠ J ⊆ [d], from the base values at d = 1."""
    lt.check_dim(d)
    K = K1
    C = {frozenset({0}): C1}
    for dim in range(1, d):
        new_q = dim  # 0-based index of the added axis
        K_next = 6.0 * K
        nxt: Dict[DirectionSet, float] = {}
        for J, c in C.items():
            nxt[J] = 4.0 * c
        nxt[frozenset({new_q})] = math.sqrt(2.0) * K_next
        for J, c in C.items():
            nxt[J | {new_q}] = 2.0 * math.sqrt(2.0) * nxt[J] + c
        K, C = K_next, nxt
    return K, C


def combined_constant(d: int, K1: float = 6.0, C1: float = 6.0) -> float:
    K, C = recursive_constants(d, K1, C1)
    return K + sum(C.values())


@dataclass
class DyadicRow:
    m: MultiIndex
    lhs: MCEstimate
    middle: float
    proof_rhs: float
    mw_form: float

    @property
    def ratio(self) -> float:
        return self.lhs.mean / self.middle if self.middle > 0 else 0.0

    @property
    def proof_ratio(self) -> float:
        return self.lhs.mean / self.proof_rhs if self.proof_rhs > 0 else 0.0

    def to_json(self) -> dict:
        return {
            "m": list(self.m),
            "lhs": self.lhs.mean,
            "lhs_se": self.lhs.std_error,
            "middle": self.middle,
            "ratio": self.ratio,
            "proof_rhs": self.proof_rhs,
            "proof_ratio": self.proof_ratio,
            "mw_form": self.mw_form,
        }


@dataclass
class DyadicReport:
    E: DirectionSet
    rows: List[DyadicRow]
    constant: float
    K: float
    C: Dict[DirectionSet, float]
    membership_worst: float

    @property
    def max_ratio(self) -> float:
        return max((r.ratio for r in self.rows), default=0.0)

    @property
    def bounded(self) -> bool:
        return all(r.lhs.mean <= self.constant * r.middle * (1 + 4 * r.lhs.rel_se) or r.lhs.mean == 0 for r in self.rows)

    @property
    def proof_bounded(self) -> bool:
        return all(r.lhs.mean <= r.proof_rhs * (1 + 4 * r.lhs.rel_se) or r.lhs.mean == 0 for r in self.rows)

    @property
    def second_dominates(self) -> bool:
        return all(r.middle <= self.constant * r.mw_form * (1 + 1e-12) for r in self.rows)

    @property
    def passed(self) -> bool:
        return self.bounded and self.second_dominates

    def to_json(self) -> dict:
        return {
            "E": lt.dirset_to_json(self.E),
            "constant": self.constant,
            "K": self.K,
            "C": {lt.dirset_label(J): v for J, v in self.C.items()},
            "membership_worst": self.membership_worst,
            "max_ratio": self.max_ratio,
            "bounded": self.bounded,
            "proof_bounded": self.proof_bounded,
            "second_dominates": self.second_dominates,
            "rows": [r.to_json() for r in self.rows],
        }


def certify_membership(field: LinearFieldSpec, E: DirectionSet) -> float:
    """Worst H_E violation of the field on a ±1 embedding of radius 1."""
    rad = LinearFieldSpec(field.d, field.coeffs, InnovationSpec("rademacher", field.innovation.sd))
    radius = max(1, rad.radius())
    sys = exact_embed(rad, radius=radius)
    return member_HE(sys, E, sys.observable).worst


def _middle(field: LinearFieldSpec, E: DirectionSet, m: MultiIndex) -> float:
    d = field.d
    total = 0.0
    for i in lt.iterate_box(Box(lt.zeros(d), m)):
        hi = tuple(2 ** c for c in i)
        total += 2.0 ** (-sum(i) / 2.0) * sum_PE_norm_box(field, E, lt.zeros(d), hi)
    return math.sqrt(2.0 ** sum(m)) * total


def _proof_rhs(field: LinearFieldSpec, E: DirectionSet, m: MultiIndex, K: float, C: Dict[DirectionSet, float]) -> float:
    d = field.d
    total = K * field.norm()
    for J, c in C.items():
        inner = 0.0
        mJ = lt.mask_index(m, J)
        for i in lt.iterate_box(Box(lt.zeros(d), mJ)):
            lo = lt.indicator(J, d)
            hi = lt.mask_index(tuple(2 ** x for x in i), J)
            inner += 2.0 ** (-sum(i) / 2.0) * sum_PE_norm_box(field, E, lo, hi)
        total += c * inner
    return math.sqrt(2.0 ** sum(m)) * total


def verify_dyadic_maximal(field: LinearFieldSpec, E: DirectionSet, n_dyadic: Sequence[int], reps: int, seed: int,
                          K1: float = 6.0, C1: float = 6.0, tol: float = 1e-12) -> DyadicReport:
    """Empirical LHS against the symbolic right-hand sides for every dyadic m ⪯ n_dyadic."""
    d = field.d
    nd = _n(n_dyadic, d)
    worst = certify_membership(field, E)
    if worst > tol:
        raise MembershipFailed(f"field is not in H_{lt.dirset_label(E)} (violation {worst:.3g})")
    K, C = recursive_constants(d, K1, C1)
    const = K + sum(C.values())
    top = tuple(2 ** c for c in nd)
    win = _window(top)
    dy = [m for m in lt.iterate_box(Box(lt.zeros(d), nd))]
    sq = np.zeros((reps, len(dy)))
    for r in range(reps):
        real = sample_window(field, win, crng.derive_seed(seed, r))
        run = np.abs(prefix_sums(real.values))
        for q in range(d):
            run = np.maximum.accumulate(run, axis=q)
        for c, m in enumerate(dy):
            sq[r, c] = run[tuple(2 ** x - 1 for x in m)] ** 2
    mw = mw_check(field, 4)
    mw_total = {e.E: e.total for e in mw.entries}[frozenset(E)]
    rows = []
    for c, m in enumerate(dy):
        lhs = _l2_estimate(sq[:, c], seed)
        rows.append(DyadicRow(m, lhs, _middle(field, E, m), _proof_rhs(field, E, m, K, C),
                              math.sqrt(2.0 ** sum(m)) * mw_total))
    return DyadicReport(frozenset(E), rows, const, K, C, worst)


# ---------------------------------------------------------------------------
# Approximation error
# ---------------------------------------------------------------------------

def approx_error(field: LinearFieldSpec, k: int, n: Sequence[int], reps: int, seed: int) -> MCEstimate:
    """‖max|S_i(f - m_k)|‖/sqrt|n| with f and m_k evaluated on the same innovations."""
    n = _n(n, field.d)
    mk = martingale_part(blocking(field, k))
    win = _window(n)
    y = np.empty(reps)
    for r in range(reps):
        s = crng.derive_seed(seed, r)
        diff = sample_window(field, win, s).values - sample_window(mk, win, s).values
        y[r] = np.max(np.abs(prefix_sums(diff))) ** 2
    return _l2_estimate(y / lt.volume(n), seed)


# ---------------------------------------------------------------------------
# Brownian sheet and the functional CLT
# ---------------------------------------------------------------------------

@dataclass
class SheetPath:
    grid: List[np.ndarray]
    values: np.ndarray


def _sheet_values(grid_axes: Sequence[np.ndarray], seed: int) -> np.ndarray:
    d = len(grid_axes)
    widths = [np.diff(t) for t in grid_axes]
    shape = tuple(len(w) for w in widths)
    cell_sd = np.ones(shape)
    for q, w in enumerate(widths):
        sh = [1] * d
        sh[q] = len(w)
        cell_sd = cell_sd * np.sqrt(w).reshape(sh)
    keys = crng.pack_sites(crng.box_coords(lt.zeros(d), shape))
    z = crng.site_normal(seed, keys)
    inc = prefix_sums(cell_sd * z)
    return np.pad(inc, [(1, 0)] * d)


def simulate_sheet(grid, seed: int, d: int = 2) -> SheetPath:
    """Brownian sheet on a product grid containing 0; values at t_q = 0 are exactly 0."""
    axes = _grid_axes(grid, d)
    for t in axes:
        if t[0] != 0.0 or np.any(np.diff(t) <= 0):
            raise ValueError("grid axes must start at 0 and increase")
    return SheetPath(axes, _sheet_values(axes, seed))


@dataclass
class CovarianceCheck:
    pairs: List[Tuple[Tuple[float, ...], Tuple[float, ...]]]
    estimates: List[float]
    std_errors: List[float]
    expected: List[float]

    @property
    def z_scores(self) -> List[float]:
        return [abs(e - x) / s if s > 0 else (0.0 if e == x else math.inf)
                for e, s, x in zip(self.estimates, self.std_errors, self.expected)]

    @property
    def passed(self) -> bool:
        return all(z <= 4.0 for z in self.z_scores)

    def to_json(self) -> dict:
        return {
            "pairs": [[list(t), list(s)] for t, s in self.pairs],
            "estimates": self.estimates,
            "std_errors": self.std_errors,
            "expected": self.expected,
            "passed": self.passed,
        }


def sheet_covariance_check(reps: int = 2000, seed: int = 0, d: int = 2, levels: Sequence[float] = (0.1, 0.25, 0.5, 0.75, 1.0)) -> CovarianceCheck:
    """Cov(W_t, W_s) against Π min(t_q, s_q) on a 5×5 grid of (t, s) pairs."""
    axis = np.concatenate([[0.0], np.asarray(levels, dtype=float)])
    axes = [axis] * d
    # t = (a, 1, …, 1) against s = (1, …, 1, b): covariance a·b
    pairs = []
    for a in levels:
        for b in levels:
            t = (a,) + (1.0,) * (d - 1)
            s = (1.0,) * (d - 1) + (b,) if d > 1 else (b,)
            pairs.append((t, s))
    idx = {v: p + 1 for p, v in enumerate(levels)}
    prods = np.zeros((reps, len(pairs)))
    for r in range(reps):
        W = _sheet_values(axes, crng.derive_seed(seed, r))
        for c, (t, s) in enumerate(pairs):
            prods[r, c] = W[tuple(idx[x] for x in t)] * W[tuple(idx[x] for x in s)]
    est = prods.mean(axis=0)
    se = prods.std(axis=0, ddof=1) / math.sqrt(reps)
    expected = [math.prod(min(a, b) for a, b in zip(t, s)) for t, s in pairs]
    return CovarianceCheck(pairs, [float(x) for x in est], [float(x) for x in se], expected)


FUNCTIONALS = ("endpoint", "supabs")


@dataclass
class KSReport:
    functional: str
    n: MultiIndex
    reps: int
    sigma: float
    statistic: float
    pvalue: float
    warning: Optional[str] = None

    @property
    def passed(self) -> bool:
        return self.pvalue > 0.01

    def to_json(self) -> dict:
        return {
            "functional": self.functional,
            "n": list(self.n),
            "reps": self.reps,
            "sigma": self.sigma,
            "statistic": self.statistic,
            "pvalue": self.pvalue,
            "passed": self.passed,
            "warning": self.warning,
        }


def limit_scale(field: FieldSpec) -> float:
    if isinstance(field, LinearFieldSpec):
        return abs(field.coeff_sum()) * field.innovation.sd
    if isinstance(field, OrthoMDSpec):
        return field.norm()
    raise TypeError("limit scale is known for linear and orthomartingale-difference fields only")


def _functional(name: str, vals: np.ndarray) -> float:
    if name == "endpoint":
        return float(vals[(-1,) * vals.ndim])
    return float(np.max(np.abs(vals)))


def fclt_ks(field: FieldSpec, n: Sequence[int], reps: int, functional: str = "endpoint", seed: int = 0, grid: int = 17) -> KSReport:
    """Two-sample KS between functionals of S_n(f,·)/(σ sqrt|n|) and of the Brownian sheet."""
    if functional not in FUNCTIONALS:
        raise ValueError(f"functional must be one of {FUNCTIONALS}")
    n = _n(n, field.d)
    sigma = limit_scale(field)
    if sigma < 1e-12:
        raise DegenerateScale("limit variance is zero (coboundary field); the endpoint law collapses")
    warning = None
    if isinstance(field, LinearFieldSpec) and not mw_check(field, 4).satisfied:
        warning = "field does not pass the Maxwell–Woodroofe check"
    norm = sigma * math.sqrt(lt.volume(n))
    axes = _grid_axes(grid, field.d)
    win = _window(n)
    xs = np.empty(reps)
    ys = np.empty(reps)
    for r in range(reps):
        s = crng.derive_seed(seed, r)
        vals = sample_window(field, win, s).values
        if functional == "endpoint":
            xs[r] = vals.sum() / norm
        else:
            xs[r] = _functional("supabs", path_values(vals, axes) / norm)
        ys[r] = _functional(functional, _sheet_values(axes, crng.derive_seed(seed, 10 ** 6 + r)))
    res = ks_2samp(xs, ys)
    return KSReport(functional, n, reps, sigma, float(res.statistic), float(res.pvalue), warning)
