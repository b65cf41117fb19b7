"""Multi-indices, boxes and direction subsets over Z^d.

Multi-indices are plain tuples of ints. Direction sets are frozensets of
0-based axis numbers; they serialize as sorted lists of 1-based axes.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import FrozenSet, Iterable, Iterator, List, Sequence, Tuple

MultiIndex = Tuple[int, ...]
DirectionSet = FrozenSet[int]

MAX_DIM = 4


def check_dim(d: int) -> int:
    if not 1 <= d <= MAX_DIM:
        raise ValueError(f"dimension must be in 1..{MAX_DIM}, got {d}")
    return d


def mi(*coords: int) -> MultiIndex:
    return tuple(int(c) for c in coords)


def zeros(d: int) -> MultiIndex:
    return (0,) * d


def ones(d: int) -> MultiIndex:
    return (1,) * d


def unit(q: int, d: int) -> MultiIndex:
    """The basis vector e_q (q is a 0-based axis)."""
    return tuple(1 if p == q else 0 for p in range(d))


def add(i: Sequence[int], j: Sequence[int]) -> MultiIndex:
    return tuple(a + b for a, b in zip(i, j))


def sub(i: Sequence[int], j: Sequence[int]) -> MultiIndex:
    return tuple(a - b for a, b in zip(i, j))


def mul(i: Sequence[int], j: Sequence[int]) -> MultiIndex:
    return tuple(a * b for a, b in zip(i, j))


def scale(c: int, i: Sequence[int]) -> MultiIndex:
    return tuple(c * a for a in i)


def neg(i: Sequence[int]) -> MultiIndex:
    return tuple(-a for a in i)


def meet(i: Sequence[int], j: Sequence[int]) -> MultiIndex:
    """Coordinatewise minimum i ∧ j."""
    return tuple(min(a, b) for a, b in zip(i, j))


def preceq(i: Sequence[int], j: Sequence[int]) -> bool:
    """Coordinatewise order: i ⪯ j."""
    return all(a <= b for a, b in zip(i, j))


def volume(n: Sequence[int]) -> int:
    """|n| = product of the coordinates."""
    out = 1
    for c in n:
        out *= c
    return out


def dyadic(n: Sequence[int]) -> MultiIndex:
    """The multi-index (2^{n_1}, ..., 2^{n_d})."""
    return tuple(2 ** c for c in n)


@dataclass(frozen=True)
class Box:
    """Closed rectangle {i : lo ⪯ i ⪯ hi} in Z^d."""

    lo: MultiIndex
    hi: MultiIndex

    def __post_init__(self):
        lo = tuple(int(c) for c in self.lo)
        hi = tuple(int(c) for c in self.hi)
        if len(lo) != len(hi):
            raise ValueError("box corners have different dimensions")
        if not preceq(lo, hi):
            raise ValueError(f"empty box: lo={lo} hi={hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def from_shape(cls, n: Sequence[int], lo: Sequence[int] | None = None) -> "Box":
        """The box [lo, lo + n - 1]; by default [1, n]."""
        lo = tuple(lo) if lo is not None else ones(len(n))
        return cls(lo, tuple(a + b - 1 for a, b in zip(lo, n)))

    @property
    def d(self) -> int:
        return len(self.lo)

    @property
    def shape(self) -> MultiIndex:
        return tuple(b - a + 1 for a, b in zip(self.lo, self.hi))

    @property
    def volume(self) -> int:
        return volume(self.shape)

    def __contains__(self, i) -> bool:
        return len(i) == self.d and preceq(self.lo, i) and preceq(i, self.hi)

    def __iter__(self) -> Iterator[MultiIndex]:
        return iterate_box(self)

    def __len__(self) -> int:
        return self.volume

    def expand(self, other: "Box") -> "Box":
        """Minkowski sum self ⊕ other."""
        return Box(add(self.lo, other.lo), add(self.hi, other.hi))

    def hull(self, other: "Box") -> "Box":
        return Box(meet(self.lo, other.lo), tuple(max(a, b) for a, b in zip(self.hi, other.hi)))

    def to_json(self) -> dict:
        return {"lo": list(self.lo), "hi": list(self.hi)}


def iterate_box(b: Box) -> Iterator[MultiIndex]:
    """Every index of the box once, lexicographic with the last coordinate fastest."""
    return itertools.product(*(range(a, c + 1) for a, c in zip(b.lo, b.hi)))


def bounding_box(indices: Iterable[Sequence[int]]) -> Box:
    pts = [tuple(p) for p in indices]
    if not pts:
        raise ValueError("no indices")
    d = len(pts[0])
    lo = tuple(min(p[q] for p in pts) for q in range(d))
    hi = tuple(max(p[q] for p in pts) for q in range(d))
    return Box(lo, hi)


# -- direction sets ---------------------------------------------------------

def dirset(*axes: int) -> DirectionSet:
    """Direction set from 0-based axes."""
    return frozenset(int(a) for a in axes)


def full(d: int) -> DirectionSet:
    return frozenset(range(d))


def subsets(d: int) -> List[DirectionSet]:
    """All subsets of [d], ordered by bitmask (∅ first, [d] last)."""
    return [frozenset(q for q in range(d) if mask >> q & 1) for mask in range(2 ** d)]


def proper_subsets(E: DirectionSet) -> List[DirectionSet]:
    items = sorted(E)
    out = []
    for r in range(len(items)):
        out.extend(frozenset(c) for c in itertools.combinations(items, r))
    return out


def subsets_of(E: DirectionSet) -> List[DirectionSet]:
    return proper_subsets(E) + [frozenset(E)]


def complement(E: DirectionSet, d: int) -> DirectionSet:
    return frozenset(range(d)) - E


def mask_of(E: DirectionSet) -> int:
    return sum(1 << q for q in E)


def eps_sign(E: DirectionSet, d: int) -> MultiIndex:
    """ε(E): coordinate q is -1 when q ∈ E and +1 otherwise."""
    if any(q < 0 or q >= d for q in E):
        raise ValueError(f"direction set {sorted(E)} not inside [d] for d={d}")
    return tuple(-1 if q in E else 1 for q in range(d))


def mask_index(i: Sequence[int], J: DirectionSet) -> MultiIndex:
    """i_J: keep the coordinates in J, zero the others."""
    return tuple(c if q in J else 0 for q, c in enumerate(i))


def indicator(J: DirectionSet, d: int) -> MultiIndex:
    """1_J."""
    return mask_index(ones(d), J)


def dirset_to_json(E: DirectionSet) -> List[int]:
    return sorted(q + 1 for q in E)


def dirset_from_json(items: Iterable[int], d: int) -> DirectionSet:
    E = frozenset(int(q) - 1 for q in items)
    if any(q < 0 or q >= d for q in E):
        raise ValueError(f"direction set {sorted(items)} not inside [1, {d}]")
    return E


def dirset_label(E: DirectionSet) -> str:
    return "{" + ",".join(str(q + 1) for q in sorted(E)) + "}"
