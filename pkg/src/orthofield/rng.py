"""Counter-based variates keyed by (seed, lattice site).

Each site's draw depends only on the seed and its coordinates, so windows
restrict consistently and replications need no shared generator state.
"""
from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_COORD_BITS = 16
_COORD_OFFSET = 1 << (_COORD_BITS - 1)


def splitmix64(x: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer on uint64 arrays (wrapping arithmetic)."""
    z = np.asarray(x, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = z + np.uint64(GOLDEN)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        z = z ^ (z >> np.uint64(31))
    return z


def mix_int(x: int) -> int:
    return int(splitmix64(np.array([x & MASK64], dtype=np.uint64))[0])


def derive_seed(seed: int, *stream: int) -> int:
    """Independent child seed for replication or stream indices."""
    s = int(seed) & MASK64
    for k in stream:
        s = mix_int((s ^ mix_int(int(k) + 1)) & MASK64)
    return s


def pack_sites(coords: np.ndarray) -> np.ndarray:
    """Pack (..., d) integer coordinates into uint64 keys, 16 bits per axis."""
    c = np.asarray(coords, dtype=np.int64)
    if c.size and (c.min() < -_COORD_OFFSET or c.max() >= _COORD_OFFSET):
        raise ValueError("site coordinates must lie in [-32768, 32767]")
    key = np.zeros(c.shape[:-1], dtype=np.uint64)
    for q in range(c.shape[-1]):
        key = (key << np.uint64(_COORD_BITS)) | (c[..., q] + _COORD_OFFSET).astype(np.uint64)
    return key


def box_coords(lo, shape) -> np.ndarray:
    """Coordinates of every site of a box, shape (*box.shape, d)."""
    axes = [np.arange(l, l + n) for l, n in zip(lo, shape)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def site_bits(seed: int, keys: np.ndarray, stream: int = 0) -> np.ndarray:
    h = splitmix64(keys ^ np.uint64(mix_int(int(seed) & MASK64)))
    with np.errstate(over="ignore"):
        return splitmix64(h + np.uint64((stream * GOLDEN) & MASK64))


def site_uniform(seed: int, keys: np.ndarray, stream: int = 0) -> np.ndarray:
    """Uniforms in (0, 1] built from the top 53 bits."""
    b = site_bits(seed, keys, stream)
    return ((b >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0 ** -53


def site_normal(seed: int, keys: np.ndarray) -> np.ndarray:
    u1 = site_uniform(seed, keys, 1)
    u2 = site_uniform(seed, keys, 2)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def site_rademacher(seed: int, keys: np.ndarray) -> np.ndarray:
    b = site_bits(seed, keys, 3)
    return 1.0 - 2.0 * (b >> np.uint64(63)).astype(np.float64)
