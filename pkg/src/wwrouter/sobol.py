"""Unscrambled Sobol points in up to 8 dimensions (Joe-Kuo direction numbers).

Points follow the Gray-code ordering used by most libraries, so index 0 is the
origin and index 1 is 0.5 in every coordinate.
"""

import numpy as np

BITS = 32

# (degree s, polynomial coefficient bits a, initial direction integers m) for
# dimensions 2..8; dimension 1 is the van der Corput sequence.
_JOE_KUO = [
    (1, 0, (1,)),
    (2, 1, (1, 3)),
    (3, 1, (1, 3, 1)),
    (3, 2, (1, 1, 1)),
    (4, 1, (1, 1, 3, 3)),
    (4, 4, (1, 3, 5, 13)),
    (5, 2, (1, 1, 5, 5, 17)),
]

MAX_DIM = len(_JOE_KUO) + 1


def direction_numbers(dim: int) -> np.ndarray:
    """``(dim, BITS)`` array of direction integers scaled to ``BITS`` bits."""
    if not 1 <= dim <= MAX_DIM:
        raise ValueError(f"dim must be in [1, {MAX_DIM}]")
    v = np.zeros((dim, BITS), dtype=np.uint64)
    for k in range(BITS):
        v[0, k] = 1 << (BITS - 1 - k)
    for d in range(1, dim):
        s, a, m = _JOE_KUO[d - 1]
        for k in range(s):
            v[d, k] = m[k] << (BITS - 1 - k)
        for k in range(s, BITS):
            x = int(v[d, k - s]) ^ (int(v[d, k - s]) >> s)
            for j in range(1, s):
                if (a >> (s - 1 - j)) & 1:
                    x ^= int(v[d, k - j])
            v[d, k] = x
    return v


def sobol_point(index: int, dim: int = 4) -> np.ndarray:
    if index < 1:
        raise ValueError("index must be >= 1")
    v = direction_numbers(dim)
    gray = index ^ (index >> 1)
    x = np.zeros(dim, dtype=np.uint64)
    k = 0
    while gray:
        if gray & 1:
            x ^= v[:, k]
        gray >>= 1
        k += 1
    return x.astype(np.float64) / float(1 << BITS)
