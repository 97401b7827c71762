"""Independent reference implementations used by the tests."""

from functools import lru_cache
from itertools import combinations

import numpy as np


@lru_cache(maxsize=None)
def compositions(total: int, parts: int) -> np.ndarray:
    """Every way to write ``total`` as an ordered sum of ``parts`` non-negative ints."""
    rows = []
    for bars in combinations(range(total + parts - 1), parts - 1):
        prev = -1
        row = []
        for b in bars:
            row.append(b - prev - 1)
            prev = b
        row.append(total + parts - 1 - prev - 1)
        rows.append(row)
    return np.array(rows, dtype=np.int64).reshape(-1, parts)


def proportional_quanta(n_quanta: int, q) -> tuple:
    """Exhaustive search over quantum assignments.

    Minimizes the deviation from exact proportional shares, compared
    worst-first (leximin). Among equally good assignments the one giving more
    to earlier ONUs wins.
    """
    q = np.asarray(q, dtype=np.int64)
    total = int(q.sum())
    cand = compositions(n_quanta, q.size)
    # |g_i - n_quanta * q_i / total| scaled by total stays integral
    dev = np.abs(cand * total - n_quanta * q[None, :])
    dev_sorted = -np.sort(-dev, axis=1)
    keys = [-cand[:, j] for j in range(q.size - 1, -1, -1)]
    keys += [dev_sorted[:, j] for j in range(q.size - 1, -1, -1)]
    best = np.lexsort(keys)[0]
    return tuple(int(x) for x in cand[best])
