"""Array-backed union-find kernels shared by the cluster samplers and the
cluster decomposition."""

import numba as nb
import numpy as np


@nb.njit(nogil=True, cache=True)
def find(parent, x):
    # path halving
    while parent[x] != x:
        parent[x] = parent[parent[x]]
        x = parent[x]
    return x


@nb.njit(nogil=True, cache=True)
def union(parent, x, y):
    """Merge the sets of x and y; the smaller root index survives."""
    rx = find(parent, x)
    ry = find(parent, y)
    if rx == ry:
        return rx
    if rx < ry:
        parent[ry] = rx
        return rx
    parent[rx] = ry
    return ry


@nb.njit(nogil=True, cache=True)
def flatten(parent):
    for x in range(parent.size):
        parent[x] = find(parent, x)
    return parent


def new_forest(n: int) -> np.ndarray:
    return np.arange(n, dtype=np.int64)
