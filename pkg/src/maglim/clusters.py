"""Cluster decomposition of FK configurations and annulus circuit events.

Circuits around a hole are found on a double cover of the annulus graph:
every edge crossing a fixed ray from the hole to infinity switches sheets,
so a site is joined to its own copy on the other sheet exactly when its
open cluster contains a loop of odd winding around the hole.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numba as nb
import numpy as np

from .lattice import LatticeRegion, Rect, rect_contains, rect_mask, renormalization_factor
from .samplers import FkConfig
from .unionfind import find, union


@dataclass(frozen=True)
class ClusterDecomposition:
    """Clusters of lattice sites; labels are ranks of each cluster's smallest site."""

    labels: np.ndarray
    sizes: np.ndarray
    boundary: np.ndarray
    ghost: np.ndarray
    scale: float

    @property
    def n_clusters(self) -> int:
        return self.sizes.size

    @property
    def areas(self) -> np.ndarray:
        return self.scale * self.sizes

    @property
    def boundary_area(self) -> float:
        return float(self.areas[self.boundary].sum())

    @property
    def interior_areas(self) -> np.ndarray:
        return self.areas[~self.boundary]


@nb.njit(nogil=True, cache=True)
def _cluster_roots(n, edges, omega, bsites, bnd):
    parent = np.arange(n + 1)
    for e in range(edges.shape[0]):
        if omega[e]:
            union(parent, edges[e, 0], edges[e, 1])
    for k in range(bnd.size):
        if bnd[k]:
            union(parent, bsites[k], n)
    roots = np.empty(n, dtype=np.int64)
    for x in range(n):
        roots[x] = find(parent, x)
    rb = find(parent, n)
    return roots, rb


def decompose(fk: FkConfig, region: LatticeRegion | None = None, a: float | None = None) -> ClusterDecomposition:
    """Union-find over open lattice edges and the wired boundary; ghost edges
    only set a flag so areas count lattice sites."""
    region = region or fk.region
    a = region.a if a is None else a
    n = region.n_sites
    bsites = region.boundary_edges[:, 0] if fk.bc.wired else np.zeros(0, dtype=np.int64)
    roots, rb = _cluster_roots(n, region.edges, fk.omega, np.ascontiguousarray(bsites), fk.boundary)
    uniq, labels = np.unique(roots, return_inverse=True)
    k = uniq.size
    sizes = np.bincount(labels, minlength=k)
    boundary = uniq == rb if rb < n else np.zeros(k, dtype=bool)
    ghost = np.zeros(k, dtype=bool)
    ghost[labels[fk.tau]] = True
    return ClusterDecomposition(labels, sizes, boundary, ghost, renormalization_factor(a))


def ghost_connected_mass(decomp: ClusterDecomposition) -> float:
    return float(decomp.areas[decomp.ghost].sum())


def write_cluster_csv(path, decomps) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["snapshot", "cluster_id", "size", "area", "boundary", "ghost"])
        for snap, d in enumerate(decomps):
            for c in range(d.n_clusters):
                w.writerow([snap, c, int(d.sizes[c]), "%.17g" % d.areas[c], int(d.boundary[c]), int(d.ghost[c])])


# ---------------------------------------------------------------------------
# annulus events
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Annulus:
    outer: Rect
    inner: Rect

    def __post_init__(self):
        if not rect_contains(self.outer, self.inner):
            raise ValueError(f"inner rectangle {self.inner!r} is not inside {self.outer!r}")


@dataclass(frozen=True)
class AnnulusEventReport:
    annulus: Annulus
    open_circuit: bool
    dual_circuit: bool
    ghost_connected: bool


def _geometry(region: LatticeRegion, ann: Annulus):
    """Site classes 0 = annulus, 1 = hole, 2 = outside, and the ray anchor."""
    outer = rect_mask(region, ann.outer).bits
    inner = rect_mask(region, ann.inner).bits
    cls = np.full(region.n_sites, 2, dtype=np.int8)
    cls[outer] = 0
    cls[inner] = 1
    i0, _ = region.index_range(ann.inner[0], ann.inner[2], 0)
    _, j1 = region.index_range(ann.inner[1], ann.inner[3], 1)
    return cls, i0, j1


@nb.njit(nogil=True, cache=True)
def _winding_sites(W, H, cls, omega, i0, j1):
    """Sites of the annulus whose open cluster winds around the hole."""
    n = W * H
    parent = np.arange(2 * n)
    nh = H * (W - 1)
    for e in range(omega.size):
        if not omega[e]:
            continue
        if e < nh:
            j = e // (W - 1)
            i = e % (W - 1)
            x = j * W + i
            y = x + 1
            cross = i == i0 and j >= j1
        else:
            x = e - nh
            y = x + W
            cross = False
        if cls[x] != 0 or cls[y] != 0:
            continue
        if cross:
            union(parent, x, y + n)
            union(parent, x + n, y)
        else:
            union(parent, x, y)
            union(parent, x + n, y + n)
    out = np.zeros(n, dtype=np.bool_)
    for x in range(n):
        if cls[x] == 0 and find(parent, x) == find(parent, x + n):
            out[x] = True
    return out


@nb.njit(nogil=True, cache=True)
def _dual_winding(W, H, cls, omega, i0, j1):
    """True iff closed primal edges carry a dual loop of odd winding around
    the hole, using plaquettes whose four corners lie in the annulus."""
    PW = W - 1
    PH = H - 1
    npl = PW * PH
    if npl <= 0:
        return False
    inside = np.zeros(npl, dtype=np.bool_)
    for q in range(npl):
        pj = q // PW
        pi = q % PW
        s = pj * W + pi
        inside[q] = cls[s] == 0 and cls[s + 1] == 0 and cls[s + W] == 0 and cls[s + W + 1] == 0
    parent = np.arange(2 * npl)
    nh = H * (W - 1)
    # horizontal primal edge (i,j)-(i+1,j) separates plaquettes (i,j-1) and (i,j)
    for j in range(1, H - 1):
        for i in range(W - 1):
            if omega[j * (W - 1) + i]:
                continue
            a = (j - 1) * PW + i
            b = j * PW + i
            if inside[a] and inside[b]:
                union(parent, a, b)
                union(parent, a + npl, b + npl)
    # vertical primal edge (i,j)-(i,j+1) separates plaquettes (i-1,j) and (i,j)
    for j in range(H - 1):
        for i in range(1, W - 1):
            if omega[nh + j * W + i]:
                continue
            a = j * PW + i - 1
            b = j * PW + i
            if not (inside[a] and inside[b]):
                continue
            if i == i0 and j >= j1 - 1:
                union(parent, a, b + npl)
                union(parent, a + npl, b)
            else:
                union(parent, a, b)
                union(parent, a + npl, b + npl)
    for q in range(npl):
        if inside[q] and find(parent, q) == find(parent, q + npl):
            return True
    return False


def winding_sites(fk: FkConfig, annulus: Annulus) -> np.ndarray:
    region = fk.region
    cls, i0, j1 = _geometry(region, annulus)
    if not (cls == 1).any():
        return np.zeros(region.n_sites, dtype=bool)
    return _winding_sites(region.width, region.height, cls, fk.omega, i0, j1)


def open_circuit(fk: FkConfig, annulus: Annulus) -> bool:
    """Open lattice circuit inside the annulus separating hole from outside."""
    return bool(winding_sites(fk, annulus).any())


def dual_circuit(fk: FkConfig, annulus: Annulus) -> bool:
    """Circuit of closed primal edges (open dual edges) around the hole."""
    region = fk.region
    cls, i0, j1 = _geometry(region, annulus)
    if not (cls == 1).any():
        return False
    return bool(_dual_winding(region.width, region.height, cls, fk.omega, i0, j1))


def _ring8(region: LatticeRegion, cls: np.ndarray, target: int) -> np.ndarray:
    """Annulus sites 8-adjacent to a site of class ``target`` (2 also covers
    sites on the region's edge)."""
    g = cls.reshape(region.height, region.width)
    pad = np.pad(g == target, 1, constant_values=(target == 2))
    H, W = g.shape
    near = np.zeros_like(g, dtype=bool)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            near |= pad[1 + dy : 1 + dy + H, 1 + dx : 1 + dx + W]
    return (near & (g == 0)).ravel()


def primal_crossing(fk: FkConfig, annulus: Annulus) -> bool:
    """Open path in the annulus from the inner ring to the outer ring, both
    rings taken with diagonal adjacency so that this event is the exact
    complement of :func:`dual_circuit`."""
    region = fk.region
    cls, _, _ = _geometry(region, annulus)
    n = region.n_sites
    e = region.edges
    ok = fk.omega & (cls[e[:, 0]] == 0) & (cls[e[:, 1]] == 0)
    roots, _ = _cluster_roots(n, e[ok].copy().reshape(-1, 2), np.ones(int(ok.sum()), dtype=bool),
                              np.zeros(0, dtype=np.int64), np.zeros(0, dtype=bool))
    src = _ring8(region, cls, 1)
    dst = _ring8(region, cls, 2)
    return bool(np.intersect1d(roots[src], roots[dst]).size)


@nb.njit(nogil=True, cache=True)
def _dual_crossing(W, H, cls, omega):
    # plaquettes plus two virtual faces: hole (npl) and outside (npl+1)
    PW = W - 1
    PH = H - 1
    npl = max(PW, 0) * max(PH, 0)
    HOLE = npl
    OUT = npl + 1
    parent = np.arange(npl + 2)
    for q in range(npl):
        pj = q // PW
        pi = q % PW
        s = pj * W + pi
        for c in (s, s + 1, s + W, s + W + 1):
            if cls[c] == 1:
                union(parent, q, HOLE)
            elif cls[c] == 2:
                union(parent, q, OUT)
    nh = H * (W - 1)
    for e in range(omega.size):
        if e < nh:
            j = e // (W - 1)
            i = e % (W - 1)
            x = j * W + i
            y = x + 1
            a = (j - 1) * PW + i if j > 0 else OUT
            b = j * PW + i if j < H - 1 else OUT
        else:
            x = e - nh
            y = x + W
            j = x // W
            i = x % W
            a = j * PW + i - 1 if i > 0 else OUT
            b = j * PW + i if i < W - 1 else OUT
        primal_open = omega[e] and cls[x] == 0 and cls[y] == 0
        if not primal_open:
            union(parent, a, b)
    return find(parent, HOLE) == find(parent, OUT)


def dual_crossing(fk: FkConfig, annulus: Annulus) -> bool:
    """Dual path from the hole face to the outer face through closed edges."""
    region = fk.region
    cls, _, _ = _geometry(region, annulus)
    if not (cls == 1).any():
        return True
    return bool(_dual_crossing(region.width, region.height, cls, fk.omega))


def annulus_report(fk: FkConfig, annulus: Annulus, decomp: ClusterDecomposition | None = None) -> AnnulusEventReport:
    wind = winding_sites(fk, annulus)
    ghost = False
    if wind.any():
        decomp = decomp or decompose(fk)
        ghost = bool(decomp.ghost[decomp.labels[wind]].any())
    return AnnulusEventReport(annulus, bool(wind.any()), dual_circuit(fk, annulus), ghost)


# ---------------------------------------------------------------------------
# mesoscopic squares
# ---------------------------------------------------------------------------


def _square_side(region: LatticeRegion, eps: float) -> int:
    k = eps / region.a
    kr = round(k)
    if kr < 1 or abs(k - kr) > 1e-9 or region.width % kr or region.height % kr:
        raise ValueError(f"square side {eps!r} does not tile a {region.width}x{region.height} region at mesh {region.a!r}")
    return int(kr)


def mesoscopic_scan(fk: FkConfig, region: LatticeRegion | None, a: float | None, eps: float, M: float,
                    variant: bool = False, decomp: ClusterDecomposition | None = None):
    """Number of eps-squares holding a cluster with area in
    [eps^(15/8)/M, M eps^(15/8)] that stays off the square's outermost layer.

    With ``variant=True`` returns (count, loose count) where the loose count
    only asks for the cluster to lie within the square.
    """
    if not M > 1:
        raise ValueError("mass window factor must exceed 1")
    region = region or fk.region
    a = region.a if a is None else a
    k = _square_side(region, eps)
    d = decomp or decompose(fk, region, a)
    i, j = region.coords(np.arange(region.n_sites))
    K = d.n_clusters
    lo_i = np.full(K, np.iinfo(np.int64).max)
    hi_i = np.full(K, -1)
    lo_j = lo_i.copy()
    hi_j = hi_i.copy()
    np.minimum.at(lo_i, d.labels, i)
    np.maximum.at(hi_i, d.labels, i)
    np.minimum.at(lo_j, d.labels, j)
    np.maximum.at(hi_j, d.labels, j)
    target = eps ** (15.0 / 8.0)
    in_window = (d.areas >= target / M) & (d.areas <= M * target)
    same = (lo_i // k == hi_i // k) & (lo_j // k == hi_j // k) & ~d.boundary
    sq = (lo_j // k) * (region.width // k) + lo_i // k
    strict = same & (lo_i % k > 0) & (hi_i % k < k - 1) & (lo_j % k > 0) & (hi_j % k < k - 1)
    count = np.unique(sq[strict & in_window]).size
    if variant:
        return count, np.unique(sq[same & in_window]).size
    return count


def lr_crossing(fk: FkConfig, rect) -> bool:
    """Open path inside ``rect`` joining its leftmost and rightmost site columns."""
    region = fk.region
    m = rect_mask(region, rect)
    if m.count == 0:
        return False
    e = region.edges
    inside = m.bits
    ok = fk.omega & inside[e[:, 0]] & inside[e[:, 1]]
    sub = np.ascontiguousarray(e[ok])
    roots, _ = _cluster_roots(region.n_sites, sub, np.ones(len(sub), dtype=bool),
                              np.zeros(0, dtype=np.int64), np.zeros(0, dtype=bool))
    i, _ = region.coords(m.sites)
    left = m.sites[i == i.min()]
    right = m.sites[i == i.max()]
    return bool(np.intersect1d(roots[left], roots[right]).size)
