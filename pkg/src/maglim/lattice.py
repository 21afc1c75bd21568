"""Square-lattice geometry, boundary conditions and model parameters."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

BETA_C = math.log1p(math.sqrt(2.0)) / 2.0
FIELD_EXPONENT = 15.0 / 8.0

# neighbour directions: +x, -x, +y, -y
_DIRS = ((1, 0), (-1, 0), (0, 1), (0, -1))
_RECT_TOL = 1e-9


class BoundaryCondition(enum.Enum):
    PLUS = "plus"
    MINUS = "minus"
    FREE = "free"

    @property
    def sign(self) -> int:
        return {"plus": 1, "minus": -1, "free": 0}[self.value]

    @property
    def wired(self) -> bool:
        return self is not BoundaryCondition.FREE

    def flipped(self) -> "BoundaryCondition":
        if self is BoundaryCondition.PLUS:
            return BoundaryCondition.MINUS
        if self is BoundaryCondition.MINUS:
            return BoundaryCondition.PLUS
        return self

    @classmethod
    def parse(cls, value) -> "BoundaryCondition":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        aliases = {"+": "plus", "-": "minus", "0": "free", "f": "free"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown boundary condition {value!r}") from None


def renormalization_factor(a: float) -> float:
    """Per-site weight a**(15/8) of the magnetization field at mesh ``a``."""
    if not a > 0:
        raise ValueError(f"mesh must be positive, got {a!r}")
    return float(a) ** FIELD_EXPONENT


@dataclass(frozen=True)
class ModelParams:
    beta: float = BETA_C
    h: float = 0.0
    a: float = 1.0

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError(f"mesh must be positive, got {self.a!r}")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")

    @property
    def h_site(self) -> float:
        # always derived, never stored
        return self.h * renormalization_factor(self.a)

    @classmethod
    def critical(cls, h: float = 0.0, a: float = 1.0) -> "ModelParams":
        return cls(beta=BETA_C, h=h, a=a)


@dataclass(frozen=True)
class LatticeRegion:
    """Finite rectangle of sites at physical positions ``origin + a*(i, j)``.

    Sites are indexed row-major, ``s = j*width + i``.
    """

    width: int
    height: int
    a: float = 1.0
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if int(self.width) != self.width or int(self.height) != self.height:
            raise ValueError("width and height must be integers")
        if self.width < 1 or self.height < 1:
            raise ValueError(f"region needs width, height >= 1, got {self.width}x{self.height}")
        if not self.a > 0:
            raise ValueError(f"mesh must be positive, got {self.a!r}")

    @property
    def n_sites(self) -> int:
        return self.width * self.height

    @property
    def extent(self) -> tuple[float, float]:
        return (self.width * self.a, self.height * self.a)

    def index(self, i, j):
        return np.asarray(j) * self.width + np.asarray(i) if np.ndim(i) else j * self.width + i

    def coords(self, s):
        j, i = np.divmod(s, self.width)
        return i, j

    def position(self, s) -> tuple[float, float]:
        i, j = self.coords(s)
        return (self.origin[0] + self.a * i, self.origin[1] + self.a * j)

    @cached_property
    def positions(self) -> np.ndarray:
        s = np.arange(self.n_sites)
        i, j = self.coords(s)
        pos = np.column_stack([self.origin[0] + self.a * i, self.origin[1] + self.a * j])
        pos.flags.writeable = False
        return pos

    @cached_property
    def neighbors(self) -> np.ndarray:
        """(n_sites, 4) neighbour table in the order +x, -x, +y, -y; -1 outside."""
        W, H = self.width, self.height
        i, j = self.coords(np.arange(self.n_sites))
        nbr = np.full((self.n_sites, 4), -1, dtype=np.int64)
        for d, (dx, dy) in enumerate(_DIRS):
            ii, jj = i + dx, j + dy
            ok = (ii >= 0) & (ii < W) & (jj >= 0) & (jj < H)
            nbr[ok, d] = jj[ok] * W + ii[ok]
        nbr.flags.writeable = False
        return nbr

    @cached_property
    def n_boundary(self) -> np.ndarray:
        """Number of bonds from each site to the ghost boundary layer."""
        nb = (self.neighbors < 0).sum(axis=1).astype(np.int64)
        nb.flags.writeable = False
        return nb

    @cached_property
    def edges(self) -> np.ndarray:
        """Lattice edges as (n_edges, 2): horizontal edges first, then vertical."""
        W, H = self.width, self.height
        jj, ii = np.mgrid[0:H, 0 : W - 1]
        left = (jj * W + ii).ravel()
        horiz = np.column_stack([left, left + 1])
        jj, ii = np.mgrid[0 : H - 1, 0:W]
        low = (jj * W + ii).ravel()
        vert = np.column_stack([low, low + W])
        e = np.concatenate([horiz, vert]).astype(np.int64).reshape(-1, 2)
        e.flags.writeable = False
        return e

    @property
    def n_edges(self) -> int:
        return self.width * (self.height - 1) + self.height * (self.width - 1)

    @cached_property
    def boundary_edges(self) -> np.ndarray:
        """Half-edges to the boundary layer as (site, direction), row-major by site."""
        s, d = np.nonzero(self.neighbors < 0)
        be = np.column_stack([s, d]).astype(np.int64).reshape(-1, 2)
        be.flags.writeable = False
        return be

    def index_range(self, x0: float, x1: float, axis: int) -> tuple[int, int]:
        """Half-open index range of sites whose coordinate lies in [x0, x1)."""
        n = self.width if axis == 0 else self.height
        o = self.origin[axis]
        lo = math.ceil((x0 - o) / self.a - _RECT_TOL)
        hi = math.ceil((x1 - o) / self.a - _RECT_TOL)
        return max(lo, 0), min(max(hi, 0), n)


def build_region(width: int, height: int, a: float, origin=(0.0, 0.0)) -> LatticeRegion:
    return LatticeRegion(width, height, a, tuple(origin))


def unit_square(n: int) -> LatticeRegion:
    """n x n sites covering [0, 1)^2 at mesh 1/n."""
    return LatticeRegion(n, n, 1.0 / n)


Rect = tuple[float, float, float, float]


@dataclass(frozen=True, eq=False)
class RegionMask:
    bits: np.ndarray
    rect: Rect | None = None
    region: LatticeRegion | None = None

    def __post_init__(self):
        self.bits.flags.writeable = False

    @property
    def count(self) -> int:
        return int(self.bits.sum())

    @property
    def sites(self) -> np.ndarray:
        return np.flatnonzero(self.bits)

    def __eq__(self, other):
        return isinstance(other, RegionMask) and np.array_equal(self.bits, other.bits)

    def __and__(self, other: "RegionMask") -> "RegionMask":
        return RegionMask(self.bits & other.bits, None, self.region)

    def __or__(self, other: "RegionMask") -> "RegionMask":
        return RegionMask(self.bits | other.bits, None, self.region)


def _check_rect(rect) -> Rect:
    x0, y0, x1, y1 = map(float, rect)
    if x1 < x0 or y1 < y0:
        raise ValueError(f"malformed rectangle {rect!r}")
    return (x0, y0, x1, y1)


def rect_mask(region: LatticeRegion, rect) -> RegionMask:
    """Sites whose position lies in the half-open rectangle [x0,x1) x [y0,y1)."""
    x0, y0, x1, y1 = _check_rect(rect)
    i0, i1 = region.index_range(x0, x1, 0)
    j0, j1 = region.index_range(y0, y1, 1)
    grid = np.zeros((region.height, region.width), dtype=bool)
    if i1 > i0 and j1 > j0:
        grid[j0:j1, i0:i1] = True
    return RegionMask(grid.ravel(), (x0, y0, x1, y1), region)


def full_mask(region: LatticeRegion) -> RegionMask:
    return RegionMask(np.ones(region.n_sites, dtype=bool), (*region.origin, *np.add(region.origin, region.extent)), region)


def rect_contains(outer, inner) -> bool:
    ox0, oy0, ox1, oy1 = _check_rect(outer)
    ix0, iy0, ix1, iy1 = _check_rect(inner)
    return ox0 <= ix0 and oy0 <= iy0 and ix1 <= ox1 and iy1 <= oy1


def annulus_masks(region: LatticeRegion, outer, inner) -> tuple[RegionMask, RegionMask]:
    """Split ``outer`` into (outer minus inner, inner)."""
    if not rect_contains(outer, inner):
        raise ValueError(f"inner rectangle {inner!r} is not contained in {outer!r}")
    out = rect_mask(region, outer)
    inn = rect_mask(region, inner)
    return RegionMask(out.bits & ~inn.bits, None, region), inn


def centered_square(region: LatticeRegion, side: float) -> Rect:
    """Physical square of the given side centred in ``region``."""
    cx = region.origin[0] + region.extent[0] / 2
    cy = region.origin[1] + region.extent[1] / 2
    return (cx - side / 2, cy - side / 2, cx + side / 2, cy + side / 2)
