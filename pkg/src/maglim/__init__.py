"""Monte Carlo laboratory for the critical and near-critical 2D Ising
magnetization field."""

from .lattice import (
    BETA_C,
    BoundaryCondition,
    LatticeRegion,
    ModelParams,
    RegionMask,
    annulus_masks,
    build_region,
    rect_mask,
    renormalization_factor,
)

__version__ = "0.1.0"
