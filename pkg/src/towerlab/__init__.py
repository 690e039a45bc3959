"""Numerical laboratory for alternating-sign bubble towers of the weighted
almost-critical problem -div(a grad u) = a |u|^{p-1-eps} u."""

from .analytic import (
    Bubble,
    GreenKernel,
    LiftSpec,
    SpaceDims,
    dims_constants,
    eval_bubble,
    eval_psi,
    grad_regular_part,
    green_regular_part,
    lift_evaluate,
    project_bubble,
    project_psi,
)
from .energy import (
    CriticalPoint,
    ExpansionConstants,
    TowerConfig,
    expansion_constants,
    expansion_rhs,
    find_critical_point,
    grad_phi,
    hess_phi,
    phi,
)
from .errors import TowerlabError
from .grid import AxisymGrid, BallDomain, GradingSpec, ProfileDomain, SlabDomain, build_grid
from .pde import (
    DiscreteProblem,
    Field,
    KernelSubspace,
    NewtonResult,
    assemble_ansatz,
    continue_in_epsilon,
    energy_of,
    error_norm_R,
    fit_concentration,
    kernel_projection,
    kernel_subspace,
    newton_solve,
    residual,
    solve_istar,
    solve_tower,
)
from .quadrature import (
    AnnulusPartition,
    IntegralResult,
    annulus_partition,
    integrate_annulus,
    integrate_axisym,
    integrate_radial,
    mc_integrate_nd,
)
from .stats import RateFit, rate_regression
from .weights import WeightModel, affine_weight, product_weight

__version__ = "0.1.0"
