"""High-accuracy integration: 1D radial quadrature, adaptive 2D axisymmetric
quadrature with geometric grading toward concentration points, annulus
decompositions, and a seeded Monte Carlo fallback.

Axisymmetric integrals are n-dimensional integrals of functions f(r, z) of the
cylindrical radius r = |x'| and height z = x_n, reduced to the plane via the
measure |S^{n-2}| r^{n-2} dr dz.  Integrands must be numpy-vectorized.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import quad

from .analytic import sphere_area
from .errors import QuadratureBudgetError, TowerlabError


@dataclass(frozen=True)
class IntegralResult:
    value: float
    error_estimate: float
    evaluations: int

    def __post_init__(self):
        if self.error_estimate < 0:
            raise TowerlabError("error estimate must be nonnegative")


# ---------------------------------------------------------------------------
# 1D radial integration
# ---------------------------------------------------------------------------

def integrate_radial(
    f,
    upper: float | None = None,
    tol_abs: float = 1e-10,
    tol_rel: float = 1e-8,
    limit: int = 500,
) -> IntegralResult:
    """Integrate f over [0, upper] or, when upper is None, over [0, infinity).

    Infinite tails are handled by the algebraic substitution r = s/(1-s).
    """
    if upper is None:
        def g(s):
            s = min(s, 1.0 - 1e-14)
            r = s / (1.0 - s)
            return f(r) / (1.0 - s) ** 2

        a, b = 0.0, 1.0
    else:
        if upper <= 0:
            raise TowerlabError("upper limit must be positive")
        g, a, b = f, 0.0, float(upper)

    value, abserr, info = quad(g, a, b, epsabs=tol_abs, epsrel=tol_rel, limit=limit, full_output=1)[:3]
    neval = int(info["neval"])
    if abserr > max(tol_abs, tol_rel * abs(value)) * 50:
        raise QuadratureBudgetError(
            f"radial quadrature stalled at error {abserr:.3e}",
            partial=IntegralResult(value, abserr, neval),
        )
    return IntegralResult(value, float(abserr), neval)


# ---------------------------------------------------------------------------
# Regions of the (r, z) half-plane
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RectRegion:
    """Axis-aligned rectangle [r0, r1] x [z0, z1], r0 >= 0."""

    r0: float
    r1: float
    z0: float
    z1: float

    def __post_init__(self):
        if not (0 <= self.r0 < self.r1 and self.z0 < self.z1):
            raise TowerlabError("degenerate rectangle")

    def param_bounds(self):
        return (self.r0, self.r1), (self.z0, self.z1)

    def to_physical(self, U, V):
        return U, V, np.ones_like(np.asarray(U, dtype=float))


@dataclass(frozen=True)
class PolarRegion:
    """Polar patch about an on-axis point (0, center_z).

    (r, z) = (rho sin(theta), center_z + rho cos(theta)); theta = 0 points in
    +z.  rho1 may be infinite, in which case rho is parametrized as
    rho0 + map_scale * s/(1-s) with s in [0, 1).
    """

    center_z: float
    rho0: float
    rho1: float
    theta0: float = 0.0
    theta1: float = math.pi
    map_scale: float = 1.0

    def __post_init__(self):
        if self.rho0 < 0 or (not math.isinf(self.rho1) and self.rho1 <= self.rho0):
            raise TowerlabError("degenerate polar range")
        if not (0 <= self.theta0 < self.theta1 <= math.pi + 1e-15):
            raise TowerlabError("theta range must lie within [0, pi]")

    @property
    def unbounded(self) -> bool:
        return math.isinf(self.rho1)

    def param_bounds(self):
        if self.unbounded:
            return (0.0, 1.0), (self.theta0, self.theta1)
        return (self.rho0, self.rho1), (self.theta0, self.theta1)

    def rho_of_param(self, u):
        if self.unbounded:
            u = np.minimum(np.asarray(u, dtype=float), 1.0 - 1e-14)
            return self.rho0 + self.map_scale * u / (1.0 - u)
        return np.asarray(u, dtype=float)

    def param_of_rho(self, rho):
        if self.unbounded:
            t = (np.asarray(rho, dtype=float) - self.rho0) / self.map_scale
            return t / (1.0 + t)
        return np.asarray(rho, dtype=float)

    def to_physical(self, U, V):
        if self.unbounded:
            u = np.minimum(np.asarray(U, dtype=float), 1.0 - 1e-14)
            rho = self.rho0 + self.map_scale * u / (1.0 - u)
            jac_u = self.map_scale / (1.0 - u) ** 2
        else:
            rho = np.asarray(U, dtype=float)
            jac_u = np.ones_like(rho)
        theta = np.asarray(V, dtype=float)
        r = rho * np.sin(theta)
        z = self.center_z + rho * np.cos(theta)
        return r, z, rho * jac_u


# ---------------------------------------------------------------------------
# Adaptive tensor quadrature
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _gl_rule(order: int):
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (x + 1.0), 0.5 * w  # on [0, 1]


def _graded_breakpoints(lo, hi, focus, n_coarse=4, ratio=2.0, max_levels=60):
    """Breakpoints on [lo, hi]: a coarse uniform skeleton plus geometric ladders
    (factor `ratio`) shrinking toward each focus value down to its scale."""
    pts = set(np.linspace(lo, hi, n_coarse + 1))
    span = hi - lo
    for value, scale in focus or []:
        if scale <= 0:
            raise TowerlabError("focus scale must be positive")
        step = span
        levels = 0
        while step > scale and levels < max_levels:
            step /= ratio
            levels += 1
            for side in (-1.0, 1.0):
                p = value + side * step
                if lo < p < hi:
                    pts.add(p)
        if lo < value < hi:
            pts.add(value)
    out = np.array(sorted(pts))
    keep = [out[0]]
    for p in out[1:]:
        if p - keep[-1] > 1e-15 * max(1.0, abs(p)):
            keep.append(p)
    if keep[-1] != hi:
        keep[-1] = hi
    return np.array(keep)


def integrate_axisym(
    f,
    region,
    n: int,
    tol_abs: float = 1e-10,
    tol_rel: float = 1e-8,
    focus_u=None,
    focus_v=None,
    max_cells: int = 60000,
    n_coarse: int = 4,
) -> IntegralResult:
    """Adaptive tensor Gauss quadrature of the n-dimensional axisymmetric
    integral of f over the region, including the |S^{n-2}| r^{n-2} measure.

    focus_u / focus_v are lists of (value, scale) pairs in the region's
    parameter coordinates; the initial mesh is geometrically graded (ratio 2)
    toward each focus before error-driven refinement takes over.  Cells are
    accumulated in creation order so results are reproducible bit for bit.
    """
    surf = sphere_area(n - 1)
    x7, w7 = _gl_rule(7)
    x5, w5 = _gl_rule(5)
    evals = 0

    def cell_integrals(cells):
        """Vectorized (I7, I5) over a list of cells (u0,u1,v0,v1)."""
        nonlocal evals
        arr = np.asarray(cells, dtype=float)
        u0, u1, v0, v1 = arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3]
        du = (u1 - u0)[:, None, None]
        dv = (v1 - v0)[:, None, None]

        def tensor(xs, ws):
            nonlocal evals
            U = u0[:, None, None] + du * xs[None, :, None]
            V = v0[:, None, None] + dv * xs[None, None, :]
            R, Z, J = region.to_physical(U, V)
            vals = f(R, Z) * surf * np.abs(R) ** (n - 2) * J
            evals += vals.size
            W = ws[None, :, None] * ws[None, None, :]
            return np.sum(vals * W, axis=(1, 2)) * du[:, 0, 0] * dv[:, 0, 0]

        return tensor(x7, w7), tensor(x5, w5)

    (u_lo, u_hi), (v_lo, v_hi) = region.param_bounds()
    ub = _graded_breakpoints(u_lo, u_hi, focus_u, n_coarse=n_coarse)
    vb = _graded_breakpoints(v_lo, v_hi, focus_v, n_coarse=n_coarse)
    cells = [
        (ub[i], ub[i + 1], vb[j], vb[j + 1])
        for i in range(len(ub) - 1)
        for j in range(len(vb) - 1)
    ]

    i7, i5 = cell_integrals(cells)
    store = {}  # id -> (value, err)
    heap = []
    next_id = 0
    for cell, a, b in zip(cells, i7, i5):
        err = abs(a - b)
        store[next_id] = (cell, a, err)
        heapq.heappush(heap, (-err, next_id))
        next_id += 1

    def totals():
        value = math.fsum(store[k][1] for k in sorted(store))
        err = math.fsum(store[k][2] for k in sorted(store))
        return value, err

    value, err_total = totals()
    while err_total > max(tol_abs, tol_rel * abs(value)):
        if len(store) + 4 > max_cells or not heap:
            raise QuadratureBudgetError(
                f"axisym quadrature exhausted {len(store)} cells at error {err_total:.3e}",
                partial=IntegralResult(value, err_total, evals),
            )
        neg_err, cid = heapq.heappop(heap)
        if cid not in store:
            continue
        cell, _, cerr = store.pop(cid)
        u0, u1, v0, v1 = cell
        um, vm = 0.5 * (u0 + u1), 0.5 * (v0 + v1)
        children = [
            (u0, um, v0, vm),
            (um, u1, v0, vm),
            (u0, um, vm, v1),
            (um, u1, vm, v1),
        ]
        ci7, ci5 = cell_integrals(children)
        for cell_c, a, b in zip(children, ci7, ci5):
            err = abs(a - b)
            store[next_id] = (cell_c, a, err)
            heapq.heappush(heap, (-err, next_id))
            next_id += 1
        value, err_total = totals()

    return IntegralResult(value, err_total, evals)


# ---------------------------------------------------------------------------
# Annulus decomposition around the innermost concentration point
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AnnulusPartition:
    """Nested annuli around the on-axis point (0, center_z).

    radii[l-1] and radii[l] are the outer and inner radii of the l-th annulus
    (l = 1..k); radii[0] = rho * eps and radii[k] = 0, so the annuli together
    with the exterior of the rho*eps ball tile the domain.
    """

    center_z: float
    radii: np.ndarray
    rho: float
    eps: float

    def __post_init__(self):
        radii = np.asarray(self.radii, dtype=float)
        object.__setattr__(self, "radii", radii)
        if radii.ndim != 1 or len(radii) < 2:
            raise TowerlabError("need at least one annulus")
        if not np.all(np.diff(radii) < 0):
            raise TowerlabError("annulus radii must be strictly decreasing")
        if radii[-1] != 0.0:
            raise TowerlabError("innermost radius must be 0 (the last scale is cut at 0)")
        if not math.isclose(radii[0], self.rho * self.eps, rel_tol=1e-12):
            raise TowerlabError("outermost radius must equal rho * eps")

    @property
    def k(self) -> int:
        return len(self.radii) - 1


def annulus_partition(deltas, eps: float, rho: float = 0.1, center_z: float = 0.0) -> AnnulusPartition:
    """Build the partition from the tower scales delta_1 > ... > delta_k.

    The fictitious outer scale is (eps*rho)^2/delta_1 and the inner one is 0,
    so boundary radii are sqrt(delta_{l-1} delta_l).
    """
    deltas = np.asarray(deltas, dtype=float)
    if np.any(deltas <= 0) or np.any(np.diff(deltas) >= 0) and len(deltas) > 1:
        raise TowerlabError("tower scales must be positive and strictly decreasing")
    ext = np.concatenate([[(eps * rho) ** 2 / deltas[0]], deltas, [0.0]])
    radii = np.sqrt(ext[:-1] * ext[1:])
    return AnnulusPartition(center_z=center_z, radii=radii, rho=rho, eps=eps)


def integrate_annulus(
    f,
    part: AnnulusPartition,
    l: int,
    n: int,
    tol_abs: float = 1e-10,
    tol_rel: float = 1e-8,
    inner_octaves: int = 40,
    max_cells: int = 60000,
) -> IntegralResult:
    """Integral of f over the l-th annulus (1-based index)."""
    if not 1 <= l <= part.k:
        raise TowerlabError(f"annulus index {l} out of range 1..{part.k}")
    outer = float(part.radii[l - 1])
    inner = float(part.radii[l])
    region = PolarRegion(part.center_z, inner, outer)
    # log-uniform initial ladder across the annulus (ratio 2)
    lo = max(inner, outer * 2.0 ** (-inner_octaves))
    focus_u = [(inner, lo - inner)] if inner > 0 else [(0.0, lo)]
    if inner > 0 and lo <= inner:
        focus_u = [(inner, inner * 0.5)]
    return integrate_axisym(
        f,
        region,
        n,
        tol_abs=tol_abs,
        tol_rel=tol_rel,
        focus_u=focus_u,
        max_cells=max_cells,
    )


# ---------------------------------------------------------------------------
# Monte Carlo fallback
# ---------------------------------------------------------------------------

def mc_integrate_nd(f, box, samples: int, seed: int) -> IntegralResult:
    """Plain Monte Carlo over an axis-aligned box; deterministic for a seed.

    `box` is a sequence of (lo, hi) pairs; f maps (samples, dim) arrays to
    values.
    """
    if samples < 2:
        raise TowerlabError("need at least 2 samples for an error estimate")
    box = np.asarray(box, dtype=float)
    if box.ndim != 2 or box.shape[1] != 2 or np.any(box[:, 1] <= box[:, 0]):
        raise TowerlabError("box must be a list of (lo, hi) pairs with hi > lo")
    rng = np.random.default_rng(seed)
    dim = box.shape[0]
    pts = rng.uniform(box[:, 0], box[:, 1], size=(samples, dim))
    vals = np.asarray(f(pts), dtype=float)
    vol = float(np.prod(box[:, 1] - box[:, 0]))
    mean = float(np.mean(vals))
    stderr = float(np.std(vals, ddof=1) / math.sqrt(samples))
    return IntegralResult(vol * mean, vol * stderr, samples)
