"""Axisymmetric tensor grids for the model domains.

The n-dimensional problem is reduced to two coordinates: (r, z) for the
half-space slab and for tabulated profiles, polar (rho, theta) about the ball
center for the ball (which makes the curved boundary grid-aligned).  In both
systems the Dirichlet form is diagonal,

    <u, v>_a = |S^{n-2}| iint a [ g_u u_,u v_,u + g_v u_,v v_,v ] du dv,

with separable metric factors, so a finite-volume scheme with exact 1D face
and cell integrals stays symmetric and second order.  The symmetry axis r = 0
carries the natural regularity condition (zero flux), not a Dirichlet row.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .analytic import sphere_area
from .errors import TowerlabError

_GL_X, _GL_W = np.polynomial.legendre.leggauss(6)


@dataclass(frozen=True)
class SlabDomain:
    """Truncated half-space {0 < z < z_max, r < r_max}; the concentration
    point is the origin with inward normal +z."""

    r_max: float = 1.0
    z_max: float = 1.0
    kind: str = "slab"

    def contains_rz(self, r, z):
        return (np.asarray(r) < self.r_max) & (np.asarray(z) > 0) & (np.asarray(z) < self.z_max)


@dataclass(frozen=True)
class BallDomain:
    """Ball of radius `radius` centered on the axis at height `center_z`.

    The canonical choice center_z = radius = 1 puts the concentration point at
    the origin of the boundary sphere with inward normal +z.
    """

    radius: float = 1.0
    center_z: float = 1.0
    kind: str = "ball"

    def contains_rz(self, r, z):
        return np.asarray(r) ** 2 + (np.asarray(z) - self.center_z) ** 2 < self.radius**2


@dataclass(frozen=True)
class ProfileDomain:
    """Tabulated axisymmetric profile {r < R(z), z0 < z < z1}.

    R is linearly interpolated between knots; the boundary is rendered as a
    staircase on the grid, so solves on it are first-order accurate near the
    profile wall.
    """

    z_knots: tuple
    r_values: tuple
    kind: str = "profile"

    def __post_init__(self):
        z = np.asarray(self.z_knots, dtype=float)
        r = np.asarray(self.r_values, dtype=float)
        if len(z) != len(r) or len(z) < 2 or np.any(np.diff(z) <= 0) or np.any(r <= 0):
            raise TowerlabError("profile needs increasing z knots and positive radii")
        object.__setattr__(self, "z_knots", tuple(z))
        object.__setattr__(self, "r_values", tuple(r))

    def radius_at(self, z):
        return np.interp(np.asarray(z, dtype=float), self.z_knots, self.r_values)

    def contains_rz(self, r, z):
        z = np.asarray(z, dtype=float)
        inside_z = (z > self.z_knots[0]) & (z < self.z_knots[-1])
        return inside_z & (np.asarray(r) < self.radius_at(z))


@dataclass(frozen=True)
class GradingSpec:
    """Focus points (value, scale) per grid axis, in grid coordinates."""

    focus_u: tuple = ()
    focus_v: tuple = ()


def graded_axis(lo: float, hi: float, n_cells: int, focus=(), h_max_frac: float = 1.0 / 6.0) -> np.ndarray:
    """Node positions on [lo, hi], n_cells cells, geometrically clustered
    toward each (value, scale) focus.

    The local target spacing is h(x) = min_f (scale_f + q |x - value_f|),
    capped at h_max_frac * (hi - lo); q is chosen so that marching with h
    lands on hi in exactly n_cells steps.
    """
    span = hi - lo
    if n_cells < 1 or span <= 0:
        raise TowerlabError("bad axis request")
    if not focus:
        return np.linspace(lo, hi, n_cells + 1)
    foci = [(float(v), float(s)) for v, s in focus]
    if any(s <= 0 for _, s in foci):
        raise TowerlabError("focus scales must be positive")
    h_max = span * h_max_frac

    def march(c: float, q: float):
        pts = [lo]
        x = lo
        for _ in range(4 * n_cells + 64):
            h = h_max
            for v, s in foci:
                h = min(h, s + q * abs(x - v))
            x = x + c * h
            if x >= hi - 1e-12 * span:
                pts.append(hi)
                return pts
            pts.append(x)
        return pts

    def cells_for(c, q):
        return len(march(c, q)) - 1

    # pick the growth rate q by bisection at unit multiplier
    q_lo, q_hi = 1e-4, 4.0
    if cells_for(1.0, q_hi) > n_cells:
        q = q_hi  # budget too small for the requested scales; degrade gracefully
    elif cells_for(1.0, q_lo) < n_cells:
        q = q_lo
    else:
        for _ in range(60):
            q = 0.5 * (q_lo + q_hi)
            if cells_for(1.0, q) > n_cells:
                q_lo = q
            else:
                q_hi = q
        q = q_hi
    # fine-tune the multiplier so the count matches exactly
    c_lo, c_hi = 0.25, 4.0
    for _ in range(80):
        c = 0.5 * (c_lo + c_hi)
        nc = cells_for(c, q)
        if nc == n_cells:
            break
        if nc > n_cells:
            c_lo = c
        else:
            c_hi = c
    pts = np.array(march(c, q))
    if len(pts) - 1 != n_cells:
        # fall back: resample the marched distribution onto the exact count
        t = np.linspace(0.0, 1.0, n_cells + 1)
        pts = np.interp(t, np.linspace(0, 1, len(pts)), pts)
        pts[0], pts[-1] = lo, hi
    return pts


def _interval_integrals(nodes: np.ndarray, f) -> np.ndarray:
    """Exact-ish integral of f over each dual interval of the 1D node array.

    Dual interval of node j is [mid(j-1,j), mid(j,j+1)], clipped at the ends.
    """
    mids = 0.5 * (nodes[:-1] + nodes[1:])
    edges = np.concatenate([[nodes[0]], mids, [nodes[-1]]])
    return _segment_integrals(edges, f)


def _segment_integrals(edges: np.ndarray, f) -> np.ndarray:
    a = edges[:-1]
    b = edges[1:]
    half = 0.5 * (b - a)
    mid = 0.5 * (a + b)
    pts = mid[:, None] + half[:, None] * _GL_X[None, :]
    return half * np.sum(f(pts) * _GL_W[None, :], axis=1)


@dataclass
class AxisymGrid:
    """Tensor grid with finite-volume geometry factors.

    coord = 'rz':    u is r, v is z.
    coord = 'polar': u is rho, v is theta about (0, center_z), with
                     z = center_z - rho cos(theta) so theta = 0 points at the
                     concentration side of the ball.
    """

    domain: object
    n: int
    coord: str
    u: np.ndarray
    v: np.ndarray
    R: np.ndarray = field(init=False)
    Z: np.ndarray = field(init=False)
    measure: np.ndarray = field(init=False)
    dirichlet: np.ndarray = field(init=False)
    face_u: np.ndarray = field(init=False)  # (nu-1, nv) geometric factors
    face_v: np.ndarray = field(init=False)  # (nu, nv-1)
    face_u_mid: tuple = field(init=False)   # physical midpoints of u-faces
    face_v_mid: tuple = field(init=False)

    def __post_init__(self):
        n = self.n
        u, v = self.u, self.v
        surf = sphere_area(n - 1)
        if self.coord == "rz":
            self.R = np.broadcast_to(u[:, None], (len(u), len(v))).copy()
            self.Z = np.broadcast_to(v[None, :], (len(u), len(v))).copy()
            pm = lambda x: x ** (n - 2)
            qm = lambda x: np.ones_like(x)
            pu, qu = pm, qm          # g_u = S r^{n-2}
            pv, qv = pm, qm          # g_v = S r^{n-2}
        elif self.coord == "polar":
            cz = self.domain.center_z
            self.R = u[:, None] * np.sin(v)[None, :]
            self.Z = cz - u[:, None] * np.cos(v)[None, :]
            pm = lambda x: x ** (n - 1)
            qm = lambda x: np.sin(x) ** (n - 2)
            pu = lambda x: x ** (n - 1)
            qu = qm
            pv = lambda x: x ** (n - 3)
            qv = qm
        else:
            raise TowerlabError(f"unknown grid coordinate system {self.coord!r}")

        Iu = _interval_integrals(u, pm)
        Iv = _interval_integrals(v, qm)
        self.measure = surf * Iu[:, None] * Iv[None, :]

        umid = 0.5 * (u[:-1] + u[1:])
        vmid = 0.5 * (v[:-1] + v[1:])
        Iqu = _interval_integrals(v, qu)
        Ipv = _interval_integrals(u, pv)
        du = np.diff(u)
        dv = np.diff(v)
        self.face_u = surf * (pu(umid) / du)[:, None] * Iqu[None, :]
        self.face_v = surf * Ipv[:, None] * (qv(vmid) / dv)[None, :]

        if self.coord == "rz":
            fu_r = np.broadcast_to(umid[:, None], self.face_u.shape)
            fu_z = np.broadcast_to(v[None, :], self.face_u.shape)
            fv_r = np.broadcast_to(u[:, None], self.face_v.shape)
            fv_z = np.broadcast_to(vmid[None, :], self.face_v.shape)
        else:
            cz = self.domain.center_z
            fu_r = umid[:, None] * np.sin(v)[None, :]
            fu_z = cz - umid[:, None] * np.cos(v)[None, :]
            fv_r = u[:, None] * np.sin(vmid)[None, :]
            fv_z = cz - u[:, None] * np.cos(vmid)[None, :]
        self.face_u_mid = (fu_r, fu_z)
        self.face_v_mid = (fv_r, fv_z)

        self.dirichlet = self._dirichlet_mask()

    def _dirichlet_mask(self) -> np.ndarray:
        nu, nv = self.shape
        mask = np.zeros((nu, nv), dtype=bool)
        if self.coord == "polar":
            mask[-1, :] = True  # rho = radius: the boundary sphere
            return mask
        dom = self.domain
        if dom.kind == "slab":
            mask[-1, :] = True          # r = r_max
            mask[:, 0] = True           # z = 0 (the concentration face)
            mask[:, -1] = True          # z = z_max
            return mask
        if dom.kind == "profile":
            inside = dom.contains_rz(self.R, self.Z)
            mask[~inside] = True
            mask[:, 0] = True
            mask[:, -1] = True
            mask[-1, :] = True
            return mask
        raise TowerlabError(f"unsupported domain kind {dom.kind!r}")

    @property
    def shape(self):
        return (len(self.u), len(self.v))

    @property
    def n_nodes(self):
        return len(self.u) * len(self.v)

    def total_measure(self) -> float:
        """Sum of the dual-cell measures; equals |domain| exactly for slab and
        ball grids, the staircase approximation for profiles."""
        if getattr(self.domain, "kind", "") == "profile":
            inside = self.domain.contains_rz(self.R, self.Z)
            return float(np.sum(self.measure[inside]))
        return float(np.sum(self.measure))

    def axis_profile(self, values: np.ndarray):
        """(z, values) along the symmetry axis r = 0, z increasing.

        For polar grids this is the theta = 0 ray from the boundary point
        toward the ball center.
        """
        if self.coord == "rz":
            return self.v.copy(), values[0, :].copy()
        z = self.Z[:, 0]
        order = np.argsort(z)
        return z[order], values[order, 0]


def build_grid(domain, resolution, grading: GradingSpec | None = None, n: int = 4) -> AxisymGrid:
    """Build the grid for a model domain.

    `resolution` is the number of cells per axis (pairs allowed); at least 16
    per axis.  `grading` clusters nodes toward focus points; None gives a
    uniform grid.
    """
    if isinstance(resolution, (tuple, list)):
        res_u, res_v = int(resolution[0]), int(resolution[1])
    else:
        res_u = res_v = int(resolution)
    if min(res_u, res_v) < 16:
        raise TowerlabError("resolution must be at least 16 cells per axis")
    grading = grading or GradingSpec()

    if isinstance(domain, SlabDomain):
        u = graded_axis(0.0, domain.r_max, res_u, grading.focus_u)
        v = graded_axis(0.0, domain.z_max, res_v, grading.focus_v)
        return AxisymGrid(domain=domain, n=n, coord="rz", u=u, v=v)
    if isinstance(domain, BallDomain):
        u = graded_axis(0.0, domain.radius, res_u, grading.focus_u)
        v = graded_axis(0.0, math.pi, res_v, grading.focus_v)
        return AxisymGrid(domain=domain, n=n, coord="polar", u=u, v=v)
    if isinstance(domain, ProfileDomain):
        r_max = float(np.max(domain.r_values))
        u = graded_axis(0.0, r_max, res_u, grading.focus_u)
        v = graded_axis(domain.z_knots[0], domain.z_knots[-1], res_v, grading.focus_v)
        return AxisymGrid(domain=domain, n=n, coord="rz", u=u, v=v)
    raise TowerlabError(f"unsupported domain kind {getattr(domain, 'kind', type(domain).__name__)!r}")
