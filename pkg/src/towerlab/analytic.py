"""Closed-form building blocks: bubbles, their linearized kernel, Green-function
regular parts for model domains, two-term projections, and the lift to the
higher-dimensional rotationally invariant setting.

Everything here is exact arithmetic on formulas; the numerically exact
projections live in :mod:`towerlab.pde`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateCenterError,
    DomainError,
    TowerlabError,
    UnsupportedDimensionError,
)


def sphere_area(n: int) -> float:
    """Surface measure of the unit sphere S^{n-1} in R^n."""
    return 2.0 * math.pi ** (n / 2.0) / math.gamma(n / 2.0)


def ball_volume(n: int) -> float:
    """Lebesgue measure of the unit ball in R^n."""
    return math.pi ** (n / 2.0) / math.gamma(n / 2.0 + 1.0)


@dataclass(frozen=True)
class SpaceDims:
    """Dimension-dependent constants of the critical problem in R^n."""

    n: int
    p: float            # critical exponent (n+2)/(n-2)
    alpha_n: float      # bubble normalization [n(n-2)]^{(n-2)/4}
    ball_vol: float
    sphere_area: float

    @property
    def m(self) -> int:
        """Shorthand n - 2 used throughout the scaling exponents."""
        return self.n - 2

    def concentration_exponent(self, level: int) -> float:
        """Power law exponent (n-1+2(i-1))/(n-2) for the level-i scale."""
        return (self.n - 1 + 2 * (level - 1)) / (self.n - 2)


def dims_constants(n: int) -> SpaceDims:
    if n < 4:
        raise UnsupportedDimensionError(
            f"dimension n={n} is unsupported: the construction requires n >= 4"
        )
    return SpaceDims(
        n=n,
        p=(n + 2) / (n - 2),
        alpha_n=(n * (n - 2)) ** ((n - 2) / 4.0),
        ball_vol=ball_volume(n),
        sphere_area=sphere_area(n),
    )


@dataclass(frozen=True)
class Bubble:
    """Concentration scale and center of a single bubble."""

    delta: float
    xi: np.ndarray

    def __post_init__(self):
        if self.delta <= 0:
            raise TowerlabError(f"bubble scale must be positive, got {self.delta}")
        object.__setattr__(self, "xi", np.asarray(self.xi, dtype=float))


def eval_bubble(dims: SpaceDims, b: Bubble, x) -> np.ndarray | float:
    """alpha_n delta^{(n-2)/2} / (delta^2 + |x-xi|^2)^{(n-2)/2} at points x.

    `x` has the coordinate axis last; any leading batch shape is allowed.
    """
    x = np.asarray(x, dtype=float)
    r2 = np.sum((x - b.xi) ** 2, axis=-1)
    half = dims.m / 2.0
    return dims.alpha_n * b.delta**half / (b.delta**2 + r2) ** half


def eval_psi(dims: SpaceDims, b: Bubble, j: int, x) -> np.ndarray | float:
    """The two symmetry-respecting kernel elements of the linearization.

    j=0 is the scale derivative dU/d(delta); j=n the center derivative
    dU/d(xi_n). Other indices are rejected: in the even-symmetry class only
    these two span the kernel.
    """
    x = np.asarray(x, dtype=float)
    diff = x - b.xi
    r2 = np.sum(diff**2, axis=-1)
    n = dims.n
    if j == 0:
        return (
            dims.alpha_n
            * (dims.m / 2.0)
            * b.delta ** ((n - 4) / 2.0)
            * (r2 - b.delta**2)
            / (b.delta**2 + r2) ** (n / 2.0)
        )
    if j == n:
        return (
            dims.alpha_n
            * dims.m
            * b.delta ** (dims.m / 2.0)
            * diff[..., n - 1]
            / (b.delta**2 + r2) ** (n / 2.0)
        )
    raise TowerlabError(
        f"kernel index j={j} invalid: only j=0 and j=n={n} respect the symmetry class"
    )


# ---------------------------------------------------------------------------
# Green functions of the model domains
# ---------------------------------------------------------------------------

HALF_SPACE = "half_space"
BALL = "ball"


@dataclass(frozen=True)
class GreenKernel:
    """Dirichlet Green kernel data for a model domain.

    Supported kinds: the half-space {x_n > 0} and a ball of radius `radius`
    centered on the symmetry axis at height `center_z`.  The canonical ball is
    radius 1 centered at (0,...,0,1), so the origin lies on its boundary with
    inward normal e_n.
    """

    n: int
    kind: str
    center_z: float = 1.0
    radius: float = 1.0

    def __post_init__(self):
        if self.kind not in (HALF_SPACE, BALL):
            raise DomainError(f"no closed-form Green kernel for domain kind {self.kind!r}")
        if self.n < 4:
            raise UnsupportedDimensionError(f"n={self.n} < 4")

    @property
    def gamma_n(self) -> float:
        return 1.0 / ((self.n - 2) * sphere_area(self.n))

    def center(self) -> np.ndarray:
        c = np.zeros(self.n)
        c[-1] = self.center_z
        return c

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == HALF_SPACE:
            return x[..., -1] > 0
        return np.sum((x - self.center()) ** 2, axis=-1) < self.radius**2

    def boundary_distance(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == HALF_SPACE:
            return x[..., -1]
        return self.radius - np.sqrt(np.sum((x - self.center()) ** 2, axis=-1))

    def image_point(self, xi) -> np.ndarray:
        """Reflection (half-space) or Kelvin point (ball) of an interior center."""
        xi = np.asarray(xi, dtype=float)
        if self.kind == HALF_SPACE:
            star = xi.copy()
            star[..., -1] = -star[..., -1]
            return star
        c = self.center()
        v = xi - c
        s = np.sum(v**2, axis=-1, keepdims=True)
        if np.any(s == 0):
            raise DomainError("Kelvin image of the ball center is at infinity")
        return c + self.radius**2 * v / s


def _check_interior(g: GreenKernel, pts, name: str):
    inside = g.contains(pts)
    if not np.all(inside):
        raise DomainError(f"{name} outside the {g.kind} domain")


def _ball_Q(g: GreenKernel, x: np.ndarray, xi: np.ndarray) -> np.ndarray:
    # Q = |xi-c|^2 |x-c|^2 - 2 rho^2 (x-c).(xi-c) + rho^4, symmetric in (x, xi);
    # H = rho^{n-2} Q^{-(n-2)/2}.  Regular at xi = c.
    c = g.center()
    xc = x - c
    kc = xi - c
    return (
        np.sum(kc**2, axis=-1) * np.sum(xc**2, axis=-1)
        - 2.0 * g.radius**2 * np.sum(xc * kc, axis=-1)
        + g.radius**4
    )


def green_regular_part(g: GreenKernel, x, xi) -> np.ndarray | float:
    """Regular part H with G(x,xi) = gamma_n (|x-xi|^{2-n} - H(x,xi)).

    Exact image formula for the half-space, Kelvin formula for the ball.
    """
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    _check_interior(g, x, "x")
    _check_interior(g, xi, "xi")
    m = g.n - 2
    if g.kind == HALF_SPACE:
        star = g.image_point(xi)
        return np.sum((x - star) ** 2, axis=-1) ** (-m / 2.0)
    return g.radius**m * _ball_Q(g, x, xi) ** (-m / 2.0)


def grad_regular_part(g: GreenKernel, x, xi) -> np.ndarray:
    """Gradient of H with respect to the center xi."""
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    _check_interior(g, x, "x")
    _check_interior(g, xi, "xi")
    m = g.n - 2
    if g.kind == HALF_SPACE:
        w = x - g.image_point(xi)
        sw = w.copy()
        sw[..., -1] = -sw[..., -1]
        return m * np.sum(w**2, axis=-1, keepdims=True) ** (-g.n / 2.0) * sw
    c = g.center()
    Q = _ball_Q(g, x, xi)[..., None]
    dQ = 2.0 * np.sum((x - c) ** 2, axis=-1, keepdims=True) * (xi - c) - 2.0 * g.radius**2 * (x - c)
    return -(m / 2.0) * g.radius**m * Q ** (-g.n / 2.0) * dQ


def grad_regular_part_x(g: GreenKernel, x, xi) -> np.ndarray:
    """Gradient of H with respect to the observation point x."""
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    m = g.n - 2
    if g.kind == HALF_SPACE:
        w = x - g.image_point(xi)
        return -m * np.sum(w**2, axis=-1, keepdims=True) ** (-g.n / 2.0) * w
    c = g.center()
    Q = _ball_Q(g, x, xi)[..., None]
    dQ = 2.0 * np.sum((xi - c) ** 2, axis=-1, keepdims=True) * (x - c) - 2.0 * g.radius**2 * (xi - c)
    return -(m / 2.0) * g.radius**m * Q ** (-g.n / 2.0) * dQ


def projection_remainder_order(dims: SpaceDims, delta: float, depth: float) -> float:
    """Formal size delta^{(n+2)/2} / depth^n of the neglected projection term."""
    return delta ** ((dims.n + 2) / 2.0) / depth**dims.n


def project_bubble(g: GreenKernel, dims: SpaceDims, b: Bubble, x) -> np.ndarray | float:
    """Two-term approximate projection U - alpha_n delta^{(n-2)/2} H(., xi).

    This is the closed-form surrogate used inside the reduced energy and for
    ansatz seeding; the exact discrete projection is produced by the PDE lab.
    """
    depth = float(g.boundary_distance(b.xi))
    if depth <= 0:
        raise DegenerateCenterError("bubble center on or outside the boundary")
    corr = dims.alpha_n * b.delta ** (dims.m / 2.0) * green_regular_part(g, x, b.xi)
    return eval_bubble(dims, b, x) - corr


def project_psi(g: GreenKernel, dims: SpaceDims, b: Bubble, j: int, x) -> np.ndarray | float:
    """Two-term approximate projection of the kernel elements psi^0, psi^n."""
    depth = float(g.boundary_distance(b.xi))
    if depth <= 0:
        raise DegenerateCenterError("bubble center on or outside the boundary")
    n = dims.n
    if j == 0:
        corr = (
            dims.alpha_n
            * (dims.m / 2.0)
            * b.delta ** ((n - 4) / 2.0)
            * green_regular_part(g, x, b.xi)
        )
    elif j == n:
        corr = dims.alpha_n * b.delta ** (dims.m / 2.0) * grad_regular_part(g, x, b.xi)[..., -1]
    else:
        raise TowerlabError(f"kernel index j={j} invalid: only j=0 and j=n={n} exist")
    return eval_psi(dims, b, j, x) - corr


# ---------------------------------------------------------------------------
# Axisymmetric profile evaluators (vectorized over cylindrical (r, z) arrays)
# ---------------------------------------------------------------------------

def bubble_rz(dims: SpaceDims, delta: float, zc: float, r, z):
    """Bubble centered on the axis at height zc, as a function of (r, z)."""
    r = np.asarray(r, dtype=float)
    z = np.asarray(z, dtype=float)
    half = dims.m / 2.0
    s2 = r**2 + (z - zc) ** 2
    return dims.alpha_n * delta**half / (delta**2 + s2) ** half


def bubble_grad_rz(dims: SpaceDims, delta: float, zc: float, r, z):
    """(d/dr, d/dz) of the on-axis bubble."""
    r = np.asarray(r, dtype=float)
    z = np.asarray(z, dtype=float)
    half = dims.m / 2.0
    s2 = r**2 + (z - zc) ** 2
    common = -dims.m * dims.alpha_n * delta**half / (delta**2 + s2) ** (half + 1.0)
    return common * r, common * (z - zc)


def psi_rz(dims: SpaceDims, delta: float, zc: float, j: int, r, z):
    """Kernel elements psi^0, psi^n for an on-axis bubble, in (r, z)."""
    r = np.asarray(r, dtype=float)
    z = np.asarray(z, dtype=float)
    n = dims.n
    s2 = r**2 + (z - zc) ** 2
    if j == 0:
        return (
            dims.alpha_n
            * (dims.m / 2.0)
            * delta ** ((n - 4) / 2.0)
            * (s2 - delta**2)
            / (delta**2 + s2) ** (n / 2.0)
        )
    if j == n:
        return (
            dims.alpha_n * dims.m * delta ** (dims.m / 2.0) * (z - zc) / (delta**2 + s2) ** (n / 2.0)
        )
    raise TowerlabError(f"kernel index j={j} invalid")


def regular_part_rz(g: GreenKernel, zc: float, r, z):
    """H(x, xi) for an on-axis center xi = (0,...,0,zc), in (r, z)."""
    r = np.asarray(r, dtype=float)
    z = np.asarray(z, dtype=float)
    m = g.n - 2
    if g.kind == HALF_SPACE:
        return (r**2 + (z + zc) ** 2) ** (-m / 2.0)
    b = zc - g.center_z
    xc2 = r**2 + (z - g.center_z) ** 2
    Q = b**2 * xc2 - 2.0 * g.radius**2 * (z - g.center_z) * b + g.radius**4
    return g.radius**m * Q ** (-m / 2.0)


def regular_part_grad_rz(g: GreenKernel, zc: float, r, z):
    """(d/dr, d/dz) in x of H(x, xi) for an on-axis center."""
    r = np.asarray(r, dtype=float)
    z = np.asarray(z, dtype=float)
    m = g.n - 2
    if g.kind == HALF_SPACE:
        q = r**2 + (z + zc) ** 2
        common = -m * q ** (-(m + 2) / 2.0)
        return common * r, common * (z + zc)
    b = zc - g.center_z
    xc2 = r**2 + (z - g.center_z) ** 2
    Q = b**2 * xc2 - 2.0 * g.radius**2 * (z - g.center_z) * b + g.radius**4
    common = -(m / 2.0) * g.radius**m * Q ** (-(m + 2) / 2.0)
    return common * (2.0 * b**2 * r), common * (2.0 * b**2 * (z - g.center_z) - 2.0 * g.radius**2 * b)


def regular_part_dzc_rz(g: GreenKernel, zc: float, r, z):
    """d/d(zc) of H(x, xi) for an on-axis center (the xi_n derivative)."""
    r = np.asarray(r, dtype=float)
    z = np.asarray(z, dtype=float)
    m = g.n - 2
    if g.kind == HALF_SPACE:
        q = r**2 + (z + zc) ** 2
        return -m * q ** (-(m + 2) / 2.0) * (z + zc)
    b = zc - g.center_z
    xc2 = r**2 + (z - g.center_z) ** 2
    Q = b**2 * xc2 - 2.0 * g.radius**2 * (z - g.center_z) * b + g.radius**4
    dQ = 2.0 * b * xc2 - 2.0 * g.radius**2 * (z - g.center_z)
    return -(m / 2.0) * g.radius**m * Q ** (-(m + 2) / 2.0) * dQ


# ---------------------------------------------------------------------------
# Lift to the torus-like domain
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LiftSpec:
    """Block structure (kappa_1, ..., kappa_m) of the rotationally invariant lift.

    A point Y in R^N splits into m blocks y^i of size kappa_i + 1 followed by
    the shared coordinates z; the reduced point is (|y^1|, ..., |y^m|, z).
    """

    kappas: tuple
    N: int

    def __post_init__(self):
        kappas = tuple(int(k) for k in self.kappas)
        object.__setattr__(self, "kappas", kappas)
        if any(k < 1 for k in kappas):
            raise TowerlabError("all block exponents kappa_i must be >= 1")
        total = sum(kappas)
        if total > self.N - 3:
            raise TowerlabError(f"sum(kappa)={total} exceeds N-3={self.N - 3}")
        if self.reduced_dim < 4:
            raise UnsupportedDimensionError(
                f"reduced dimension n={self.reduced_dim} < 4 is unsupported"
            )

    @property
    def reduced_dim(self) -> int:
        return self.N - sum(self.kappas)

    def reduce_point(self, Y) -> np.ndarray:
        Y = np.asarray(Y, dtype=float)
        if Y.shape[-1] != self.N:
            raise TowerlabError(f"expected point in R^{self.N}, got shape {Y.shape}")
        parts = []
        pos = 0
        for k in self.kappas:
            block = Y[..., pos : pos + k + 1]
            parts.append(np.sqrt(np.sum(block**2, axis=-1))[..., None])
            pos += k + 1
        parts.append(Y[..., pos:])
        return np.concatenate(parts, axis=-1)


def lift_evaluate(u, spec: LiftSpec, Y, domain=None):
    """Evaluate the lifted function v(Y) = u(|y^1|, ..., |y^m|, z).

    `u` maps reduced points to scalars; `domain`, when given, must expose
    `contains` and is used to reject projected points outside the reduced
    domain.
    """
    x = spec.reduce_point(Y)
    if domain is not None and not np.all(domain.contains(x)):
        raise DomainError("projected point lies outside the reduced domain")
    return u(x)
