"""Weight coefficient a(x): canonical families and validation of the standing
assumptions (positivity bounds, positive inward normal derivative at the
boundary concentration point, evenness in the tangential coordinates).

The concentration point is fixed at the origin with inward normal e_n.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import TowerlabError


@dataclass(frozen=True)
class WeightModel:
    """Weight a(x) with the data the reduced energy and the PDE lab consume."""

    n: int
    eval: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    a_at_xi0: float
    dnu_a: float
    bounds: tuple
    kind: str = "custom"
    axisymmetric: bool = False
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        lo, hi = self.bounds
        if not (0 < lo <= hi):
            raise TowerlabError(f"weight bounds must satisfy 0 < a_lo <= a_hi, got {self.bounds}")
        if self.dnu_a <= 0:
            raise TowerlabError(
                "weight rejected: the inward normal derivative at the concentration "
                f"point must be positive, got {self.dnu_a}"
            )

    def eval_rz(self, r, z):
        """Evaluate on cylindrical coordinates; only valid for axisymmetric weights."""
        if not self.axisymmetric:
            raise TowerlabError(
                "weight is not axisymmetric about the x_n axis; grid runs require that"
            )
        r = np.asarray(r, dtype=float)
        z = np.asarray(z, dtype=float)
        x = np.zeros(np.broadcast(r, z).shape + (self.n,))
        x[..., 0] = r
        x[..., -1] = z
        return self.eval(x)

    def check_even(self, rng=None, samples: int = 64, box: float = 1.0, tol: float = 1e-12) -> bool:
        """Sampled evenness check in each tangential coordinate."""
        rng = rng or np.random.default_rng(0)
        pts = rng.uniform(-box, box, size=(samples, self.n))
        pts[:, -1] = np.abs(pts[:, -1])
        a0 = self.eval(pts)
        for i in range(self.n - 1):
            flipped = pts.copy()
            flipped[:, i] = -flipped[:, i]
            if not np.allclose(a0, self.eval(flipped), rtol=tol, atol=tol):
                return False
        return True

    def check_bounds(self, pts, tol: float = 1e-12) -> bool:
        vals = self.eval(np.asarray(pts, dtype=float))
        lo, hi = self.bounds
        return bool(np.all(vals >= lo - tol) and np.all(vals <= hi + tol))


def affine_weight(n: int, a0: float = 1.0, beta: float = 1.0, z_extent: float = 2.0) -> WeightModel:
    """Canonical family a(x) = a0 + beta x_n with beta > 0.

    `z_extent` bounds the x_n range of the intended domain so the positivity
    bounds are exact there.
    """
    if beta <= 0:
        raise TowerlabError("affine weight needs beta > 0 for a positive normal derivative")
    if a0 <= 0:
        raise TowerlabError("affine weight needs a0 > 0 for positivity")

    def _eval(x):
        x = np.asarray(x, dtype=float)
        return a0 + beta * x[..., -1]

    def _grad(x):
        x = np.asarray(x, dtype=float)
        g = np.zeros_like(x)
        g[..., -1] = beta
        return g

    return WeightModel(
        n=n,
        eval=_eval,
        grad=_grad,
        a_at_xi0=a0,
        dnu_a=beta,
        bounds=(a0, a0 + beta * z_extent),
        kind="affine",
        axisymmetric=True,
        params={"a0": a0, "beta": beta},
    )


def product_weight(
    n: int,
    kappas,
    offsets,
    z_extent: float = 2.0,
) -> WeightModel:
    """Product family prod_j (x_n + offset_j)^{kappa_j}.

    This realizes the weight arising from the rotationally invariant lift once
    the product direction is aligned with the inward normal; putting every
    factor on x_n keeps the tangential evenness and the axisymmetry that the
    grid runs require, while offsets > 0 keep the weight positive up to the
    boundary.
    """
    kappas = tuple(float(k) for k in np.atleast_1d(kappas))
    offsets = tuple(float(o) for o in np.atleast_1d(offsets))
    if len(kappas) != len(offsets):
        raise TowerlabError("kappas and offsets must have equal length")
    if any(o <= 0 for o in offsets):
        raise TowerlabError("product weight needs positive offsets for positivity at x_n = 0")
    if any(k <= 0 for k in kappas):
        raise TowerlabError("product weight needs positive exponents")

    def _eval(x):
        x = np.asarray(x, dtype=float)
        z = x[..., -1]
        out = np.ones_like(z)
        for k, o in zip(kappas, offsets):
            out = out * (z + o) ** k
        return out

    def _logderiv(z):
        out = np.zeros_like(z)
        for k, o in zip(kappas, offsets):
            out = out + k / (z + o)
        return out

    def _grad(x):
        x = np.asarray(x, dtype=float)
        g = np.zeros_like(x)
        g[..., -1] = _eval(x) * _logderiv(x[..., -1])
        return g

    a0 = float(np.prod([o**k for k, o in zip(kappas, offsets)]))
    ahi = float(np.prod([(z_extent + o) ** k for k, o in zip(kappas, offsets)]))
    dnu = a0 * sum(k / o for k, o in zip(kappas, offsets))
    return WeightModel(
        n=n,
        eval=_eval,
        grad=_grad,
        a_at_xi0=a0,
        dnu_a=dnu,
        bounds=(a0, ahi),
        kind="product",
        axisymmetric=True,
        params={"kappas": kappas, "offsets": offsets},
    )
