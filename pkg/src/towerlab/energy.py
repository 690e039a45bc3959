"""Reduced energy of the tower: expansion constants, the function Phi of the
reduced coordinates (t, d, s), its analytic derivatives, the min-max critical
point, and the full asymptotic right-hand side of the energy expansion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .analytic import SpaceDims, dims_constants
from .errors import AdmissibleSetError, NoConvergenceError, TowerlabError
from .quadrature import integrate_radial
from .weights import WeightModel


@dataclass(frozen=True)
class TowerConfig:
    """Reduced coordinates of a k-tower.

    d_i are the rescaled concentration amplitudes, t the rescaled distance of
    the cluster from the boundary, s_i the relative on-axis offsets (the last
    one is identically 0 and not stored).  epsilon may be None while the
    configuration is used purely as a point of the reduced energy.
    """

    k: int
    d: tuple
    t: float
    s: tuple = ()
    epsilon: float | None = None

    def __post_init__(self):
        d = tuple(float(v) for v in np.atleast_1d(self.d))
        s = tuple(float(v) for v in np.atleast_1d(self.s)) if len(np.atleast_1d(self.s)) else ()
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "s", s)
        if self.k < 1:
            raise TowerlabError("tower height k must be >= 1")
        if len(d) != self.k:
            raise AdmissibleSetError(f"need {self.k} amplitudes d, got {len(d)}")
        if len(s) != self.k - 1:
            raise AdmissibleSetError(f"need {self.k - 1} offsets s, got {len(s)}")
        if any(v <= 0 for v in d):
            raise AdmissibleSetError(f"all d_i must be positive, got {d}")
        if self.t <= 0:
            raise AdmissibleSetError(f"t must be positive, got {self.t}")
        if self.epsilon is not None and self.epsilon < 0:
            raise AdmissibleSetError(f"epsilon must be nonnegative, got {self.epsilon}")

    def with_epsilon(self, epsilon: float) -> "TowerConfig":
        return replace(self, epsilon=float(epsilon))

    def s_full(self) -> np.ndarray:
        """Offsets including the pinned s_k = 0."""
        return np.array(self.s + (0.0,))

    def deltas(self, dims: SpaceDims) -> np.ndarray:
        """Concentration scales delta_i = eps^{(n-1+2(i-1))/(n-2)} d_i."""
        if self.epsilon is None:
            raise TowerlabError("epsilon is unset on this configuration")
        expo = np.array([dims.concentration_exponent(i) for i in range(1, self.k + 1)])
        return self.epsilon**expo * np.asarray(self.d)

    def centers_z(self, dims: SpaceDims) -> np.ndarray:
        """On-axis center heights xi_i = eps t + delta_i s_i."""
        if self.epsilon is None:
            raise TowerlabError("epsilon is unset on this configuration")
        return self.epsilon * self.t + self.deltas(dims) * self.s_full()

    def coords(self) -> np.ndarray:
        """Flat coordinate vector (t, d_1..d_k, s_1..s_{k-1})."""
        return np.concatenate([[self.t], self.d, self.s])

    @staticmethod
    def from_coords(k: int, x, epsilon: float | None = None) -> "TowerConfig":
        x = np.asarray(x, dtype=float)
        return TowerConfig(k=k, d=tuple(x[1 : 1 + k]), t=float(x[0]), s=tuple(x[1 + k :]), epsilon=epsilon)


def default_init(k: int) -> TowerConfig:
    """Symmetric slice seed: t = 1, d_i = 2^{-i}, s = 0."""
    return TowerConfig(k=k, d=tuple(2.0 ** -(i + 1) for i in range(k)), t=1.0, s=(0.0,) * (k - 1))


@dataclass(frozen=True)
class ExpansionConstants:
    """Constants a_1..a_3 and the expansion coefficients c_1..c_7."""

    n: int
    k: int
    a1: float
    a2: float
    a3: float
    c1: float
    c2: float
    c3: float
    c4: float
    c5: float
    c6: float
    c7: float

    def as_dict(self) -> dict:
        return {
            name: getattr(self, name)
            for name in ("a1", "a2", "a3", "c1", "c2", "c3", "c4", "c5", "c6", "c7")
        }


def _alpha_power(dims: SpaceDims) -> float:
    # alpha_n^{p+1} = alpha_n^{2n/(n-2)}
    return dims.alpha_n ** (2.0 * dims.n / (dims.n - 2))


def a1_closed_form(dims: SpaceDims) -> float:
    n = dims.n
    return _alpha_power(dims) * math.pi ** (n / 2.0) * math.gamma(n / 2.0) / math.gamma(n)


def a2_closed_form(dims: SpaceDims) -> float:
    n = dims.n
    return _alpha_power(dims) * math.pi ** (n / 2.0) / math.gamma((n + 2) / 2.0)


def a1_quadrature(dims: SpaceDims, tol: float = 1e-10) -> float:
    n = dims.n
    res = integrate_radial(lambda r: r ** (n - 1) / (1.0 + r * r) ** n, tol_abs=tol, tol_rel=tol)
    return _alpha_power(dims) * dims.sphere_area * res.value


def a2_quadrature(dims: SpaceDims, tol: float = 1e-10) -> float:
    n = dims.n
    res = integrate_radial(
        lambda r: r ** (n - 1) / (1.0 + r * r) ** ((n + 2) / 2.0), tol_abs=tol, tol_rel=tol
    )
    return _alpha_power(dims) * dims.sphere_area * res.value


def a3_quadrature(dims: SpaceDims, tol: float = 1e-10) -> float:
    """Log-weighted integral; no elementary closed form is used for it."""
    n, al = dims.n, dims.alpha_n
    half = dims.m / 2.0

    def f(r):
        q = 1.0 + r * r
        return r ** (n - 1) / q**n * (math.log(al) - half * math.log1p(r * r))

    res = integrate_radial(f, tol_abs=tol, tol_rel=tol)
    return _alpha_power(dims) * dims.sphere_area * res.value


def expansion_constants(n: int, k: int, check: bool = False, tol: float = 1e-10) -> ExpansionConstants:
    """Assemble the constants; with check=True every closed form is verified
    against the radial quadrature oracle to 1e-8 relative."""
    if k < 1:
        raise TowerlabError("k must be >= 1")
    dims = dims_constants(n)
    p = dims.p
    a1 = a1_closed_form(dims)
    a2 = a2_closed_form(dims)
    a3 = a3_quadrature(dims, tol=tol)
    if check:
        for closed, byquad, name in (
            (a1, a1_quadrature(dims), "a1"),
            (a2, a2_quadrature(dims), "a2"),
        ):
            if abs(closed - byquad) > 1e-8 * abs(closed):
                raise TowerlabError(f"constant {name} failed its quadrature cross-check")
    c6 = _alpha_power(dims) * dims.ball_vol
    ec = ExpansionConstants(
        n=n,
        k=k,
        a1=a1,
        a2=a2,
        a3=a3,
        c1=k * a1 / n,
        c2=k * a3 / (p + 1) - k * a1 / (p + 1) ** 2,
        c3=k * (n + k - 2) * a1 / (2 * (p + 1)),
        c4=k * a1 / n,
        c5=a2 / 2.0,
        c6=c6,
        c7=dims.m**2 * a1 / (4.0 * n),
    )
    if min(ec.c4, ec.c5, ec.c6, ec.c7) <= 0:
        raise TowerlabError("expansion coefficients of Phi must be positive")
    return ec


# ---------------------------------------------------------------------------
# The reduced energy Phi and its derivatives
# ---------------------------------------------------------------------------

def _check_admissible(cfg: TowerConfig):
    if cfg.t <= 0 or any(v <= 0 for v in cfg.d):
        raise AdmissibleSetError("configuration outside the admissible set")


def phi(cfg: TowerConfig, w: WeightModel, ec: ExpansionConstants) -> float:
    """Phi(d, t, s) = dnu_a c4 t + a0 [ c5 (d1/2t)^{n-2}
    + c6 sum (d_{i+1}/d_i)^{(n-2)/2} (1+s_i^2)^{-(n-2)/2} ] - a0 c7 sum log d_i."""
    _check_admissible(cfg)
    if cfg.k != ec.k:
        raise TowerlabError(f"constants were built for k={ec.k}, got k={cfg.k}")
    m = ec.n - 2
    a0 = w.a_at_xi0
    d = np.asarray(cfg.d)
    s = np.asarray(cfg.s)
    val = w.dnu_a * ec.c4 * cfg.t + a0 * ec.c5 * (d[0] / (2.0 * cfg.t)) ** m
    if cfg.k > 1:
        ratios = (d[1:] / d[:-1]) ** (m / 2.0)
        val += a0 * ec.c6 * float(np.sum(ratios * (1.0 + s**2) ** (-m / 2.0)))
    val -= a0 * ec.c7 * float(np.sum(np.log(d)))
    return float(val)


def grad_phi(cfg: TowerConfig, w: WeightModel, ec: ExpansionConstants) -> np.ndarray:
    """Gradient in the order (t, d_1..d_k, s_1..s_{k-1})."""
    _check_admissible(cfg)
    m = ec.n - 2
    a0 = w.a_at_xi0
    k = cfg.k
    d = np.asarray(cfg.d)
    s = np.asarray(cfg.s)
    t = cfg.t
    P = a0 * ec.c5 * (d[0] / (2.0 * t)) ** m
    Q = a0 * ec.c6 * (d[1:] / d[:-1]) ** (m / 2.0) * (1.0 + s**2) ** (-m / 2.0) if k > 1 else np.zeros(0)

    g = np.zeros(2 * k)
    g[0] = w.dnu_a * ec.c4 - m * P / t
    for j in range(k):
        gj = -a0 * ec.c7 / d[j]
        if j == 0:
            gj += m * P / d[0]
        if j <= k - 2:
            gj += -(m / 2.0) * Q[j] / d[j]
        if j >= 1:
            gj += (m / 2.0) * Q[j - 1] / d[j]
        g[1 + j] = gj
    for i in range(k - 1):
        # d/ds of (1+s^2)^{-m/2} contributes -m s/(1+s^2) relative to Q
        g[1 + k + i] = -m * s[i] / (1.0 + s[i] ** 2) * Q[i]
    return g


def hess_phi(cfg: TowerConfig, w: WeightModel, ec: ExpansionConstants) -> np.ndarray:
    """Analytic Hessian, same coordinate order as grad_phi."""
    _check_admissible(cfg)
    m = ec.n - 2
    a0 = w.a_at_xi0
    k = cfg.k
    d = np.asarray(cfg.d)
    s = np.asarray(cfg.s)
    t = cfg.t
    P = a0 * ec.c5 * (d[0] / (2.0 * t)) ** m
    Q = a0 * ec.c6 * (d[1:] / d[:-1]) ** (m / 2.0) * (1.0 + s**2) ** (-m / 2.0) if k > 1 else np.zeros(0)

    H = np.zeros((2 * k, 2 * k))
    H[0, 0] = m * (m + 1) * P / t**2
    H[0, 1] = H[1, 0] = -(m**2) * P / (t * d[0])
    for j in range(k):
        jj = 1 + j
        h = a0 * ec.c7 / d[j] ** 2
        if j == 0:
            h += m * (m - 1) * P / d[0] ** 2
        if j <= k - 2:
            h += (m / 2.0) * (m / 2.0 + 1.0) * Q[j] / d[j] ** 2
        if j >= 1:
            h += (m / 2.0) * (m / 2.0 - 1.0) * Q[j - 1] / d[j] ** 2
        H[jj, jj] = h
    for j in range(k - 1):
        cross = -((m / 2.0) ** 2) * Q[j] / (d[j] * d[j + 1])
        H[1 + j, 2 + j] = H[2 + j, 1 + j] = cross
    for i in range(k - 1):
        si = s[i]
        u = 1.0 + si**2
        ii = 1 + k + i
        # second s-derivative of (1+s^2)^{-m/2} relative to that factor
        H[ii, ii] = Q[i] * (-m / u + m * (m + 2) * si**2 / u**2)
        ds_rel = -m * si / u
        H[ii, 1 + i] = H[1 + i, ii] = ds_rel * (-(m / 2.0)) * Q[i] / d[i]
        H[ii, 2 + i] = H[2 + i, ii] = ds_rel * (m / 2.0) * Q[i] / d[i + 1]
    return H


@dataclass(frozen=True)
class CriticalPoint:
    config: TowerConfig            # epsilon left unset
    phi_value: float
    gradient_norm: float
    hessian_inertia: tuple         # (positive, negative, zero) eigenvalue counts
    iterations: int
    is_minmax: bool


def hessian_inertia(H: np.ndarray, rel_tol: float = 1e-8) -> tuple:
    ev = np.linalg.eigvalsh(H)
    scale = max(np.max(np.abs(ev)), 1e-300)
    pos = int(np.sum(ev > rel_tol * scale))
    neg = int(np.sum(ev < -rel_tol * scale))
    return (pos, neg, len(ev) - pos - neg)


def find_critical_point(
    n: int,
    k: int,
    w: WeightModel,
    init: TowerConfig | None = None,
    gtol: float = 1e-10,
    max_iter: int = 200,
    ec: ExpansionConstants | None = None,
) -> CriticalPoint:
    """Newton search for the min-max point of Phi, seeded on the s = 0 slice.

    The iteration runs in (log t, log d, s) coordinates, which keeps iterates
    inside the admissible set; the reported Hessian inertia is computed in the
    original coordinates (identical at a critical point).
    """
    ec = ec or expansion_constants(n, k)
    cfg = init or default_init(k)
    if cfg.k != k:
        raise TowerlabError("init has the wrong tower height")

    def to_log(x):
        y = x.copy()
        y[: 1 + k] = np.log(x[: 1 + k])
        return y

    def from_log(y):
        x = y.copy()
        x[: 1 + k] = np.exp(y[: 1 + k])
        return x

    y = to_log(cfg.coords())
    trace = []
    for it in range(max_iter):
        x = from_log(y)
        cfg_it = TowerConfig.from_coords(k, x)
        g = grad_phi(cfg_it, w, ec)
        gnorm = float(np.linalg.norm(g))
        trace.append((it, gnorm, tuple(x)))
        if gnorm < gtol:
            H = hess_phi(cfg_it, w, ec)
            inertia = hessian_inertia(H)
            return CriticalPoint(
                config=cfg_it,
                phi_value=phi(cfg_it, w, ec),
                gradient_norm=gnorm,
                hessian_inertia=inertia,
                iterations=it,
                is_minmax=inertia == (k + 1, k - 1, 0),
            )
        H = hess_phi(cfg_it, w, ec)
        # chain rule to log coordinates: J = diag(x on the log block, 1 on s),
        # plus the diagonal term g_i x_i from d^2 x / dy^2 = x
        J = np.ones(2 * k)
        J[: 1 + k] = x[: 1 + k]
        g_log = g * J
        H_log = H * np.outer(J, J)
        H_log[np.diag_indices(2 * k)] += np.concatenate([g[: 1 + k] * x[: 1 + k], np.zeros(k - 1)])
        try:
            step = np.linalg.solve(H_log, -g_log)
        except np.linalg.LinAlgError:
            step = -g_log
        cap = 2.0
        norm = np.linalg.norm(step)
        if norm > cap:
            step *= cap / norm
        lam = 1.0
        for _ in range(40):
            x_try = from_log(y + lam * step)
            try:
                g_try = grad_phi(TowerConfig.from_coords(k, x_try), w, ec)
            except AdmissibleSetError:
                lam *= 0.5
                continue
            if np.linalg.norm(g_try) < gnorm or lam < 1e-6:
                break
            lam *= 0.5
        y = y + lam * step
    raise NoConvergenceError(
        f"Newton on grad Phi failed to reach {gtol} in {max_iter} iterations", trace=trace
    )


def expansion_rhs(epsilon: float, cfg: TowerConfig, w: WeightModel, ec: ExpansionConstants) -> float:
    """a(xi0) [c1 + c2 eps - c3 eps log eps] + eps Phi(d, t); the o(eps)
    remainder is intentionally not modeled."""
    if epsilon <= 0:
        raise TowerlabError("epsilon must be positive")
    a0 = w.a_at_xi0
    return float(
        a0 * (ec.c1 + ec.c2 * epsilon - ec.c3 * epsilon * math.log(epsilon))
        + epsilon * phi(cfg, w, ec)
    )
