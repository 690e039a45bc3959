"""Discrete construction of the tower solutions: exact grid projections, the
weighted Dirichlet solve, the alternating ansatz, damped Newton, continuation
in epsilon, kernel projections, the ansatz error norm, and concentration-rate
fitting from solved fields.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .analytic import SpaceDims, bubble_rz, psi_rz
from .energy import TowerConfig
from .errors import (
    DomainError,
    IllConditionedKernelError,
    NoConvergenceError,
    SolverError,
    StructureLostError,
    TowerlabError,
)
from .grid import AxisymGrid, BallDomain, GradingSpec, build_grid
from .stats import rate_regression
from .weights import WeightModel


@dataclass
class Field:
    """Nodal values on a grid, plus bookkeeping metadata."""

    grid: AxisymGrid
    values: np.ndarray
    epsilon: float | None = None
    description: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise TowerlabError("field shape does not match its grid")
        if not np.all(np.isfinite(self.values)):
            raise TowerlabError("field contains non-finite values")

    def copy(self) -> "Field":
        return Field(self.grid, self.values.copy(), self.epsilon, self.description)


def export_field_csv(f: Field, path, k: int | None = None, n: int | None = None):
    """Write `r,z,value` rows; header records epsilon, k and n."""
    grid = f.grid
    eps = f.epsilon if f.epsilon is not None else float("nan")
    lines = [f"# epsilon={eps:.17g} k={k if k is not None else 0} n={n if n is not None else grid.n}"]
    lines.append("r,z,value")
    R, Z, V = grid.R.ravel(), grid.Z.ravel(), f.values.ravel()
    for r, z, v in zip(R, Z, V):
        lines.append(f"{r:.17g},{z:.17g},{v:.17g}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Assembly and factorizations
# ---------------------------------------------------------------------------

def assemble_stiffness(grid: AxisymGrid, a_face_u=None, a_face_v=None) -> sp.csr_matrix:
    """Finite-volume stiffness matrix over all nodes (no boundary rows removed)."""
    nu, nv = grid.shape
    Ku = grid.face_u * (1.0 if a_face_u is None else a_face_u)
    Kv = grid.face_v * (1.0 if a_face_v is None else a_face_v)

    rows, cols, vals = [], [], []

    Iu, Ju = np.meshgrid(np.arange(nu - 1), np.arange(nv), indexing="ij")
    p = (Iu * nv + Ju).ravel()
    q = ((Iu + 1) * nv + Ju).ravel()
    k = Ku.ravel()
    rows += [p, q, p, q]
    cols += [p, q, q, p]
    vals += [k, k, -k, -k]

    Iv, Jv = np.meshgrid(np.arange(nu), np.arange(nv - 1), indexing="ij")
    p = (Iv * nv + Jv).ravel()
    q = (Iv * nv + Jv + 1).ravel()
    k = Kv.ravel()
    rows += [p, q, p, q]
    cols += [p, q, q, p]
    vals += [k, k, -k, -k]

    N = nu * nv
    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N)
    )
    return A.tocsr()


class _Factor:
    """Sparse LU with symmetric diagonal equilibration (the graded measures
    span many orders of magnitude).  `indefinite` scales by |diagonal| so the
    same machinery serves the corrector Jacobians."""

    def __init__(self, A: sp.spmatrix, indefinite: bool = False):
        self.A = A.tocsr()
        d = np.asarray(self.A.diagonal())
        if indefinite:
            d = np.abs(d)
        if np.any(d <= 0):
            raise SolverError("nonpositive diagonal in stiffness block")
        self.s = 1.0 / np.sqrt(d)
        S = sp.diags(self.s)
        self.lu = spla.splu((S @ self.A @ S).tocsc())

    def solve(self, b: np.ndarray, refine: int = 1) -> np.ndarray:
        x = self.s * self.lu.solve(self.s * b)
        for _ in range(refine):
            r = b - self.A @ x
            x = x + self.s * self.lu.solve(self.s * r)
        return x


class Operators:
    """Per-(grid, weight) discrete operators shared by every solve."""

    def __init__(self, grid: AxisymGrid, weight: WeightModel):
        self.grid = grid
        self.weight = weight
        self.m = grid.measure.ravel()
        self.act = (~grid.dirichlet).ravel()
        self.a_node = weight.eval_rz(grid.R, grid.Z).ravel()
        self.am = self.m * self.a_node
        self.A0 = assemble_stiffness(grid)
        au = weight.eval_rz(*grid.face_u_mid)
        av = weight.eval_rz(*grid.face_v_mid)
        self.Aw = assemble_stiffness(grid, au, av)
        self.A0_II = self.A0[self.act][:, self.act].tocsr()
        self.Aw_II = self.Aw[self.act][:, self.act].tocsr()
        self._f0 = None
        self._fw = None

    @property
    def lu0(self) -> _Factor:
        if self._f0 is None:
            self._f0 = _Factor(self.A0_II)
        return self._f0

    @property
    def luw(self) -> _Factor:
        if self._fw is None:
            self._fw = _Factor(self.Aw_II)
        return self._fw

    def embed(self, x_int: np.ndarray) -> np.ndarray:
        full = np.zeros(self.grid.n_nodes)
        full[self.act] = x_int
        return full

    def norm_a(self, full: np.ndarray) -> float:
        """Weighted gradient norm sqrt(int a |grad u|^2)."""
        return math.sqrt(max(0.0, float(full @ (self.Aw @ full))))

    def norm_plain(self, full: np.ndarray) -> float:
        return math.sqrt(max(0.0, float(full @ (self.A0 @ full))))

    def dual_norm(self, r_int: np.ndarray) -> float:
        return math.sqrt(max(0.0, float(r_int @ self.luw.solve(r_int))))

    def solve_plain(self, rhs_full: np.ndarray) -> np.ndarray:
        """A0 u = rhs with zero Dirichlet data; rhs given as nodal load vector."""
        return self.embed(self.lu0.solve(rhs_full[self.act]))

    def solve_weighted(self, rhs_full: np.ndarray) -> np.ndarray:
        return self.embed(self.luw.solve(rhs_full[self.act]))

    def solve_plain_dirichlet(self, boundary_vals_full: np.ndarray) -> np.ndarray:
        """Discrete harmonic extension: A0 u = 0 inside, u = g on the boundary."""
        g = np.zeros(self.grid.n_nodes)
        bnd = ~self.act
        g[bnd] = boundary_vals_full[bnd]
        rhs = -(self.A0 @ g)
        u = g.copy()
        u[self.act] = self.lu0.solve(rhs[self.act])
        return u


@dataclass
class DiscreteProblem:
    """The discretized weighted almost-critical problem on one grid."""

    grid: AxisymGrid
    weight: WeightModel
    epsilon: float
    dims: SpaceDims
    exponent_override: float | None = None  # replaces |u|^{p-1-eps} u by |u|^{q-1} u
    ops: Operators = field(init=False, repr=False)

    def __post_init__(self):
        n = self.dims.n
        if self.grid.n != n:
            raise TowerlabError("grid dimension does not match problem dimension")
        if not 0 <= self.epsilon < 4.0 / (n - 2):
            raise TowerlabError(
                f"epsilon={self.epsilon} outside [0, 4/(n-2)) = [0, {4.0 / (n - 2)})"
            )
        self.ops = Operators(self.grid, self.weight)

    @property
    def exponent(self) -> float:
        """The power q in the nonlinearity |u|^{q-1} u."""
        if self.exponent_override is not None:
            return self.exponent_override
        return self.dims.p - self.epsilon

    def nonlinearity(self, u: np.ndarray) -> np.ndarray:
        q = self.exponent
        au = np.abs(u)
        return np.where(au == 0.0, 0.0, au ** (q - 1.0) * u)

    def nonlinearity_prime(self, u: np.ndarray) -> np.ndarray:
        q = self.exponent
        au = np.maximum(np.abs(u), 1e-300)
        return q * au ** (q - 1.0)

    def nonlinearity_primitive(self, u: np.ndarray) -> np.ndarray:
        q = self.exponent
        return np.abs(u) ** (q + 1.0) / (q + 1.0)


def solve_istar(prob: DiscreteProblem, source) -> Field:
    """Adjoint-embedding solve: -div(a grad u) = a * source, u = 0 on the boundary."""
    src = source.values if isinstance(source, Field) else np.asarray(source, dtype=float)
    rhs = prob.ops.am * src.ravel()
    u = prob.ops.solve_weighted(rhs)
    r = rhs[prob.ops.act] - (prob.ops.Aw @ u)[prob.ops.act]
    scale = float(np.linalg.norm(rhs[prob.ops.act]))
    for _ in range(2):
        if scale == 0 or np.linalg.norm(r) <= 1e-12 * scale:
            break
        u[prob.ops.act] += prob.ops.luw.solve(r)
        r = rhs[prob.ops.act] - (prob.ops.Aw @ u)[prob.ops.act]
    if scale > 0 and np.linalg.norm(r) > 1e-10 * scale:
        raise SolverError("weighted Dirichlet solve failed to reach 1e-12 relative residual")
    return Field(prob.grid, u.reshape(prob.grid.shape), prob.epsilon, "istar")


def _check_center_interior(prob: DiscreteProblem, zc: float):
    dom = prob.grid.domain
    if not bool(np.all(dom.contains_rz(np.array([0.0]), np.array([zc])))):
        raise DomainError(f"bubble center (0, {zc}) lies outside the {dom.kind} domain")


def assemble_projections(prob: DiscreteProblem, cfg: TowerConfig) -> list[Field]:
    """Exact discrete projections PU_i: solve Delta PU = Delta U with zero data,
    i.e. A0 PU = m U_i^p using the bubble equation."""
    dims = prob.dims
    deltas = cfg.deltas(dims)
    centers = cfg.centers_z(dims)
    out = []
    for i, (dl, zc) in enumerate(zip(deltas, centers), start=1):
        _check_center_interior(prob, zc)
        U = bubble_rz(dims, dl, zc, prob.grid.R, prob.grid.Z)
        rhs = prob.ops.m * (U.ravel() ** dims.p)
        PU = prob.ops.solve_plain(rhs)
        out.append(Field(prob.grid, PU.reshape(prob.grid.shape), cfg.epsilon, f"PU_{i}"))
    return out


def assemble_ansatz(prob: DiscreteProblem, cfg: TowerConfig, projections=None) -> Field:
    """Alternating sum V = sum (-1)^{i+1} PU_i of the exact discrete projections."""
    projections = projections or assemble_projections(prob, cfg)
    V = np.zeros(prob.grid.shape)
    for i, PU in enumerate(projections):
        V += (-1.0) ** i * PU.values
    return Field(prob.grid, V, cfg.epsilon, "ansatz")


def residual(prob: DiscreteProblem, u: Field) -> Field:
    """Nodewise -div(a grad u) - a |u|^{p-1-eps} u; boundary rows are zero."""
    vals = u.values.ravel()
    res = np.zeros_like(vals)
    act = prob.ops.act
    res[act] = (prob.ops.Aw @ vals)[act] / prob.ops.m[act] - (
        prob.ops.a_node * prob.nonlinearity(vals)
    )[act]
    return Field(prob.grid, res.reshape(prob.grid.shape), prob.epsilon, "residual")


def energy_of(prob: DiscreteProblem, u: Field) -> float:
    """J(u) = 1/2 int a |grad u|^2 - 1/(p+1-eps) int a |u|^{p+1-eps} by grid quadrature."""
    vals = u.values.ravel()
    grad_part = 0.5 * float(vals @ (prob.ops.Aw @ vals))
    nl_part = float(np.sum(prob.ops.am * prob.nonlinearity_primitive(vals)))
    return grad_part - nl_part


@dataclass
class NewtonResult:
    u: Field
    iterations: int
    residual_norm: float
    converged: bool
    correction_norm: float
    trace: list


def newton_solve(prob: DiscreteProblem, u0: Field, tol: float = 1e-9, max_iter: int = 40) -> NewtonResult:
    """Damped Newton on the residual, measured in the dual (solver) norm.

    The damping halves the step up to 30 times whenever the residual norm
    fails to decrease; the convergence flag is honest.
    """
    ops = prob.ops
    act = ops.act
    u = u0.values.ravel().copy()
    u[~act] = 0.0

    def res_int(vec):
        return (ops.Aw @ vec)[act] - (ops.am * prob.nonlinearity(vec))[act]

    F = res_int(u)
    rn = ops.dual_norm(F)
    trace = [(0, rn, tol)]
    it = 0
    while rn >= tol and it < max_iter:
        J = ops.Aw_II - sp.diags((ops.am * prob.nonlinearity_prime(u))[act])
        try:
            step = _Factor(J, indefinite=True).solve(-F, refine=0)
        except Exception as exc:  # singular Jacobian
            raise NoConvergenceError(f"Newton Jacobian solve failed: {exc}", trace=trace)
        if not np.all(np.isfinite(step)):
            raise NoConvergenceError("Newton step is not finite", trace=trace)
        lam = 1.0
        improved = False
        for _ in range(30):
            u_try = u.copy()
            u_try[act] += lam * step
            F_try = res_int(u_try)
            rn_try = ops.dual_norm(F_try)
            if rn_try < rn:
                u, F, rn = u_try, F_try, rn_try
                improved = True
                break
            lam *= 0.5
        it += 1
        trace.append((it, rn, tol))
        if not improved:
            break
    correction = u - u0.values.ravel()
    correction[~act] = 0.0
    return NewtonResult(
        u=Field(prob.grid, u.reshape(prob.grid.shape), prob.epsilon, "solution"),
        iterations=it,
        residual_norm=rn,
        converged=bool(rn < tol),
        correction_norm=ops.norm_a(correction),
        trace=trace,
    )


# ---------------------------------------------------------------------------
# Kernel subspace and the ansatz error norm
# ---------------------------------------------------------------------------

@dataclass
class KernelSubspace:
    """Discrete projections of the kernel elements and their weighted Gram data."""

    basis: list            # raw P psi_i^j fields, ordered (i=1..k) x (j=0, n)
    labels: list
    B: np.ndarray          # columns: raw basis vectors (full nodes)
    scales: np.ndarray     # weighted norms of the raw columns
    gram_normalized: np.ndarray
    cond: float


def kernel_subspace(prob: DiscreteProblem, cfg: TowerConfig) -> KernelSubspace:
    dims = prob.dims
    deltas = cfg.deltas(dims)
    centers = cfg.centers_z(dims)
    cols = []
    labels = []
    for i, (dl, zc) in enumerate(zip(deltas, centers), start=1):
        _check_center_interior(prob, zc)
        U = bubble_rz(dims, dl, zc, prob.grid.R, prob.grid.Z).ravel()
        for j in (0, dims.n):
            psi = psi_rz(dims, dl, zc, j, prob.grid.R, prob.grid.Z).ravel()
            rhs = prob.ops.m * (dims.p * U ** (dims.p - 1.0) * psi)
            cols.append(prob.ops.solve_plain(rhs))
            labels.append((i, j))
    B = np.stack(cols, axis=1)
    AwB = prob.ops.Aw @ B
    gram = B.T @ AwB
    scales = np.sqrt(np.diag(gram))
    if np.any(scales <= 0):
        raise IllConditionedKernelError("kernel basis has a vanishing direction")
    gram_n = gram / np.outer(scales, scales)
    cond = float(np.linalg.cond(gram_n))
    if cond > 1e12:
        raise IllConditionedKernelError(f"kernel Gram condition number {cond:.3e} > 1e12")
    fields = [Field(prob.grid, c.reshape(prob.grid.shape), cfg.epsilon, f"Ppsi_{i}^{j}") for c, (i, j) in zip(cols, labels)]
    return KernelSubspace(basis=fields, labels=labels, B=B, scales=scales, gram_normalized=gram_n, cond=cond)


def kernel_projection(prob: DiscreteProblem, ks: KernelSubspace, f) -> tuple:
    """Weighted least-squares projection onto the kernel subspace.

    Returns (coefficients in the raw basis, norm of the orthogonal part).
    """
    vec = (f.values if isinstance(f, Field) else np.asarray(f, dtype=float)).ravel()
    Bn = ks.B / ks.scales[None, :]
    y = Bn.T @ (prob.ops.Aw @ vec)
    cn = np.linalg.solve(ks.gram_normalized, y)
    orth = vec - Bn @ cn
    coeffs = cn / ks.scales
    return coeffs, prob.ops.norm_a(orth)


def error_norm_R(prob: DiscreteProblem, cfg: TowerConfig, ks: KernelSubspace | None = None) -> tuple:
    """Weighted norm of R = Pi_perp ( istar(|V|^{p-1-eps} V) - V ) at the ansatz.

    Returns (norm, kernel coefficients of the unprojected residual).
    """
    V = assemble_ansatz(prob, cfg)
    W = solve_istar(prob, Field(prob.grid, prob.nonlinearity(V.values), cfg.epsilon))
    pre = W.values - V.values
    ks = ks or kernel_subspace(prob, cfg)
    coeffs, orth_norm = kernel_projection(prob, ks, pre)
    return orth_norm, coeffs


# ---------------------------------------------------------------------------
# Reduction-aware tower solver
#
# Plain damped Newton from the ansatz slides along the near-kernel manifold
# (the concentration parameters renormalize by many percent at desk-scale
# epsilon) and stalls.  The remedy mirrors the reduction itself: solve for the
# correction orthogonal to the kernel with a bordered Newton iteration, drive
# the 2k kernel multipliers to zero over the reduced coordinates, then confirm
# with the plain Newton polish.
# ---------------------------------------------------------------------------

class _CorrectorCache:
    """Reusable Jacobian factorization for warm corrector solves.

    Nearby reduced coordinates share essentially the same Jacobian, so the
    frozen-matrix Newton direction stays good; the factorization is refreshed
    only when progress stalls.
    """

    def __init__(self):
        self.fac = None
        self.XW = None

    def refresh(self, ops, prob, u, W):
        J = ops.Aw_II - sp.diags((ops.am * prob.nonlinearity_prime(u))[ops.act])
        try:
            self.fac = _Factor(J, indefinite=True)
        except (SolverError, RuntimeError) as exc:
            raise NoConvergenceError(f"orthogonal corrector: Jacobian factorization failed: {exc}")
        self.XW = np.column_stack([self.fac.solve(W[:, j], refine=0) for j in range(W.shape[1])])


def orthogonal_correction(
    prob: DiscreteProblem,
    cfg: TowerConfig,
    V: Field | None = None,
    ks: KernelSubspace | None = None,
    tol: float = 1e-11,
    max_iter: int = 40,
    phi0: np.ndarray | None = None,
    cache: _CorrectorCache | None = None,
) -> tuple:
    """Solve the kernel-orthogonal corrector equation at frozen parameters.

    Finds phi with B' Aw phi = 0 and F(V + phi) lying in the kernel span;
    returns (phi, multipliers, iterations, merit).  The merit is the weighted
    norm of the kernel-orthogonal part of the residual representative plus the
    constraint violation.
    """
    ops = prob.ops
    act = ops.act
    V = V or assemble_ansatz(prob, cfg)
    ks = ks or kernel_subspace(prob, cfg)
    Bn = ks.B / ks.scales[None, :]
    W = (ops.Aw @ Bn)[act]
    v0 = V.values.ravel()
    phi = np.zeros_like(v0) if phi0 is None else phi0.copy()
    phi[~act] = 0.0
    cache = cache if cache is not None else _CorrectorCache()

    def assess(phi_vec):
        u = v0 + phi_vec
        F = (ops.Aw @ u)[act] - (ops.am * prob.nonlinearity(u))[act]
        z = ops.embed(ops.luw.solve(F))
        y = Bn.T @ (ops.Aw @ z)
        cn = np.linalg.solve(ks.gram_normalized, y)
        orth = z - Bn @ cn
        cvio = Bn.T @ (ops.Aw @ phi_vec)
        merit = ops.norm_a(orth) + float(np.linalg.norm(cvio))
        return F, cn, cvio, merit

    def try_step(F_cur, cvio_cur, merit_cur, phi_cur):
        Xb = cache.fac.solve(-F_cur, refine=0)
        S = W.T @ cache.XW
        try:
            mu = np.linalg.solve(S, W.T @ Xb + cvio_cur)
        except np.linalg.LinAlgError:
            raise NoConvergenceError("orthogonal corrector: singular border block")
        dphi = Xb - cache.XW @ mu
        lam = 1.0
        for _ in range(30):
            phi_t = phi_cur.copy()
            phi_t[act] += lam * dphi
            out = assess(phi_t)
            if out[3] < merit_cur:
                return phi_t, out, lam
            lam *= 0.5
        return None, None, 0.0

    F, cn, cvio, merit = assess(phi)
    fresh = False
    for it in range(max_iter):
        if merit < tol:
            return phi, cn, it, merit
        if cache.fac is None:
            cache.refresh(ops, prob, v0 + phi, W)
            fresh = True
        phi_t, out, lam = try_step(F, cvio, merit, phi)
        good = phi_t is not None and (out[3] < 0.5 * merit or lam == 1.0)
        if phi_t is None or (not good and not fresh):
            # stale frozen Jacobian: refresh once and retry before giving up
            if fresh and phi_t is None:
                break
            cache.refresh(ops, prob, v0 + phi, W)
            fresh = True
            phi_t, out, lam = try_step(F, cvio, merit, phi)
            if phi_t is None:
                break
        else:
            fresh = False
        phi, (F, cn, cvio, merit) = phi_t, out
    return phi, cn, max_iter, merit


@dataclass
class TowerSolve:
    """Outcome of the reduction-aware solve at one epsilon."""

    result: NewtonResult
    config: TowerConfig          # parameters after the multiplier adjustment
    multipliers: np.ndarray
    phi_norm: float              # weighted norm of the kernel-orthogonal correction
    outer_iterations: int


def solve_tower(
    prob: DiscreteProblem,
    cfg: TowerConfig,
    tol: float = 1e-9,
    outer_max: int = 20,
    seed_correction: np.ndarray | None = None,
    theta0: np.ndarray | None = None,
) -> TowerSolve:
    """Construct the discrete tower at the given epsilon.

    Stage 1 solves the kernel-orthogonal corrector at frozen reduced
    coordinates; stage 2 Newton-iterates the coordinates (t, d, s) on the
    kernel multipliers; the plain damped Newton polish then certifies the
    solution.  The reported correction norm is measured from the ansatz at the
    input configuration, as a continuation seed would provide it.
    """
    k = cfg.k
    ops = prob.ops
    V_ref = assemble_ansatz(prob, cfg)
    seed = V_ref.values.copy()
    if seed_correction is not None:
        seed = seed + seed_correction
    theta = theta0.copy() if theta0 is not None else cfg.coords()
    phi = (seed - V_ref.values).ravel()

    state = {}
    cache = _CorrectorCache()

    def eval_mu(th, phi_start, inner_tol):
        cfg_t = TowerConfig.from_coords(k, th, epsilon=prob.epsilon)
        V = assemble_ansatz(prob, cfg_t)
        ks = kernel_subspace(prob, cfg_t)
        phi_out, mu, its, merit = orthogonal_correction(
            prob, cfg_t, V=V, ks=ks, tol=inner_tol, phi0=phi_start, cache=cache
        )
        state.update(V=V, ks=ks, phi=phi_out, cfg=cfg_t, merit=merit)
        return np.asarray(mu)

    inner_tol = max(tol * 0.02, 1e-13)
    fd_tol = max(inner_tol, 1e-9)   # FD steps are ~1e-3, so 1e-9 noise is ample
    mu = eval_mu(theta, phi, inner_tol)
    outer_it = 0
    while np.linalg.norm(mu) > 0.3 * tol and outer_it < outer_max:
        base_phi = state["phi"].copy()
        Jmu = np.zeros((2 * k, 2 * k))
        for j in range(2 * k):
            # the finite-difference step must dominate the inner solve noise
            h = 1e-3 * max(abs(theta[j]), 0.1)
            th_p = theta.copy()
            th_p[j] += h
            mu_p = eval_mu(th_p, base_phi, fd_tol)
            Jmu[:, j] = (mu_p - mu) / h
        try:
            step = np.linalg.solve(Jmu, -mu)
        except np.linalg.LinAlgError:
            raise NoConvergenceError("parameter adjustment: singular multiplier Jacobian")
        # keep (t, d) positive: cap the relative move
        scale = 1.0
        for j in range(1 + k):
            if theta[j] + step[j] < 0.25 * theta[j]:
                scale = min(scale, -0.75 * theta[j] / step[j])
        step *= scale
        lam = 1.0
        norm0 = np.linalg.norm(mu)
        for _ in range(20):
            mu_t = eval_mu(theta + lam * step, base_phi, min(fd_tol, max(inner_tol, 0.05 * norm0)))
            if np.linalg.norm(mu_t) < norm0:
                theta = theta + lam * step
                mu = eval_mu(theta, state["phi"], inner_tol)
                break
            lam *= 0.5
        else:
            break
        outer_it += 1

    u_seed = state["V"].values.ravel() + state["phi"]
    polish = newton_solve(
        prob, Field(prob.grid, u_seed.reshape(prob.grid.shape), prob.epsilon, "ls-seed"),
        tol=tol, max_iter=25,
    )
    correction = polish.u.values.ravel() - seed.ravel()
    correction[~ops.act] = 0.0
    result = NewtonResult(
        u=polish.u,
        iterations=polish.iterations,
        residual_norm=polish.residual_norm,
        converged=polish.converged,
        correction_norm=ops.norm_a(correction),
        trace=polish.trace,
    )
    return TowerSolve(
        result=result,
        config=state["cfg"],
        multipliers=np.asarray(mu),
        phi_norm=ops.norm_a(state["phi"]),
        outer_iterations=outer_it,
    )


# ---------------------------------------------------------------------------
# Tower grids, continuation, and concentration diagnostics
# ---------------------------------------------------------------------------

def tower_grading(domain, dims: SpaceDims, cfg: TowerConfig, cells_per_delta: float = 10.0) -> GradingSpec:
    """Grading focused on the concentration cluster, fine enough that the
    smallest scale spans at least `cells_per_delta` cells."""
    deltas = cfg.deltas(dims)
    zc = float(np.mean(cfg.centers_z(dims)))
    h_min = float(np.min(deltas)) / cells_per_delta
    if isinstance(domain, BallDomain):
        rho_c = abs(domain.center_z - zc)
        ang = h_min / max(rho_c, 1e-9)
        return GradingSpec(focus_u=((rho_c, h_min),), focus_v=((0.0, ang),))
    return GradingSpec(focus_u=((0.0, h_min),), focus_v=((zc, h_min),))


def auto_resolution(
    domain,
    dims: SpaceDims,
    cfg: TowerConfig,
    gamma: float = 0.06,
    cells_per_delta: float = 10.0,
    max_resolution: int = 768,
    base: int = 48,
) -> int:
    """Cells per axis so geometric grading reaches delta_min/cells_per_delta
    with local growth rate about gamma."""
    deltas = cfg.deltas(dims)
    h_min = float(np.min(deltas)) / cells_per_delta
    if isinstance(domain, BallDomain):
        L = domain.radius
    else:
        L = max(domain.r_max, domain.z_max) if hasattr(domain, "r_max") else 1.0
    n_cells = int(math.ceil(math.log(max(L / h_min, 2.0)) / gamma)) + base
    return int(min(max(n_cells, 48), max_resolution))


def tower_grid(
    domain,
    dims: SpaceDims,
    cfg: TowerConfig,
    resolution: int | None = None,
    cells_per_delta: float = 10.0,
    gamma: float = 0.06,
    max_resolution: int = 768,
) -> AxisymGrid:
    res = resolution or auto_resolution(
        domain, dims, cfg, gamma=gamma, cells_per_delta=cells_per_delta, max_resolution=max_resolution
    )
    grading = tower_grading(domain, dims, cfg, cells_per_delta=cells_per_delta)
    return build_grid(domain, res, grading, n=dims.n)


def count_sign_changes(values: np.ndarray, threshold_rel: float = 1e-9) -> int:
    """Sign changes of a sampled profile, ignoring sub-threshold noise."""
    v = np.asarray(values, dtype=float)
    thr = threshold_rel * np.max(np.abs(v)) if np.max(np.abs(v)) > 0 else 0.0
    signs = np.sign(v[np.abs(v) > thr])
    if len(signs) == 0:
        return 0
    return int(np.sum(signs[1:] != signs[:-1]))


@dataclass(frozen=True)
class LevelPeak:
    level: int
    z: float
    magnitude: float
    delta_hat: float
    sign: int


def tower_extrema(grid: AxisymGrid, values: np.ndarray, k: int, dims: SpaceDims) -> list:
    """Locate the per-level extremum magnitudes along the axis.

    The levels sit on nested spheres around the common center, so the axis is
    scanned outward from the innermost (largest-magnitude) core; the i-th
    nodal radius separates level k-i+1 from level k-i.  The scale of each
    level is read off the center-value law delta = (alpha_n / M)^{2/(n-2)}.
    """
    z, prof = grid.axis_profile(values)
    if np.max(np.abs(prof)) == 0:
        raise StructureLostError("axis profile vanishes")
    i0 = int(np.argmax(np.abs(prof)))
    zz = z[i0:]
    vv = prof[i0:]
    thr = 1e-9 * np.abs(prof[i0])
    keep = np.abs(vv) > thr
    idx = np.nonzero(keep)[0]
    if len(idx) == 0:
        raise StructureLostError("axis profile below threshold")
    signs = np.sign(vv[idx])
    breaks = np.nonzero(signs[1:] != signs[:-1])[0]
    segments = []
    start = 0
    for b in breaks:
        segments.append(idx[start : b + 1])
        start = b + 1
    segments.append(idx[start:])
    if len(segments) < k:
        raise StructureLostError(
            f"expected {k} alternating levels along the axis, found {len(segments)}"
        )
    peaks = []
    for seg_no, seg in enumerate(segments[:k]):
        level = k - seg_no
        j = seg[int(np.argmax(np.abs(vv[seg])))]
        # parabolic refinement of the extremum when neighbors exist
        if 0 < j < len(vv) - 1 and vv[j - 1] != vv[j + 1]:
            y0, y1, y2 = vv[j - 1], vv[j], vv[j + 1]
            x0, x1, x2 = zz[j - 1], zz[j], zz[j + 1]
            denom = (x0 - x1) * (x0 - x2) * (x1 - x2)
            a = (x2 * (y1 - y0) + x1 * (y0 - y2) + x0 * (y2 - y1)) / denom
            b = (x2**2 * (y0 - y1) + x1**2 * (y2 - y0) + x0**2 * (y1 - y2)) / denom
            if a != 0 and abs(-b / (2 * a) - x1) < max(x2 - x1, x1 - x0):
                xs = -b / (2 * a)
                c = y0 - a * x0**2 - b * x0
                mag = abs(a * xs**2 + b * xs + c)
                zloc = xs
            else:
                mag, zloc = abs(y1), x1
        else:
            mag, zloc = abs(vv[j]), zz[j]
        delta_hat = (dims.alpha_n / mag) ** (2.0 / dims.m)
        peaks.append(LevelPeak(level=level, z=float(zloc), magnitude=float(mag), delta_hat=float(delta_hat), sign=int(np.sign(vv[j]))))
    return sorted(peaks, key=lambda p: p.level)


def nodal_radius_count(grid: AxisymGrid, values: np.ndarray) -> int:
    """Number of nodal spheres crossed along the outward axis ray."""
    z, prof = grid.axis_profile(values)
    i0 = int(np.argmax(np.abs(prof)))
    return count_sign_changes(prof[i0:])


@dataclass
class ContinuationStep:
    epsilon: float
    grid: AxisymGrid
    problem: DiscreteProblem
    ansatz: Field
    result: NewtonResult
    peaks: list
    nodal_radii: int
    solve: TowerSolve | None = None


def continue_in_epsilon(
    domain,
    weight: WeightModel,
    dims: SpaceDims,
    cfg0: TowerConfig,
    eps_schedule,
    resolution: int | None = None,
    cells_per_delta: float = 10.0,
    gamma: float = 0.06,
    max_resolution: int = 768,
    newton_tol: float = 1e-9,
    max_iter: int = 40,
) -> list:
    """Warm-started Newton solves along a decreasing geometric schedule.

    Each step seeds from the fresh ansatz at the new concentration scales plus
    the previous correction interpolated onto the new grid.
    """
    eps_schedule = [float(e) for e in eps_schedule]
    if any(e2 >= e1 for e1, e2 in zip(eps_schedule, eps_schedule[1:])):
        raise TowerlabError("epsilon schedule must be strictly decreasing")
    if len(eps_schedule) >= 3:
        ratios = np.diff(np.log(eps_schedule))
        if not np.allclose(ratios, ratios[0], rtol=1e-6, atol=1e-12):
            raise TowerlabError("epsilon schedule must be geometric")

    steps = []
    # Warm start carries the adjusted reduced coordinates; the bubble content
    # itself is rebuilt at each epsilon through the concentration law, which is
    # the part of the previous solution that survives the rescaling.  The
    # leftover correction lives on the previous scales and would only poison
    # the seed.
    theta = None
    for eps in eps_schedule:
        cfg = cfg0.with_epsilon(eps)
        grid = tower_grid(
            domain, dims, cfg, resolution=resolution, cells_per_delta=cells_per_delta,
            gamma=gamma, max_resolution=max_resolution,
        )
        prob = DiscreteProblem(grid, weight, eps, dims)
        V = assemble_ansatz(prob, cfg)
        try:
            solve = solve_tower(prob, cfg, tol=newton_tol, theta0=theta)
        except NoConvergenceError as exc:
            raise NoConvergenceError(f"continuation broke at epsilon={eps}: {exc}", trace=exc.trace)
        result = solve.result
        if not result.converged:
            raise NoConvergenceError(
                f"continuation broke at epsilon={eps}: residual {result.residual_norm:.3e}",
                trace=result.trace,
            )
        peaks = tower_extrema(grid, result.u.values, cfg.k, dims)
        steps.append(
            ContinuationStep(
                epsilon=eps,
                grid=grid,
                problem=prob,
                ansatz=V,
                result=result,
                peaks=peaks,
                nodal_radii=nodal_radius_count(grid, result.u.values),
                solve=solve,
            )
        )
        theta = solve.config.coords()
    return steps


@dataclass(frozen=True)
class LevelFit:
    level: int
    slope: float
    intercept: float
    r_squared: float
    points: tuple


def fit_concentration(steps, dims: SpaceDims, k: int) -> list:
    """Log-log fit of the inferred delta_i against epsilon, per level."""
    if len(steps) < 4:
        raise TowerlabError("concentration fit needs at least 4 epsilon samples")
    fits = []
    for level in range(1, k + 1):
        pts = []
        for st in steps:
            peak = next((p for p in st.peaks if p.level == level), None)
            if peak is None:
                raise StructureLostError(f"level {level} missing at epsilon={st.epsilon}")
            pts.append((st.epsilon, peak.delta_hat))
        rf = rate_regression(pts)
        fits.append(
            LevelFit(level=level, slope=rf.slope, intercept=rf.intercept, r_squared=rf.r_squared, points=rf.points)
        )
    return fits
