"""Projection-type subproblem of the VMPT method, solved by a damped primal-dual active set method.

The subproblem reads

    min_y  q(y) = lam g.(y - x) + 1/2 a(y - x, y - x)
    s.t.   lower <= y <= upper,  Eq y = e,

with ``a`` applied matrix-free.  Each PDAS iteration fixes the active bounds
and solves the remaining equality-constrained problem with MINRES on the
saddle-point system.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SolverError

log = logging.getLogger(__name__)


@dataclass
class MinresResult:
    x: np.ndarray
    iterations: int
    residual: float
    converged: bool


def minres_saddle(apply_A, E: sp.spmatrix, rhs_top, rhs_bottom, *, tol=1e-8, maxiter=None, x0=None,
                  precond_diag=None, callback=None) -> MinresResult:
    """Solve [[A, E^T], [E, 0]] [x; k] = [rhs_top; rhs_bottom] with MINRES.

    ``apply_A`` is a symmetric sparse matrix or a callable mapping R^n to R^n.  ``precond_diag``,
    if given, is a positive diagonal for the 1-1 block; the 2-2 block of the
    preconditioner is then diag(E D^-1 E^T).
    """
    E = sp.csr_matrix(E)
    n = len(rhs_top)
    m = E.shape[0]
    b = np.concatenate([rhs_top, rhs_bottom])
    if sp.issparse(apply_A):
        K = sp.bmat([[apply_A, E.T], [E, None]], format="csr")
        mv = K.__matmul__
    else:
        def mv(z):
            u, k = z[:n], z[n:]
            return np.concatenate([apply_A(u) + E.T @ k, E @ u])

        K = spla.LinearOperator((n + m, n + m), matvec=mv, dtype=float)
    M = None
    if precond_diag is not None:
        D = np.asarray(precond_diag, dtype=float)
        S = np.asarray((E.multiply(E) @ (1.0 / D)[:, None])).ravel() if m else np.zeros(0)
        S = np.where(S > 0, S, 1.0)
        inv = np.concatenate([1.0 / D, 1.0 / S])
        M = spla.LinearOperator((n + m, n + m), matvec=lambda z: inv * z, dtype=float)
    count = [0]

    def cb(xk):
        count[0] += 1
        if callback is not None:
            callback(xk)

    maxiter = maxiter or 10 * (n + m)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return MinresResult(np.zeros(n + m), 0, 0.0, True)
    x, info = spla.minres(K, b, x0=x0, rtol=tol, maxiter=maxiter, M=M, callback=cb)
    res = np.linalg.norm(mv(x) - b) / bnorm
    return MinresResult(x, count[0], res, info == 0)


@dataclass
class Subproblem:
    """Data of one projection subproblem in design space."""

    anchor: np.ndarray
    gradient: np.ndarray  # already scaled by lambda
    apply_metric: object  # callable p -> A p
    lower: np.ndarray
    upper: np.ndarray  # +inf where unbounded
    eq_matrix: sp.csr_matrix
    eq_rhs: np.ndarray
    groups: np.ndarray | None = None  # (n_nodes, N) variable indices of simplex groups, for diagnostics
    metric_diag: np.ndarray | None = None
    weights: np.ndarray | None = None  # per-variable scale of the complementarity constant
    metric_matrix: sp.spmatrix | None = None  # explicit metric when available

    @property
    def n(self) -> int:
        return len(self.anchor)

    def q(self, y) -> float:
        v = np.asarray(y) - self.anchor
        return float(self.gradient @ v + 0.5 * v @ self.apply_metric(v))


@dataclass
class PDASState:
    y: np.ndarray
    kappa: np.ndarray  # equality multipliers
    mu: np.ndarray  # bound multiplier: >0 lower active, <0 upper active
    lower_active: np.ndarray | None = None
    upper_active: np.ndarray | None = None
    residual: float = np.inf
    iterations: int = 0
    minres_iterations: int = 0
    damping_steps: int = 0
    step: float = 1.0
    history: list = field(default_factory=list)
    fallback: bool = False

    def copy(self) -> "PDASState":
        return PDASState(self.y.copy(), self.kappa.copy(), self.mu.copy())


@dataclass
class QPConfig:
    c: float = 1.0
    tol: float = 1e-8  # KKT residual relative to 1 + |gradient|
    minres_tol: float = 1e-8
    max_iter: int = 50
    damping: float = 0.75
    min_step: float = 1e-8
    precondition: bool = False
    accept: float = 1e-6  # KKT violation of the returned point, relative to 1 + |gradient|
    fallback: bool = True  # interior-point solve when PDAS stalls or ends off the KKT point
    ipm_max_iter: int = 100


def _c(sp_: Subproblem, c):
    return c if sp_.weights is None else c * sp_.weights


def active_sets(sp_: Subproblem, y, mu, c):
    c = _c(sp_, c)
    s_lo = mu + c * (sp_.lower - y)
    s_up = -(mu + c * (sp_.upper - y))
    lo = s_lo > 0
    up = s_up > 0
    # every equality row keeps a free variable, otherwise the Newton system is singular;
    # release the least strongly active variable of each blocked row
    E = sp_.eq_matrix
    free = ~(lo | up)
    blocked = np.flatnonzero((abs(E) @ free.astype(float)) == 0)
    if len(blocked):
        score = np.where(lo, s_lo, s_up)
        E = E.tocsr()
        for r in blocked:
            cols = E.indices[E.indptr[r]:E.indptr[r + 1]]
            if len(cols) == 0 or free[cols].any():
                continue
            j = cols[np.argmin(score[cols])]
            lo[j] = up[j] = False
            free[j] = True
    return lo, up


def kkt_residual(sp_: Subproblem, Av, y, kappa, mu, c) -> np.ndarray:
    """Semismooth residual G of the first-order system; ``Av`` is a(y - x, .)."""
    c = _c(sp_, c)
    g1 = Av + sp_.gradient + sp_.eq_matrix.T @ kappa - mu
    g2 = sp_.eq_matrix @ y - sp_.eq_rhs
    g3 = mu - np.maximum(0.0, mu + c * (sp_.lower - y)) - np.minimum(0.0, mu + c * (sp_.upper - y))
    return np.concatenate([g1, g2, g3])


def _newton_target(sp_: Subproblem, state: PDASState, lo, up, cfg: QPConfig):
    """Solution of the KKT system with the given active sets."""
    n = sp_.n
    x = sp_.anchor
    act = lo | up
    inact = np.flatnonzero(~act)
    y = state.y.copy()
    y[lo] = sp_.lower[lo]
    y[up] = sp_.upper[up]
    v = y - x
    vA = np.where(act, v, 0.0)
    AvA = sp_.apply_metric(vA)
    E = sp_.eq_matrix
    EI = E[:, inact]
    rhs_top = -(sp_.gradient + AvA)[inact]
    rhs_bottom = sp_.eq_rhs - E @ (x + vA)

    if sp_.metric_matrix is not None:
        apply_II = sp.csr_matrix(sp_.metric_matrix)[inact][:, inact]
    else:
        def apply_II(w):
            full = np.zeros(n)
            full[inact] = w
            return sp_.apply_metric(full)[inact]

    x0 = np.concatenate([v[inact], state.kappa])
    diag = None
    if cfg.precondition and sp_.metric_diag is not None:
        diag = np.maximum(sp_.metric_diag[inact], 1e-300)
    res = minres_saddle(apply_II, EI, rhs_top, rhs_bottom, tol=cfg.minres_tol,
                        maxiter=10 * max(len(inact), 1) + 10 * E.shape[0], x0=x0, precond_diag=diag)
    v_new = vA.copy()
    v_new[inact] = res.x[: len(inact)]
    kappa = res.x[len(inact):]
    Av = sp_.apply_metric(v_new)
    mu = Av + sp_.gradient + E.T @ kappa
    mu[inact] = 0.0
    return x + v_new, kappa, mu, Av, res


def pdas_step(state: PDASState, sp_: Subproblem, cfg: QPConfig, Av_current=None, floor: float = 0.0):
    """One damped semismooth Newton step; returns the new state and a(y - x, .) at it."""
    c = cfg.c
    if Av_current is None:
        Av_current = sp_.apply_metric(state.y - sp_.anchor)
    lo, up = active_sets(sp_, state.y, state.mu, c)
    G0 = kkt_residual(sp_, Av_current, state.y, state.kappa, state.mu, c)
    g0 = float(G0 @ G0)
    y1, k1, m1, Av1, res = _newton_target(sp_, state, lo, up, cfg)
    dy, dk, dm, dAv = y1 - state.y, k1 - state.kappa, m1 - state.mu, Av1 - Av_current
    t = 1.0
    damp = 0
    while True:
        G = kkt_residual(sp_, Av_current + t * dAv, state.y + t * dy, state.kappa + t * dk, state.mu + t * dm, c)
        gt = float(G @ G)
        if gt <= (1.0 - t / 4.0) * g0 or gt <= floor**2:
            break
        t *= cfg.damping
        damp += 1
        if t < cfg.min_step:
            raise SolverError("PDAS damping underflow", {"residual": np.sqrt(g0), "history": state.history})
    new = PDASState(state.y + t * dy, state.kappa + t * dk, state.mu + t * dm, lo, up)
    new.residual = np.sqrt(gt)
    new.iterations = state.iterations + 1
    new.minres_iterations = state.minres_iterations + res.iterations
    new.damping_steps = state.damping_steps + damp
    new.history = state.history + [new.residual]
    new.step = t
    return new, Av_current + t * dAv


def _polish(sp_: Subproblem, y, free):
    """Remove the equality residual by a minimum-norm correction on the free variables."""
    E = sp_.eq_matrix[:, free]
    r = sp_.eq_rhs - sp_.eq_matrix @ y
    if not np.any(r):
        return y
    EE = (E @ E.T).tocsc()
    keep = np.flatnonzero(EE.diagonal() > 0)
    if len(keep) == 0:
        return y
    corr = spla.spsolve(EE[keep][:, keep], r[keep])
    out = y.copy()
    out[free] += E[keep].T @ corr
    return out


def kkt_violation(sp_: Subproblem, y, kappa) -> float:
    """Largest violation of the first-order conditions at a point on the bounds, relative to 1 + |gradient|.

    The bound multipliers are recovered from stationarity, so only their signs
    and the stationarity of variables strictly between the bounds are tested.
    """
    r = sp_.apply_metric(y - sp_.anchor) + sp_.gradient + sp_.eq_matrix.T @ kappa
    at_lo = y <= sp_.lower
    at_up = y >= sp_.upper
    inner = ~(at_lo | at_up)
    parts = [
        np.abs(r[inner]).max(initial=0.0),
        np.maximum(-r[at_lo], 0.0).max(initial=0.0),
        np.maximum(r[at_up], 0.0).max(initial=0.0),
        np.abs(sp_.eq_matrix @ y - sp_.eq_rhs).max(initial=0.0),
        np.maximum(sp_.lower - y, 0.0).max(initial=0.0),
        np.maximum(y - sp_.upper, 0.0).max(initial=0.0),
    ]
    return float(max(parts) / (1.0 + np.linalg.norm(sp_.gradient)))


def _pdas(sp_: Subproblem, state: PDASState, cfg: QPConfig) -> PDASState:
    scale = 1.0 + np.linalg.norm(sp_.gradient)
    Av = sp_.apply_metric(state.y - sp_.anchor)
    G = kkt_residual(sp_, Av, state.y, state.kappa, state.mu, cfg.c)
    state.residual = float(np.linalg.norm(G))
    while state.residual > cfg.tol * scale:
        if state.iterations >= cfg.max_iter:
            raise SolverError(
                f"PDAS did not converge in {cfg.max_iter} iterations (residual {state.residual:.3e})",
                {"residual": state.residual, "history": state.history},
            )
        lo, up = active_sets(sp_, state.y, state.mu, cfg.c)
        state, Av = pdas_step(state, sp_, cfg, Av, floor=cfg.tol * scale)
        if state.step == 1.0:
            lo2, up2 = active_sets(sp_, state.y, state.mu, cfg.c)
            if np.array_equal(lo, lo2) and np.array_equal(up, up2):
                break
    lo, up = active_sets(sp_, state.y, state.mu, cfg.c)
    y = state.y.copy()
    y[lo] = sp_.lower[lo]
    y[up] = sp_.upper[up]
    y = _polish(sp_, y, np.flatnonzero(~(lo | up)))
    state.y = np.minimum(np.maximum(y, sp_.lower), sp_.upper)
    state.lower_active, state.upper_active = lo, up
    violation = kkt_violation(sp_, state.y, state.kappa)
    if violation > cfg.accept:
        raise SolverError(f"PDAS ended {violation:.2e} away from the KKT conditions",
                          {"residual": state.residual, "violation": violation, "history": state.history})
    return state


def _saddle_solver(sp_: Subproblem, D, cfg: QPConfig):
    """Solver for [[A + diag(D), E^T], [E, 0]] with fixed D."""
    E = sp_.eq_matrix
    n, m = sp_.n, E.shape[0]
    if sp_.metric_matrix is not None:
        K = sp.bmat([[sp.csr_matrix(sp_.metric_matrix) + sp.diags(D), E.T], [E, None]], format="csc")
        lu = spla.splu(K)
        return lambda top, bottom: lu.solve(np.concatenate([top, bottom]))
    diag = (sp_.metric_diag if sp_.metric_diag is not None else np.zeros(n)) + D

    def solve(top, bottom):
        res = minres_saddle(lambda w: sp_.apply_metric(w) + D * w, E, top, bottom, tol=min(cfg.minres_tol, 1e-10),
                            maxiter=20 * (n + m), precond_diag=np.maximum(diag, 1e-300))
        return res.x

    return solve


def interior_point(sp_: Subproblem, cfg: QPConfig | None = None) -> PDASState:
    """Mehrotra predictor-corrector method for the subproblem; robust but slower than PDAS."""
    cfg = cfg or QPConfig()
    n, E, e = sp_.n, sp_.eq_matrix, sp_.eq_rhs
    lo, up = sp_.lower, sp_.upper
    has_up = np.isfinite(up)
    width = np.where(has_up, up - lo, 1.0)
    y = np.clip(sp_.anchor, lo + 0.05 * width, np.where(has_up, up - 0.05 * width, np.inf))
    scale = 1.0 + np.linalg.norm(sp_.gradient)
    z0 = max(1.0, float(np.abs(sp_.gradient).max(initial=0.0)))
    zl = np.full(n, z0)
    zu = np.where(has_up, z0, 0.0)
    kappa = np.zeros(E.shape[0])
    tol = cfg.tol * scale
    for it in range(cfg.ipm_max_iter):
        sl = y - lo
        su = np.where(has_up, up - y, 1.0)
        rd = sp_.apply_metric(y - sp_.anchor) + sp_.gradient + E.T @ kappa - zl + zu
        rp = E @ y - e
        pairs = n + int(has_up.sum())
        mu = float(sl @ zl + (su * zu)[has_up].sum()) / pairs
        if np.linalg.norm(rd) <= tol and np.linalg.norm(rp) <= tol and mu <= 1e-3 * tol:
            break
        D = zl / sl + np.where(has_up, zu / su, 0.0)
        solve = _saddle_solver(sp_, D, cfg)

        def direction(cl, cu):
            top = -rd + cl / sl - np.where(has_up, cu / su, 0.0)
            sol = solve(top, -rp)
            dy, dk = sol[:n], sol[n:]
            dzl = (cl - zl * dy) / sl
            dzu = np.where(has_up, (cu + zu * dy) / su, 0.0)
            return dy, dk, dzl, dzu

        def max_step(dy, dzl, dzu):
            ratios = [1.0]
            for v, dv in ((sl, dy), (zl, dzl), (su[has_up], -dy[has_up]), (zu[has_up], dzu[has_up])):
                neg = dv < 0
                if neg.any():
                    ratios.append(float(np.min(-v[neg] / dv[neg])))
            return min(ratios)

        dy, dk, dzl, dzu = direction(-sl * zl, np.where(has_up, -su * zu, 0.0))
        a = max_step(dy, dzl, dzu)
        mu_aff = float((sl + a * dy) @ (zl + a * dzl) + ((su - a * dy) * (zu + a * dzu))[has_up].sum()) / pairs
        sigma = (mu_aff / mu) ** 3
        cl = sigma * mu - sl * zl - dy * dzl
        cu = np.where(has_up, sigma * mu - su * zu + dy * dzu, 0.0)
        dy, dk, dzl, dzu = direction(cl, cu)
        a = min(1.0, 0.99 * max_step(dy, dzl, dzu))
        y, kappa, zl, zu = y + a * dy, kappa + a * dk, zl + a * dzl, zu + a * dzu
    else:
        raise SolverError(f"interior-point method did not converge in {cfg.ipm_max_iter} iterations",
                          {"mu": mu, "dual": float(np.linalg.norm(rd)), "primal": float(np.linalg.norm(rp))})
    state = PDASState(y, kappa, zl - zu)
    state.iterations = it
    return state


def solve_subproblem(sp_: Subproblem, warm_start: PDASState | None = None, cfg: QPConfig | None = None):
    """Return (y_hat, v = y_hat - anchor, PDASState).

    PDAS is tried first.  If it stalls or ends away from the KKT point, the
    subproblem is solved by an interior-point method and PDAS is restarted from
    that solution to land exactly on the active bounds.
    """
    cfg = cfg or QPConfig()
    n, m = sp_.n, sp_.eq_matrix.shape[0]
    if warm_start is not None and len(warm_start.y) == n and len(warm_start.kappa) == m:
        start = PDASState(warm_start.y.copy(), warm_start.kappa.copy(), warm_start.mu.copy())
    else:
        start = PDASState(sp_.anchor.copy(), np.zeros(m), np.zeros(n))
    try:
        state = _pdas(sp_, start, cfg)
    except SolverError as exc:
        if not cfg.fallback:
            raise
        log.info("PDAS failed (%s); falling back to the interior-point method", exc)
        ipm = interior_point(sp_, cfg)
        ipm_iters = ipm.iterations
        state = _pdas(sp_, ipm, cfg)
        state.iterations += ipm_iters
        state.fallback = True
    return state.y, state.y - sp_.anchor, state
