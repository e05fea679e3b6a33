"""Variable metric projection type (VMPT) descent with Armijo backtracking and nested continuation."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .cost import METRICS, Problem, State
from .errors import ConfigError, InvariantViolation, SolverError
from .mesh import interpolate, is_refinement, prolongate
from .phasefield import FEAS_TOL
from .qp import PDASState, QPConfig, Subproblem, solve_subproblem

log = logging.getLogger(__name__)

HISTORY_FIELDS = (
    "level", "k", "layers", "nodes", "j", "E", "E_scalar", "F", "W", "lambda", "alpha", "backtracks",
    "stationarity", "v_h1", "pdas_iters", "minres_iters", "q", "infeasibility",
)


@dataclass(frozen=True)
class VMPTConfig:
    tau: float = 0.5
    sigma: float = 1e-4
    lambda0: float = 0.005
    lambda_min: float = 1e-10
    lambda_max: float = 1e10
    c: float = 0.75
    metric: str = "a1"
    tol: float = 1e-3
    k_max: int = 5000
    max_backtracks: int = 60
    qp: QPConfig = field(default_factory=QPConfig)
    check: bool = True

    def __post_init__(self):
        for name in ("tau", "sigma", "c"):
            if not 0 < getattr(self, name) < 1:
                raise ConfigError(f"{name} must lie in (0, 1)", f"vmpt.{name}")
        if not 0 < self.lambda_min <= self.lambda0 <= self.lambda_max:
            raise ConfigError("need 0 < lambda_min <= lambda0 <= lambda_max", "vmpt.lambda0")
        if self.metric not in METRICS:
            raise ConfigError(f"unknown metric {self.metric!r}", "vmpt.metric")
        if self.tol <= 0 or self.k_max < 0:
            raise ConfigError("tol must be positive and k_max nonnegative", "vmpt")


def lambda_update(lam: float, alpha: float, cfg: VMPTConfig) -> float:
    if alpha < 1.0:
        return max(cfg.c * lam, cfg.lambda_min)
    return min(lam / cfg.c, cfg.lambda_max)


@dataclass
class ArmijoResult:
    alpha: float
    backtracks: int
    state: object


def armijo(evaluate, j0: float, x, v, slope: float, cfg: VMPTConfig) -> ArmijoResult:
    """Largest alpha = tau^m with j(x + alpha v) <= j0 + alpha sigma slope.

    ``evaluate`` maps a point to an object with a ``cost.j`` attribute or to a float.
    """
    alpha = 1.0
    for m in range(cfg.max_backtracks + 1):
        trial = evaluate(x + alpha * v)
        jt = trial if isinstance(trial, float) else trial.cost.j
        if jt <= j0 + alpha * cfg.sigma * slope:
            return ArmijoResult(alpha, m, trial)
        alpha *= cfg.tau
    raise SolverError(f"Armijo failed after {cfg.max_backtracks} backtracks",
                      {"j0": j0, "slope": slope, "last_j": jt})


def subproblem_for(problem: Problem, state: State, lam: float, metric) -> Subproblem:
    d = problem.design
    groups = None if d.scalar else np.arange(d.n_vars).reshape(-1, d.n_phases)
    return Subproblem(
        anchor=state.x,
        gradient=lam * state.gradient(),
        apply_metric=metric.apply,
        lower=d.lower,
        upper=d.upper_bound,
        eq_matrix=d.eq_matrix,
        eq_rhs=d.eq_rhs,
        groups=groups,
        metric_diag=metric.diagonal(),
        weights=metric.diagonal(),
        metric_matrix=metric.matrix,
    )


def project(problem: Problem, x_tilde: np.ndarray, cfg: QPConfig | None = None) -> np.ndarray:
    """Lumped-L2 projection onto the admissible set (zero-gradient subproblem)."""
    d = problem.design
    w = d.weights if d.scalar else np.repeat(d.weights, d.n_phases)
    sub = Subproblem(
        anchor=np.asarray(x_tilde, dtype=float),
        gradient=np.zeros(d.n_vars),
        apply_metric=lambda p: w * p,
        metric_matrix=sp.diags(w),
        lower=d.lower,
        upper=d.upper_bound,
        eq_matrix=d.eq_matrix,
        eq_rhs=d.eq_rhs,
        groups=None if d.scalar else np.arange(d.n_vars).reshape(-1, d.n_phases),
        metric_diag=w,
        weights=w,
    )
    y, _, _ = solve_subproblem(sub, None, cfg or QPConfig(minres_tol=1e-12))
    return y


def initialize(problem: Problem, seed: int | None = 0, noise: float = 0.05) -> np.ndarray:
    """Mean field plus seeded Gaussian noise, projected onto the admissible set."""
    d = problem.design
    x = d.mean_field()
    if noise > 0:
        rng = np.random.default_rng(seed)
        x = x + noise * rng.standard_normal(x.shape)
    return project(problem, x)


def seminorm(problem: Problem, v: np.ndarray) -> float:
    """|v|_{H^1} of the phase-field direction."""
    return float(np.sqrt(max(v @ (problem.L_design @ v), 0.0)))


def full_norm(problem: Problem, v: np.ndarray) -> float:
    d = problem.design
    phi = d.push(v)
    l2 = float(np.sum(problem.mech.forms.mass @ phi * phi))
    return float(np.sqrt(seminorm(problem, v) ** 2 + l2))


@dataclass
class RunResult:
    x: np.ndarray
    state: State
    history: list
    timings: list
    pdas: PDASState | None
    converged: bool
    lam: float

    @property
    def iterations(self) -> int:
        return len(self.history)

    @property
    def mean_pdas(self) -> float:
        its = [h["pdas_iters"] for h in self.history]
        return float(np.mean(its)) if its else 0.0


def vmpt_run(problem: Problem, cfg: VMPTConfig, x0, *, warm: PDASState | None = None, lam: float | None = None,
             level: int = 0, callback=None, state: State | None = None) -> RunResult:
    """Algorithm loop; each history row describes one accepted step."""
    d = problem.design
    x = np.asarray(x0, dtype=float)
    if cfg.check and not d.is_feasible(x):
        raise InvariantViolation(f"initial design infeasible: {d.feasibility(x)}")
    lam = cfg.lambda0 if lam is None else lam
    state = state if state is not None else problem.evaluate(x)
    history, timings = [], []
    converged = False
    scale = np.sqrt(problem.epsilon * problem.beta2)
    for k in range(cfg.k_max + 1):
        t0 = time.perf_counter()
        metric = state.metric(cfg.metric)
        sub = subproblem_for(problem, state, lam, metric)
        y, v, pdas = solve_subproblem(sub, warm, cfg.qp)
        stat = scale * seminorm(problem, v)
        if cfg.check:
            f = d.feasibility(y)
            if max(f.values()) > FEAS_TOL:
                raise InvariantViolation(f"subproblem solution infeasible: {f}")
        if stat <= cfg.tol and cfg.metric != "a1":
            # a stiffer metric shrinks v before lambda has adapted; confirm with the a1 step
            _, v1, _ = solve_subproblem(subproblem_for(problem, state, lam, state.metric("a1")), None, cfg.qp)
            stat = max(stat, scale * seminorm(problem, v1))
        if stat <= cfg.tol or k == cfg.k_max:
            converged = stat <= cfg.tol
            break
        q = float("nan")
        if cfg.check:
            # descent guarantee of the step about to be taken, up to the accepted KKT violation
            q = sub.q(y)
            slack = cfg.qp.accept * (1.0 + np.linalg.norm(sub.gradient)) * np.abs(v).sum()
            if q > slack:
                raise InvariantViolation(f"subproblem value q = {q:.3e} > 0 at iteration {k}")
        g = state.gradient()
        slope = float(g @ v)
        if slope >= 0:
            raise InvariantViolation(f"search direction is not a descent direction (slope {slope:.3e})")
        ar = armijo(problem.evaluate, state.cost.j, x, v, slope, cfg)
        new = ar.state
        infeas = max(d.feasibility(new.x).values())
        if cfg.check:
            if not new.cost.j <= state.cost.j + ar.alpha * cfg.sigma * slope:
                raise InvariantViolation("Armijo condition violated by the accepted step")
            if infeas > FEAS_TOL:
                raise InvariantViolation(f"iterate {k + 1} infeasible: {d.feasibility(new.x)}")
        c = new.cost
        row = {
            "level": level, "k": k + 1, "layers": problem.layers, "nodes": problem.mesh.n_nodes,
            "j": c.j, "E": c.E, "E_scalar": c.E_scalar, "F": c.F, "W": c.W,
            "lambda": lam, "alpha": ar.alpha, "backtracks": ar.backtracks,
            "stationarity": stat, "v_h1": full_norm(problem, v),
            "pdas_iters": pdas.iterations, "minres_iters": pdas.minres_iterations,
            "q": q, "infeasibility": infeas,
        }
        history.append(row)
        timings.append({"level": level, "k": k + 1, "seconds": time.perf_counter() - t0})
        if callback is not None:
            callback(row, new)
        lam = lambda_update(lam, ar.alpha, cfg)
        x = new.x
        state = new
        warm = pdas
        if k % 100 == 0:
            log.info("level %d k %d j %.6e stat %.3e lambda %.3e", level, k + 1, c.j, stat, lam)
    return RunResult(x, state, history, timings, warm, converged, lam)


# -- nesting --------------------------------------------------------------------------------


@dataclass(frozen=True)
class Level:
    layers: int
    divisions: tuple[int, ...]

    def cell_size(self, extents) -> float:
        return max(e / n for e, n in zip(extents, self.divisions))


def nested_plan(extents, layers: int, epsilon: float, *, M0: int = 4, K_hat: int = 16, growth: int = 2,
                resolution: float = 4.0, build_axis: int | None = None) -> list[Level]:
    """Levels (M_i, delta_H) with delta_H = H / (M_i K_hat), then halve delta_H until delta_H <= eps / resolution."""
    extents = tuple(float(e) for e in extents)
    b = len(extents) - 1 if build_axis is None else build_axis
    H = extents[b]
    if M0 < 1 or M0 > layers or growth < 2 or K_hat < 1:
        raise ConfigError("nesting plan needs 1 <= M0 <= M, growth >= 2, K_hat >= 1", "nesting")

    def divisions(n_build):
        h = H / n_build
        out = []
        for e in extents:
            r = e / h
            if abs(r - round(r)) > 1e-9 * r:
                raise ConfigError(f"extent {e} is not a multiple of the mesh width {h}", "nesting")
            out.append(int(round(r)))
        return tuple(out)

    plan = []
    M = M0
    while True:
        plan.append(Level(M, divisions(M * K_hat)))
        if M == layers:
            break
        M = min(M * growth, layers)
    n_build = plan[-1].divisions[b]
    while H / n_build > epsilon / resolution + 1e-15:
        n_build *= 2
        plan.append(Level(layers, divisions(n_build)))
    return plan


def transfer(values: np.ndarray, coarse, fine) -> np.ndarray:
    """Nodal transfer between level meshes (refinement or general P1 interpolation)."""
    if is_refinement(coarse, fine):
        return prolongate(values, coarse, fine)
    return interpolate(values, coarse, fine.points)


def transfer_design(x: np.ndarray, src: Problem, dst: Problem) -> np.ndarray:
    phi = src.design.phases(x)
    phi_f = transfer(phi, src.mesh, dst.mesh)
    return dst.design.from_phases(phi_f)


def transfer_pdas(state: PDASState, src: Problem, dst: Problem) -> PDASState:
    """Move the PDAS iterate and multipliers; nodal multipliers are transferred as densities."""
    ds, dd = src.design, dst.design
    Ns = ds.n_phases if not ds.scalar else 1
    ws, wd = ds.weights, dst.design.weights
    y = transfer_design(state.y, src, dst)
    mu = transfer((state.mu.reshape(ds.n_nodes, Ns) / ws[:, None]), src.mesh, dst.mesh) * wd[:, None]
    if ds.scalar:
        kappa = state.kappa.copy()
    else:
        node = transfer(state.kappa[: ds.n_nodes] / ws, src.mesh, dst.mesh) * wd
        kappa = np.concatenate([node, state.kappa[ds.n_nodes:]])
    return PDASState(y, kappa, mu.ravel())


def nested_run(build_problem, plan: list[Level], cfg: VMPTConfig, x0=None, *, seed: int | None = 0,
               callback=None):
    """Solve on each level and hand iterate, lambda and PDAS state to the next.

    ``build_problem(level)`` returns the :class:`Problem` for a plan level.
    """
    results = []
    prev_problem = prev = None
    for i, lev in enumerate(plan):
        problem = build_problem(lev)
        if prev is None:
            x = initialize(problem, seed) if x0 is None else np.asarray(x0, dtype=float)
            warm, lam = None, None
        else:
            x = project(problem, transfer_design(prev.x, prev_problem, problem))
            warm = transfer_pdas(prev.pdas, prev_problem, problem) if prev.pdas is not None else None
            lam = prev.lam
        res = vmpt_run(problem, cfg, x, warm=warm, lam=lam, level=i, callback=callback)
        results.append(res)
        prev_problem, prev = problem, res
    return results


def combined_history(results) -> list:
    return [row for r in results for row in r.history]
