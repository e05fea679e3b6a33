"""Reduced cost j = F + beta1 W_delta + beta2 E, its gradient and the variable metrics."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import scipy.sparse as sp

from .elasticity import ForceSpec, MaterialSet, Mechanics, System
from .errors import ConfigError
from .mesh import Mesh
from .phasefield import Design, GinzburgLandau

METRICS = ("a1", "a2", "a3")


@dataclass(frozen=True)
class WeightScheme:
    """Layer weights omega(k delta) and the support of the construction load.

    ``W1``: omega = 1/h with gravity on the whole slice; ``W2``: omega = 1;
    ``W3``: omega = 1/h with gravity on the top layer only.  With
    ``normalize="volume"`` the 1/h weights become 1/|Omega_h| = 1/(h |Omega_B|).
    ``custom`` uses ``table`` (one weight per layer, bottom first).
    """

    kind: str = "W1"
    normalize: str = "height"
    table: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("W1", "W2", "W3", "custom"):
            raise ConfigError(f"unknown weight scheme {self.kind!r}", "cost.scheme")
        if self.normalize not in ("height", "volume"):
            raise ConfigError(f"unknown normalization {self.normalize!r}", "cost.normalize")
        if self.kind == "custom":
            if not self.table or any(w <= 0 for w in self.table):
                raise ConfigError("custom weights must be a nonempty positive table", "cost.table")

    @property
    def top_layer_only(self) -> bool:
        return self.kind == "W3"

    def weights(self, layers: int, height: float, base_area: float = 1.0) -> np.ndarray:
        h = height * np.arange(1, layers + 1) / layers
        if self.kind == "custom":
            if len(self.table) != layers:
                raise ConfigError(f"custom table has {len(self.table)} weights for {layers} layers", "cost.table")
            return np.asarray(self.table, dtype=float)
        if self.kind == "W2":
            return np.ones(layers)
        return 1.0 / (h * base_area) if self.normalize == "volume" else 1.0 / h

    def forces(self, forces: ForceSpec) -> ForceSpec:
        return ForceSpec(forces.body, forces.traction, forces.construction, self.top_layer_only)


@dataclass(frozen=True)
class CostBreakdown:
    F: float
    W: float
    E: float
    j: float
    beta1: float
    beta2: float

    @property
    def E_scalar(self) -> float:
        """Ginzburg-Landau energy in the reduced two-phase convention (twice E)."""
        return 2.0 * self.E

    def check(self, rtol: float = 1e-12) -> bool:
        total = self.F + self.beta1 * self.W + self.beta2 * self.E
        return abs(total - self.j) <= rtol * max(1.0, abs(self.j))

    def as_dict(self) -> dict:
        d = asdict(self)
        d["E_scalar"] = self.E_scalar
        return d


class Problem:
    """Everything needed to evaluate j and its derivatives on one mesh."""

    def __init__(
        self,
        mesh: Mesh,
        design: Design,
        materials: MaterialSet,
        forces: ForceSpec,
        *,
        beta1: float,
        beta2: float,
        epsilon: float,
        A: np.ndarray,
        scheme: WeightScheme = WeightScheme(),
        layers: int | None = None,
        threads: int = 1,
    ):
        if beta1 < 0 or beta2 < 0:
            raise ConfigError("cost weights must be nonnegative", "cost")
        self.mesh = mesh
        self.design = design
        self.materials = materials
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.epsilon = float(epsilon)
        self.scheme = scheme
        self.layers = mesh.spec.layers if layers is None else int(layers)
        self.mech = Mechanics(mesh, materials, scheme.forces(forces), self.layers, threads)
        self.gl = GinzburgLandau(self.mech.forms.stiffness, mesh.node_weights, epsilon, A)
        self.delta = mesh.spec.height / self.layers
        self.omega = scheme.weights(self.layers, mesh.spec.height, mesh.spec.base_area)
        N = design.n_phases
        L_vec = sp.kron(self.mech.forms.stiffness, sp.identity(N), format="csr")
        T = design.T
        self.L_design = (T.T @ L_vec @ T).tocsr()

    @property
    def layer_factors(self) -> np.ndarray:
        """delta * omega(k delta), the weight of F^c_k inside W_delta."""
        return self.delta * self.omega

    def evaluate(self, x) -> "State":
        return State(self, np.asarray(x, dtype=float))

    def cost(self, x) -> CostBreakdown:
        return self.evaluate(x).cost


class State:
    """States, cost and gradient at one design; the cache belongs to this design only."""

    def __init__(self, problem: Problem, x: np.ndarray):
        self.problem = problem
        self.x = x
        self.phi = problem.design.phases(x)
        self.ms, self.ams = problem.mech.solve_all(self.phi)
        p = problem
        F = mean_compliance(self.ms)
        self.self_weights = np.array([self_weight(s) for s in self.ams])
        W = overhang_penalty(self.self_weights, p.layer_factors)
        E = p.gl.energy(self.phi)
        self.cost = CostBreakdown(F, W, E, F + p.beta1 * W + p.beta2 * E, p.beta1, p.beta2)
        self._grad = None

    def gradient_phi(self) -> np.ndarray:
        p = self.problem
        g = self.ms.compliance_gradient()
        for fac, s in zip(p.layer_factors, self.ams):
            g = g + p.beta1 * fac * s.compliance_gradient()
        return g + p.beta2 * p.gl.gradient(self.phi)

    def gradient(self) -> np.ndarray:
        """Design-space vector g with j'(x)[dx] = g . dx."""
        if self._grad is None:
            self._grad = self.problem.design.pullback(self.gradient_phi())
        return self._grad

    def term_gradients(self) -> dict:
        """Separate design gradients of F, W_delta and E."""
        p = self.problem
        gw = np.zeros_like(self.phi)
        for fac, s in zip(p.layer_factors, self.ams):
            gw = gw + fac * s.compliance_gradient()
        return {
            "F": p.design.pullback(self.ms.compliance_gradient()),
            "W": p.design.pullback(gw),
            "E": p.design.pullback(p.gl.gradient(self.phi)),
        }

    def metric(self, variant: str = "a1") -> "Metric":
        return Metric(self, variant)


def mean_compliance(ms: System) -> float:
    return ms.compliance()


def self_weight(ams_k: System) -> float:
    return ams_k.compliance()


def overhang_penalty(self_weights, layer_factors) -> float:
    """W_delta = delta sum_k omega(k delta) F^c_k with a fixed summation order."""
    return float(sum(f * w for f, w in zip(layer_factors, self_weights)))


def reduced_cost(problem: Problem, x) -> CostBreakdown:
    return problem.cost(x)


def reduced_gradient(problem: Problem, x, direction=None):
    st = problem.evaluate(x)
    g = st.gradient()
    return g if direction is None else float(g @ direction)


class Metric:
    """Bilinear forms a1, a2, a3 on design space, applied matrix-free.

    a1(p, y) = beta2 eps (grad p, grad y)
    a2 adds 2 (F p)^T B^{-1} (F y) for MS
    a3 further adds 2 beta1 delta omega_j (F_j p)^T B_j^{-1} (F_j y) per layer
    """

    def __init__(self, state: State, variant: str = "a1"):
        if variant not in METRICS:
            raise ConfigError(f"unknown metric {variant!r}", "vmpt.metric")
        self.state = state
        self.variant = variant
        p = state.problem
        self.base = (p.beta2 * p.epsilon) * p.L_design
        self.systems: list[tuple[float, System]] = []
        if variant in ("a2", "a3"):
            self.systems.append((2.0, state.ms))
        if variant == "a3":
            self.systems += [(2.0 * p.beta1 * f, s) for f, s in zip(p.layer_factors, state.ams)]
        self.applications = 0

    @property
    def n(self) -> int:
        return self.base.shape[0]

    @property
    def matrix(self):
        """Sparse matrix of the form when it has one (a1), else None."""
        return None if self.systems else self.base

    def apply(self, p: np.ndarray) -> np.ndarray:
        self.applications += 1
        out = self.base @ p
        if self.systems:
            design = self.state.problem.design
            zeta = design.push(p)
            acc = np.zeros_like(zeta)
            for w, s in self.systems:
                if w == 0.0:
                    continue
                acc += w * s.apply_FT(s.solve(s.apply_F(zeta)))
            out = out + design.pullback(acc)
        return out

    def __call__(self, p, y) -> float:
        return float(np.asarray(y) @ self.apply(p))

    def diagonal(self) -> np.ndarray:
        """Diagonal of the a1 part; used for optional Jacobi preconditioning."""
        return self.base.diagonal()

    def dense(self) -> np.ndarray:
        """Full matrix by columns; only for tiny meshes."""
        return np.column_stack([self.apply(e) for e in np.eye(self.n)])


def metric_apply(state: State, variant: str, p, y) -> float:
    return Metric(state, variant)(p, y)
