"""Linear elasticity for the final structure (MS) and the partially built structures (AMS).

Every system is P1 on the shared mesh.  The stiffness coefficient uses the
vertex average of the phase field on each element, so per element

    lambda_e = phibar^T Lam phibar,   Lam_ij = lambda_{max(i, j)},

and analogously for mu.  Loads are affine in the phase field, so their
derivatives are constant matrices.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import Scatter, ScalarForms, elasticity_blocks, facet_mass, vector_dofs
from .errors import ConfigError, InvariantViolation, SolverError
from .mesh import DIRICHLET, NEUMANN, Mesh

# -- materials ---------------------------------------------------------------------------


def _as_table(values, n_phases, key):
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 1 and arr.size == n_phases:
        arr = np.stack([arr, arr], axis=1)
    if arr.shape != (n_phases, 2):
        raise ConfigError(f"expected {n_phases} Lame pairs, got shape {arr.shape}", key)
    return arr


@dataclass(frozen=True)
class MaterialSet:
    """Lame pairs per phase for the final structure and during construction.

    ``lame`` and each entry of ``construction`` are ``(N, 2)`` tables of
    ``(lambda, mu)``.  Rows flagged in ``ersatz`` (default: the void row only)
    are multiplied by ``epsilon**2``.  ``construction`` is indexed by the depth
    below the current top layer; its last table applies to all deeper layers.
    """

    lame: np.ndarray
    epsilon: float
    construction: np.ndarray | None = None
    ersatz: tuple[bool, ...] | None = None
    construction_ersatz: tuple[bool, ...] | None = None

    def __post_init__(self):
        lame = np.asarray(self.lame, dtype=float)
        N = lame.shape[0]
        lame = _as_table(lame, N, "materials.lame")
        cons = lame[None] if self.construction is None else np.asarray(self.construction, dtype=float)
        if cons.ndim == 2:
            cons = cons[None]
        if cons.ndim != 3 or cons.shape[1:] != (N, 2):
            raise ConfigError(f"construction tables must have shape (depths, {N}, 2)", "materials.construction")
        default = tuple([False] * (N - 1) + [True])
        ersatz = tuple(bool(b) for b in (self.ersatz or default))
        cersatz = tuple(bool(b) for b in (self.construction_ersatz or ersatz))
        if len(ersatz) != N or len(cersatz) != N:
            raise ConfigError(f"ersatz flags need {N} entries", "materials.ersatz")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive", "phases.epsilon")
        object.__setattr__(self, "lame", lame)
        object.__setattr__(self, "construction", cons)
        object.__setattr__(self, "ersatz", ersatz)
        object.__setattr__(self, "construction_ersatz", cersatz)
        if np.any(lame <= 0) or np.any(cons <= 0):
            raise ConfigError("Lame parameters must be positive", "materials")
        self._check_order(self.ms_table(), "materials.lame")
        for depth in range(cons.shape[0]):
            self._check_order(self.construction_table(depth), "materials.construction")

    @staticmethod
    def _check_order(table, key):
        if np.any(np.diff(table, axis=0) > 1e-14 * table.max()):
            raise ConfigError("phases must be ordered from stiffest to weakest", key)

    @property
    def n_phases(self) -> int:
        return self.lame.shape[0]

    @property
    def depths(self) -> int:
        return self.construction.shape[0]

    def _scaled(self, table, flags):
        scale = np.where(flags, self.epsilon**2, 1.0)
        return table * scale[:, None]

    def ms_table(self) -> np.ndarray:
        return self._scaled(self.lame, self.ersatz)

    def construction_table(self, depth: int) -> np.ndarray:
        depth = min(max(int(depth), 0), self.depths - 1)
        return self._scaled(self.construction[depth], self.construction_ersatz)

    def with_epsilon(self, epsilon: float) -> "MaterialSet":
        return MaterialSet(self.lame, epsilon, self.construction, self.ersatz, self.construction_ersatz)


def interaction(values: np.ndarray) -> np.ndarray:
    """``V_ij = values[max(i, j)]``."""
    idx = np.arange(len(values))
    return np.asarray(values)[np.maximum.outer(idx, idx)]


def interpolate_tensor(phi_point, table) -> tuple[float, float]:
    """Lame pair of C(phi) = sum_ij phi_i phi_j C^{max(i,j)} at one point."""
    phi = np.asarray(phi_point, dtype=float)
    table = np.asarray(table, dtype=float)
    lam = phi @ interaction(table[:, 0]) @ phi
    mu = phi @ interaction(table[:, 1]) @ phi
    return float(lam), float(mu)


def tensor_action(M, lam, mu):
    M = np.asarray(M, dtype=float)
    return lam * np.trace(M) * np.eye(M.shape[0]) + 2.0 * mu * M


# -- loads ----------------------------------------------------------------------------------


@dataclass(frozen=True)
class LoadTerm:
    """Vector load ``c0 + sum_i phi_i c_i`` with constant coefficients."""

    constant: np.ndarray
    per_phase: np.ndarray

    def __post_init__(self):
        c0 = np.asarray(self.constant, dtype=float)
        ci = np.asarray(self.per_phase, dtype=float)
        if ci.ndim != 2 or c0.shape != (ci.shape[1],):
            raise ConfigError("load needs a d-vector constant and an (N, d) phase table", "forces")
        object.__setattr__(self, "constant", c0)
        object.__setattr__(self, "per_phase", ci)

    @classmethod
    def uniform(cls, vector, n_phases):
        vector = np.asarray(vector, dtype=float)
        return cls(vector, np.zeros((n_phases, len(vector))))

    @classmethod
    def gravity(cls, c_grav, n_phases, dim, axis=None):
        """-c_grav (1 - phi_N) e_axis, written as -c_grav e + c_grav phi_N e."""
        e = np.zeros(dim)
        e[dim - 1 if axis is None else axis] = 1.0
        per = np.zeros((n_phases, dim))
        per[-1] = c_grav * e
        return cls(-c_grav * e, per)

    def value(self, phi):
        return self.constant + np.asarray(phi, dtype=float) @ self.per_phase

    def vanishes_on_void(self) -> bool:
        return bool(np.allclose(self.constant + self.per_phase[-1], 0.0, atol=1e-14))


@dataclass(frozen=True)
class ForceSpec:
    """Body force and Neumann traction of MS, construction load of AMS."""

    body: LoadTerm | None = None
    traction: LoadTerm | None = None
    construction: LoadTerm | None = None
    top_layer_only: bool = False

    def __post_init__(self):
        if self.construction is not None and not self.construction.vanishes_on_void():
            raise ConfigError("construction load must vanish on pure void", "forces.construction")


# -- systems ----------------------------------------------------------------------------------


@dataclass
class Context:
    """Static data of one elasticity system: support, Dirichlet dofs, tables, loads."""

    name: str
    layer: int  # 0 for MS
    element_mask: np.ndarray
    free: np.ndarray
    lam_tab: np.ndarray  # (ne, N, N), zero outside the support
    mu_tab: np.ndarray
    loads: list = field(default_factory=list)  # (scalar matrix n x n, LoadTerm)


class Mechanics:
    """Builds and solves MS and all AMS layer systems of a mesh."""

    def __init__(self, mesh: Mesh, materials: MaterialSet, forces: ForceSpec, layers: int | None = None,
                 threads: int = 1):
        self.mesh = mesh
        self.materials = materials
        self.forces = forces
        self.layers = mesh.spec.layers if layers is None else int(layers)
        self.threads = max(1, int(threads))
        self.N = materials.n_phases
        d = mesh.dim
        self.d = d
        self.ndof = mesh.n_nodes * d
        self.Klam, self.Kmu = elasticity_blocks(mesh)
        self.elem_dofs = vector_dofs(mesh.cells, d)
        self.scatter = Scatter(self.elem_dofs, self.ndof)
        self.forms = ScalarForms(mesh)
        for term in (forces.body, forces.traction, forces.construction):
            if term is not None and term.per_phase.shape != (self.N, d):
                raise ConfigError(f"load phase table must have shape ({self.N}, {d})", "forces")
        self.ms = self._ms_context()
        self._ams: dict[int, Context] = {}

    # static contexts

    def _free(self, node_mask, fixed_mask):
        nodes = np.flatnonzero(node_mask & ~fixed_mask)
        return (nodes[:, None] * self.d + np.arange(self.d)).ravel()

    def _tables(self, table, ne):
        lam = np.broadcast_to(interaction(table[:, 0]), (ne, self.N, self.N)).copy()
        mu = np.broadcast_to(interaction(table[:, 1]), (ne, self.N, self.N)).copy()
        return lam, mu

    def _ms_context(self) -> Context:
        mesh = self.mesh
        fixed = mesh.node_tags.get(DIRICHLET)
        if fixed is None or not fixed.any():
            raise ConfigError("the clamped boundary is empty", "boundary.dirichlet")
        ne = mesh.n_elements
        lam, mu = self._tables(self.materials.ms_table(), ne)
        loads = []
        if self.forces.body is not None:
            loads.append((self.forms.mass, self.forces.body))
        if self.forces.traction is not None:
            mask = mesh.facet_tags.get(NEUMANN)
            if mask is None or not mask.any():
                raise ConfigError("traction given but the loaded boundary is empty", "boundary.neumann")
            loads.append((facet_mass(mesh, mask), self.forces.traction))
        used = np.zeros(mesh.n_nodes, dtype=bool)
        used[mesh.cells.ravel()] = True
        return Context("ms", 0, np.ones(ne, dtype=bool), self._free(used, fixed), lam, mu, loads)

    def element_layers(self) -> np.ndarray:
        """Layer index (1..M) of each element with respect to ``self.layers``."""
        spec = self.mesh.spec
        delta = spec.height / self.layers
        top = self.mesh.points[self.mesh.cells, spec.build_axis].max(axis=1)
        return np.ceil((top - 1e-12 * spec.height) / delta).astype(int).clip(1, self.layers)

    def ams(self, k: int) -> Context:
        if k not in self._ams:
            self._ams[k] = self._ams_context(k)
        return self._ams[k]

    def _ams_context(self, k: int) -> Context:
        mesh = self.mesh
        sl = mesh.slice(k, self.layers)
        if len(sl.plate_nodes) == 0:
            raise ConfigError(f"building plate does not touch layer slice {k}", "boundary.plate")
        emask = sl.element_mask
        layer = self.element_layers()
        depth = np.clip(k - layer, 0, None)
        ne = mesh.n_elements
        lam = np.zeros((ne, self.N, self.N))
        mu = np.zeros((ne, self.N, self.N))
        for dep in np.unique(depth[emask]):
            sel = emask & (depth == dep)
            table = self.materials.construction_table(dep)
            lam[sel] = interaction(table[:, 0])
            mu[sel] = interaction(table[:, 1])
        loads = []
        if self.forces.construction is not None:
            support = emask & (layer == k) if self.forces.top_layer_only else emask
            loads.append((self.forms.masked_mass(support.astype(float)), self.forces.construction))
        used = np.zeros(mesh.n_nodes, dtype=bool)
        used[mesh.cells[emask].ravel()] = True
        plate = np.zeros(mesh.n_nodes, dtype=bool)
        plate[sl.plate_nodes] = True
        return Context(f"ams{k}", k, emask, self._free(used, plate), lam, mu, loads)

    # assembly and solves

    def phibar(self, phi):
        return np.asarray(phi, dtype=float)[self.mesh.cells].mean(axis=1)

    def assemble(self, phi, ctx: Context, phibar=None) -> "System":
        return System(self, ctx, np.asarray(phi, dtype=float), self.phibar(phi) if phibar is None else phibar)

    def solve_all(self, phi):
        """Factor and solve MS and every AMS layer; layer systems run in a thread pool."""
        phi = np.asarray(phi, dtype=float)
        pb = self.phibar(phi)
        ctxs = [self.ms] + [self.ams(k) for k in range(1, self.layers + 1)]

        def work(ctx):
            s = self.assemble(phi, ctx, pb)
            s.solve_state()
            return s

        if self.threads > 1:
            with ThreadPoolExecutor(self.threads) as pool:
                systems = list(pool.map(work, ctxs))
        else:
            systems = [work(c) for c in ctxs]
        return systems[0], systems[1:]


class System:
    """One assembled and factored elasticity system for a fixed phase field."""

    def __init__(self, mech: Mechanics, ctx: Context, phi, phibar):
        self.mech = mech
        self.ctx = ctx
        self.phi = phi
        self.phibar = phibar
        mask = ctx.element_mask
        self.lam_grad = np.einsum("eij,ej->ei", ctx.lam_tab, phibar)
        self.mu_grad = np.einsum("eij,ej->ei", ctx.mu_tab, phibar)
        self.lam_e = np.einsum("ei,ei->e", self.lam_grad, phibar)
        self.mu_e = np.einsum("ei,ei->e", self.mu_grad, phibar)
        if np.any(self.lam_e[mask] <= 0) or np.any(self.mu_e[mask] <= 0):
            raise InvariantViolation(f"{ctx.name}: nonpositive interpolated stiffness; phase field left the simplex")
        blocks = self.lam_e[:, None, None] * mech.Klam + self.mu_e[:, None, None] * mech.Kmu
        K = mech.scatter(blocks)
        free = ctx.free
        self.B = K[free][:, free].tocsc()
        try:
            self.lu = spla.splu(self.B, permc_spec="MMD_AT_PLUS_A")
        except RuntimeError as exc:
            raise InvariantViolation(f"{ctx.name}: singular stiffness matrix ({exc})") from exc
        self.u = None
        self.uf = None

    # loads

    def load(self) -> np.ndarray:
        """Full-dof load vector r(phi)."""
        n, d = self.mech.mesh.n_nodes, self.mech.d
        r = np.zeros((n, d))
        for Mx, term in self.ctx.loads:
            r += Mx @ term.value(self.phi)
        return r.ravel()

    def load_derivative(self, zeta) -> np.ndarray:
        n, d = self.mech.mesh.n_nodes, self.mech.d
        r = np.zeros((n, d))
        for Mx, term in self.ctx.loads:
            r += Mx @ (np.asarray(zeta, dtype=float) @ term.per_phase)
        return r.ravel()

    def load_derivative_T(self, v_full) -> np.ndarray:
        v = np.asarray(v_full).reshape(-1, self.mech.d)
        out = np.zeros((self.mech.mesh.n_nodes, self.mech.N))
        for Mx, term in self.ctx.loads:
            out += (Mx.T @ v) @ term.per_phase.T
        return out

    # solves

    def solve(self, rhs_free: np.ndarray) -> np.ndarray:
        return self.lu.solve(np.asarray(rhs_free, dtype=float))

    def expand(self, x_free) -> np.ndarray:
        full = np.zeros(self.mech.ndof)
        full[self.ctx.free] = x_free
        return full

    def solve_state(self, rtol: float = 1e-10):
        rhs = self.load()[self.ctx.free]
        uf = self.solve(rhs)
        res = np.linalg.norm(self.B @ uf - rhs)
        scale = np.linalg.norm(rhs)
        if res > rtol * scale:
            uf = uf + self.solve(rhs - self.B @ uf)
            res = np.linalg.norm(self.B @ uf - rhs)
            if res > rtol * scale:
                raise SolverError(f"{self.ctx.name}: residual {res / scale:.2e} above {rtol:.0e}",
                                  {"residual": res / scale})
        self.uf = uf
        self.u = self.expand(uf)
        ue = self.u[self.mech.elem_dofs]
        self._rl = np.einsum("eij,ej->ei", self.mech.Klam, ue)
        self._rm = np.einsum("eij,ej->ei", self.mech.Kmu, ue)
        return self.u

    def _need_state(self):
        if self.u is None:
            raise SolverError(f"{self.ctx.name}: state not solved for the current phase field")

    def compliance(self) -> float:
        """r^T u, evaluated as 2 r^T u - u^T B u so solver error enters only quadratically."""
        self._need_state()
        rf = self.load()[self.ctx.free]
        return float(2.0 * (rf @ self.uf) - self.uf @ (self.B @ self.uf))

    def energy(self) -> float:
        self._need_state()
        return float(self.uf @ (self.B @ self.uf))

    # derivative of the state equation residual: F zeta = r'[zeta] - K'[zeta] u

    def stiffness_derivative(self, zeta) -> np.ndarray:
        """K'(phi)[zeta] u as a full-dof vector."""
        self._need_state()
        mech = self.mech
        zb = np.asarray(zeta, dtype=float)[mech.mesh.cells].mean(axis=1)
        cl = 2.0 * np.einsum("ei,ei->e", self.lam_grad, zb)
        cm = 2.0 * np.einsum("ei,ei->e", self.mu_grad, zb)
        vals = cl[:, None] * self._rl + cm[:, None] * self._rm
        return np.bincount(mech.elem_dofs.ravel(), weights=vals.ravel(), minlength=mech.ndof)

    def stiffness_derivative_T(self, v_full) -> np.ndarray:
        """Transpose of ``zeta -> K'(phi)[zeta] u`` applied to a full-dof vector; shape (n, N)."""
        self._need_state()
        mech = self.mech
        ve = np.asarray(v_full)[mech.elem_dofs]
        cl = np.einsum("ei,ei->e", self._rl, ve)
        cm = np.einsum("ei,ei->e", self._rm, ve)
        nv = mech.mesh.cells.shape[1]
        per = (2.0 / nv) * (cl[:, None] * self.lam_grad + cm[:, None] * self.mu_grad)  # (ne, N)
        out = np.zeros((mech.mesh.n_nodes, mech.N))
        for i in range(mech.N):
            out[:, i] = np.bincount(mech.mesh.cells.ravel(), weights=np.repeat(per[:, i], nv),
                                    minlength=mech.mesh.n_nodes)
        return out

    def apply_F(self, zeta) -> np.ndarray:
        """Free-dof right-hand side of the linearized state equation."""
        return (self.load_derivative(zeta) - self.stiffness_derivative(zeta))[self.ctx.free]

    def apply_FT(self, v_free) -> np.ndarray:
        v = self.expand(v_free)
        return self.load_derivative_T(v) - self.stiffness_derivative_T(v)

    def F_matrix(self) -> sp.csr_matrix:
        """Explicit F as (n_free x n_nodes*N); intended for small meshes and tests."""
        mech = self.mech
        nN = mech.mesh.n_nodes * mech.N
        cols = []
        for j in range(nN):
            z = np.zeros(nN)
            z[j] = 1.0
            cols.append(sp.csr_matrix(self.apply_F(z.reshape(-1, mech.N))[:, None]))
        return sp.hstack(cols, format="csr")

    def linearized(self, zeta) -> np.ndarray:
        """Full-dof w = S'(phi)[zeta], reusing the factorization."""
        self._need_state()
        return self.expand(self.solve(self.apply_F(zeta)))

    def compliance_gradient(self) -> np.ndarray:
        """Nodal gradient (n, N) of phi -> r(phi)^T u(phi); the adjoint equals the state."""
        self._need_state()
        return 2.0 * self.load_derivative_T(self.u) - self.stiffness_derivative_T(self.u)


# -- functional interface -----------------------------------------------------------------------


def assemble_system(phi, mechanics: Mechanics, k: int = 0) -> System:
    """Factored system for MS (``k=0``) or AMS layer ``k``."""
    ctx = mechanics.ms if k == 0 else mechanics.ams(k)
    return mechanics.assemble(phi, ctx)


def solve_MS(phi, mechanics: Mechanics) -> np.ndarray:
    s = assemble_system(phi, mechanics, 0)
    return s.solve_state().reshape(-1, mechanics.d)


def solve_AMS(phi, k: int, mechanics: Mechanics) -> np.ndarray:
    if not 1 <= k <= mechanics.layers:
        raise ValueError(f"layer {k} outside 1..{mechanics.layers}")
    s = assemble_system(phi, mechanics, k)
    return s.solve_state().reshape(-1, mechanics.d)


def solve_linearized(system: System, zeta) -> np.ndarray:
    if system.u is None:
        raise SolverError("linearized solve needs the cached state")
    return system.linearized(zeta).reshape(-1, system.mech.d)


def hardening_tables(base: np.ndarray, material_values) -> np.ndarray:
    """Depth tables where the material rows take the given values in turn.

    ``material_values`` lists the Lame value (lambda = mu) of the first phase
    at depth 0, 1, ...; the remaining rows of ``base`` are kept.
    """
    base = np.asarray(base, dtype=float)
    out = np.repeat(base[None], len(material_values), axis=0)
    for depth, v in enumerate(material_values):
        out[depth, 0] = v
    return out
