"""Numerical checks of the slice inequalities and of the reduced gradient.

Poincare and Korn quotients are extremal generalized eigenvalues of small
dense matrices assembled on the built part of a box mesh, with the
displacement fixed on the building plate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import Scatter, ScalarForms, elasticity_blocks, laplace_blocks, vector_dofs
from .errors import ConfigError
from .mesh import Mesh, MeshSpec, build_mesh

DENSE_LIMIT = 3000  # dofs; beyond this the dense eigensolves get slow


def _free_nodes(mesh: Mesh, k: int, layers: int):
    sl = mesh.slice(k, layers)
    if len(sl.plate_nodes) == 0:
        raise ConfigError("building plate is empty", "boundary.plate")
    used = np.zeros(mesh.n_nodes, dtype=bool)
    used[mesh.cells[sl.element_mask].ravel()] = True
    fixed = np.zeros(mesh.n_nodes, dtype=bool)
    fixed[sl.plate_nodes] = True
    free = np.flatnonzero(used & ~fixed)
    if len(free) == 0:
        raise ConfigError("slice too small for a nontrivial field", "verify")
    return sl, free


def _dense(M, idx):
    M = sp.csr_matrix(M)[idx][:, idx]
    if M.shape[0] > DENSE_LIMIT:
        raise ValueError(f"{M.shape[0]} dofs exceed the dense eigensolve limit {DENSE_LIMIT}")
    return M.toarray()


def _scalar_forms(mesh, element_mask):
    forms = ScalarForms(mesh)
    w = element_mask.astype(float)
    return forms.masked_stiffness(w), forms.masked_mass(w)


def _vector_forms(mesh, element_mask):
    """Full-gradient, symmetric-gradient and L2 Gram matrices of P1 vector fields."""
    d = mesh.dim
    dofs = vector_dofs(mesh.cells, d)
    scatter = Scatter(dofs, mesh.n_nodes * d)
    w = element_mask.astype(float)[:, None, None]
    _, Kmu = elasticity_blocks(mesh)
    lap = laplace_blocks(mesh)
    nv = d + 1
    grad = np.einsum("eab,ij->eaibj", lap, np.eye(d)).reshape(len(lap), nv * d, nv * d)
    forms = ScalarForms(mesh)
    mass_s = forms.masked_mass(element_mask.astype(float))
    G = scatter(grad * w)
    S = scatter(0.5 * Kmu * w)  # (E(u), E(v))
    Mv = sp.kron(mass_s, sp.identity(d), format="csr")
    return G, S, Mv


def poincare_quotient(mesh: Mesh, k: int, layers: int | None = None) -> float:
    """max ||y|| / ||grad y|| over P1 functions on the slice vanishing on the plate."""
    layers = mesh.spec.layers if layers is None else layers
    sl, free = _free_nodes(mesh, k, layers)
    L, M = _scalar_forms(mesh, sl.element_mask)
    lam_min = sla.eigh(_dense(L, free), _dense(M, free), eigvals_only=True, subset_by_index=[0, 0])[0]
    return float(1.0 / np.sqrt(lam_min))


def rayleigh_poincare(mesh: Mesh, y: np.ndarray, element_mask=None) -> float:
    """||y|| / ||grad y|| for a given nodal field; zero fields are rejected."""
    mask = np.ones(mesh.n_elements, dtype=bool) if element_mask is None else element_mask
    L, M = _scalar_forms(mesh, mask)
    num, den = float(y @ (M @ y)), float(y @ (L @ y))
    if den <= 0:
        raise ValueError("quotient undefined for fields with zero gradient")
    return float(np.sqrt(num / den))


def _vector_free(mesh, free):
    d = mesh.dim
    return (free[:, None] * d + np.arange(d)).ravel()


def korn_quotient(mesh: Mesh, k: int, layers: int | None = None) -> float:
    """max ||grad u||^2 / ||E(u)||^2 over P1 vector fields on the slice vanishing on the plate."""
    layers = mesh.spec.layers if layers is None else layers
    sl, free = _free_nodes(mesh, k, layers)
    G, S, _ = _vector_forms(mesh, sl.element_mask)
    idx = _vector_free(mesh, free)
    n = len(idx)
    top = sla.eigh(_dense(G, idx), _dense(S, idx), eigvals_only=True, subset_by_index=[n - 1, n - 1])[0]
    return float(top)


def rayleigh_korn(mesh: Mesh, u: np.ndarray) -> float:
    G, S, _ = _vector_forms(mesh, np.ones(mesh.n_elements, dtype=bool))
    u = np.asarray(u, dtype=float).ravel()
    return float((u @ (G @ u)) / (u @ (S @ u)))


def coercivity_constant(mesh: Mesh, k: int, layers: int | None = None) -> float:
    """min ||E(u)||^2 / ||u||^2_{H^1} on the slice."""
    layers = mesh.spec.layers if layers is None else layers
    sl, free = _free_nodes(mesh, k, layers)
    G, S, Mv = _vector_forms(mesh, sl.element_mask)
    idx = _vector_free(mesh, free)
    return float(sla.eigh(_dense(S, idx), _dense(G + Mv, idx), eigvals_only=True, subset_by_index=[0, 0])[0])


@dataclass
class VerificationReport:
    dim: int
    heights: list
    poincare: list
    korn: list
    coercivity: list
    gradient: dict = field(default_factory=dict)

    @property
    def korn_reference(self) -> float:
        return self.korn[0]

    def checks(self) -> dict:
        d = self.dim
        H = self.heights[0]
        K0 = self.korn_reference
        bound = 2 ** (d - 1)
        out = {
            "poincare_le_h": all(q <= h * (1 + 1e-10) for q, h in zip(self.poincare, self.heights)),
            "korn_bounded": all(K <= bound * K0 * (1 + 1e-8) for K in self.korn),
            "coercivity_bounded": all(
                c >= 1.0 / (bound * K0 * (1.0 + H**2)) * (1 - 1e-8) for c in self.coercivity
            ),
            "quotients_nonnegative": all(q >= 0 for q in self.poincare + self.korn + self.coercivity),
        }
        if self.gradient:
            out["gradient_fd"] = self.gradient.get("max_error", np.inf) <= self.gradient.get("tol", 1e-5)
        return out

    @property
    def passed(self) -> bool:
        return all(self.checks().values())

    def as_dict(self) -> dict:
        out = {"dim": self.dim}
        for i, h in enumerate(self.heights):
            out[f"h{i}"] = h
            out[f"poincare{i}"] = self.poincare[i]
            out[f"korn{i}"] = self.korn[i]
            out[f"coercivity{i}"] = self.coercivity[i]
        for key, val in self.gradient.items():
            if np.isscalar(val):
                out[f"gradient_{key}"] = val
        for key, ok in self.checks().items():
            out[f"check_{key}"] = ok
        out["passed"] = self.passed
        return out

    def text(self) -> str:
        lines = [f"slice inequalities (d = {self.dim})", f"{'h':>10} {'poincare':>12} {'korn':>12} {'coercivity':>12}"]
        for row in zip(self.heights, self.poincare, self.korn, self.coercivity):
            lines.append("{:10.4g} {:12.6g} {:12.6g} {:12.6g}".format(*row))
        if self.gradient:
            lines.append(f"gradient audit: max relative error {self.gradient['max_error']:.3e}")
        for key, ok in self.checks().items():
            lines.append(f"{key}: {'ok' if ok else 'FAILED'}")
        return "\n".join(lines)


def slice_study(extents=(1.0, 1.0), divisions=(8, 8), fractions=(1, 2, 4)) -> VerificationReport:
    """Quotients on the slices of height H / f for each f in ``fractions``."""
    layers = int(np.lcm.reduce(np.asarray(fractions)))
    mesh = build_mesh(MeshSpec(tuple(extents), tuple(divisions), layers=layers))
    H = mesh.spec.height
    heights, P, K, C = [], [], [], []
    for f in fractions:
        k = layers // f
        heights.append(H / f)
        P.append(poincare_quotient(mesh, k))
        K.append(korn_quotient(mesh, k))
        C.append(coercivity_constant(mesh, k))
    return VerificationReport(mesh.dim, heights, P, K, C)


def mass_free_directions(design, count: int, seed: int = 0) -> np.ndarray:
    """Random design directions in the kernel of the equality constraints."""
    rng = np.random.default_rng(seed)
    E = sp.csr_matrix(design.eq_matrix)
    gram = (E @ E.T).tocsc()
    dirs = []
    for _ in range(count):
        z = rng.standard_normal(design.n_vars)
        z -= E.T @ spla.spsolve(gram, E @ z)
        dirs.append(z / np.linalg.norm(z))
    return np.array(dirs)


def gradient_audit(problem, x, directions, steps=(1e-4, 1e-5, 1e-6)) -> dict:
    """Central-difference check of j and of its terms F, W, E along each direction."""
    st = problem.evaluate(x)
    g = st.gradient()
    terms = st.term_gradients()
    rows = []
    for z in np.atleast_2d(directions):
        exact = {"j": float(g @ z), **{t: float(terms[t] @ z) for t in ("F", "W", "E")}}
        errs = {t: [] for t in exact}
        for t in steps:
            cp = problem.evaluate(x + t * z).cost
            cm = problem.evaluate(x - t * z).cost
            fd = {"j": (cp.j - cm.j) / (2 * t), "F": (cp.F - cm.F) / (2 * t),
                  "W": (cp.W - cm.W) / (2 * t), "E": (cp.E - cm.E) / (2 * t)}
            for key in exact:
                errs[key].append(abs(fd[key] - exact[key]) / max(abs(exact[key]), 1e-300))
        rows.append({"exact": exact, "errors": errs, "best": {key: min(v) for key, v in errs.items()}})
    return {
        "steps": list(steps),
        "directions": rows,
        "max_error": max(r["best"]["j"] for r in rows),
        "tol": 1e-5,
    }
