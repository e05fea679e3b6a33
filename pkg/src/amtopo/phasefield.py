"""Phase fields on the Gibbs simplex, the obstacle potential and the Ginzburg-Landau energy.

Fields are nodal arrays of shape ``(n_nodes, N)``; the last component is void.
Two-phase problems may be optimized in the reduced variable
``phi_tilde = phi_1 - phi_2 in [-1, 1]`` through :class:`Design`.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError

FEAS_TOL = 1e-10


def default_potential(n_phases: int) -> np.ndarray:
    """Obstacle matrix with 0 diagonal, 0.1 between materials and 1 against void."""
    if n_phases < 2:
        raise ConfigError("at least two phases are required", "phases.count")
    A = np.full((n_phases, n_phases), 0.1)
    A[-1, :] = 1.0
    A[:, -1] = 1.0
    np.fill_diagonal(A, 0.0)
    return A


def check_potential(A: np.ndarray) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ConfigError("potential matrix must be square", "phases.potential")
    if not np.allclose(A, A.T):
        raise ConfigError("potential matrix must be symmetric", "phases.potential")
    if np.linalg.eigvalsh(A).min() >= 0:
        raise ConfigError("potential matrix needs a negative eigenvalue", "phases.potential")
    return A


def potential(v: np.ndarray, A: np.ndarray) -> np.ndarray:
    """Smooth branch 0.5 v^T A v, vectorized over leading axes."""
    v = np.asarray(v, dtype=float)
    return 0.5 * np.einsum("...i,ij,...j->...", v, A, v)


def potential_gradient(v: np.ndarray, A: np.ndarray) -> np.ndarray:
    return np.asarray(v, dtype=float) @ A


def scalar_potential(x):
    return 0.5 * (1.0 - np.asarray(x, dtype=float) ** 2)


def to_vector(phi_tilde: np.ndarray) -> np.ndarray:
    """(phi_1, phi_2) = ((1 + t) / 2, (1 - t) / 2)."""
    t = np.asarray(phi_tilde, dtype=float)
    return np.stack([0.5 * (1.0 + t), 0.5 * (1.0 - t)], axis=-1)


def from_vector(phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    if phi.shape[-1] != 2:
        raise ValueError(f"scalar reduction needs exactly two phases, got {phi.shape[-1]}")
    return phi[..., 0] - phi[..., 1]


def scalar_mass(mass: np.ndarray) -> float:
    mass = np.asarray(mass, dtype=float)
    return float(mass[0] - mass[1])


def vector_mass(mass_tilde: float) -> np.ndarray:
    return np.array([0.5 * (1.0 + mass_tilde), 0.5 * (1.0 - mass_tilde)])


class GinzburgLandau:
    """E(phi) = int eps/2 |grad phi|^2 + Psi(phi) / eps.

    The gradient term is integrated exactly for P1 fields, the potential
    by nodal (lumped) quadrature.
    """

    def __init__(self, stiffness: sp.spmatrix, node_weights: np.ndarray, epsilon: float, A: np.ndarray):
        if epsilon <= 0:
            raise ConfigError("interface parameter must be positive", "phases.epsilon")
        self.L = sp.csr_matrix(stiffness)
        self.w = np.asarray(node_weights, dtype=float)
        self.epsilon = float(epsilon)
        self.A = np.asarray(A, dtype=float)

    def energy(self, phi: np.ndarray) -> float:
        phi = np.asarray(phi, dtype=float)
        grad_term = 0.5 * self.epsilon * float(np.sum(phi * (self.L @ phi)))
        pot_term = float(self.w @ potential(phi, self.A)) / self.epsilon
        return grad_term + pot_term

    def gradient(self, phi: np.ndarray) -> np.ndarray:
        """Nodal representation g with E'(phi)[zeta] = sum(g * zeta)."""
        phi = np.asarray(phi, dtype=float)
        return self.epsilon * (self.L @ phi) + self.w[:, None] * (phi @ self.A) / self.epsilon

    def directional(self, phi: np.ndarray, zeta: np.ndarray) -> float:
        return float(np.sum(self.gradient(phi) * zeta))

    def second(self, zeta: np.ndarray, eta: np.ndarray) -> float:
        """E''[zeta, eta]; E is quadratic so this does not depend on phi."""
        zeta = np.asarray(zeta, dtype=float)
        eta = np.asarray(eta, dtype=float)
        return self.epsilon * float(np.sum(zeta * (self.L @ eta))) + float(
            np.sum(self.w[:, None] * (zeta @ self.A) * eta)
        ) / self.epsilon


def ginzburg_landau(phi, mesh, epsilon, A, forms=None) -> float:
    from .assembly import ScalarForms

    forms = forms or ScalarForms(mesh)
    return GinzburgLandau(forms.stiffness, mesh.node_weights, epsilon, A).energy(phi)


def ginzburg_landau_gradient(phi, mesh, epsilon, A, zeta=None, forms=None):
    """Assembled nodal gradient, or the directional derivative when ``zeta`` is given."""
    from .assembly import ScalarForms

    forms = forms or ScalarForms(mesh)
    gl = GinzburgLandau(forms.stiffness, mesh.node_weights, epsilon, A)
    return gl.gradient(phi) if zeta is None else gl.directional(phi, zeta)


class Design:
    """Optimization variable and admissible set.

    ``x`` is either the reduced scalar field (``scalar=True``, two phases,
    box ``[-1, 1]``) or the flattened node-major vector field on the Gibbs
    simplex.  In both cases ``phases(x) = offset + T x`` is affine.
    """

    def __init__(self, node_weights: np.ndarray, n_phases: int, mass, scalar: bool = False):
        w = np.asarray(node_weights, dtype=float)
        n = len(w)
        self.n_nodes = n
        self.n_phases = int(n_phases)
        self.scalar = bool(scalar)
        self.weights = w
        self.volume = float(w.sum())
        mass = np.atleast_1d(np.asarray(mass, dtype=float))
        if self.scalar:
            if self.n_phases != 2:
                raise ConfigError("the scalar formulation needs exactly two phases", "phases.scalar")
            if mass.size == 2:
                mass = np.array([scalar_mass(mass)])
            if mass.size != 1 or not -1.0 <= mass[0] <= 1.0:
                raise ConfigError("scalar mass must be a single value in [-1, 1]", "phases.mass")
            self.mass = mass
            self.n_vars = n
            self.T = sp.csr_matrix(
                (np.tile([0.5, -0.5], n), (np.arange(2 * n), np.repeat(np.arange(n), 2))), shape=(2 * n, n)
            )
            self.offset = np.full(2 * n, 0.5)
            self.lower = np.full(n, -1.0)
            self.upper = np.full(n, 1.0)
            self.eq_matrix = sp.csr_matrix(w[None, :])
            self.eq_rhs = np.array([mass[0] * self.volume])
        else:
            N = self.n_phases
            if mass.size != N or np.any(mass < 0) or abs(mass.sum() - 1.0) > 1e-12:
                raise ConfigError(f"mass must be {N} nonnegative values summing to 1", "phases.mass")
            self.mass = mass
            self.n_vars = n * N
            self.T = sp.identity(n * N, format="csr")
            self.offset = np.zeros(n * N)
            self.lower = np.zeros(n * N)
            self.upper = None
            sums = sp.kron(sp.identity(n), np.ones((1, N)), format="csr")
            rows = [sums]
            for i in range(N - 1):
                e = np.zeros((1, N))
                e[0, i] = 1.0
                rows.append(sp.kron(w[None, :], e, format="csr"))
            self.eq_matrix = sp.vstack(rows, format="csr")
            self.eq_rhs = np.concatenate([np.ones(n), mass[: N - 1] * self.volume])
        if self.upper is None:
            self.upper_bound = np.full(self.n_vars, np.inf)
        else:
            self.upper_bound = self.upper

    def phases(self, x: np.ndarray) -> np.ndarray:
        return (self.offset + self.T @ np.asarray(x, dtype=float)).reshape(self.n_nodes, self.n_phases)

    def from_phases(self, phi: np.ndarray) -> np.ndarray:
        phi = np.asarray(phi, dtype=float).reshape(self.n_nodes, self.n_phases)
        return from_vector(phi) if self.scalar else phi.ravel().copy()

    def pullback(self, g_phi: np.ndarray) -> np.ndarray:
        """Map a nodal functional on phase fields to the design variable."""
        return self.T.T @ np.asarray(g_phi, dtype=float).ravel()

    def push(self, dx: np.ndarray) -> np.ndarray:
        """Phase-field direction of a design direction."""
        return (self.T @ np.asarray(dx, dtype=float)).reshape(self.n_nodes, self.n_phases)

    def mean(self, x: np.ndarray) -> np.ndarray:
        return (self.weights @ self.phases(x)) / self.volume

    def feasibility(self, x: np.ndarray) -> dict:
        """Nodewise bound/simplex violation and violation of the mean-mass constraint."""
        x = np.asarray(x, dtype=float)
        phi = self.phases(x)
        bound = max(0.0, float(-phi.min()))
        sum_err = float(np.max(np.abs(phi.sum(axis=1) - 1.0)))
        target = vector_mass(self.mass[0]) if self.scalar else self.mass
        mass_err = float(np.max(np.abs(self.mean(x) - target)))
        return {"bound": bound, "sum": sum_err, "mass": mass_err}

    def is_feasible(self, x: np.ndarray, tol: float = FEAS_TOL) -> bool:
        f = self.feasibility(x)
        return max(f.values()) <= tol

    def mean_field(self) -> np.ndarray:
        """Constant design with the prescribed mean."""
        if self.scalar:
            return np.full(self.n_nodes, self.mass[0])
        return np.tile(self.mass, self.n_nodes)
