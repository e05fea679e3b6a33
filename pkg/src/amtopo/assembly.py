"""P1 element kernels and a cached COO-to-CSR scatter for fixed sparsity."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp


class Scatter:
    """Sum per-element dense blocks into a CSR matrix with a precomputed pattern.

    The pattern depends only on the element dof table, so repeated assemblies
    with new element values cost one ``bincount``.
    """

    def __init__(self, elem_dofs: np.ndarray, n: int):
        elem_dofs = np.asarray(elem_dofs, dtype=np.int64)
        k = elem_dofs.shape[1]
        rows = np.repeat(elem_dofs, k, axis=1).ravel()
        cols = np.tile(elem_dofs, (1, k)).ravel()
        keys, self._inverse = np.unique(rows * n + cols, return_inverse=True)
        self._rows = keys // n
        self._cols = keys % n
        self._indptr = np.searchsorted(self._rows, np.arange(n + 1))
        self.shape = (n, n)
        self.nnz = len(keys)

    def __call__(self, blocks: np.ndarray) -> sp.csr_matrix:
        data = np.bincount(self._inverse, weights=np.asarray(blocks).ravel(), minlength=self.nnz)
        return sp.csr_matrix((data, self._cols.copy(), self._indptr.copy()), shape=self.shape)


def laplace_blocks(mesh) -> np.ndarray:
    """Element matrices of the scalar form (grad p, grad y)."""
    G = mesh.grads
    return mesh.volumes[:, None, None] * np.einsum("eka,ekb->eab", G, G)


def mass_blocks(volumes: np.ndarray, nv: int) -> np.ndarray:
    """Consistent P1 mass matrices of simplices with ``nv`` vertices."""
    ref = (np.ones((nv, nv)) + np.eye(nv)) / ((nv) * (nv + 1))
    return volumes[:, None, None] * ref[None]


def elasticity_blocks(mesh) -> tuple[np.ndarray, np.ndarray]:
    """Unit element matrices for the lambda and mu parts of isotropic elasticity.

    The local dof order is (vertex, component) with the component fastest, so
    ``K_e = lam_e * Klam[e] + mu_e * Kmu[e]`` integrates
    ``lam div u div v + 2 mu E(u):E(v)``.
    """
    G = mesh.grads  # (ne, d, d+1)
    ne, d, nv = G.shape
    vol = mesh.volumes[:, None, None]
    div = G.transpose(0, 2, 1).reshape(ne, nv * d)
    Klam = vol * div[:, :, None] * div[:, None, :]
    S = np.einsum("eka,ekb->eab", G, G)
    part1 = S[:, :, None, :, None] * np.eye(d)[None, None, :, None, :]
    part2 = np.einsum("nea,ncb->nacbe", G, G)
    Kmu = vol * (part1 + part2).reshape(ne, nv * d, nv * d)
    return Klam, Kmu


def vector_dofs(cells: np.ndarray, d: int) -> np.ndarray:
    return (cells[:, :, None] * d + np.arange(d)[None, None, :]).reshape(len(cells), -1)


def facet_mass(mesh, facet_mask: np.ndarray) -> sp.csr_matrix:
    """Consistent boundary mass matrix over the selected facets."""
    facets = mesh.facets[facet_mask]
    nv = facets.shape[1]
    blocks = mass_blocks(mesh.facet_areas[facet_mask], nv)
    rows = np.repeat(facets, nv, axis=1).ravel()
    cols = np.tile(facets, (1, nv)).ravel()
    return sp.csr_matrix((blocks.ravel(), (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes))


class ScalarForms:
    """Scalar P1 stiffness and mass matrices of a mesh, with masked variants."""

    def __init__(self, mesh):
        self.mesh = mesh
        self.scatter = Scatter(mesh.cells, mesh.n_nodes)
        self._lap = laplace_blocks(mesh)
        self._mass = mass_blocks(mesh.volumes, mesh.dim + 1)
        self.stiffness = self.scatter(self._lap)
        self.mass = self.scatter(self._mass)

    def masked_mass(self, element_weights: np.ndarray) -> sp.csr_matrix:
        return self.scatter(self._mass * np.asarray(element_weights, dtype=float)[:, None, None])

    def masked_stiffness(self, element_weights: np.ndarray) -> sp.csr_matrix:
        return self.scatter(self._lap * np.asarray(element_weights, dtype=float)[:, None, None])
