"""Structured simplicial meshes of box domains.

Boxes are split into Friedrich-Keller triangles (2D) or Kuhn tetrahedra
(3D).  Both are the Kuhn/Freudenthal split of the unit cube, so interpolation
on the grid can be done cell-locally by sorting local coordinates.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError

Box = Sequence[Sequence[float]]

DIRICHLET = "dirichlet"
NEUMANN = "neumann"
PLATE = "plate"


@dataclass(frozen=True)
class MeshSpec:
    """Box extents, cells per axis and the layer decomposition along the build axis."""

    extents: tuple[float, ...]
    divisions: tuple[int, ...]
    layers: int = 1
    build_axis: int | None = None

    def __post_init__(self):
        ext = tuple(float(e) for e in self.extents)
        div = tuple(int(n) for n in self.divisions)
        object.__setattr__(self, "extents", ext)
        object.__setattr__(self, "divisions", div)
        if len(ext) not in (2, 3) or len(div) != len(ext):
            raise ConfigError("extents and divisions must both have length 2 or 3", "mesh")
        if any(not math.isfinite(e) or e <= 0 for e in ext):
            raise ConfigError(f"extents must be positive, got {ext}", "mesh.extents")
        if any(n < 1 for n in div):
            raise ConfigError(f"divisions must be >= 1, got {div}", "mesh.divisions")
        if self.layers < 1:
            raise ConfigError("layer count must be >= 1", "mesh.layers")
        axis = len(ext) - 1 if self.build_axis is None else int(self.build_axis)
        if not 0 <= axis < len(ext):
            raise ConfigError(f"build axis {axis} out of range", "mesh.build_axis")
        object.__setattr__(self, "build_axis", axis)
        if div[axis] % self.layers:
            raise ConfigError(
                f"{div[axis]} cells along the build axis are not a multiple of {self.layers} layers",
                "mesh.layers",
            )

    @property
    def dim(self) -> int:
        return len(self.extents)

    @property
    def height(self) -> float:
        return self.extents[self.build_axis]

    @property
    def layer_height(self) -> float:
        return self.height / self.layers

    @property
    def cell_size(self) -> tuple[float, ...]:
        return tuple(e / n for e, n in zip(self.extents, self.divisions))

    @property
    def cells_per_layer(self) -> int:
        return self.divisions[self.build_axis] // self.layers

    @property
    def node_count(self) -> int:
        return math.prod(n + 1 for n in self.divisions)

    @property
    def volume(self) -> float:
        return math.prod(self.extents)

    @property
    def base_area(self) -> float:
        """Measure of the cross-section orthogonal to the build axis."""
        return self.volume / self.height


@dataclass(frozen=True)
class SliceIndex:
    """Nodes and elements of the partially built domain after ``k`` layers."""

    k: int
    height: float
    nodes: np.ndarray
    elements: np.ndarray
    plate_nodes: np.ndarray
    node_mask: np.ndarray = field(repr=False)
    element_mask: np.ndarray = field(repr=False)


def _kuhn_offsets(d):
    """Corner offsets of the d! Kuhn simplices of the unit cube."""
    simplices = []
    for perm in itertools.permutations(range(d)):
        corner = np.zeros(d, dtype=int)
        verts = [corner.copy()]
        for axis in perm:
            corner[axis] = 1
            verts.append(corner.copy())
        simplices.append(np.array(verts))
    return np.array(simplices)  # (d!, d+1, d)


class Mesh:
    """Immutable structured P1 mesh with boundary tags and layer bookkeeping."""

    def __init__(self, spec: MeshSpec, boundary_rules: Mapping[str, Sequence[Box]] | None = None):
        self.spec = spec
        d = spec.dim
        self.dim = d
        shape = tuple(n + 1 for n in spec.divisions)
        self.shape = shape
        axes = [np.linspace(0.0, L, n + 1) for L, n in zip(spec.extents, spec.divisions)]
        grids = np.meshgrid(*axes, indexing="ij")
        # node index i0 + n0*(i1 + n1*i2): axis 0 runs fastest
        self.points = np.stack([g.ravel(order="F") for g in grids], axis=1)
        self.strides = np.cumprod((1,) + shape[:-1])

        cell_ids = np.stack(
            np.meshgrid(*[np.arange(n) for n in spec.divisions], indexing="ij"), axis=-1
        ).reshape(-1, d)
        cell_ids = cell_ids[np.lexsort(cell_ids.T)]
        offsets = _kuhn_offsets(d)
        base = cell_ids @ self.strides
        local = offsets @ self.strides  # (d!, d+1)
        cells = (base[:, None, None] + local[None, :, :]).reshape(-1, d + 1)

        X = self.points[cells]
        edges = X[:, 1:, :] - X[:, :1, :]
        det = np.linalg.det(edges)
        flip = det < 0
        cells[flip, -2], cells[flip, -1] = cells[flip, -1].copy(), cells[flip, -2].copy()
        self.cells = cells
        X = self.points[cells]
        edges = X[:, 1:, :] - X[:, :1, :]
        det = np.linalg.det(edges)
        self.volumes = det / math.factorial(d)
        if np.any(self.volumes <= 0):
            raise ConfigError("degenerate mesh element", "mesh")
        inv = np.linalg.inv(edges)
        grads = np.empty((len(cells), d, d + 1))
        grads[:, :, 1:] = inv
        grads[:, :, 0] = -inv.sum(axis=2)
        self.grads = grads

        self.node_weights = np.bincount(
            cells.ravel(), weights=np.repeat(self.volumes / (d + 1), d + 1), minlength=self.n_nodes
        )
        self._build_boundary()

        b = spec.build_axis
        self.tol = 1e-10 * max(spec.extents)
        top = self.points[cells, b].max(axis=1)
        self.element_layer = np.ceil(top / spec.layer_height - 1e-9).astype(int).clip(1, spec.layers)

        rules = dict(boundary_rules or {})
        rules.setdefault(PLATE, [self._face_box(b, 0.0)])
        self.node_tags: dict[str, np.ndarray] = {}
        self.facet_tags: dict[str, np.ndarray] = {}
        for name, boxes in rules.items():
            self.node_tags[name] = self.nodes_in(boxes) & self.boundary_nodes
            self.facet_tags[name] = self.node_tags[name][self.facets].all(axis=1)
        if DIRICHLET in self.node_tags and NEUMANN in self.facet_tags:
            clash = self.facet_tags[NEUMANN] & self.node_tags[DIRICHLET][self.facets].all(axis=1)
            if clash.any():
                raise ConfigError("a loaded Neumann facet lies inside the clamped boundary", "boundary")

        for arr in (self.points, self.cells, self.volumes, self.grads, self.node_weights,
                    self.facets, self.facet_areas, self.element_layer):
            arr.setflags(write=False)

    # -- construction helpers -------------------------------------------------

    def _face_box(self, axis, value):
        box = [[0.0, L] for L in self.spec.extents]
        box[axis] = [value, value]
        return box

    def _build_boundary(self):
        d = self.dim
        n = self.spec.divisions
        facets = []
        on_boundary = np.zeros(self.n_nodes, dtype=bool)
        for axis in range(d):
            others = [a for a in range(d) if a != axis]
            sub = _kuhn_offsets(d - 1) if d > 1 else None
            for side in (0, n[axis]):
                ids = np.stack(
                    np.meshgrid(*[np.arange(n[a]) for a in others], indexing="ij"), axis=-1
                ).reshape(-1, d - 1)
                base = side * self.strides[axis] + ids @ self.strides[others]
                local = sub @ self.strides[others]  # ((d-1)!, d)
                facets.append((base[:, None, None] + local[None]).reshape(-1, d))
                nodes_ids = np.stack(
                    np.meshgrid(*[np.arange(n[a] + 1) for a in others], indexing="ij"), axis=-1
                ).reshape(-1, d - 1)
                on_boundary[side * self.strides[axis] + nodes_ids @ self.strides[others]] = True
        self.facets = np.concatenate(facets)
        P = self.points[self.facets]
        if d == 2:
            self.facet_areas = np.linalg.norm(P[:, 1] - P[:, 0], axis=1)
        else:
            self.facet_areas = 0.5 * np.linalg.norm(np.cross(P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]), axis=1)
        self.boundary_nodes = on_boundary
        self.boundary_nodes.setflags(write=False)

    # -- queries ------------------------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return len(self.points)

    @property
    def n_elements(self) -> int:
        return len(self.cells)

    def nodes_in(self, boxes: Sequence[Box]) -> np.ndarray:
        """Boolean mask of nodes inside any of the axis-aligned boxes."""
        mask = np.zeros(self.n_nodes, dtype=bool)
        for box in boxes:
            box = np.asarray(box, dtype=float)
            if box.shape != (self.dim, 2):
                raise ConfigError(f"box {box.tolist()} must be {self.dim} pairs [lo, hi]", "boundary")
            inside = np.ones(self.n_nodes, dtype=bool)
            for a in range(self.dim):
                inside &= (self.points[:, a] >= box[a, 0] - self.tol) & (self.points[:, a] <= box[a, 1] + self.tol)
            mask |= inside
        return mask

    def tagged_nodes(self, name: str) -> np.ndarray:
        return np.flatnonzero(self.node_tags.get(name, np.zeros(self.n_nodes, dtype=bool)))

    def slice(self, k: int, layers: int | None = None) -> SliceIndex:
        return slice_mesh(self, k, layers)

    def write_vtk(self, path, point_data=None, title="amtopo mesh"):
        from .io import write_vtk

        write_vtk(path, self, point_data or {}, title=title)


def build_mesh(spec: MeshSpec, boundary_rules: Mapping[str, Sequence[Box]] | None = None) -> Mesh:
    return Mesh(spec, boundary_rules)


def slice_mesh(mesh: Mesh, k: int, layers: int | None = None) -> SliceIndex:
    """Index sets of the built part Omega_{k delta}, delta = H / layers."""
    spec = mesh.spec
    M = spec.layers if layers is None else int(layers)
    if M < 1 or spec.divisions[spec.build_axis] % M:
        raise ConfigError(f"mesh does not resolve {M} layers", "mesh.layers")
    if not 1 <= k <= M:
        raise ValueError(f"layer index {k} outside 1..{M}")
    h = k * spec.height / M
    tol = 1e-12 * spec.height
    xb = mesh.points[:, spec.build_axis]
    node_mask = xb <= h + tol
    element_mask = node_mask[mesh.cells].all(axis=1)
    plate = mesh.node_tags[PLATE] & node_mask
    return SliceIndex(
        k=k,
        height=h,
        nodes=np.flatnonzero(node_mask),
        elements=np.flatnonzero(element_mask),
        plate_nodes=np.flatnonzero(plate),
        node_mask=node_mask,
        element_mask=element_mask,
    )


def interpolate(values: np.ndarray, mesh: Mesh, points: np.ndarray) -> np.ndarray:
    """Evaluate a nodal P1 field of ``mesh`` at arbitrary points inside the box."""
    spec = mesh.spec
    h = np.asarray(spec.cell_size)
    t = np.asarray(points, dtype=float) / h
    cell = np.clip(np.floor(t + 1e-9).astype(int), 0, np.asarray(spec.divisions) - 1)
    xi = np.clip(t - cell, 0.0, 1.0)
    order = np.argsort(-xi, axis=1, kind="stable")
    xs = np.take_along_axis(xi, order, axis=1)
    npts, d = xi.shape
    vals = np.asarray(values)
    corner = cell @ mesh.strides
    idx = corner.copy()
    weight = 1.0 - xs[:, 0]
    out = weight.reshape((-1,) + (1,) * (vals.ndim - 1)) * vals[idx]
    for m in range(d):
        idx = idx + mesh.strides[order[:, m]]
        nxt = xs[:, m + 1] if m + 1 < d else np.zeros(npts)
        weight = xs[:, m] - nxt
        out = out + weight.reshape((-1,) + (1,) * (vals.ndim - 1)) * vals[idx]
    return out


def is_refinement(coarse: Mesh, fine: Mesh) -> bool:
    cs, fs = coarse.spec, fine.spec
    return (
        cs.dim == fs.dim
        and np.allclose(cs.extents, fs.extents, rtol=0, atol=1e-12 * max(cs.extents))
        and all(2 * nc == nf for nc, nf in zip(cs.divisions, fs.divisions))
    )


def prolongate(coarse_field: np.ndarray, coarse: Mesh, fine: Mesh) -> np.ndarray:
    """P1 interpolation of a coarse nodal field onto the uniformly refined mesh."""
    if not is_refinement(coarse, fine):
        raise ValueError("fine mesh is not the uniform refinement of the coarse mesh")
    return interpolate(coarse_field, coarse, fine.points)
