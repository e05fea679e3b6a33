import numpy as np
import pytest

from amtopo.cost import Problem, WeightScheme
from amtopo.elasticity import ForceSpec, LoadTerm, MaterialSet
from amtopo.mesh import DIRICHLET, NEUMANN, MeshSpec, build_mesh
from amtopo.phasefield import Design, default_potential

CANTILEVER_RULES = {DIRICHLET: [[[0, 0], [0, 1]]], NEUMANN: [[[2.75, 3], [0, 0]]]}


def rules_for(nx):
    """Cantilever boundary boxes; the load patch widens to one cell on coarse grids."""
    width = max(0.25, 3.0 / nx)
    return {DIRICHLET: [[[0, 0], [0, 1]]], NEUMANN: [[[3.0 - width, 3.0], [0, 0]]]}


def cantilever(nx=24, ny=8, M=4, eps=0.05, scalar=True, beta1=48.0, beta2=0.02, scheme="W1",
               construction=None, threads=1, traction=(0.0, -1.0), c_grav=1.0):
    """The two-phase cantilever of the presets on an arbitrary grid."""
    mesh = build_mesh(MeshSpec((3.0, 1.0), (nx, ny), layers=M), rules_for(nx))
    cons = np.array([[32.0, 32.0], [1.0, 1.0]]) if construction is None else construction
    mat = MaterialSet(np.array([[44.0, 44.0], [1.0, 1.0]]), eps, construction=cons)
    forces = ForceSpec(traction=LoadTerm.uniform(list(traction), 2), construction=LoadTerm.gravity(c_grav, 2, 2))
    design = Design(mesh.node_weights, 2, [-0.25] if scalar else [0.375, 0.625], scalar=scalar)
    return Problem(mesh, design, mat, forces, beta1=beta1, beta2=beta2, epsilon=eps, A=default_potential(2),
                   scheme=WeightScheme(scheme), threads=threads)


def three_phase(nx=6, ny=2, M=2, eps=0.1, beta1=10.0):
    mesh = build_mesh(MeshSpec((3.0, 1.0), (nx, ny), layers=M), rules_for(nx))
    mat = MaterialSet(np.array([[44.0, 44.0], [32.0, 32.0], [1.0, 1.0]]), eps,
                      construction=np.array([[32.0, 32.0], [25.0, 25.0], [1.0, 1.0]]))
    forces = ForceSpec(traction=LoadTerm.uniform([0.0, -1.5], 3), construction=LoadTerm.gravity(1.0, 3, 2))
    design = Design(mesh.node_weights, 3, [0.2, 0.2, 0.6])
    return Problem(mesh, design, mat, forces, beta1=beta1, beta2=0.02, epsilon=eps, A=default_potential(3))


@pytest.fixture
def small_problem():
    return cantilever(12, 4, 2, eps=0.1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
