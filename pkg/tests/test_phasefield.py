import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from amtopo.assembly import ScalarForms
from amtopo.errors import ConfigError
from amtopo.mesh import MeshSpec, build_mesh
from amtopo.phasefield import (Design, GinzburgLandau, check_potential, default_potential, from_vector,
                               ginzburg_landau, ginzburg_landau_gradient, potential, potential_gradient,
                               scalar_mass, scalar_potential, to_vector, vector_mass)

MESH = build_mesh(MeshSpec((3.0, 1.0), (6, 2)))
FORMS = ScalarForms(MESH)


def simplex_field(rng, n, N, lo=0.05):
    p = rng.dirichlet(np.ones(N), size=n)
    return lo / N + (1 - lo) * p


@pytest.mark.parametrize("N", [2, 3, 4])
def test_potential_vanishes_at_vertices(N):
    A = default_potential(N)
    for e in np.eye(N):
        assert potential(e, A) == 0.0


def test_potential_examples():
    A = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert potential([0.5, 0.5], A) == 0.25
    assert np.allclose(potential_gradient([0.5, 0.5], A), [0.5, 0.5])
    assert scalar_potential(0.0) == 0.5


def test_potential_validation():
    with pytest.raises(ConfigError):
        check_potential(np.eye(2))  # no negative eigenvalue
    with pytest.raises(ConfigError):
        check_potential(np.array([[0.0, 1.0], [0.0, 0.0]]))
    with pytest.raises(ConfigError):
        default_potential(1)
    assert check_potential(default_potential(3)).shape == (3, 3)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 5), st.integers(0, 2**32 - 1))
def test_potential_nonnegative_on_simplex(N, seed):
    v = np.random.default_rng(seed).dirichlet(np.ones(N), size=20)
    assert np.all(potential(v, default_potential(N)) >= -1e-15)


def test_energy_of_constant_fields():
    A = default_potential(3)
    eps = 0.05
    vol = MESH.node_weights.sum()
    for e in np.eye(3):
        assert ginzburg_landau(np.tile(e, (MESH.n_nodes, 1)), MESH, eps, A) == pytest.approx(0.0, abs=1e-14)
    c = np.array([0.2, 0.3, 0.5])
    E = ginzburg_landau(np.tile(c, (MESH.n_nodes, 1)), MESH, eps, A)
    assert E == pytest.approx(vol * potential(c, A) / eps, rel=1e-12)


@settings(max_examples=20, deadline=None)
@given(arrays(float, MESH.n_nodes, elements=st.floats(-1, 1)), st.floats(0.01, 1.0))
def test_scalar_energy_is_twice_vector_energy(t, eps):
    A = default_potential(2)
    E = ginzburg_landau(to_vector(t), MESH, eps, A)
    E_scalar = 0.5 * eps * t @ (FORMS.stiffness @ t) + MESH.node_weights @ scalar_potential(t) / eps
    assert E_scalar == pytest.approx(2 * E, rel=1e-12, abs=1e-12)


def test_gradient_matches_central_differences(rng):
    A = default_potential(3)
    eps = 0.1
    phi = simplex_field(rng, MESH.n_nodes, 3)
    zeta = rng.standard_normal(phi.shape)
    gl = GinzburgLandau(FORMS.stiffness, MESH.node_weights, eps, A)
    t = 1e-5
    fd = (gl.energy(phi + t * zeta) - gl.energy(phi - t * zeta)) / (2 * t)
    exact = ginzburg_landau_gradient(phi, MESH, eps, A, zeta)
    assert abs(fd - exact) <= 1e-6 * abs(exact)
    assert ginzburg_landau_gradient(phi, MESH, eps, A, np.zeros_like(phi)) == 0.0
    assert gl.directional(phi, 2.5 * zeta) == pytest.approx(2.5 * exact, rel=1e-13)
    # second derivative against differences of the first
    eta = rng.standard_normal(phi.shape)
    fd2 = (gl.directional(phi + t * eta, zeta) - gl.directional(phi - t * eta, zeta)) / (2 * t)
    assert gl.second(zeta, eta) == pytest.approx(fd2, rel=1e-5)
    assert gl.second(zeta, eta) == pytest.approx(gl.second(eta, zeta), rel=1e-12)


def test_energy_nonnegative_on_simplex(rng):
    A = default_potential(3)
    for _ in range(10):
        assert ginzburg_landau(simplex_field(rng, MESH.n_nodes, 3, 0.0), MESH, 0.05, A) >= 0.0


def test_scalar_vector_maps():
    assert np.array_equal(to_vector(np.ones(3)), np.tile([1.0, 0.0], (3, 1)))
    t = np.linspace(-1, 1, 17)
    assert np.array_equal(from_vector(to_vector(t)), t)
    with pytest.raises(ValueError):
        from_vector(np.zeros((4, 3)))
    assert vector_mass(-0.25)[0] == 0.375  # 37.5 % material
    assert scalar_mass(np.array([0.375, 0.625])) == -0.25


def test_design_scalar_and_vector():
    w = MESH.node_weights
    ds = Design(w, 2, [-0.25], scalar=True)
    x = ds.mean_field()
    assert ds.is_feasible(x)
    assert np.allclose(ds.phases(x), [0.375, 0.625])
    assert np.allclose(ds.from_phases(ds.phases(x)), x)
    dv = Design(w, 3, [0.2, 0.2, 0.6])
    y = dv.mean_field()
    assert dv.is_feasible(y)
    assert np.allclose(dv.eq_matrix @ y, dv.eq_rhs)
    g = np.arange(MESH.n_nodes * 2, dtype=float).reshape(-1, 2)
    dx = np.linspace(0, 1, MESH.n_nodes)
    assert np.sum(g * ds.push(dx)) == pytest.approx(ds.pullback(g) @ dx)
    with pytest.raises(ConfigError):
        Design(w, 3, [0.5, 0.6, 0.1])
    with pytest.raises(ConfigError):
        Design(w, 3, [-0.25], scalar=True)
    with pytest.raises(ConfigError):
        Design(w, 2, [1.5], scalar=True)
