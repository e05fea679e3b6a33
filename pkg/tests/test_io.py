from pathlib import Path

import meshio
import numpy as np
import pytest

from amtopo.io import (phase_fields, read_csv, read_phases, read_vtk, write_csv, write_json, write_keyvalue,
                       write_vtk)
from amtopo.mesh import MeshSpec, build_mesh

DATA = Path(__file__).parent / "data"


def test_golden_constant_square(tmp_path):
    m = build_mesh(MeshSpec((1.0, 1.0), (2, 2)))
    out = write_vtk(tmp_path / "a.vtk", m, phase_fields(np.tile([0.375, 0.625], (9, 1))), title="constant layout")
    assert out.read_bytes() == (DATA / "square_constant.vtk").read_bytes()


@pytest.mark.parametrize("dim", [2, 3])
def test_round_trip_through_meshio(tmp_path, rng, dim):
    spec = MeshSpec((3.0, 1.0), (6, 2)) if dim == 2 else MeshSpec((1.0, 2.0, 1.0), (2, 2, 3))
    m = build_mesh(spec)
    phi = rng.dirichlet(np.ones(3), m.n_nodes) * np.pi
    u = rng.standard_normal((m.n_nodes, dim)) * 1e-3
    path = write_vtk(tmp_path / "f.vtk", m, {**phase_fields(phi), "u": u.ravel()})
    mio = meshio.read(path)
    assert np.max(np.abs(mio.points[:, :dim] - m.points)) <= 1e-12
    assert np.all(mio.points[:, dim:] == 0)
    cells = mio.cells_dict["triangle" if dim == 2 else "tetra"]
    assert np.array_equal(cells, m.cells)
    for i in range(3):
        assert np.max(np.abs(np.ravel(mio.point_data[f"phi_{i + 1}"]) - phi[:, i])) <= 1e-12
    U = mio.point_data["u"]
    assert U.shape == (m.n_nodes, 3)
    assert np.max(np.abs(U[:, :dim] - u)) <= 1e-12 and np.all(U[:, dim:] == 0)
    own = read_vtk(path)
    assert np.array_equal(own["cells"], m.cells)
    assert np.array_equal(read_phases(path, 3), phi)  # repr floats round-trip exactly
    with pytest.raises(ValueError):
        read_phases(path, 2)


def test_write_is_bit_stable(tmp_path):
    m = build_mesh(MeshSpec((1.0, 1.0), (3, 3)))
    phi = np.linspace(0, 1, m.n_nodes)
    a = write_vtk(tmp_path / "a.vtk", m, {"phi_1": phi, "phi_2": 1 - phi}).read_bytes()
    b = write_vtk(tmp_path / "b.vtk", m, {"phi_1": phi, "phi_2": 1 - phi}).read_bytes()
    assert a == b


def test_field_size_checked(tmp_path):
    m = build_mesh(MeshSpec((1.0, 1.0), (2, 2)))
    with pytest.raises(ValueError):
        write_vtk(tmp_path / "x.vtk", m, {"phi_1": np.zeros(4)})


def test_csv_fixed_header_and_exact_values(tmp_path):
    rows = [{"k": 1, "j": 0.1 + 0.2, "ok": True}, {"k": 2, "j": 1e-300, "ok": False}]
    path = write_csv(tmp_path / "h.csv", rows, ("k", "j", "ok"))
    text = path.read_text()
    assert text.splitlines()[0] == "k,j,ok"
    assert text == "k,j,ok\n1,0.30000000000000004,1\n2,1e-300,0\n"
    back = read_csv(path)
    assert float(back[0]["j"]) == 0.1 + 0.2


def test_json_and_keyvalue(tmp_path):
    j = write_json(tmp_path / "s.json", {"b": np.float64(1.5), "a": np.arange(2)}).read_text()
    assert j.index('"a"') < j.index('"b"') and "1.5" in j
    kv = write_keyvalue(tmp_path / "r.kv", {"passed": True, "q": 0.5, "name": "x"}).read_text()
    assert kv == "passed = 1\nq = 0.5\nname = x\n"
