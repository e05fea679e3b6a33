import numpy as np
import pytest

from amtopo import config as C
from amtopo.errors import ConfigError

TINY = """
name = "tiny"
[mesh]
extents = [3.0, 1.0]
divisions = [6, 2]
[phases]
count = 2
scalar = true
mass = [-0.25]
epsilon = 0.2
[materials]
lame = [[44.0, 44.0], [1.0, 1.0]]
[forces]
traction = { constant = [0.0, -1.0] }
c_grav = 1.0
[boundary]
dirichlet = [[[0.0, 0.0], [0.0, 1.0]]]
neumann = [[[2.0, 3.0], [0.0, 0.0]]]
[cost]
beta1 = 4.0
beta2 = 0.02
layers = 2
"""


def test_presets_listed():
    names = C.preset_names()
    assert {"cantilever", "cantilever_desk", "mbb"} <= set(names)
    for n in names:
        C.load_config(n)


def test_cantilever_preset_values():
    cfg = C.load_config("cantilever")
    assert cfg.mesh.extents == [3.0, 1.0]
    assert cfg.phases.mass == [-0.25] and cfg.phases.scalar
    assert cfg.phases.epsilon == 0.025
    assert cfg.materials.lame[0] == [44.0, 44.0]
    assert cfg.materials.construction[0][0] == [32.0, 32.0]
    assert cfg.forces.traction.constant == [0.0, -1.0]
    assert cfg.boundary.dirichlet == [[[0.0, 0.0], [0.0, 1.0]]]
    assert cfg.boundary.neumann == [[[2.75, 3.0], [0.0, 0.0]]]
    assert (cfg.cost.beta1, cfg.cost.beta2, cfg.cost.layers, cfg.cost.scheme) == (48.0, 0.02, 10, "W1")
    plan = C.level_plan(cfg)
    assert [(lv.layers, lv.divisions) for lv in plan] == [
        (4, (192, 64)), (8, (384, 128)), (10, (480, 160)), (10, (960, 320))]
    assert C.level_plan(cfg, nested=False) == plan[-1:]
    # the construction load is the phase-dependent gravity -0.5 (1 + phi~) e_d
    grav = C.load_terms(cfg).construction
    assert grav is not None


def test_mbb_preset_values():
    cfg = C.load_config("mbb")
    assert cfg.mesh.extents == [5.0, 1.0]
    assert cfg.boundary.dirichlet == [[[0.0, 0.1], [0.0, 0.0]], [[4.9, 5.0], [0.0, 0.0]]]
    assert cfg.boundary.neumann == [[[2.25, 2.75], [1.0, 1.0]]]
    assert (cfg.cost.beta1, cfg.cost.beta2) == (20.0, 2e-4)
    assert cfg.phases.mass == [0.25, 0.05, 0.7]
    assert cfg.phases.count == 3


def test_parse_tiny_and_build():
    cfg = C.parse_config(TINY)
    p = C.build_problem(cfg)
    assert p.mesh.n_nodes == 7 * 3
    assert cfg.vmpt.metric == "a1" and cfg.run.seed == 0


def test_roundtrip():
    for name in ("cantilever", "mbb", "multiphase"):
        cfg = C.load_config(name)
        again = C.parse_config(C.dump_config(cfg))
        assert again == cfg
        assert C.dump_config(again) == C.dump_config(cfg)


@pytest.mark.parametrize("edit,key", [
    (lambda t: t.replace("epsilon = 0.2\n", ""), "phases.epsilon"),
    (lambda t: t.replace("layers = 2", "layers = 2\nlayerz = 3"), "cost.layerz"),
    (lambda t: t.replace("beta1 = 4.0", 'beta1 = "big"'), "cost.beta1"),
    (lambda t: t.replace("beta1 = 4.0", "beta1 = -1.0"), "cost.beta1"),
    (lambda t: t.replace('lame = [[44.0, 44.0], [1.0, 1.0]]', 'lame = [[44.0, 44.0]]'), "materials.lame"),
    (lambda t: t.replace("constant = [0.0, -1.0]", "constant = [0.0]"), "forces.traction.constant"),
    (lambda t: t.replace("[[[2.0, 3.0], [0.0, 0.0]]]", "[[[3.0, 2.0], [0.0, 0.0]]]"), "boundary.neumann"),
    (lambda t: t.replace("[mesh]", "[mesh\n"), "config"),
])
def test_errors_name_the_key(edit, key):
    with pytest.raises(ConfigError) as info:
        C.parse_config(edit(TINY))
    assert info.value.key == key
    assert str(info.value).startswith(key)


def test_mass_outside_range_rejected():
    with pytest.raises(ConfigError):
        C.parse_config(TINY.replace("mass = [-0.25]", "mass = [-1.5]"))


def test_overrides():
    cfg = C.parse_config(TINY)
    a = C.override(cfg, "beta1", 7.0)
    assert a.cost.beta1 == 7.0 and cfg.cost.beta1 == 4.0
    b = C.apply_overrides(cfg, {"cost.layers": 1, "vmpt.metric": "a3", "run.seed": 5})
    assert (b.cost.layers, b.vmpt.metric, b.run.seed) == (1, "a3", 5)
    with pytest.raises(ConfigError) as info:
        C.override(cfg, "cost.nope", 1)
    assert info.value.key == "cost.nope"
    with pytest.raises(ConfigError):
        C.override(cfg, "vmpt.metric", "a4")


def test_parse_value():
    assert C.parse_value("3") == 3
    assert C.parse_value("0.5") == 0.5
    assert C.parse_value("true") is True
    assert C.parse_value("a2") == "a2"
    assert C.parse_value("[1, 2]") == [1, 2]


def test_missing_file_and_unknown_preset(tmp_path):
    with pytest.raises(ConfigError):
        C.load_config(tmp_path / "absent.toml")
    with pytest.raises(ConfigError):
        C.load_config("no_such_preset")
    f = tmp_path / "tiny.toml"
    f.write_text(TINY)
    assert C.load_config(f).name == "tiny"


def test_vmpt_config_mapping():
    cfg = C.apply_overrides(C.parse_config(TINY), {"vmpt.qp.c": 2.0, "vmpt.tol": 1e-4})
    v = C.vmpt_config(cfg)
    assert v.qp.c == 2.0 and v.tol == 1e-4 and v.lambda0 == 0.005
    assert np.allclose(C.potential(cfg), C.potential(C.load_config("cantilever")))
