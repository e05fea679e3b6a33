from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from amtopo.cost import CostBreakdown, Metric
from amtopo.errors import ConfigError, SolverError
from amtopo.mesh import MeshSpec, build_mesh
from amtopo.assembly import ScalarForms
from amtopo.phasefield import Design
from amtopo.qp import QPConfig, solve_subproblem
from amtopo.vmpt import (Level, VMPTConfig, armijo, initialize, lambda_update, nested_plan, nested_run, project,
                         seminorm, subproblem_for, transfer_design, vmpt_run)

from conftest import cantilever


def test_lambda_rule_examples():
    cfg = VMPTConfig()
    assert lambda_update(0.005, 1.0, cfg) == 0.005 / 0.75
    assert lambda_update(0.005, 1.0, cfg) == pytest.approx(0.0066666666666, rel=1e-10)
    assert lambda_update(cfg.lambda_max, 1.0, cfg) == cfg.lambda_max
    assert lambda_update(cfg.lambda_min, 0.5, cfg) == cfg.lambda_min
    assert lambda_update(0.004, 0.5, cfg) == 0.75 * 0.004


@pytest.mark.parametrize("bad", [dict(tau=1.0), dict(sigma=0.0), dict(c=1.5), dict(lambda0=0.0),
                                 dict(lambda_min=1.0, lambda0=0.5), dict(metric="a4"), dict(tol=0.0)])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        VMPTConfig(**bad)


def test_armijo_quadratic_model():
    cfg = VMPTConfig(sigma=0.1, tau=0.5)
    j = lambda t: float(t[0] ** 2)
    res = armijo(j, 1.0, np.array([1.0]), np.array([-1.0]), -2.0, cfg)
    assert res.alpha == 1.0 and res.backtracks == 0


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, 0.98), st.floats(0.01, 0.98), st.floats(-3.0, -0.2))
def test_armijo_backtracks_nondecreasing_in_sigma(s1, s2, v):
    lo, hi = sorted((s1, s2))
    j = lambda t: float(t[0] ** 2)
    x, d = np.array([1.0]), np.array([v])
    m = [armijo(j, 1.0, x, d, 2.0 * v, VMPTConfig(sigma=s, tau=0.5)).backtracks for s in (lo, hi)]
    assert m[0] <= m[1]


def test_armijo_gives_up():
    cfg = VMPTConfig(max_backtracks=60)
    with pytest.raises(SolverError):
        armijo(lambda t: float(t[0]), 0.0, np.array([0.0]), np.array([1.0]), -1.0, cfg)


def test_nested_plan_schedule():
    plan = nested_plan((3.0, 1.0), 10, 0.025, M0=4, K_hat=16, resolution=8.0)
    assert [(lv.layers, lv.divisions[1]) for lv in plan] == [(4, 64), (8, 128), (10, 160), (10, 320)]
    assert plan[0].divisions == (192, 64)
    assert plan[-1].cell_size((3.0, 1.0)) == 1 / 320
    # the finest width stops at eps / resolution
    assert nested_plan((3.0, 1.0), 10, 0.025, resolution=4.0)[-1].divisions[1] == 160
    single = nested_plan((3.0, 1.0), 4, 0.5, M0=4, K_hat=4)
    assert single == [Level(4, (48, 16))]
    with pytest.raises(ConfigError):
        nested_plan((3.0, 1.0), 4, 0.1, M0=5)
    with pytest.raises(ConfigError):
        nested_plan((2.55, 1.0), 4, 0.1, M0=4, K_hat=3)


def test_initialize_contract():
    p = cantilever(12, 4, 2)
    x0 = initialize(p, seed=3, noise=0.0)
    assert np.allclose(x0, p.design.mean_field())
    a, b = initialize(p, seed=7), initialize(p, seed=7)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, initialize(p, seed=8))
    assert p.design.is_feasible(a)
    assert abs(p.design.mean(a)[0] - 0.375) <= 1e-10
    big = initialize(p, seed=1, noise=2.0)  # projection must clip
    assert p.design.is_feasible(big) and np.any(np.abs(big) == 1.0)


class ToyProblem:
    """j(x) = 1/2 |x - t|_w^2 on a real scalar design space; a1 metric of the real mesh."""

    def __init__(self, target, nx=6, ny=3):
        self.mesh = build_mesh(MeshSpec((3.0, 1.0), (nx, ny), layers=1))
        forms = ScalarForms(self.mesh)
        self.design = Design(self.mesh.node_weights, 2, [-0.25], scalar=True)
        self.epsilon, self.beta2, self.beta1 = 0.1, 0.5, 0.0
        self.layers = 1
        self.L_design = (self.design.T.T @ __import__("scipy.sparse", fromlist=["kron"]).kron(
            forms.stiffness, np.eye(2)) @ self.design.T).tocsr()
        self.mech = SimpleNamespace(forms=forms)
        self.w = self.design.weights
        self.target = target(self.mesh.points) if callable(target) else target

    def evaluate(self, x):
        x = np.asarray(x, dtype=float)
        r = x - self.target
        j = 0.5 * float(r @ (self.w * r))
        st_ = SimpleNamespace(problem=self, x=x, cost=CostBreakdown(j, 0.0, 0.0, j, 0.0, self.beta2))
        st_.gradient = lambda: self.w * r
        st_.metric = lambda variant="a1": Metric(st_, variant)
        return st_

    def minimizer(self):
        e = self.design.eq_rhs[0]
        kappa = brentq(lambda k: self.w @ np.clip(self.target - k, -1, 1) - e, -10, 10, xtol=1e-15)
        return np.clip(self.target - kappa, -1, 1)


def test_convex_toy_reaches_projected_minimizer():
    toy = ToyProblem(lambda p: 3.0 * np.sin(2.0 * p[:, 0]) * (p[:, 1] - 0.3))
    ref = toy.minimizer()
    assert np.any(np.abs(ref) == 1) and np.any(np.abs(ref) < 1)
    cfg = VMPTConfig(tol=1e-8, k_max=2000, qp=QPConfig(tol=1e-12, minres_tol=1e-13))
    res = vmpt_run(toy, cfg, initialize(toy, seed=0))
    assert res.converged
    assert np.max(np.abs(res.x - ref)) <= 1e-6
    js = [h["j"] for h in res.history]
    assert all(b <= a for a, b in zip(js, js[1:]))


def test_stationary_start_stops_immediately():
    toy = ToyProblem(None)
    toy.target = toy.design.mean_field()
    res = vmpt_run(toy, VMPTConfig(), toy.target.copy())
    assert res.converged and res.iterations == 0


def test_infeasible_start_rejected():
    toy = ToyProblem(np.zeros(28))
    from amtopo.errors import InvariantViolation
    with pytest.raises(InvariantViolation):
        vmpt_run(toy, VMPTConfig(), np.full(28, 0.5))


def test_real_problem_descent_feasibility_and_history():
    p = cantilever(12, 4, 2, eps=0.1)
    x0 = initialize(p, seed=0)
    seen = []
    res = vmpt_run(p, VMPTConfig(k_max=25), x0, callback=lambda row, s: seen.append(p.design.feasibility(s.x)))
    js = [p.cost(x0).j] + [h["j"] for h in res.history]
    assert all(b <= a for a, b in zip(js, js[1:]))
    assert all(max(f.values()) <= 1e-10 for f in seen)
    row = res.history[0]
    assert row["E_scalar"] == 2 * row["E"] and row["k"] == 1 and row["level"] == 0
    assert row["stationarity"] > 0 and row["v_h1"] >= row["stationarity"] / np.sqrt(p.epsilon * p.beta2)
    lams = [h["lambda"] for h in res.history]
    for (a, b), h in zip(zip(lams, lams[1:]), res.history):
        assert b == lambda_update(a, h["alpha"], VMPTConfig())


def test_single_level_nested_run_equals_plain_run():
    p = cantilever(12, 4, 2, eps=0.1)
    cfg = VMPTConfig(k_max=15)
    x0 = initialize(p, seed=0)
    plain = vmpt_run(p, cfg, x0)
    nested = nested_run(lambda lv: p, [Level(2, (12, 4))], cfg, x0)
    assert len(nested) == 1
    assert np.array_equal(nested[0].x, plain.x)
    assert nested[0].history == plain.history


def test_two_level_nesting_transfers_design():
    probs = {(2, (12, 4)): cantilever(12, 4, 2, eps=0.1), (4, (24, 8)): cantilever(24, 8, 4, eps=0.1)}
    plan = [Level(2, (12, 4)), Level(4, (24, 8))]
    res = nested_run(lambda lv: probs[(lv.layers, lv.divisions)], plan, VMPTConfig(k_max=10), seed=0)
    assert [r.history[0]["level"] for r in res] == [0, 1]
    assert res[1].history[0]["layers"] == 4
    fine = probs[(4, (24, 8))]
    x1 = transfer_design(res[0].x, probs[(2, (12, 4))], fine)
    assert fine.design.is_feasible(project(fine, x1))


def test_stiff_metric_stop_is_confirmed_by_a1():
    p = cantilever(12, 4, 2, eps=0.1)
    x0 = initialize(p, seed=0)
    st = p.evaluate(x0)
    scale = np.sqrt(p.epsilon * p.beta2)
    stats = {}
    for m in ("a1", "a3"):
        _, v, _ = solve_subproblem(subproblem_for(p, st, 0.005, st.metric(m)))
        stats[m] = scale * seminorm(p, v)
    assert stats["a3"] < stats["a1"]
    tol = np.sqrt(stats["a3"] * stats["a1"])
    res = vmpt_run(p, VMPTConfig(metric="a3", tol=tol, k_max=3), x0)
    assert res.iterations > 0
    assert vmpt_run(p, VMPTConfig(metric="a1", tol=1.01 * stats["a1"], k_max=3), x0).iterations == 0
