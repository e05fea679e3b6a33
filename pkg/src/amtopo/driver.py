"""High-level runs used by the command line: optimize, sweep, evaluate and verify."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import config as C
from .cost import CostBreakdown
from .errors import ConfigError
from .io import phase_fields, read_phases, read_vtk, write_csv, write_json, write_keyvalue, write_vtk
from .verify import gradient_audit, mass_free_directions, slice_study
from .vmpt import HISTORY_FIELDS, initialize, nested_run

TIMING_FIELDS = ("level", "k", "seconds")
SWEEP_FIELDS = ("param", "value", "j", "F", "W", "E", "E_scalar", "iterations", "converged")


@dataclass
class Outcome:
    history: list
    timings: list
    cost: CostBreakdown
    x: np.ndarray
    problem: object
    converged: bool
    seconds: float
    levels: list = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.history)

    def summary(self) -> dict:
        return {
            **self.cost.as_dict(),
            "iterations": self.iterations,
            "converged": self.converged,
            "seconds": self.seconds,
            "levels": self.levels,
            "mean_pdas": float(np.mean([h["pdas_iters"] for h in self.history])) if self.history else 0.0,
        }


def optimize(cfg: C.ProblemConfig, *, nested: bool | None = None, out: str | Path | None = None,
             callback=None) -> Outcome:
    """Run VMPT (nested or on the final level) and optionally write history, timings, fields and summary."""
    plan = C.level_plan(cfg, nested)
    vcfg = C.vmpt_config(cfg)
    out = None if out is None else Path(out)
    stride = cfg.run.vtk_stride

    def cb(row, state):
        if out is not None and stride and row["k"] % stride == 0:
            write_vtk(out / f"checkpoint_L{row['level']}_{row['k']:05d}.vtk", state.problem.mesh,
                      phase_fields(state.phi), title=f"{cfg.name} level {row['level']} k {row['k']}")
        if callback is not None:
            callback(row, state)

    cache = {plan[0]: C.build_problem(cfg, plan[0])}
    x0 = initialize(cache[plan[0]], cfg.run.seed, cfg.run.noise)

    def builder(level):
        return cache.pop(level, None) or C.build_problem(cfg, level)

    t0 = time.perf_counter()
    results = nested_run(builder, plan, vcfg, x0, seed=cfg.run.seed, callback=cb)
    seconds = time.perf_counter() - t0
    history = [row for r in results for row in r.history]
    timings = [t for r in results for t in r.timings]
    last = results[-1]
    outcome = Outcome(history, timings, last.state.cost, last.x, last.state.problem, last.converged, seconds,
                      [{"layers": lv.layers, "divisions": list(lv.divisions), "iterations": r.iterations}
                       for lv, r in zip(plan, results)])
    if out is not None:
        write_outputs(out, cfg, outcome, last.state)
    return outcome


def write_outputs(out: Path, cfg, outcome: Outcome, state) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "history.csv", outcome.history, HISTORY_FIELDS)
    write_csv(out / "timings.csv", outcome.timings, TIMING_FIELDS)
    mesh = state.problem.mesh
    fields = phase_fields(state.phi)
    fields["u"] = state.ms.solve_state().reshape(mesh.n_nodes, mesh.dim)
    write_vtk(out / "final.vtk", mesh, fields, title=f"{cfg.name} final design")
    (out / "config.toml").write_text(C.dump_config(cfg))
    write_json(out / "summary.json", outcome.summary())


def sweep(cfg: C.ProblemConfig, key: str, values, *, nested: bool | None = None, out=None) -> list[dict]:
    rows = []
    out = None if out is None else Path(out)
    for v in values:
        run_cfg = C.override(cfg, key, v)
        sub = None if out is None else out / f"{key.replace('.', '_')}={v}"
        o = optimize(run_cfg, nested=nested, out=sub)
        c = o.cost
        rows.append({"param": key, "value": v, "j": c.j, "F": c.F, "W": c.W, "E": c.E, "E_scalar": c.E_scalar,
                     "iterations": o.iterations, "converged": o.converged})
    if out is not None:
        write_csv(out / "sweep.csv", rows, SWEEP_FIELDS)
    return rows


def mesh_from_points(points: np.ndarray, dim: int):
    """Extents and cell counts of a structured box grid given its node coordinates."""
    ext, div = [], []
    for a in range(dim):
        coords = np.unique(np.round(points[:, a], 12))
        ext.append(float(coords[-1]))
        div.append(len(coords) - 1)
    if np.prod([n + 1 for n in div]) != len(points):
        raise ValueError("field file is not a structured box grid")
    return tuple(ext), tuple(div)


def evaluate_field(cfg: C.ProblemConfig, path, *, layers: int | None = None) -> tuple[CostBreakdown, object]:
    """Cost of the layout stored in a VTK file, on the grid of that file."""
    data = read_vtk(path)
    d = len(cfg.mesh.extents)
    ext, div = mesh_from_points(data["points"], d)
    if not np.allclose(ext, cfg.mesh.extents):
        raise ConfigError(f"field extents {ext} differ from the configured domain", "mesh.extents")
    M = cfg.cost.layers if layers is None else layers
    problem = C.build_problem(cfg, C.Level(M, div))
    if not np.allclose(problem.mesh.points, data["points"][:, :d], atol=1e-10):
        raise ValueError("node ordering in the field file differs from the structured grid")
    x = problem.design.from_phases(read_phases(path, cfg.phases.count))
    return problem.cost(x), problem


def verify(cfg: C.ProblemConfig, *, directions: int = 5, seed: int | None = None, cells: int = 8):
    """Slice inequalities on a coarse grid of the configured box plus a gradient audit."""
    ext = tuple(cfg.mesh.extents)
    d = len(ext)
    b = d - 1 if cfg.mesh.build_axis is None else cfg.mesh.build_axis
    H = ext[b]
    div = tuple(cells if a == b else max(1, int(round(cells * e / H))) for a, e in enumerate(ext))
    report = slice_study(ext, div)
    level = C.level_plan(cfg)[0]
    problem = C.build_problem(cfg, level)
    s = cfg.run.seed if seed is None else seed
    x = initialize(problem, s, cfg.run.noise)
    dirs = mass_free_directions(problem.design, directions, seed=s + 1)
    audit = gradient_audit(problem, x, dirs)
    report.gradient = {"max_error": audit["max_error"], "tol": audit["tol"],
                       **{f"dir{i}_{t}": r["best"][t] for i, r in enumerate(audit["directions"]) for t in r["best"]}}
    return report


def write_report(out: Path, report) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "verify.txt").write_text(report.text() + "\n")
    write_keyvalue(out / "verify.kv", report.as_dict())
