"""Problem configuration: TOML text, validation, presets and problem construction."""

from __future__ import annotations

import os
from importlib import resources
from pathlib import Path
from typing import Literal, Optional

import numpy as np
import tomli
import tomli_w
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .cost import Problem, WeightScheme
from .elasticity import ForceSpec, LoadTerm, MaterialSet
from .errors import ConfigError
from .mesh import DIRICHLET, NEUMANN, PLATE, MeshSpec, build_mesh
from .phasefield import Design, check_potential, default_potential
from .qp import QPConfig
from .vmpt import Level, VMPTConfig, nested_plan

Box = list[list[float]]


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid", strict=True, frozen=True)


class MeshConfig(_Model):
    extents: list[float]
    divisions: Optional[list[int]] = None  # derived from the nesting plan when omitted
    build_axis: Optional[int] = None


class PhasesConfig(_Model):
    count: int = 2
    scalar: bool = False
    mass: list[float]
    epsilon: float = Field(gt=0)
    potential: Optional[list[list[float]]] = None

    @model_validator(mode="after")
    def _check(self):
        if self.count < 2:
            raise ValueError("count: at least two phases are required")
        if self.scalar:
            if self.count != 2 or len(self.mass) != 1 or not -1 <= self.mass[0] <= 1:
                raise ValueError("mass: scalar form needs two phases and one mass value in [-1, 1]")
        elif len(self.mass) != self.count or min(self.mass) < 0 or abs(sum(self.mass) - 1) > 1e-12:
            raise ValueError(f"mass: need {self.count} nonnegative values summing to 1")
        return self


class LoadConfig(_Model):
    constant: list[float]
    per_phase: Optional[list[list[float]]] = None


class MaterialsConfig(_Model):
    lame: list[list[float]]
    ersatz: Optional[list[bool]] = None
    construction: Optional[list[list[list[float]]]] = None  # by depth below the top layer
    construction_ersatz: Optional[list[bool]] = None


class ForcesConfig(_Model):
    body: Optional[LoadConfig] = None
    traction: Optional[LoadConfig] = None
    c_grav: float


class BoundaryConfig(_Model):
    dirichlet: list[Box]
    neumann: list[Box] = []
    plate: Optional[list[Box]] = None


class CostConfig(_Model):
    beta1: float = Field(ge=0)
    beta2: float = Field(ge=0)
    layers: int = Field(ge=1)
    scheme: Literal["W1", "W2", "W3", "custom"] = "W1"
    normalize: Literal["height", "volume"] = "height"
    table: Optional[list[float]] = None


class QPSection(_Model):
    c: float = Field(1.0, gt=0)
    tol: float = Field(1e-8, gt=0)
    minres_tol: float = Field(1e-8, gt=0)
    max_iter: int = Field(50, ge=1)
    damping: float = Field(0.75, gt=0, lt=1)
    precondition: bool = False


class VMPTSection(_Model):
    tau: float = 0.5
    sigma: float = 1e-4
    lambda0: float = 0.005
    lambda_min: float = 1e-10
    lambda_max: float = 1e10
    c: float = 0.75
    metric: Literal["a1", "a2", "a3"] = "a1"
    tol: float = 1e-3
    k_max: int = 5000
    max_backtracks: int = 60
    check: bool = True
    qp: QPSection = QPSection()


class NestingConfig(_Model):
    enabled: bool = False
    M0: int = Field(4, ge=1)
    K_hat: int = Field(16, ge=1)
    growth: int = Field(2, ge=2)
    resolution: float = Field(4.0, gt=0)


class RunConfig(_Model):
    seed: int = 0
    noise: float = Field(0.05, ge=0)
    out: str = "out"
    vtk_stride: int = Field(0, ge=0)
    threads: int = Field(1, ge=1)


class ProblemConfig(_Model):
    name: str = "problem"
    mesh: MeshConfig
    phases: PhasesConfig
    materials: MaterialsConfig
    forces: ForcesConfig
    boundary: BoundaryConfig
    cost: CostConfig
    vmpt: VMPTSection = VMPTSection()
    nesting: NestingConfig = NestingConfig()
    run: RunConfig = RunConfig()

    @model_validator(mode="after")
    def _check(self):
        d = len(self.mesh.extents)
        N = self.phases.count
        if len(self.materials.lame) != N:
            raise ValueError(f"materials.lame: need {N} (lambda, mu) rows")
        for name, loads in (("body", self.forces.body), ("traction", self.forces.traction)):
            if loads is None:
                continue
            if len(loads.constant) != d:
                raise ValueError(f"forces.{name}.constant: need {d} components")
            if loads.per_phase is not None and (len(loads.per_phase) != N or any(len(r) != d for r in loads.per_phase)):
                raise ValueError(f"forces.{name}.per_phase: need {N} rows of {d} components")
        for key in ("dirichlet", "neumann", "plate"):
            for box in getattr(self.boundary, key) or []:
                if len(box) != d or any(len(r) != 2 or r[0] > r[1] for r in box):
                    raise ValueError(f"boundary.{key}: boxes need {d} ordered [lo, hi] pairs")
        return self


# -- parsing -----------------------------------------------------------------------------


def _loc(err) -> str:
    return ".".join(str(p) for p in err["loc"] if not isinstance(p, int)) or "config"


def from_dict(data: dict) -> ProblemConfig:
    try:
        cfg = ProblemConfig.model_validate(data)
    except ValidationError as exc:
        err = exc.errors()[0]
        msg = err["msg"].removeprefix("Value error, ")
        key = _loc(err)
        if ":" in msg and err["type"] == "value_error":
            sub, msg = msg.split(":", 1)
            key = ".".join(filter(None, [key if key != "config" else "", sub.strip()]))
            msg = msg.strip()
        raise ConfigError(msg, key) from None
    validate(cfg)
    return cfg


def parse_config(text: str) -> ProblemConfig:
    """Parse and validate TOML configuration text."""
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"malformed configuration: {exc}", "config") from None
    return from_dict(data)


def dump_config(cfg: ProblemConfig) -> str:
    """Normalized TOML with every default filled in."""
    return tomli_w.dumps(cfg.model_dump(mode="python", exclude_none=True))


def preset_names() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("amtopo.presets").iterdir() if p.name.endswith(".toml"))


def preset_text(name: str) -> str:
    path = resources.files("amtopo.presets") / f"{name}.toml"
    if not path.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}", "config")
    return path.read_text()


def load_config(source: str | os.PathLike) -> ProblemConfig:
    """Read a TOML file, or a packaged preset when ``source`` is a bare preset name."""
    p = Path(source)
    if p.is_file():
        return parse_config(p.read_text())
    if p.suffix or os.sep in str(source):
        raise ConfigError(f"configuration file {source} not found", "config")
    return parse_config(preset_text(str(source)))


ALIASES = {"beta1": "cost.beta1", "β₁": "cost.beta1", "β1": "cost.beta1", "beta2": "cost.beta2",
           "β₂": "cost.beta2", "epsilon": "phases.epsilon", "ε": "phases.epsilon", "M": "cost.layers",
           "layers": "cost.layers", "metric": "vmpt.metric", "scheme": "cost.scheme", "seed": "run.seed"}


def override(cfg: ProblemConfig, key: str, value) -> ProblemConfig:
    """Copy of ``cfg`` with the dotted ``key`` (or an alias such as beta1) replaced."""
    return apply_overrides(cfg, {key: value})


def apply_overrides(cfg: ProblemConfig, changes: dict) -> ProblemConfig:
    """Replace several entries at once; validation runs on the combined result."""
    data = cfg.model_dump(mode="python")
    for key, value in changes.items():
        path = ALIASES.get(key, key).split(".")
        node = data
        for part in path[:-1]:
            if not isinstance(node, dict) or part not in node:
                raise ConfigError("unknown configuration key", ".".join(path))
            if node[part] is None:
                node[part] = {}
            node = node[part]
        if not isinstance(node, dict) or path[-1] not in node:
            raise ConfigError("unknown configuration key", ".".join(path))
        node[path[-1]] = value
    return from_dict(data)


def parse_value(text: str):
    """Interpret a command-line value as a TOML scalar, falling back to a string."""
    try:
        return tomli.loads(f"v = {text}")["v"]
    except tomli.TOMLDecodeError:
        return text


# -- construction of numerical objects ------------------------------------------------------


def validate(cfg: ProblemConfig) -> None:
    """Invariants needing the numerical objects (material order, mesh and layer compatibility)."""
    materials(cfg)
    vmpt_config(cfg)
    if cfg.phases.potential is not None:
        check_potential(np.array(cfg.phases.potential))
    plan = level_plan(cfg)
    final = plan[-1]
    MeshSpec(tuple(cfg.mesh.extents), final.divisions, final.layers, cfg.mesh.build_axis)
    load_terms(cfg)


def materials(cfg: ProblemConfig, epsilon: float | None = None) -> MaterialSet:
    m = cfg.materials
    cons = None if m.construction is None else np.array(m.construction, dtype=float)
    return MaterialSet(
        np.array(m.lame, dtype=float),
        cfg.phases.epsilon if epsilon is None else epsilon,
        cons,
        None if m.ersatz is None else tuple(m.ersatz),
        None if m.construction_ersatz is None else tuple(m.construction_ersatz),
    )


def _load(spec: LoadConfig | None, N: int, d: int) -> LoadTerm | None:
    if spec is None:
        return None
    per = np.zeros((N, d)) if spec.per_phase is None else np.array(spec.per_phase, dtype=float)
    return LoadTerm(np.array(spec.constant, dtype=float), per)


def load_terms(cfg: ProblemConfig) -> ForceSpec:
    d = len(cfg.mesh.extents)
    N = cfg.phases.count
    axis = d - 1 if cfg.mesh.build_axis is None else cfg.mesh.build_axis
    f = cfg.forces
    return ForceSpec(
        body=_load(f.body, N, d),
        traction=_load(f.traction, N, d),
        construction=LoadTerm.gravity(f.c_grav, N, d, axis) if f.c_grav else None,
    )


def level_plan(cfg: ProblemConfig, nested: bool | None = None) -> list[Level]:
    """Mesh levels; a single level unless nesting is enabled."""
    nest = cfg.nesting
    M = cfg.cost.layers
    ext = tuple(cfg.mesh.extents)
    if cfg.mesh.divisions is not None:
        final = Level(M, tuple(cfg.mesh.divisions))
        plan = [final]
        if nest.enabled if nested is None else nested:
            plan = nested_plan(ext, M, cfg.phases.epsilon, M0=min(nest.M0, M), K_hat=nest.K_hat,
                               growth=nest.growth, resolution=nest.resolution, build_axis=cfg.mesh.build_axis)
            if plan[-1] != final:
                raise ConfigError(f"nesting plan ends at {plan[-1].divisions}, mesh asks for {final.divisions}",
                                  "mesh.divisions")
        return plan
    plan = nested_plan(ext, M, cfg.phases.epsilon, M0=min(nest.M0, M), K_hat=nest.K_hat, growth=nest.growth,
                       resolution=nest.resolution, build_axis=cfg.mesh.build_axis)
    return plan if (nest.enabled if nested is None else nested) else plan[-1:]


def boundary_rules(cfg: ProblemConfig) -> dict:
    b = cfg.boundary
    rules = {DIRICHLET: b.dirichlet}
    if b.neumann:
        rules[NEUMANN] = b.neumann
    if b.plate is not None:
        rules[PLATE] = b.plate
    return rules


def potential(cfg: ProblemConfig) -> np.ndarray:
    if cfg.phases.potential is None:
        return default_potential(cfg.phases.count)
    return check_potential(np.array(cfg.phases.potential))


def scheme(cfg: ProblemConfig) -> WeightScheme:
    c = cfg.cost
    return WeightScheme(c.scheme, c.normalize, None if c.table is None else tuple(c.table))


def build_problem(cfg: ProblemConfig, level: Level | None = None, threads: int | None = None) -> Problem:
    level = level or level_plan(cfg)[-1]
    spec = MeshSpec(tuple(cfg.mesh.extents), level.divisions, level.layers, cfg.mesh.build_axis)
    mesh = build_mesh(spec, boundary_rules(cfg))
    ph = cfg.phases
    design = Design(mesh.node_weights, ph.count, ph.mass, scalar=ph.scalar)
    c = cfg.cost
    return Problem(mesh, design, materials(cfg), load_terms(cfg), beta1=c.beta1, beta2=c.beta2,
                   epsilon=ph.epsilon, A=potential(cfg), scheme=scheme(cfg), layers=level.layers,
                   threads=cfg.run.threads if threads is None else threads)


def vmpt_config(cfg: ProblemConfig) -> VMPTConfig:
    v = cfg.vmpt
    q = v.qp
    return VMPTConfig(
        tau=v.tau, sigma=v.sigma, lambda0=v.lambda0, lambda_min=v.lambda_min, lambda_max=v.lambda_max, c=v.c,
        metric=v.metric, tol=v.tol, k_max=v.k_max, max_backtracks=v.max_backtracks, check=v.check,
        qp=QPConfig(c=q.c, tol=q.tol, minres_tol=q.minres_tol, max_iter=q.max_iter, damping=q.damping,
                    precondition=q.precondition),
    )
