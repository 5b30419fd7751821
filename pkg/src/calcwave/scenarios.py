"""Built-in calcium-wave scenarios and the glue that turns a config into a run.

Concentrations are in uM, time in s; the engine itself is unit-agnostic.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .flux import BumpPulse, ClampSpec, FluxParams, NoInflux, RectPulse
from .gating import RateConstants
from .stepper import (BLOWUP_LEVEL, NEGATIVE_FLOOR, CalciumProblem, Discretization, FieldState, RunResult,
                      Schedule, build_plan, run)


class ScenarioError(ValueError):
    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


@dataclass(frozen=True)
class Geometry:
    r_inner: float
    r_outer: float
    h: float


@dataclass(frozen=True)
class Diffusion:
    d_c: float
    d_b: float
    d_e: float


@dataclass(frozen=True)
class InitialValues:
    u: float
    b: float
    ue: float
    gating: tuple = (1.0, 0.0, 0.0)  # (c1, o, c2)


@dataclass(frozen=True)
class PulseSpec:
    """Stimulus on the plasma membrane where y - x >= offset.

    kind "rect": constant amplitude on t_start <= t <= t_end.
    kind "bump": amplitude * exp(1 - w/(w - (t - center)^2)) for (t - center)^2 < w.
    """

    kind: str = "none"
    amplitude: float = 0.0
    t_start: float = 0.0
    t_end: float = 0.0
    center: float = 0.0
    width2: float = 0.0
    offset: float = 2.5

    def build(self):
        if self.kind == "none":
            return NoInflux()
        if self.kind == "rect":
            return RectPulse(self.amplitude, self.t_start, self.t_end, self.offset)
        if self.kind == "bump":
            return BumpPulse(self.amplitude, self.center, self.width2, self.offset)
        raise ScenarioError(f"unknown pulse kind {self.kind!r}", "pulse.kind")


@dataclass(frozen=True)
class Numerics:
    dt: float
    t_end: float
    tol: float = 1e-10
    clamp: bool = False
    clamp_a: float = 1e-3
    clamp_m: float = 1e4
    deterministic: bool = True
    blowup: float = BLOWUP_LEVEL
    negative_floor: float = NEGATIVE_FLOOR

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


@dataclass(frozen=True)
class Output:
    directory: str = "out"
    snapshot_times: tuple = ()
    series_every: int = 1


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    geometry: Geometry
    diffusion: Diffusion
    flux: FluxParams
    rates: RateConstants
    initial: InitialValues
    pulse: PulseSpec
    numerics: Numerics
    output: Output = field(default_factory=Output)

    def validate(self) -> "ScenarioConfig":
        g = self.geometry
        if not (0 < g.r_inner < g.r_outer and 0 < g.h < g.r_inner):
            raise ScenarioError(f"geometry needs 0 < h < r_inner < r_outer, got {g}", "geometry.h")
        for k in ("d_c", "d_b", "d_e"):
            if not getattr(self.diffusion, k) > 0:
                raise ScenarioError(f"diffusion.{k} must be positive, got {getattr(self.diffusion, k)}", f"diffusion.{k}")
        iv = self.initial
        c1, o, c2 = iv.gating
        if min(c1, o, c2) < 0 or c1 + o + c2 > 1 + 1e-12:
            raise ScenarioError(f"initial gating state {iv.gating} is outside the simplex", "initial.c1")
        if iv.u < 0 or iv.b < 0 or not iv.ue > 0:
            raise ScenarioError(f"initial values must be non-negative (u_e positive), got {iv}", "initial")
        nm = self.numerics
        if not (nm.dt > 0 and nm.t_end > 0):
            raise ScenarioError(f"dt and t_end must be positive, got dt={nm.dt}, t_end={nm.t_end}", "numerics.dt")
        if abs(nm.n_steps * nm.dt - nm.t_end) > 1e-9 * nm.t_end or nm.n_steps < 1:
            raise ScenarioError(f"dt={nm.dt!r} does not divide t_end={nm.t_end!r}", "numerics.dt")
        if self.output.series_every < 1:
            raise ScenarioError(f"series_every must be >= 1, got {self.output.series_every}", "output.series_every")
        self.pulse.build()
        return self

    def with_overrides(self, dt=None, h=None, t_end=None, directory=None) -> "ScenarioConfig":
        cfg = self
        if h is not None:
            cfg = replace(cfg, geometry=replace(cfg.geometry, h=h))
        if dt is not None or t_end is not None:
            nm = cfg.numerics
            cfg = replace(cfg, numerics=replace(nm, dt=nm.dt if dt is None else dt,
                                                t_end=nm.t_end if t_end is None else t_end))
        if directory is not None:
            cfg = replace(cfg, output=replace(cfg.output, directory=directory))
        return cfg.validate()


EX3_SNAPSHOTS = (0.12, 0.6, 0.72, 0.84, 1.08, 1.44, 1.92, 3.12, 4.32, 5.52, 7.32, 9.12)
EX4_SNAPSHOTS = (0.04, 0.24, 0.44, 0.64, 0.84, 1.04, 1.24, 1.44, 1.64, 1.88, 2.44, 3.64, 4.8, 16.8, 28.8, 74.4)


def _ex3() -> ScenarioConfig:
    c3 = 1 / 540000
    return ScenarioConfig(
        name="ex3",
        geometry=Geometry(1.0, 2.0, math.pi / 48),
        diffusion=Diffusion(1.0, 1.0, 1.0),
        flux=FluxParams(c1e=0.17, c2e=8853.54, c3e=1 / 150, c1c=19954 * c3, c2c=19954 * c3, c3c=c3,
                        ks=2.0, kp=1.0, kn=1.0, c_o=1000.0),
        rates=RateConstants(),
        initial=InitialValues(u=0.05, b=0.0, ue=180.0, gating=(0.798, 0.0, 0.202)),
        pulse=PulseSpec("rect", amplitude=3.0, t_start=0.05, t_end=0.65),
        numerics=Numerics(dt=0.00375, t_end=12.0),
        output=Output("out/ex3", EX3_SNAPSHOTS, 1),
    )


def _ex4() -> ScenarioConfig:
    return ScenarioConfig(
        name="ex4",
        geometry=Geometry(1.2, 2.0, math.pi / 32),
        diffusion=Diffusion(220.0, 20.0, 220.0),
        flux=FluxParams(c1e=0.829468, c2e=11000.0, c3e=0.038, c1c=8.5, c2c=37.6, c3c=0.0045,
                        ks=0.18, kp=0.06, kn=1.8, c_o=1000.0, kb_minus=16.65, kb_plus=27.0, b0=40.0),
        rates=RateConstants(),
        initial=InitialValues(u=0.05, b=37.0, ue=250.0, gating=(0.994, 1.5721e-7, 5.6625e-3)),
        pulse=PulseSpec("bump", amplitude=240.0, center=0.2, width2=0.01),
        numerics=Numerics(dt=0.01 / 16, t_end=80.0),
        output=Output("out/ex4", EX4_SNAPSHOTS, 16),
    )


_BUILTIN = {"ex3": _ex3, "ex4": _ex4}


def builtin_names() -> tuple[str, ...]:
    return tuple(_BUILTIN)


def builtin_scenario(name: str) -> ScenarioConfig:
    try:
        return _BUILTIN[name]().validate()
    except KeyError:
        raise ScenarioError(f"unknown scenario {name!r}; choose from {', '.join(_BUILTIN)}") from None


def build_problem(cfg: ScenarioConfig) -> CalciumProblem:
    nm = cfg.numerics
    clamp = ClampSpec(nm.clamp_a, nm.clamp_m, True) if nm.clamp else None
    d = cfg.diffusion
    return CalciumProblem(d.d_c, d.d_b, d.d_e, cfg.flux, cfg.rates, cfg.pulse.build(), clamp)


def build_discretization(cfg: ScenarioConfig) -> Discretization:
    g = cfg.geometry
    return Discretization.from_geometry(g.r_inner, g.r_outer, g.h)


def initial_state(cfg: ScenarioConfig, disc: Discretization) -> FieldState:
    iv = cfg.initial
    return FieldState.uniform(disc, iv.u, iv.b, iv.ue, iv.gating)


@dataclass
class ScenarioRun:
    config: ScenarioConfig
    disc: Discretization
    plan: object
    result: RunResult


def run_scenario(cfg: ScenarioConfig, threads: int = 1, disc: Discretization | None = None,
                 observer=None) -> ScenarioRun:
    """Build everything from ``cfg`` and run to t_end.

    Raises :class:`InstabilityError` (with the partial result attached) when
    the detector fires.
    """
    cfg.validate()
    disc = disc or build_discretization(cfg)
    nm = cfg.numerics
    plan = build_plan(disc, build_problem(cfg), nm.dt, tol=nm.tol,
                      threads=1 if nm.deterministic else threads,
                      blowup=nm.blowup, negative_floor=nm.negative_floor)
    sched = Schedule(cfg.output.snapshot_times, cfg.output.series_every)
    try:
        result = run(initial_state(cfg, disc), plan, nm.n_steps, sched, observer)
    finally:
        if plan._pool is not None:
            plan._pool.shutdown()
    return ScenarioRun(cfg, disc, plan, result)
