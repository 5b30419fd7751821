"""Implicit-explicit time loop for the cytosol/buffer/ER system.

Per step: evaluate every boundary and reaction nonlinearity at the old
state, form the three right-hand sides M X^n + dt * loads, solve the three
decoupled SPD systems (M + dt D K) X^{n+1} = rhs with matrices built once,
then advance the gating field with the old cytosol trace.
"""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .fem import AssembledOperators, EdgeQuadrature, TriangleQuadrature, assemble_operators
from .flux import ClampSpec, FluxParams, NoInflux, flux_er, flux_plasma, reaction, warn_if_below_floor
from .gating import GatingField, RateConstants, open_probability, step_gating
from .linalg import SolverHandle, matvec
from .mesh import InterfaceMap, Marker, Mesh2D, generate_geometry

BLOWUP_LEVEL = 1e4
# concentrations below this are an explicit-flux instability, not round-off
NEGATIVE_FLOOR = -1e-2


class ConfigurationError(ValueError):
    pass


class InstabilityError(RuntimeError):
    """Field went non-finite, exceeded the blow-up level or fell below the negative floor."""

    def __init__(self, message, step, t, result=None):
        super().__init__(message)
        self.step = step
        self.t = t
        self.result = result


@dataclass(frozen=True)
class Discretization:
    cyto: Mesh2D
    er: Mesh2D
    interface: InterfaceMap
    ops_c: AssembledOperators
    ops_e: AssembledOperators
    outer_q: EdgeQuadrature
    iface_q: EdgeQuadrature  # nodes numbered by interface pair position
    tri_c: TriangleQuadrature
    tri_e: TriangleQuadrature
    mass_weights_c: np.ndarray
    mass_weights_e: np.ndarray

    @classmethod
    def build(cls, cyto: Mesh2D, er: Mesh2D, interface: InterfaceMap) -> "Discretization":
        ops_c = assemble_operators(cyto)
        ops_e = assemble_operators(er)
        outer_q = EdgeQuadrature.build(cyto.vertices, cyto.edges_with(Marker.OUTER), cyto.n_vertices)
        iface_q = EdgeQuadrature.build(cyto.vertices[interface.cyto_nodes], interface.edges, len(interface))
        wc = matvec(ops_c.mass, np.ones(cyto.n_vertices))
        we = matvec(ops_e.mass, np.ones(er.n_vertices))
        return cls(cyto, er, interface, ops_c, ops_e, outer_q, iface_q,
                   TriangleQuadrature.build(cyto), TriangleQuadrature.build(er), wc, we)

    @classmethod
    def from_geometry(cls, r_inner: float, r_outer: float, h: float) -> "Discretization":
        return cls.build(*generate_geometry(r_inner, r_outer, h))


class Problem:
    """Physics callbacks consumed by :func:`step`.

    Quadrature-point arrays have shape (edges, 2) or (triangles, 3). Returning
    None from a source hook means "no contribution".
    """

    d_c: float = 1.0
    d_b: float = 1.0
    d_e: float = 1.0
    rates: RateConstants = RateConstants()

    def bind(self, disc: Discretization, dt: float) -> None:
        pass

    def plasma_flux(self, t, q: EdgeQuadrature, u):
        raise NotImplementedError

    def interface_flux(self, t, q: EdgeQuadrature, u, ue, p):
        """Return (flux into the cytosol, flux into the ER) at the quadrature points."""
        raise NotImplementedError

    def volume_sources(self, t, q: TriangleQuadrature, u_nodal, b_nodal):
        return None, None

    def er_source(self, t, q: TriangleQuadrature, ue_nodal):
        return None

    def buffer_flux(self, t, outer: EdgeQuadrature, iface: EdgeQuadrature):
        return None, None

    def after_step(self, t_new: float, dt: float) -> None:
        pass


class CalciumProblem(Problem):
    """The membrane-flux model: PMCA/NCX/leak outside, RyR/SERCA/leak on the ER."""

    def __init__(self, d_c, d_b, d_e, params: FluxParams, rates: RateConstants = RateConstants(),
                 influx=None, clamp: ClampSpec | None = None):
        self.d_c, self.d_b, self.d_e = float(d_c), float(d_b), float(d_e)
        self.params = params
        self.rates = rates
        self.influx = influx if influx is not None else NoInflux()
        self.clamp = clamp
        self.floor_warnings = 0

    def plasma_flux(self, t, q, u):
        influx = self.influx if self.influx.active(t) else None
        return flux_plasma(u, t, q.x, q.y, self.params, influx, self.clamp)

    def interface_flux(self, t, q, u, ue, p):
        if warn_if_below_floor(ue, self.params.m, f" (t={t:g})"):
            self.floor_warnings += 1
        g = flux_er(u, ue, p, self.params, self.clamp)
        return -g, g

    def volume_sources(self, t, q, u_nodal, b_nodal):
        if not self.params.has_reaction:
            return None, None
        f = reaction(q.interpolate(b_nodal), q.interpolate(u_nodal), self.params)
        return f, f


@dataclass
class FieldState:
    U: np.ndarray
    B: np.ndarray
    Ue: np.ndarray
    gating: GatingField
    t: float = 0.0
    n: int = 0

    def copy(self) -> "FieldState":
        return FieldState(self.U.copy(), self.B.copy(), self.Ue.copy(), self.gating.copy(), self.t, self.n)

    @classmethod
    def uniform(cls, disc: Discretization, u0, b0, ue0, gating0) -> "FieldState":
        nc, ne = disc.cyto.n_vertices, disc.er.n_vertices
        return cls(np.full(nc, float(u0)), np.full(nc, float(b0)), np.full(ne, float(ue0)),
                   GatingField.uniform(len(disc.interface), *gating0))

    def all_finite(self) -> bool:
        return bool(np.isfinite(self.U).all() and np.isfinite(self.B).all() and np.isfinite(self.Ue).all())


@dataclass
class StepStats:
    steps: int = 0
    step_time: float = 0.0
    solve_time: float = 0.0
    last_iterations: int = 0


@dataclass
class SteppingPlan:
    disc: Discretization
    problem: Problem
    dt: float
    solver_u: SolverHandle
    solver_b: SolverHandle
    solver_e: SolverHandle
    threads: int = 1
    solve_order: tuple = ("u", "b", "e")
    blowup: float = BLOWUP_LEVEL
    negative_floor: float | None = NEGATIVE_FLOOR
    assembly_count: int = 0
    stats: StepStats = field(default_factory=StepStats)
    _pool: object = field(default=None, repr=False)

    @property
    def handles(self):
        return {"u": self.solver_u, "b": self.solver_b, "e": self.solver_e}

    def step_index_time(self, n: int) -> float:
        return n * self.dt


def _system_matrix(ops: AssembledOperators, dt: float, diffusion: float):
    return ops.mass.lincomb(1.0, ops.stiffness, dt * diffusion)


def _spd_spot_check(a, name, rng, trials=8):
    if a.max_asymmetry() > 1e-12 * np.abs(a.data).max():
        raise ConfigurationError(f"system matrix for {name} is not symmetric")
    for _ in range(trials):
        x = rng.standard_normal(a.n)
        if not float(x @ matvec(a, x)) > 0:
            raise ConfigurationError(f"system matrix for {name} failed the positive-definiteness spot check")


def build_plan(disc: Discretization, problem: Problem, dt: float, tol: float = 1e-10,
               maxiter: int = 5000, threads: int = 1, blowup: float = BLOWUP_LEVEL,
               negative_floor: float | None = NEGATIVE_FLOOR) -> SteppingPlan:
    """Assemble and precondition the three time-constant system matrices."""
    if not (isinstance(dt, (int, float)) and np.isfinite(dt) and dt > 0):
        raise ConfigurationError(f"time step must be positive, got {dt!r}")
    for name in ("d_c", "d_b", "d_e"):
        d = getattr(problem, name)
        if not d > 0:
            raise ConfigurationError(f"diffusion coefficient {name} must be positive, got {d}")
    rng = np.random.default_rng(12345)
    mats = {
        "u": _system_matrix(disc.ops_c, dt, problem.d_c),
        "b": _system_matrix(disc.ops_c, dt, problem.d_b),
        "e": _system_matrix(disc.ops_e, dt, problem.d_e),
    }
    for name, a in mats.items():
        _spd_spot_check(a, name, rng)
    handles = {k: SolverHandle(a, tol=tol, maxiter=maxiter) for k, a in mats.items()}
    problem.bind(disc, float(dt))
    return SteppingPlan(disc, problem, float(dt), handles["u"], handles["b"], handles["e"],
                        threads=int(threads), blowup=blowup, negative_floor=negative_floor,
                        assembly_count=len(mats))


def _rhs(mass, x, dt, load):
    r = matvec(mass, x)
    r += dt * load
    return r


def step(state: FieldState, plan: SteppingPlan) -> FieldState:
    """Advance one time step; the input state is not modified."""
    t0 = time.perf_counter()
    disc, pb, dt = plan.disc, plan.problem, plan.dt
    t = state.t
    imap = disc.interface
    oq, iq = disc.outer_q, disc.iface_q

    # (1) explicit fluxes at t_n
    u_if = state.U[imap.cyto_nodes]
    ue_if = state.Ue[imap.er_nodes]
    p_if = open_probability(state.gating)
    g_out = pb.plasma_flux(t, oq, oq.interpolate(state.U))
    g_cyt, g_er = pb.interface_flux(t, iq, iq.interpolate(u_if), iq.interpolate(ue_if), iq.interpolate(p_if))

    # (2) right-hand sides
    load_u = oq.load(g_out)
    load_u[imap.cyto_nodes] += iq.load(g_cyt)
    load_e = np.zeros(disc.er.n_vertices)
    load_e[imap.er_nodes] += iq.load(g_er)
    src_u, src_b = pb.volume_sources(t, disc.tri_c, state.U, state.B)
    load_b = np.zeros(disc.cyto.n_vertices)
    if src_u is not None:
        load_u += disc.tri_c.load(src_u)
    if src_b is not None:
        load_b += disc.tri_c.load(src_b)
    bf_out, bf_if = pb.buffer_flux(t, oq, iq)
    if bf_out is not None:
        load_b += oq.load(bf_out)
    if bf_if is not None:
        load_b[imap.cyto_nodes] += iq.load(bf_if)
    src_e = pb.er_source(t, disc.tri_e, state.Ue)
    if src_e is not None:
        load_e += disc.tri_e.load(src_e)

    rhs = {
        "u": _rhs(disc.ops_c.mass, state.U, dt, load_u),
        "b": _rhs(disc.ops_c.mass, state.B, dt, load_b),
        "e": _rhs(disc.ops_e.mass, state.Ue, dt, load_e),
    }
    guess = {"u": state.U, "b": state.B, "e": state.Ue}

    # (3) three independent SPD solves
    handles = plan.handles
    ts = time.perf_counter()
    if plan.threads > 1:
        if plan._pool is None:
            plan._pool = ThreadPoolExecutor(max_workers=min(3, plan.threads))
        futures = {k: plan._pool.submit(handles[k].solve, rhs[k], guess[k]) for k in plan.solve_order}
        out = {k: f.result() for k, f in futures.items()}
    else:
        out = {k: handles[k].solve(rhs[k], guess[k]) for k in plan.solve_order}
    solve_time = time.perf_counter() - ts

    # (4) gating with the old trace
    gating = step_gating(state.gating, u_if, dt, pb.rates)
    n_new = state.n + 1
    t_new = plan.step_index_time(n_new)
    pb.after_step(t_new, dt)
    new = FieldState(out["u"], out["b"], out["e"], gating, t_new, n_new)

    worst = max(np.abs(new.U).max(), np.abs(new.B).max(), np.abs(new.Ue).max())
    if not np.isfinite(worst) or worst > plan.blowup:
        raise InstabilityError(
            f"instability at step {n_new} (t={t_new:.6g}): max |field| = {worst:.3e}", n_new, t_new)
    if plan.negative_floor is not None:
        lowest = min(new.U.min(), new.B.min(), new.Ue.min())
        if lowest < plan.negative_floor:
            raise InstabilityError(
                f"instability at step {n_new} (t={t_new:.6g}): concentration fell to {lowest:.3e}", n_new, t_new)

    st = plan.stats
    st.steps += 1
    st.solve_time += solve_time
    st.last_iterations = sum(h.last.iterations for h in handles.values())
    st.step_time += time.perf_counter() - t0
    return new


@dataclass
class TimeSeriesRow:
    t: float
    u_min: float
    u_max: float
    u_mean: float
    b_min: float
    b_max: float
    b_mean: float
    ue_min: float
    ue_max: float
    ue_mean: float
    p_min: float
    p_max: float
    iterations: int

    @classmethod
    def from_state(cls, state: FieldState, disc: Discretization, iterations: int = 0) -> "TimeSeriesRow":
        p = open_probability(state.gating)
        wc, we = disc.mass_weights_c, disc.mass_weights_e
        area_c, area_e = wc.sum(), we.sum()
        return cls(
            float(state.t),
            float(state.U.min()), float(state.U.max()), float(wc @ state.U / area_c),
            float(state.B.min()), float(state.B.max()), float(wc @ state.B / area_c),
            float(state.Ue.min()), float(state.Ue.max()), float(we @ state.Ue / area_e),
            float(p.min()), float(p.max()), int(iterations),
        )


@dataclass
class Schedule:
    """Output plan: snapshot request times and time-series stride in steps."""

    snapshot_times: tuple = ()
    series_every: int = 1

    def snapshot_steps(self, dt: float, n_steps: int, start: int = 0) -> dict:
        """Map step index -> requested time, each rounded to the nearest step."""
        out = {}
        for tr in self.snapshot_times:
            k = int(round(tr / dt))
            if start <= k <= start + n_steps:
                out.setdefault(k, tr)
        return out


@dataclass
class Snapshot:
    requested: float
    actual: float
    state: FieldState


@dataclass
class RunResult:
    final: FieldState
    series: list
    snapshots: list
    steps: int


def run(initial: FieldState, plan: SteppingPlan, n_steps: int, schedule: Schedule | None = None,
        observer=None) -> RunResult:
    """Execute ``n_steps`` steps; ``observer(state)`` is called after each."""
    schedule = schedule or Schedule()
    want = schedule.snapshot_steps(plan.dt, n_steps, initial.n)
    series = [TimeSeriesRow.from_state(initial, plan.disc)]
    snaps = []
    if initial.n in want:
        snaps.append(Snapshot(want[initial.n], initial.t, initial.copy()))
    state = initial
    for k in range(n_steps):
        try:
            state = step(state, plan)
        except InstabilityError as exc:
            exc.result = RunResult(state, series, snaps, k)
            raise
        if observer is not None:
            observer(state)
        if (k + 1) % schedule.series_every == 0 or k + 1 == n_steps:
            series.append(TimeSeriesRow.from_state(state, plan.disc, plan.stats.last_iterations))
        if state.n in want:
            snaps.append(Snapshot(want[state.n], state.t, state.copy()))
    if n_steps == 0:
        state = initial.copy()
    return RunResult(state, series, snaps, n_steps)


class Trajectory:
    """Stored nodal fields at t_0 < t_1 < ... for hat-function interpolation in time."""

    def __init__(self):
        self.times: list[float] = []
        self.fields: list[np.ndarray] = []

    def append(self, t: float, values) -> None:
        if self.times and not t > self.times[-1]:
            raise ValueError("trajectory times must increase strictly")
        self.times.append(float(t))
        self.fields.append(np.array(values, dtype=float, copy=True))

    def __len__(self):
        return len(self.times)


def history_interpolant(traj: Trajectory, t: float) -> np.ndarray:
    """Piecewise-linear-in-time value sum_i phi_i(t) U^i."""
    times = traj.times
    if not times or t < times[0] or t > times[-1]:
        raise ValueError(f"t={t} outside stored span [{times[0] if times else None}, {times[-1] if times else None}]")
    i = int(np.searchsorted(times, t, side="right")) - 1
    if i >= len(times) - 1:
        return traj.fields[-1].copy()
    t0, t1 = times[i], times[i + 1]
    w = (t - t0) / (t1 - t0)
    if w == 0.0:
        return traj.fields[i].copy()
    return (1.0 - w) * traj.fields[i] + w * traj.fields[i + 1]
