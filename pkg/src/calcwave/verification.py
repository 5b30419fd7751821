"""Manufactured-solution convergence harness for the two verification cases.

Case 1 couples u (annulus) and u_e (disk) through P(u_e - u); case 2 adds
the buffer b with reaction -b*u and a saturating u/((1+u)u_e) interface
term. Boundary corrections are built from the polygon edge normal, so the
exact fields solve the discrete-geometry problem exactly.

Time levels: the scheme treats diffusion by backward Euler and every
nonlinear term explicitly. Linear data (forcings, normal derivatives of the
exact fields) are therefore taken at t_{n+1}, while the exact counterparts
of the explicit nonlinear terms (RyR exchange, SERCA-like term, b*u) are
taken at t_n, the time at which the numerical versions are evaluated.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .fem import barycentric_gradients
from .gating import KEIZER_LEVINE, GatingField, open_probability, step_gating
from .stepper import Discretization, FieldState, Problem, build_plan, run

T_FINAL = 1.3
R_INNER, R_OUTER = 1.0, 2.0
GATING0 = (0.5, 0.0, 0.5)


def dt_for(h: float, t_final: float = T_FINAL) -> float:
    """Time step tied to mesh size: dt = (32 T / (5 pi^2)) h^2."""
    return 32.0 * t_final / (5.0 * math.pi**2) * h * h


def steps_for(h: float, t_final: float = T_FINAL) -> tuple[int, float]:
    """Number of steps and the adjusted dt that divides t_final exactly."""
    n = max(1, int(round(t_final / dt_for(h, t_final))))
    return n, t_final / n


# exact fields as (value, gradient) pairs of numpy-vectorized callables

def _u(x, y, t):
    return np.exp((x * x + y * y + 4 * t) / 4) / 10


def _grad_u(x, y, t):
    e = np.exp((x * x + y * y + 4 * t) / 4)
    return e * x / 20, e * y / 20


def _f_u(x, y, t):
    return -np.exp(x * x / 4 + y * y / 4 + t) * (x * x + y * y) / 40


def _ue1(x, y, t):
    return np.exp(x + y) * (np.sin(t) + 2) / 8


def _grad_ue1(x, y, t):
    g = np.exp(x + y) * (np.sin(t) + 2) / 8
    return g, g


def _f_ue1(x, y, t):
    return np.exp(x + y) * (np.cos(t) - 2 * (np.sin(t) + 2)) / 8


def _ue2(x, y, t):
    return np.exp(x + y) * (np.sin(t) + 2) / 16 + 1


def _grad_ue2(x, y, t):
    g = np.exp(x + y) * (np.sin(t) + 2) / 16
    return g, g


def _f_ue2(x, y, t):
    return np.exp(x + y) * (np.cos(t) - 2 * (np.sin(t) + 2)) / 16


def _b(x, y, t):
    return np.exp(x * y * t / 16)


def _grad_b(x, y, t):
    e = np.exp(x * y * t / 16)
    return e * t * y / 16, e * t * x / 16


def _f_b(x, y, t):
    e = np.exp(x * y * t / 16)
    return -e * (-x * y + t * t * (x * x + y * y) / 16) / 16


@dataclass(frozen=True)
class ManufacturedCase:
    id: int
    u: object
    grad_u: object
    ue: object
    grad_ue: object
    f_u: object       # forcing of the u equation, without the reaction part
    f_ue: object
    b: object = None
    grad_b: object = None
    f_b: object = None
    t_final: float = T_FINAL
    r_inner: float = R_INNER
    r_outer: float = R_OUTER

    @property
    def has_buffer(self) -> bool:
        return self.b is not None

    def fields(self) -> tuple[str, ...]:
        return ("u", "b", "ue") if self.has_buffer else ("u", "ue")

    def forcing_u(self, x, y, t):
        """Full volume forcing of the u equation (f1 in the case tables)."""
        if self.has_buffer:
            return self.f_u(x, y, t) + self.b(x, y, t) * self.u(x, y, t)
        return self.f_u(x, y, t)

    def forcing_b(self, x, y, t):
        return self.f_b(x, y, t) + self.b(x, y, t) * self.u(x, y, t)


def manufactured_example(case_id: int) -> ManufacturedCase:
    if case_id == 1:
        return ManufacturedCase(1, _u, _grad_u, _ue1, _grad_ue1, _f_u, _f_ue1)
    if case_id == 2:
        return ManufacturedCase(2, _u, _grad_u, _ue2, _grad_ue2, _f_u, _f_ue2, _b, _grad_b, _f_b)
    raise ValueError(f"unknown manufactured example {case_id!r}; expected 1 or 2")


def _serca_like(u, ue):
    return u / ((1 + u) * ue)


class ManufacturedProblem(Problem):
    """Unit diffusion, Keizer-Levine gating, exact-solution boundary corrections.

    The corrections contain P evaluated from a second gating field driven by
    the exact trace, advanced with the same backward-Euler update.
    """

    def __init__(self, case: ManufacturedCase, gating0=GATING0):
        self.case = case
        self.d_c = self.d_b = self.d_e = 1.0
        self.rates = KEIZER_LEVINE
        self.gating0 = gating0
        self.exact_gating = None
        self.dt = None

    def bind(self, disc: Discretization, dt: float) -> None:
        v = disc.cyto.vertices[disc.interface.cyto_nodes]
        self._xi, self._yi = v[:, 0], v[:, 1]
        self.exact_gating = GatingField.uniform(len(disc.interface), *self.gating0)
        self.dt = dt

    def plasma_flux(self, t, q, u):
        gx, gy = self.case.grad_u(q.x, q.y, t + self.dt)
        return q.nx * gx + q.ny * gy

    def interface_flux(self, t, q, u, ue, p):
        c = self.case
        s = t + self.dt
        x, y, nx, ny = q.x, q.y, q.nx, q.ny   # normal points out of the cytosol
        p_ex = q.interpolate(open_probability(self.exact_gating))
        u_ex, ue_ex = c.u(x, y, t), c.ue(x, y, t)
        gux, guy = c.grad_u(x, y, s)
        gex, gey = c.grad_ue(x, y, s)
        dn_u = nx * gux + ny * guy
        dn_ue = -(nx * gex + ny * gey)
        ryr_ex = p_ex * (ue_ex - u_ex)
        g_cyt = p * (ue - u) + (dn_u - ryr_ex)
        g_er = p * (u - ue) + (dn_ue + ryr_ex)
        if c.has_buffer:
            s_ex = _serca_like(u_ex, ue_ex)
            s_h = _serca_like(u, ue)
            g_cyt += s_ex - s_h
            g_er += s_h - s_ex
        return g_cyt, g_er

    def volume_sources(self, t, q, u_nodal, b_nodal):
        c = self.case
        s = t + self.dt
        if not c.has_buffer:
            return c.f_u(q.x, q.y, s), None
        # exact b*u at t_n balances the explicit reaction of the scheme
        bu = c.b(q.x, q.y, t) * c.u(q.x, q.y, t) - q.interpolate(b_nodal) * q.interpolate(u_nodal)
        return c.f_u(q.x, q.y, s) + bu, c.f_b(q.x, q.y, s) + bu

    def er_source(self, t, q, ue_nodal):
        return self.case.f_ue(q.x, q.y, t + self.dt)

    def buffer_flux(self, t, outer, iface):
        if not self.case.has_buffer:
            return None, None
        out = []
        for q in (outer, iface):
            gx, gy = self.case.grad_b(q.x, q.y, t + self.dt)
            out.append(q.nx * gx + q.ny * gy)
        return tuple(out)

    def after_step(self, t_new, dt):
        trace = self.case.u(self._xi, self._yi, t_new - dt)
        step_gating(self.exact_gating, trace, dt, self.rates, inplace=True)


def initial_state(disc: Discretization, case: ManufacturedCase, gating0=GATING0) -> FieldState:
    vc, ve = disc.cyto.vertices, disc.er.vertices
    u0 = case.u(vc[:, 0], vc[:, 1], 0.0)
    b0 = case.b(vc[:, 0], vc[:, 1], 0.0) if case.has_buffer else np.zeros(disc.cyto.n_vertices)
    ue0 = case.ue(ve[:, 0], ve[:, 1], 0.0)
    return FieldState(u0, b0, ue0, GatingField.uniform(len(disc.interface), *gating0), 0.0, 0)


class _MeshNorms:
    """Midpoint-rule L2 and H1-seminorm of (exact - P1 field) on one mesh."""

    def __init__(self, mesh, tri_q):
        self.q = tri_q
        p = mesh.vertices[mesh.triangles]
        self.grads = barycentric_gradients(p, tri_q.area)
        self.tri = mesh.triangles
        self.w = (tri_q.area / 3.0)[:, None]

    def errors(self, values, exact, grad, t):
        q = self.q
        e = exact(q.x, q.y, t) - q.interpolate(values)
        l2 = math.sqrt(float(np.sum(self.w * e * e)))
        gh = np.einsum("mi,mik->mk", values[self.tri], self.grads)
        gx, gy = grad(q.x, q.y, t)
        ex = gx - gh[:, 0:1]
        ey = gy - gh[:, 1:2]
        h1 = math.sqrt(float(np.sum(self.w * (ex * ex + ey * ey))))
        return l2, h1


class ErrorAccumulator:
    """Time-averaged errors (1/N) sum_i ||u(t_i) - u_h(t_i)|| over observed steps."""

    def __init__(self, disc: Discretization, case: ManufacturedCase):
        self.case = case
        self._c = _MeshNorms(disc.cyto, disc.tri_c)
        self._e = _MeshNorms(disc.er, disc.tri_e)
        self.count = 0
        self.sums = {f: np.zeros(2) for f in case.fields()}

    def instant(self, state: FieldState) -> dict:
        c, t = self.case, state.t
        out = {"u": self._c.errors(state.U, c.u, c.grad_u, t),
               "ue": self._e.errors(state.Ue, c.ue, c.grad_ue, t)}
        if c.has_buffer:
            out["b"] = self._c.errors(state.B, c.b, c.grad_b, t)
        return out

    def __call__(self, state: FieldState) -> None:
        for f, (l2, h1) in self.instant(state).items():
            self.sums[f] += (l2, h1)
        self.count += 1

    def averages(self) -> dict:
        if self.count == 0:
            raise ValueError("no steps observed")
        return {f: (float(s[0] / self.count), float(s[1] / self.count)) for f, s in self.sums.items()}


def error_norms(states, disc: Discretization, case: ManufacturedCase) -> dict:
    """Average L2 and H1-semi errors per field over ``states`` (steps 1..N)."""
    acc = ErrorAccumulator(disc, case)
    for s in states:
        acc(s)
    return acc.averages()


def convergence_rate(e_coarse: float, e_fine: float, h_coarse: float, h_fine: float) -> float:
    return math.log(e_coarse / e_fine) / math.log(h_coarse / h_fine)


@dataclass
class LevelResult:
    h: float
    dt: float
    steps: int
    errors: dict   # field -> (L2, H1semi)


@dataclass
class ConvergenceReport:
    case_id: int
    fields: tuple
    levels: list = field(default_factory=list)

    def rates(self, fld: str, norm: int) -> list[float]:
        out = []
        for a, b in zip(self.levels, self.levels[1:]):
            out.append(convergence_rate(a.errors[fld][norm], b.errors[fld][norm], a.h, b.h))
        return out

    def rows(self) -> list[dict]:
        rows = []
        for fld in self.fields:
            r2 = [None] + self.rates(fld, 0)
            r1 = [None] + self.rates(fld, 1)
            for lvl, a, b in zip(self.levels, r2, r1):
                rows.append({
                    "field": fld, "h": lvl.h, "dt": lvl.dt,
                    "err_L2": lvl.errors[fld][0], "err_H1semi": lvl.errors[fld][1],
                    "rate_L2": a, "rate_H1": b,
                })
        return rows

    def write_csv(self, path) -> None:
        cols = ["field", "h", "dt", "err_L2", "err_H1semi", "rate_L2", "rate_H1"]
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
            w.writeheader()
            for r in self.rows():
                w.writerow({k: ("" if r[k] is None else (r[k] if isinstance(r[k], str) else repr(float(r[k]))))
                            for k in cols})

    def table(self) -> str:
        head = f"{'field':>5} {'h':>10} {'dt':>10} {'err_L2':>12} {'err_H1semi':>12} {'rate_L2':>8} {'rate_H1':>8}"
        lines = [f"Example {self.case_id} convergence", head, "-" * len(head)]
        for r in self.rows():
            fr = lambda v: f"{v:8.3f}" if v is not None else f"{'-':>8}"
            lines.append(f"{r['field']:>5} {r['h']:10.5f} {r['dt']:10.3e} {r['err_L2']:12.4e} "
                         f"{r['err_H1semi']:12.4e} {fr(r['rate_L2'])} {fr(r['rate_H1'])}")
        return "\n".join(lines)


def run_level(case: ManufacturedCase, h: float, threads: int = 1) -> LevelResult:
    disc = Discretization.from_geometry(case.r_inner, case.r_outer, h)
    n, dt = steps_for(h, case.t_final)
    problem = ManufacturedProblem(case)
    plan = build_plan(disc, problem, dt, threads=threads)
    acc = ErrorAccumulator(disc, case)
    run(initial_state(disc, case), plan, n, observer=acc)
    return LevelResult(h, dt, n, acc.averages())


def default_levels(k: int) -> list[float]:
    """h = pi/8, pi/16, ... (k levels)."""
    if k < 2:
        raise ValueError("a convergence study needs at least 2 levels")
    return [math.pi / (8 * 2**i) for i in range(k)]


def convergence_study(case_id: int, levels, threads: int = 1) -> ConvergenceReport:
    levels = list(levels)
    if len(levels) < 2:
        raise ValueError("a convergence study needs at least 2 levels")
    if any(not b < a for a, b in zip(levels, levels[1:])):
        raise ValueError("levels must be strictly decreasing in h")
    case = manufactured_example(case_id)
    report = ConvergenceReport(case_id, case.fields())
    for h in levels:
        report.levels.append(run_level(case, h, threads))
    return report
