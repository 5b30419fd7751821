import math

import numpy as np
import pytest

from calcwave.gating import GatingField
from calcwave.linalg import matvec
from calcwave.scenarios import build_problem, builtin_scenario, initial_state as scenario_state
from calcwave.stepper import (ConfigurationError, Discretization, FieldState, InstabilityError, Problem, Schedule,
                              Trajectory, build_plan, history_interpolant, run, step)
from calcwave.verification import ManufacturedProblem, initial_state, manufactured_example, steps_for

EX3 = builtin_scenario("ex3")
EX4 = builtin_scenario("ex4")


class ZeroFlux(Problem):
    """Pure Neumann diffusion in all three fields."""

    def __init__(self, d_c=1.0, d_b=0.5, d_e=2.0):
        self.d_c, self.d_b, self.d_e = d_c, d_b, d_e

    def plasma_flux(self, t, q, u):
        return np.zeros_like(u)

    def interface_flux(self, t, q, u, ue, p):
        return np.zeros_like(u), np.zeros_like(u)


def random_state(disc, seed):
    rng = np.random.default_rng(seed)
    return FieldState(rng.uniform(0.1, 2, disc.cyto.n_vertices), rng.uniform(0, 40, disc.cyto.n_vertices),
                      rng.uniform(50, 250, disc.er.n_vertices),
                      GatingField(rng.dirichlet(np.ones(4), len(disc.interface))[:, :3]))


def ex_plan(cfg, disc, **kw):
    return build_plan(disc, build_problem(cfg), cfg.numerics.dt, **kw)


@pytest.mark.parametrize("dt", [0.0, -1e-3, float("nan")])
def test_bad_time_step_rejected(disc8, dt):
    with pytest.raises(ConfigurationError):
        build_plan(disc8, ZeroFlux(), dt)


def test_bad_diffusion_rejected(disc8):
    with pytest.raises(ConfigurationError, match="d_b"):
        build_plan(disc8, ZeroFlux(d_b=0.0), 1e-3)


def test_mass_matrix_solve_of_mass_times_ones(disc16):
    from calcwave.linalg import SolverHandle
    for ops in (disc16.ops_c, disc16.ops_e):
        h = SolverHandle(ops.mass)
        x = h.solve(matvec(ops.mass, np.ones(ops.mass.n)))
        assert np.max(np.abs(x - 1)) < 1e-9


def test_system_matrices_recombine(disc16):
    dt = 1e-3
    plan = build_plan(disc16, ZeroFlux(220.0, 20.0, 220.0), dt)
    rng = np.random.default_rng(0)
    for handle, ops, d in ((plan.solver_u, disc16.ops_c, 220.0), (plan.solver_b, disc16.ops_c, 20.0),
                           (plan.solver_e, disc16.ops_e, 220.0)):
        for _ in range(3):
            x = rng.standard_normal(ops.mass.n)
            ref = matvec(ops.mass, x) + dt * d * matvec(ops.stiffness, x)
            assert np.max(np.abs(matvec(handle.matrix, x) - ref)) < 1e-13 * max(1.0, np.abs(ref).max())


def test_constant_state_is_steady_without_flux(disc16):
    plan = build_plan(disc16, ZeroFlux(), 0.01)
    s0 = FieldState.uniform(disc16, 0.7, 3.0, 120.0, (1.0, 0.0, 0.0))
    s1 = run(s0, plan, 10).final
    assert np.max(np.abs(s1.U - 0.7)) < 1e-9
    assert np.max(np.abs(s1.B - 3.0)) < 1e-9
    assert np.max(np.abs(s1.Ue - 120.0)) < 1e-7


def test_mass_conserved_without_flux(disc16):
    plan = build_plan(disc16, ZeroFlux(), 0.01, tol=1e-13)
    s = random_state(disc16, 1)
    wc, we = disc16.mass_weights_c, disc16.mass_weights_e
    for _ in range(10):
        new = step(s, plan)
        for a, b, w in ((s.U, new.U, wc), (s.B, new.B, wc), (s.Ue, new.Ue, we)):
            assert abs(w @ b - w @ a) <= 1e-10 * abs(w @ a)
        s = new


def test_solve_order_does_not_matter(disc16):
    s0 = scenario_state(EX4, disc16)
    results = []
    for order in (("u", "b", "e"), ("e", "b", "u"), ("b", "e", "u")):
        plan = ex_plan(EX4, disc16)
        plan.solve_order = order
        results.append(run(s0, plan, 5).final)
    for r in results[1:]:
        assert np.array_equal(r.U, results[0].U)
        assert np.array_equal(r.B, results[0].B)
        assert np.array_equal(r.Ue, results[0].Ue)
        assert np.array_equal(r.gating.q, results[0].gating.q)


def test_threaded_solves_are_deterministic(disc16):
    s0 = scenario_state(EX4, disc16)
    a = run(s0, ex_plan(EX4, disc16), 4).final
    plan = ex_plan(EX4, disc16, threads=3)
    try:
        b = run(s0, plan, 4).final
    finally:
        plan._pool.shutdown()
    assert np.array_equal(a.U, b.U) and np.array_equal(a.Ue, b.Ue) and np.array_equal(a.B, b.B)


def test_chained_half_runs_equal_full_run(disc16):
    s0 = scenario_state(EX3, disc16)
    full = run(s0, ex_plan(EX3, disc16), 20).final
    plan = ex_plan(EX3, disc16)
    half = run(run(s0, plan, 10).final, plan, 10).final
    assert half.n == full.n == 20 and half.t == full.t
    for f in ("U", "B", "Ue"):
        assert np.array_equal(getattr(half, f), getattr(full, f))
    assert np.array_equal(half.gating.q, full.gating.q)


def test_zero_steps_returns_initial_state(disc8):
    s0 = scenario_state(EX3, disc8)
    res = run(s0, ex_plan(EX3, disc8), 0)
    assert res.steps == 0 and res.final.t == 0.0
    assert np.array_equal(res.final.U, s0.U) and res.final is not s0
    assert len(res.series) == 1


def test_input_state_not_modified(disc8):
    s0 = scenario_state(EX3, disc8)
    before = s0.copy()
    step(s0, ex_plan(EX3, disc8))
    assert np.array_equal(s0.U, before.U) and np.array_equal(s0.gating.q, before.gating.q)


def test_time_is_step_count_times_dt(disc8):
    plan = ex_plan(EX3, disc8)
    res = run(scenario_state(EX3, disc8), plan, 7)
    assert res.final.t == 7 * plan.dt and res.final.n == 7


def test_gating_uses_old_trace(disc8):
    # gating after one step must match a direct backward-Euler update with U^n
    from calcwave.gating import step_gating
    s0 = random_state(disc8, 3)
    plan = build_plan(disc8, build_problem(EX3), 1e-4)
    s1 = step(s0, plan)
    expected = step_gating(s0.gating, s0.U[disc8.interface.cyto_nodes], 1e-4)
    assert np.array_equal(s1.gating.q, expected.q)


def test_matrices_built_once_per_run(disc16):
    plan = ex_plan(EX3, disc16)
    run(scenario_state(EX3, disc16), plan, 15)
    assert plan.assembly_count == 3
    assert all(h.setups == 1 for h in plan.handles.values())
    assert all(h.solves == 15 for h in plan.handles.values())


# one step of the first manufactured case from its exact initial data at h = pi/8
# (dt = 0.13): max nodal errors against the exact fields at t = dt
EX1_ONE_STEP_U = 0.005418116511421267
EX1_ONE_STEP_UE = 0.013400838788372837


def test_manufactured_one_step_regression(disc8):
    case = manufactured_example(1)
    n, dt = steps_for(math.pi / 8)
    assert dt == pytest.approx(0.13, rel=1e-12)
    plan = build_plan(disc8, ManufacturedProblem(case), dt)
    s1 = step(initial_state(disc8, case), plan)
    x, y = disc8.cyto.vertices.T
    xe, ye = disc8.er.vertices.T
    assert np.abs(s1.U - case.u(x, y, dt)).max() == pytest.approx(EX1_ONE_STEP_U, rel=1e-6)
    assert np.abs(s1.Ue - case.ue(xe, ye, dt)).max() == pytest.approx(EX1_ONE_STEP_UE, rel=1e-6)


def test_instability_detector_reports_step(disc8):
    # a huge plasma influx blows the cytosol past the 1e4 level
    class Flood(ZeroFlux):
        def plasma_flux(self, t, q, u):
            return np.full_like(u, 1e7)
    plan = build_plan(disc8, Flood(), 1e-2)
    with pytest.raises(InstabilityError, match="max \\|field\\|") as exc:
        run(FieldState.uniform(disc8, 0.1, 0.0, 1.0, (1, 0, 0)), plan, 10)
    assert exc.value.step == 1
    assert exc.value.result.steps == 0 and len(exc.value.result.series) == 1


def test_negative_floor_detector(disc8):
    class Drain(ZeroFlux):
        def plasma_flux(self, t, q, u):
            return np.full_like(u, -50.0)
    plan = build_plan(disc8, Drain(), 1e-2)
    with pytest.raises(InstabilityError, match="concentration fell"):
        run(FieldState.uniform(disc8, 0.1, 0.0, 1.0, (1, 0, 0)), plan, 10)
    plan = build_plan(disc8, Drain(), 1e-2, negative_floor=None)
    assert run(FieldState.uniform(disc8, 0.1, 0.0, 1.0, (1, 0, 0)), plan, 3).final.U.min() < 0


def test_stability_independent_of_mesh_size():
    # stable scenario dt through the stimulus window at two mesh levels
    cfg = EX3.with_overrides(t_end=0.9)
    for k in (16, 32):
        disc = Discretization.from_geometry(1.0, 2.0, math.pi / k)
        res = run(scenario_state(cfg, disc), ex_plan(cfg, disc), cfg.numerics.n_steps)
        assert res.final.all_finite()
        assert res.final.U.min() > 0 and res.final.U.max() < 10


def test_ex4_positivity_short_run(disc16):
    cfg = EX4.with_overrides(t_end=0.5)
    plan = ex_plan(cfg, disc16)
    worst = {"u": np.inf, "ue": np.inf, "bmin": np.inf, "bmax": -np.inf}

    def watch(s):
        worst["u"] = min(worst["u"], s.U.min())
        worst["ue"] = min(worst["ue"], s.Ue.min())
        worst["bmin"] = min(worst["bmin"], s.B.min())
        worst["bmax"] = max(worst["bmax"], s.B.max())
    run(scenario_state(cfg, disc16), plan, cfg.numerics.n_steps, observer=watch)
    assert worst["u"] > 0 and worst["ue"] > 0
    assert 0 <= worst["bmin"] and worst["bmax"] <= cfg.flux.b0


def test_schedule_rounds_to_nearest_step():
    sched = Schedule((0.0, 0.01, 0.0149, 0.0151, 5.0), 1)
    assert sched.snapshot_steps(0.01, 3) == {0: 0.0, 1: 0.01, 2: 0.0151}
    assert sched.snapshot_steps(0.01, 3)[1] == 0.01


def test_snapshots_and_series_stride(disc8):
    plan = ex_plan(EX3, disc8)
    res = run(scenario_state(EX3, disc8), plan, 10, Schedule((0.0, 0.0113, 1.0), 4))
    assert [s.requested for s in res.snapshots] == [0.0, 0.0113]
    assert res.snapshots[1].actual == 3 * plan.dt
    assert [r.t for r in res.series] == [0.0, 4 * plan.dt, 8 * plan.dt, 10 * plan.dt]


def test_history_interpolant_nodes_and_midpoints():
    traj = Trajectory()
    rng = np.random.default_rng(0)
    fields = [rng.standard_normal(5) for _ in range(4)]
    for i, f in enumerate(fields):
        traj.append(0.1 * i, f)
    for i, f in enumerate(fields):
        assert np.array_equal(history_interpolant(traj, 0.1 * i), f)
    mid = history_interpolant(traj, 0.15)
    assert np.allclose(mid, (fields[1] + fields[2]) / 2, rtol=0, atol=1e-15)
    with pytest.raises(ValueError):
        history_interpolant(traj, 0.31)
    with pytest.raises(ValueError):
        traj.append(0.3, fields[0])


def test_history_interpolant_integral_is_trapezoid():
    traj = Trajectory()
    times = np.array([0.0, 0.3, 0.5, 1.2, 2.0])
    vals = [np.array([1 + 2 * t, -t]) for t in times]
    for t, v in zip(times, vals):
        traj.append(t, v)
    # exact integral of the piecewise-linear interpolant via 2-point Gauss per interval
    total = np.zeros(2)
    g = 0.5 / math.sqrt(3)
    for a, b in zip(times, times[1:]):
        for s in (0.5 - g, 0.5 + g):
            total += 0.5 * (b - a) * history_interpolant(traj, a + s * (b - a))
    trap = sum(0.5 * (b - a) * (va + vb) for a, b, va, vb in zip(times, times[1:], vals, vals[1:]))
    assert np.allclose(total, trap, rtol=1e-14, atol=1e-15)
    assert np.allclose(total, [2.0 + 4.0, -2.0], rtol=1e-14)
