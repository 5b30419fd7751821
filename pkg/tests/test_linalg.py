import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from calcwave import kernels
from calcwave.fem import assemble_operators
from calcwave.linalg import SolverError, SolverHandle, SparseMatrixSym, matvec, solve


def random_spd(n, seed, density=0.1, shift=1.0):
    rng = np.random.default_rng(seed)
    b = sp.random(n, n, density=density, random_state=rng)
    a = (b @ b.T + shift * sp.identity(n)).tocsr()
    return SparseMatrixSym.from_scipy(a), a.toarray()


def fem_system(geom, dt=0.01):
    ops = assemble_operators(geom[0])
    return ops.mass.lincomb(1.0, ops.stiffness, dt)


def test_csr_storage_is_canonical():
    a = SparseMatrixSym.from_coo([0, 0, 1, 1, 0], [1, 0, 1, 0, 1], [1.0, 2.0, 3.0, 1.0, 0.0], 2)
    assert a.indptr.tolist() == [0, 2, 4]
    assert a.indices.tolist() == [0, 1, 0, 1]
    assert a.data.tolist() == [2.0, 1.0, 1.0, 3.0]
    assert not a.data.flags.writeable
    with pytest.raises(ValueError):
        SparseMatrixSym.from_dense(np.ones((2, 3)))


def test_matvec_matches_dense(backend):
    a, d = random_spd(60, 0)
    x = np.random.default_rng(1).standard_normal(60)
    assert np.allclose(a @ x, d @ x, rtol=1e-14, atol=1e-13)
    with pytest.raises(ValueError, match="dimension mismatch"):
        matvec(a, np.ones(59))


def test_identity_solve_exact(backend):
    h = SolverHandle(SparseMatrixSym.from_scipy(sp.identity(7)))
    b = np.arange(7.0)
    assert np.array_equal(h.solve(b), b)
    assert h.last.iterations <= 1


def test_unit_vector_gives_inverse_column(backend, geom16):
    a = fem_system(geom16)
    inv = np.linalg.inv(a.todense())
    h = SolverHandle(a, tol=1e-13)
    for j in (0, 17, a.n - 1):
        e = np.zeros(a.n)
        e[j] = 1.0
        assert np.max(np.abs(h.solve(e) - inv[:, j])) < 1e-13 * max(1.0, np.abs(inv[:, j]).max()) * 10


def test_solution_of_ones(backend, geom16):
    a = fem_system(geom16)
    h = SolverHandle(a)
    x = h.solve(a @ np.ones(a.n))
    assert np.max(np.abs(x - 1)) < 1e-9
    assert np.array_equal(h.solve(np.zeros(a.n)), np.zeros(a.n))
    assert h.last.iterations == 0


def test_random_spd_against_dense(backend):
    a, d = random_spd(50, 4)
    b = np.random.default_rng(5).standard_normal(50)
    x = SolverHandle(a).solve(b)
    ref = np.linalg.solve(d, b)
    assert np.max(np.abs(x - ref)) < 1e-8 * np.abs(ref).max()


@settings(max_examples=30, deadline=None)
@given(n=st.integers(2, 40), seed=st.integers(0, 2**31 - 1))
def test_residual_meets_tolerance(n, seed):
    a, d = random_spd(n, seed, density=0.3)
    b = np.random.default_rng(seed + 1).standard_normal(n)
    h = SolverHandle(a)
    x = h.solve(b)
    assert np.linalg.norm(d @ x - b) <= 1e-10 * np.linalg.norm(b) * 1.0001


def test_nonconvergence_raises(backend, geom16):
    a = fem_system(geom16, dt=1.0)
    h = SolverHandle(a, maxiter=3)
    with pytest.raises(SolverError, match="did not converge") as exc:
        h.solve(np.random.default_rng(0).standard_normal(a.n))
    assert exc.value.iterations == 3
    assert exc.value.residual > 1e-10


def test_indefinite_matrix_detected(backend):
    a = SparseMatrixSym.from_dense([[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(SolverError, match="not positive definite"):
        SolverHandle(a).solve(np.array([1.0, -1.0]))
    with pytest.raises(ValueError, match="non-positive diagonal"):
        SolverHandle(SparseMatrixSym.from_dense([[0.0, 1.0], [1.0, 2.0]]))


def test_bad_rhs_rejected(geom16):
    h = SolverHandle(fem_system(geom16))
    rhs = np.ones(h.matrix.n)
    rhs[3] = np.nan
    with pytest.raises(ValueError, match="non-finite"):
        h.solve(rhs)
    with pytest.raises(ValueError, match="dimension mismatch"):
        h.solve(np.ones(h.matrix.n + 1))


def test_solves_are_bitwise_repeatable(backend, geom16):
    h = SolverHandle(fem_system(geom16))
    b = np.random.default_rng(2).standard_normal(h.matrix.n)
    x1, x2 = h.solve(b), h.solve(b)
    assert np.array_equal(x1, x2)


def test_backends_agree(geom16):
    backends = kernels.available_backends()
    if len(backends) < 2:
        pytest.skip("only one kernel backend importable")
    a = fem_system(geom16)
    b = np.random.default_rng(3).standard_normal(a.n)
    xs = []
    for name in backends:
        with kernels.use_backend(name):
            xs.append(SolverHandle(a).solve(b))
    assert np.max(np.abs(xs[0] - xs[1])) < 1e-12 * np.abs(xs[0]).max()


def test_preconditioner_built_once(geom16):
    h = SolverHandle(fem_system(geom16))
    for _ in range(5):
        h.solve(np.ones(h.matrix.n))
    assert h.setups == 1 and h.solves == 5


def test_history_converges_geometrically(backend, geom16):
    # history holds the preconditioned residual sqrt(r.z); CG minimizes the
    # energy norm, so this may wiggle but must contract on average
    h = SolverHandle(fem_system(geom16, dt=0.1))
    h.solve(np.random.default_rng(4).standard_normal(h.matrix.n), record_history=True)
    hist = h.last.history
    assert h.last.residual <= 1e-10
    assert np.all(np.isfinite(hist)) and len(hist) == h.last.iterations + 1
    k = len(hist) - 1
    assert hist[k // 2] < hist[0] and hist[-1] < hist[k // 2]
    assert hist[-1] / hist[0] < 1e-9


def test_energy_error_monotone(backend, geom16):
    # the A-norm error of CG iterates is non-increasing
    a = fem_system(geom16, dt=0.1)
    d = a.todense()
    x_true = np.random.default_rng(6).standard_normal(a.n)
    b = d @ x_true
    dinv = 1.0 / a.diagonal()
    errs = []
    for k in range(1, 25):
        x = np.zeros(a.n)
        kernels.pcg(a.indptr, a.indices, a.data, dinv, b, x, 1e-30, k, None)
        e = x - x_true
        errs.append(math.sqrt(e @ d @ e))
    assert all(e2 <= e1 * (1 + 1e-12) for e1, e2 in zip(errs, errs[1:]))
    assert errs[-1] < 1e-3 * errs[0]


@pytest.mark.parametrize("k,dt", [(16, 0.00375), (16, 0.1), (48, 0.00375), (48, 0.1)])
def test_preconditioned_residual_nonincreasing_on_fem_systems(backend, k, dt):
    from calcwave.mesh import generate_geometry
    a = fem_system(generate_geometry(1.0, 2.0, math.pi / k), dt)
    h = SolverHandle(a)
    h.solve(np.random.default_rng(0).standard_normal(a.n), record_history=True)
    hist = h.last.history
    assert np.all(np.diff(hist) <= 0), np.flatnonzero(np.diff(hist) > 0)
