import numpy as np
import pytest
import scipy.sparse as sp

from nsbiot.assembly import SourceData, build_discretization
from nsbiot.scenarios import filter_scenario
from nsbiot.system import (NewtonConfig, NewtonDivergence, SingularMatrixError, SolverError, SystemState,
                           TimeStepper, backward_euler_step, run, set_initial_state, solve_linear)
from nsbiot.verify import AnalyticSolution, derive_fields, example1_data, example1_meshes, example1_params


def residual_ok(A, x, b):
    A = sp.csr_matrix(A)
    r = np.abs(A @ x - b).max()
    return r <= 1e-10 * (abs(A).sum(axis=1).max() * np.abs(x).max() + np.abs(b).max())


# --- linear solver -----------------------------------------------------------

def test_solve_identity():
    b = np.arange(7.0)
    assert np.array_equal(solve_linear(sp.identity(7), b), b)


def test_solve_spd_against_dense_inverse():
    rng = np.random.default_rng(0)
    Q = rng.standard_normal((50, 50))
    A = Q @ Q.T + 50 * np.eye(50)
    b = rng.standard_normal(50)
    x = solve_linear(sp.csr_matrix(A), b)
    assert np.allclose(x, np.linalg.inv(A) @ b, rtol=1e-12, atol=1e-14)
    assert residual_ok(A, x, b)


def test_solve_saddle_point_toy():
    # [[2, 0, 1], [0, 2, 1], [1, 1, 0]] with solution (1, -1, 2) worked out by hand
    A = np.array([[2.0, 0, 1], [0, 2, 1], [1, 1, 0]])
    x_true = np.array([1.0, -1.0, 2.0])
    x = solve_linear(sp.csr_matrix(A), A @ x_true)
    assert np.allclose(x, x_true, atol=1e-14)


def test_solve_singular_reports_index():
    A = sp.csr_matrix(np.array([[1.0, 0, 0], [0, 0, 0], [0, 0, 1.0]]))
    with pytest.raises(SingularMatrixError) as info:
        solve_linear(A, np.ones(3))
    assert info.value.index == 1
    B = sp.csr_matrix(np.array([[1.0, 2.0], [2.0, 4.0]]))
    with pytest.raises(SolverError):
        solve_linear(B, np.array([1.0, 0.0]))


def test_solve_shape_checks():
    with pytest.raises(ValueError):
        solve_linear(sp.identity(3), np.ones(2))


def test_newton_config_validation():
    with pytest.raises(ValueError):
        NewtonConfig(abs_tol=0)
    with pytest.raises(ValueError):
        NewtonConfig(max_iters=0)


# --- time stepping --------------------------------------------------------------

@pytest.fixture(scope="module")
def ex1():
    p = example1_params()
    an = AnalyticSolution(p)
    mf, mp = example1_meshes(0)
    return build_discretization(mf, mp), p, an


def test_zero_data_zero_state(ex1):
    d, p, _ = ex1
    st = TimeStepper(d, p, SourceData(), 1e-3)
    final, counts = run(st, set_initial_state(d, "zero"), 5)
    assert not final.vector().any()
    assert counts == [0] * 5
    assert final.t == pytest.approx(5e-3)


def test_linear_case_single_newton_iteration(ex1):
    d, _, _ = ex1
    p = example1_params(rho=0.0)
    an = AnalyticSolution(p)
    st = TimeStepper(d, p, example1_data(an, p), 1e-3)
    _, counts = run(st, set_initial_state(d, "analytic", derive_fields(an, p), 0.0), 4)
    assert counts == [1, 1, 1, 1]


def test_energy_non_increasing(ex1):
    d, _, _ = ex1
    p = example1_params(rho=0.0)
    an = AnalyticSolution(p)
    st = TimeStepper(d, p, SourceData(), 1e-2)
    state = set_initial_state(d, "analytic", derive_fields(an, p), 0.3)
    # start from a state satisfying the homogeneous constraints
    state, _ = st.step(state)
    energy = [state.vector() @ (st.E @ state.vector())]
    for _ in range(6):
        state, _ = st.step(state)
        energy.append(state.vector() @ (st.E @ state.vector()))
    assert energy[0] > 0
    assert all(b <= a * (1 + 1e-12) for a, b in zip(energy, energy[1:]))
    assert energy[-1] < energy[0]


def test_fixed_point_is_kept(ex1):
    d, p, an = ex1
    st = TimeStepper(d, p, example1_data(an, p), 1e-3)
    s0 = set_initial_state(d, "analytic", derive_fields(an, p), 0.0)
    s1, info = st.step(s0)
    assert info.iters >= 1
    b = st.load(s1.t, s0)
    _, again = st.newton_solve(s1.vector(), b)
    assert again.iters == 0


def test_backward_euler_step_wrapper(ex1):
    d, p, an = ex1
    s0 = set_initial_state(d, "analytic", derive_fields(an, p), 0.0)
    s1, iters = backward_euler_step(s0, 1e-3, p, example1_data(an, p), d)
    assert 1 <= iters <= 4
    assert s1.t == pytest.approx(1e-3)
    assert np.allclose(s1.eta_p, s0.eta_p + 1e-3 * s1.u_s)


def test_quadratic_convergence_level2():
    p = example1_params()
    an = AnalyticSolution(p)
    d = build_discretization(*example1_meshes(2))
    st = TimeStepper(d, p, example1_data(an, p), 1e-3)
    _, info = st.step(set_initial_state(d, "analytic", derive_fields(an, p), 0.0))
    r = info.residuals
    pairs = [(a, b) for a, b in zip(r, r[1:]) if a < 1e-2]
    assert pairs, r
    for a, b in pairs:
        assert b <= 100 * a * a
        assert b <= 1e-4 * a


def test_divergence_carries_step_index(ex1):
    d, p, an = ex1
    st = TimeStepper(d, p, example1_data(an, p), 1e-3, NewtonConfig(max_iters=1))
    with pytest.raises(NewtonDivergence) as info:
        run(st, set_initial_state(d, "analytic", derive_fields(an, p), 0.0), 3)
    assert info.value.step == 1
    assert "step 1" in str(info.value)


def test_stepper_rejects_bad_dt(ex1):
    d, p, _ = ex1
    with pytest.raises(ValueError):
        TimeStepper(d, p, SourceData(), 0.0)


# --- initial data ------------------------------------------------------------------

def test_constants_mode_rest_pressure():
    sc = filter_scenario(h=0.05)
    s = set_initial_state(sc.disc, "constants", {"p_p0": 100.0, "alpha_p": 1.0})
    assert np.all(s.p_p == 100.0)
    assert np.all(s.lam == 100.0)
    assert not s.u_f.any() and not s.u_p.any() and not s.u_s.any()
    sig = sc.disc.spaces["sigma_p"]
    cells = np.arange(sc.disc.mesh_p.n_triangles)
    vals = sig.evaluate(s.sigma_p, cells, np.array([[0.2, 0.3]]))
    assert np.allclose(vals, -100.0 * np.eye(2), atol=1e-10)


def test_analytic_mode_at_zero(ex1):
    d, p, an = ex1
    fl = derive_fields(an, p)
    s = set_initial_state(d, "analytic", fl, 0.0)
    # u_s = pi cos(pi t) (-3x + cos y, y + 1); eta_p(0) = 0
    assert np.allclose(s.eta_p, 0)
    mp = d.mesh_p
    c = mp.vertices[mp.triangles].mean(axis=1)
    us_avg = s.u_s.reshape(2, -1).T
    assert np.allclose(us_avg[:, 1], np.pi * (c[:, 1] + 1), atol=1e-12)
    assert np.abs(us_avg[:, 0] - np.pi * (-3 * c[:, 0] + np.cos(c[:, 1]))).max() < 1e-2


def test_zero_mode_and_unknown(ex1):
    d, _, _ = ex1
    assert not set_initial_state(d, "zero").vector().any()
    with pytest.raises(ValueError):
        set_initial_state(d, "bogus")


def test_state_vector_roundtrip(ex1):
    d, _, _ = ex1
    x = np.random.default_rng(1).standard_normal(d.ndof)
    s = SystemState.from_vector(d, x, 0.5)
    assert np.array_equal(s.vector(), x)
    assert np.array_equal(s.field("lambda"), x[d.slice("lambda")])
