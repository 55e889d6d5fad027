import csv
import math

import mpmath as mp
import numpy as np
import pytest

from npbe import CoefficientSet, DomainSpec, Grid, GridFunction, NPBEProblem
from npbe.errors import DomainError, HypothesisViolation, NonlinearOverflow
from npbe.mesh import discrete_norm
from npbe.picard import PicardStatus, apply_A, apply_N, iterate, residual_strong

from oracles import newton_solve, random_in_ball


def moderate(kappa=1.0, eps=1.0, f_amp=5.0, g=0.2, sign=1.0, conj=False):
    """Data far outside the certified ball; Picard still contracts in practice."""
    grid = Grid(DomainSpec.box(1, 1), 17)
    x, y = grid.coordinates
    f = f_amp * np.sin(np.pi * x) * np.sin(np.pi * y) * (1 + 0.5j * x if isinstance(kappa, complex) else 1)
    gv = g * (1 + x - 0.5 * y) if np.isscalar(g) else g
    epsv = eps * (1 + 0.3 * x * y)
    k2 = kappa * (1 + 0.2 * y)
    if conj:
        f, gv, epsv, k2 = np.conj(f), np.conj(gv), np.conj(epsv), np.conj(k2)
    coeffs = CoefficientSet.from_scalar(grid, epsv, k2)
    return NPBEProblem.create(coeffs, f=sign * GridFunction(grid, f), g=sign * GridFunction(grid, gv))


def solve(problem, tol=1e-12, **kw):
    u, trace = iterate(problem, M=10.0, tol=tol, require_schauder=False, **kw)
    assert trace.status is PicardStatus.CONVERGED, trace.reason
    return u, trace


# -- N and A -------------------------------------------------------------------------


def test_n_examples():
    g = Grid(DomainSpec.interval(1.0), 9)
    assert np.all(apply_N(g.zeros(), 1.0).values == 0)
    u = GridFunction(g, np.full(g.size, 1j * math.pi / 2))
    assert np.allclose(apply_N(u, 1.0).values, 1j * (1 - math.pi / 2), atol=1e-15)


def test_n_small_argument_accuracy():
    g = Grid(DomainSpec.interval(1.0), 5)
    u = GridFunction(g, [1e-6, 1e-3 + 1e-3j, 0.3j, 0.49, 2 - 1j])
    with mp.workdps(40):
        ref = np.array([complex(mp.sinh(mp.mpc(v)) - mp.mpc(v)) for v in u.flat])
    assert np.allclose(apply_N(u, 1.0).flat, ref, rtol=1e-12, atol=0)


def test_n_overflow():
    g = Grid(DomainSpec.interval(1.0), 5)
    with pytest.raises(NonlinearOverflow):
        apply_N(GridFunction(g, np.full(5, 800.0)), 1.0)


def test_n_bound_in_ball(contraction_problem, rng):
    problem, M = contraction_problem
    k2, meas, C_S = problem.coeffs.kappa_sq_inf, problem.measure, problem.C_S
    for _ in range(50):
        u = random_in_ball(problem.grid, M, rng)
        r = discrete_norm(u, "H2")
        assert discrete_norm(apply_N(u, problem.coeffs)) <= k2 * math.sqrt(meas) * (math.sinh(C_S * r) - C_S * r)


def test_a_preserves_zero():
    g = Grid(DomainSpec.box(1, 1), 9)
    problem = NPBEProblem.create(CoefficientSet.from_scalar(g, 1.0, 2.0 + 1j))
    assert np.all(apply_A(g.zeros(), problem).values == 0)


def test_a_is_linear_solve_without_kappa(rng):
    g = Grid(DomainSpec.box(1, 1), 9)
    problem = NPBEProblem.create(CoefficientSet.from_scalar(g, 1.0, 0.0), f=1.0, g=0.5)
    a = apply_A(GridFunction(g, rng.standard_normal(g.size)), problem)
    b = apply_A(GridFunction(g, rng.standard_normal(g.size)), problem)
    assert np.array_equal(a.values, b.values)


def test_a_ball_invariance(contraction_problem, rng):
    problem, M = contraction_problem
    assert problem.conditions(M).schauder_ok
    for _ in range(20):
        u = random_in_ball(problem.grid, M, rng)
        assert discrete_norm(apply_A(u, problem, M), "H2") <= 1.05 * M


def test_a_checks_the_ball(contraction_problem, rng):
    problem, M = contraction_problem
    with pytest.raises(DomainError):
        apply_A(random_in_ball(problem.grid, M, rng, fraction=2.0), problem, M)


# -- iteration ---------------------------------------------------------------------


def test_homogeneous_data_converges_immediately():
    g = Grid(DomainSpec.box(1, 1, 1), 9)
    problem = NPBEProblem.create(CoefficientSet.from_scalar(g, 1.0, 0.5 + 0.5j))
    u, trace = iterate(problem, M=problem.M0() / 2)
    assert trace.status is PicardStatus.CONVERGED and trace.iterations <= 2
    assert np.all(u.values == 0)


def test_certified_run_matches_newton(contraction_problem):
    problem, M = contraction_problem
    real = NPBEProblem.create(CoefficientSet.from_scalar(problem.grid, 1.0, 1.0), f=problem.f, g=0.0)
    M = real.select_radius()
    u, trace = iterate(real, M, tol=1e-14)
    assert trace.status is PicardStatus.CONVERGED
    ref = newton_solve(real.coeffs, real.f, real.g)
    assert discrete_norm(u - ref, "H2") <= 1e-8


def test_moderate_run_matches_newton():
    problem = moderate()
    u, trace = solve(problem)
    ref = newton_solve(problem.coeffs, problem.f, problem.g)
    assert discrete_norm(u, "H2") > 1.0
    assert discrete_norm(u - ref, "H2") <= 1e-8


def test_contraction_ratio_respects_theory(contraction_problem):
    problem, M = contraction_problem
    _, trace = iterate(problem, M, tol=1e-24)
    ratios = [s.observed_ratio for s in trace.steps if s.k >= 2]
    assert ratios and trace.gamma_theory < 1
    assert all(r <= 1.1 * trace.gamma_theory for r in ratios)


def test_converged_residual_and_fixed_point():
    problem = moderate()
    tol = 1e-11
    u, trace = solve(problem, tol=tol)
    assert trace.final_residual <= 100 * tol
    assert residual_strong(u, problem) <= 100 * tol
    assert discrete_norm(apply_A(u, problem) - u, "H2") <= 10 * tol * max(1, discrete_norm(u, "H2"))


def test_uniqueness_in_ball(contraction_problem, rng):
    problem, M = contraction_problem
    tol = 1e-12
    starts = [None, problem.grid.zeros()] + [random_in_ball(problem.grid, M, rng) for _ in range(3)]
    sols = []
    for s in starts:
        u, trace = iterate(problem, M, tol=tol, u_init=s)
        assert trace.status is PicardStatus.CONVERGED
        sols.append(u)
    for a in sols:
        for b in sols:
            assert discrete_norm(a - b, "H2") <= 100 * tol


def test_schauder_failure_is_refused():
    problem = moderate()
    with pytest.raises(HypothesisViolation):
        iterate(problem, M=1e-3)


def test_divergence_is_reported():
    problem = moderate(f_amp=400.0, g=3.0)
    u, trace = iterate(problem, M=1.0, require_schauder=False)
    assert trace.status is PicardStatus.DIVERGED
    assert trace.reason


def test_bad_arguments():
    problem = moderate()
    with pytest.raises(ValueError):
        iterate(problem, M=-1.0)


def test_trace_csv(tmp_path):
    _, trace = solve(moderate())
    path = tmp_path / "trace.csv"
    trace.to_csv(path)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["k", "norm_u", "increment", "observed_ratio", "gamma_theory", "residual"]
    assert len(rows) == trace.iterations + 2
    snap = trace.snapshot()
    assert snap.steps is not trace.steps and len(snap.steps) == len(trace.steps)


# -- residual ----------------------------------------------------------------------


def test_residual_of_exact_constant():
    g = Grid(DomainSpec.box(1, 1, 1), 7)
    c = 0.7
    problem = NPBEProblem.create(CoefficientSet.from_scalar(g, 1.0, 1.0), f=math.sinh(c), g=c)
    assert residual_strong(GridFunction(g, np.full(g.size, c)), problem) <= 1e-12


def test_residual_grows_with_perturbation(rng):
    problem = moderate()
    u, _ = solve(problem)
    noise = np.zeros(problem.grid.size)
    noise[problem.grid.interior] = rng.standard_normal(problem.grid.interior.size)
    res = [residual_strong(u + delta * noise, problem) for delta in (1e-6, 1e-4, 1e-2)]
    assert res[0] < res[1] < res[2]


# -- symmetries --------------------------------------------------------------------


def test_realness_of_every_iterate():
    problem = moderate()
    u, _ = iterate(problem, M=10.0, max_iter=1, require_schauder=False)
    assert np.max(np.abs(u.imag)) <= 1e-12
    for _ in range(30):
        u = apply_A(u, problem)
        assert np.max(np.abs(u.imag)) <= 1e-12


def test_oddness():
    u, _ = solve(moderate(kappa=1.0 + 0.5j))
    v, _ = solve(moderate(kappa=1.0 + 0.5j, sign=-1.0))
    assert discrete_norm(u + v.values, "H2") <= 1e-10 * discrete_norm(u, "H2")


def test_conjugation():
    u, _ = solve(moderate(kappa=1.0 + 0.5j, eps=1.0 + 0.2j))
    v, _ = solve(moderate(kappa=1.0 + 0.5j, eps=1.0 + 0.2j, conj=True))
    assert discrete_norm(u.conj() - v.values, "H2") <= 1e-10 * discrete_norm(u, "H2")
