import csv
import math

import mpmath as mp
import numpy as np
import pytest
from scipy.special import jn_zeros

from npbe.errors import ConvergenceError
from npbe.radial import (
    MAX_Y_STEP,
    RadialProblem,
    energy_violations,
    find_zero_radii,
    hamiltonian_decay_check,
    integrate_radial,
    linear_first_zero,
    nonuniqueness_certificate,
    phase_portrait,
    regularization_limit,
    return_to_start,
)

# pinned on the first validated run (d=3, kt=1, lambda=0, c=1)
R1_REGRESSION = 3.0357309673774364
R_CERT_REGRESSION = 6.1688334807615925
R_CERT_D1_REGRESSION = 5.5843769999235064


# -- problem and integration -------------------------------------------------------


def test_problem_validation():
    for kw in ({"kappa_tilde": 0.0}, {"lam": -1.0}, {"A": -1.0}, {"epsilon_reg": 0.0},
               {"r_max": 0.0}, {"c": math.nan}, {"dimension": None}):
        with pytest.raises(ValueError):
            RadialProblem(**kw)
    assert RadialProblem(dimension=3).A == 2.0
    assert RadialProblem(dimension=2).with_(dimension=1).A == 0.0


def test_bad_integration_arguments():
    p = RadialProblem()
    with pytest.raises(ValueError):
        integrate_radial(p, tol=1e-2)
    with pytest.raises(ValueError):
        integrate_radial(p, tol=0.0)
    with pytest.raises(ValueError):
        integrate_radial(p, mode="euler")


@pytest.mark.parametrize("lam, kt", [(0.0, 1.0), (2.0, 1.0), (0.5, 2.0)])
def test_equilibrium_is_constant(lam, kt):
    p = RadialProblem(kappa_tilde=kt, lam=lam, c=math.asinh(lam / kt**2))
    for mode in ("taylor", "regularized"):
        t = integrate_radial(p, mode=mode)
        assert np.all(t.y == p.c) and np.all(t.w == 0)


def test_taylor_start_matches_series():
    p = RadialProblem(lam=0.3, c=0.8)
    a = p.taylor_coefficient()
    assert a == pytest.approx((0.3 - math.sinh(0.8)) / 6)
    t = integrate_radial(p, tol=1e-12, mode="regularized", eps=1e-9, r_max=0.05)
    y, _ = t(np.array([0.01, 0.02]))
    assert np.allclose(y, p.c + a * np.array([0.01, 0.02]) ** 2, atol=1e-8)


def test_modes_agree():
    p = RadialProblem(c=1.0, r_max=10.0)
    t1 = integrate_radial(p, tol=1e-10)
    t2 = integrate_radial(p, tol=1e-10, mode="regularized", eps=1e-7)
    r = np.linspace(0.5, 10, 50)
    assert np.max(np.abs(t1(r)[0] - t2(r)[0])) <= 1e-6


def test_y_steps_are_resolved():
    t = integrate_radial(RadialProblem(dimension=1, lam=2.0, c=-1.5, r_max=30.0), tol=1e-8)
    assert np.max(np.abs(np.diff(t.y))) <= MAX_Y_STEP


def test_trajectory_csv(tmp_path):
    t = integrate_radial(RadialProblem(r_max=5.0))
    t.to_csv(tmp_path / "t.csv")
    rows = list(csv.reader((tmp_path / "t.csv").open()))
    assert rows[0] == ["r", "y", "w", "H"] and len(rows) == len(t) + 1
    assert t.states()[0].y == pytest.approx(1.0)


# -- regularisation limit ----------------------------------------------------------


def test_regularization_d1_is_eps_free():
    tol = 1e-10
    res = regularization_limit(RadialProblem(dimension=1, c=1.0, r_max=10.0), tol=tol)
    assert all(d <= 100 * tol for d in res.differences)


def test_regularization_d3_converges():
    res = regularization_limit(RadialProblem(c=1.0), tol=1e-10)
    assert res.converged and res.monotone
    assert all(r < 1 for r in res.ratios)


def test_regularization_of_equilibrium():
    res = regularization_limit(RadialProblem(lam=0.0, c=0.0))
    assert res.differences == [0.0, 0.0]


def test_regularization_arguments():
    with pytest.raises(ValueError):
        regularization_limit(RadialProblem(), eps_sequence=(1e-3,))
    with pytest.raises(ValueError):
        regularization_limit(RadialProblem(), eps_sequence=(1e-3, 1e-2))
    with pytest.raises(ValueError):
        regularization_limit(RadialProblem(), eps_sequence=(1e-3, 1e-9))


# -- Hamiltonian -------------------------------------------------------------------


@pytest.mark.parametrize("lam, c", [(0.0, 1.0), (0.0, -2.0), (1.0, 0.2)])
def test_d1_conservation(lam, c):
    tol = 1e-10
    t = integrate_radial(RadialProblem(dimension=1, lam=lam, c=c, r_max=2 * math.pi), tol=tol)
    assert hamiltonian_decay_check(t) <= 10 * tol


@pytest.mark.parametrize("d, lam, c", [(2, 0.0, 1.0), (3, 0.0, 1.0), (3, 1.5, -1.0)])
def test_decay_identity(d, lam, c):
    for mode in ("taylor", "regularized"):
        t = integrate_radial(RadialProblem(dimension=d, lam=lam, c=c), tol=1e-11, mode=mode)
        assert hamiltonian_decay_check(t) <= 1e-8


def test_h_non_increasing_for_a2():
    t = integrate_radial(RadialProblem(dimension=3, lam=0.7, c=2.0), tol=1e-11)
    dH = np.diff(t.H)
    assert np.all(dH <= 10 * t.tol)


def test_equilibrium_is_global_minimum():
    for lam in (0.0, 0.5, 3.0):
        p = RadialProblem(lam=lam, c=math.asinh(lam))
        t = integrate_radial(p)
        hp = float(p.hamiltonian(p.c, 0.0))
        assert np.all(t.H == hp)
        ys = np.linspace(-4, 4, 2001)
        assert np.all(p.hamiltonian(ys, 0.0 * ys) >= hp - 1e-15)
        assert hp <= 0 and ((hp == 0) == (lam == 0))


def test_energy_sweep(rng):
    for _ in range(20):
        p = RadialProblem(dimension=int(rng.integers(1, 4)), kappa_tilde=float(rng.uniform(0.5, 2)),
                          lam=float(rng.uniform(0, 2)), c=float(rng.uniform(-2, 2)), r_max=10.0)
        assert energy_violations(integrate_radial(p, tol=1e-9)) == 0


# -- zeros -------------------------------------------------------------------------


def test_linear_bessel_zero():
    p = RadialProblem(lam=0.0, c=1.0, linear=True, r_max=5.0)
    z = find_zero_radii(p, n_wanted=3, tol=1e-12)
    assert z.complete
    assert abs(z.radii[0] - math.pi) <= 1e-8
    assert np.allclose(z.radii, [math.pi, 2 * math.pi, 3 * math.pi], atol=1e-7)


def test_linear_first_zero_by_dimension():
    assert linear_first_zero(0.0) == pytest.approx(math.pi / 2, abs=1e-9)
    assert linear_first_zero(1.0) == pytest.approx(jn_zeros(0, 1)[0], abs=1e-8)
    assert linear_first_zero(2.0) == pytest.approx(math.pi, abs=1e-9)


def test_nonlinear_first_zero_regression():
    z = find_zero_radii(RadialProblem(c=1.0), n_wanted=2)
    assert abs(z.radii[0] - R1_REGRESSION) <= 1e-8
    assert abs(z.radii[0] - math.pi) > 1e-2


def test_first_zero_depends_on_amplitude():
    r1 = find_zero_radii(RadialProblem(c=1.0), n_wanted=1).radii[0]
    r2 = find_zero_radii(RadialProblem(c=2.0), n_wanted=1).radii[0]
    assert abs(r1 - r2) > 1e-3


def test_zero_search_extends_r_max():
    p = RadialProblem(c=1.0, r_max=2.0)
    z = find_zero_radii(p, n_wanted=3)
    assert z.complete and z.trajectory.r[-1] > 2.0


def test_partial_zero_result_is_flagged():
    # y decays towards the equilibrium but oscillates; 1000 crossings exceed the cap
    z = find_zero_radii(RadialProblem(kappa_tilde=1.0, c=0.5, dimension=3, r_max=50.0), n_wanted=1000, tol=1e-6)
    assert not z.complete and len(z.radii) < 1000


def test_d1_period_matches_quadrature():
    p = RadialProblem(dimension=1, lam=2.0, c=0.0, r_max=30.0)
    t = integrate_radial(p, tol=1e-12)
    r_back, gap = return_to_start(t)
    with mp.workdps(30):
        V = lambda y: mp.cosh(y) - 1 - 2 * y
        ytop = mp.findroot(V, 2.5)
        period = 2 * mp.quad(lambda y: 1 / mp.sqrt(-2 * V(y)), [0, ytop])
    assert r_back == pytest.approx(float(period), rel=1e-7)
    assert gap < 1e-7


# -- certificate -------------------------------------------------------------------


def test_certificate_d3():
    cert = nonuniqueness_certificate(RadialProblem(c=1.0))
    assert abs(cert.R - R_CERT_REGRESSION) <= 1e-8
    assert abs(cert.zero_radii[0] - R1_REGRESSION) <= 1e-8
    assert cert.trivial_value == 0.0 and cert.boundary_mismatch <= 1e-9
    assert cert.max_deviation >= 0.5
    assert cert.residual_nontrivial <= 1e-6 and cert.residual_trivial <= 1e-12
    assert cert.witness_ok and cert.R > math.pi
    assert "hypothesis3_violated = True" in cert.report()


def test_certificate_d1_periodic_orbit():
    cert = nonuniqueness_certificate(RadialProblem(dimension=1, lam=2.0, c=0.0))
    assert abs(cert.R - R_CERT_D1_REGRESSION) <= 1e-8
    assert cert.trivial_value == pytest.approx(math.asinh(2.0))
    assert cert.residual_nontrivial <= 1e-6 and cert.witness_ok


def test_certificate_refuses_equilibrium():
    with pytest.raises(ValueError):
        nonuniqueness_certificate(RadialProblem(lam=0.0, c=0.0))


def test_return_to_start_needs_turning_points():
    with pytest.raises(ConvergenceError):
        return_to_start(integrate_radial(RadialProblem(dimension=1, r_max=0.5)))


def test_phase_portrait_field():
    p = RadialProblem(dimension=1, lam=2.0)
    y, w, dy, dw, H = phase_portrait(p, n=5)
    assert y.size == 25 and np.array_equal(dy, w)
    assert np.allclose(dw, 2.0 - np.sinh(y))
    assert np.allclose(H, p.hamiltonian(y, w))
