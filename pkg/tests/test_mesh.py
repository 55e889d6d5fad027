import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from npbe.constants import sobolev_constant
from npbe.errors import DomainError
from npbe.mesh import (
    DomainSpec,
    Grid,
    GridFunction,
    discrete_norm,
    domain_measures,
    gagliardo_seminorm,
    h2_gram_matrix,
    read_grid_function_csv,
)


def test_domain_measures_examples():
    assert domain_measures(DomainSpec.interval(2.0)) == pytest.approx((2.0, 2.0))
    m, d = domain_measures(DomainSpec.box(1, 1, 1))
    assert m == pytest.approx(1.0) and d == pytest.approx(math.sqrt(3))
    m, d = domain_measures(DomainSpec.ball(1.0, 3))
    assert m == pytest.approx(4 * math.pi / 3) and d == pytest.approx(2.0)
    assert DomainSpec.ball(1.0, 2).measure == pytest.approx(math.pi)


@pytest.mark.parametrize("bad", [0.0, -1.0, math.inf, math.nan])
def test_domain_rejects_nonpositive_extent(bad):
    with pytest.raises(DomainError):
        DomainSpec.box(1.0, bad)


def test_grid_spacing_and_boundary():
    g = Grid(DomainSpec.box(2.0, 1.0), (9, 5))
    assert g.spacing[0] * 8 == pytest.approx(2.0)
    assert g.spacing[1] * 4 == pytest.approx(1.0)
    x, y = g.points.T
    on_face = np.isclose(x, 0) | np.isclose(x, 2) | np.isclose(y, 0) | np.isclose(y, 1)
    assert set(np.flatnonzero(on_face)) == set(g.boundary)
    assert g.interior.size == 7 * 3


def test_grid_needs_interior():
    with pytest.raises(DomainError):
        Grid(DomainSpec.interval(1.0), 2)


def test_disk_grid_masks_outside_nodes():
    g = Grid(DomainSpec.ball(1.0, 2), 41)
    r = np.hypot(*g.points.T)
    assert np.all(r[g.interior] < 1)
    # quadrature of the disk area converges to pi
    assert g.weights.sum() == pytest.approx(math.pi, rel=0.05)


def test_grid_function_rejects_nonfinite():
    g = Grid(DomainSpec.interval(1.0), 5)
    with pytest.raises(DomainError):
        GridFunction(g, [0, 1, np.nan, 0, 0])
    with pytest.raises(DomainError):
        GridFunction(g, np.zeros(4))


def test_csv_round_trip(tmp_path):
    g = Grid(DomainSpec.box(1, 1), 6)
    u = g.evaluate(lambda x, y: np.exp(1j * x) * (1 + y**2) / 3)
    path = tmp_path / "u.csv"
    u.to_csv(path)
    header = path.read_text().splitlines()[0]
    assert header == "index,x,y,re,im"
    v = read_grid_function_csv(path, g)
    assert np.array_equal(u.values, v.values)


def test_csv_incomplete_is_rejected(tmp_path):
    g = Grid(DomainSpec.interval(1.0), 5)
    path = tmp_path / "u.csv"
    g.zeros().to_csv(path)
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(DomainError):
        read_grid_function_csv(path, g)


def test_constant_l2_norm():
    g = Grid(DomainSpec.box(1, 1), 11)
    assert discrete_norm(g.evaluate(lambda x, y: 1.0 + 0 * x)) == pytest.approx(1.0)
    assert discrete_norm(g.zeros(), "H2") == 0.0


def test_h1_of_sine_converges():
    exact = math.sqrt((1 + math.pi**2) / 2)
    errs = []
    for n in (41, 81, 161):
        g = Grid(DomainSpec.interval(1.0), n)
        errs.append(abs(discrete_norm(g.evaluate(lambda x: np.sin(np.pi * x)), "H1") - exact))
    assert errs[-1] < 1e-3
    assert errs[0] / errs[1] > 3 and errs[1] / errs[2] > 3


def test_linf_norm():
    g = Grid(DomainSpec.interval(1.0), 5)
    assert discrete_norm(GridFunction(g, [0, 3j, -4, 0, 1]), "Linf") == 4.0


def test_unknown_norm():
    g = Grid(DomainSpec.interval(1.0), 5)
    with pytest.raises(ValueError):
        discrete_norm(g.zeros(), "H3")


_grid2 = Grid(DomainSpec.box(1.0, 0.7), (7, 6))
_field = st.lists(
    st.complex_numbers(max_magnitude=1e3, allow_nan=False, allow_infinity=False),
    min_size=_grid2.size, max_size=_grid2.size,
)


@settings(max_examples=100, deadline=None)
@given(a=_field, b=_field, c=st.complex_numbers(max_magnitude=1e3, allow_nan=False, allow_infinity=False))
def test_norm_axioms(a, b, c):
    u, v = GridFunction(_grid2, a), GridFunction(_grid2, b)
    for which in ("L2", "H1", "H2"):
        nu = discrete_norm(u, which)
        assert discrete_norm(u * c, which) == pytest.approx(abs(c) * nu, rel=1e-9, abs=1e-9)
        assert discrete_norm(u + v, which) <= nu + discrete_norm(v, which) + 1e-9 * (1 + nu)
    l2, h1, h2 = (discrete_norm(u, w) for w in ("L2", "H1", "H2"))
    assert l2 <= h1 * (1 + 1e-12) and h1 <= h2 * (1 + 1e-12)


def test_gram_matrix_matches_norm(rng):
    g = Grid(DomainSpec.box(1, 1, 1), 5)
    G = h2_gram_matrix(g)
    for _ in range(5):
        u = GridFunction(g, rng.standard_normal(g.size) + 1j * rng.standard_normal(g.size))
        q = float(np.real(np.vdot(u.flat, G @ u.flat)))
        assert math.sqrt(q) == pytest.approx(discrete_norm(u, "H2"), rel=1e-10)


def test_gagliardo_constant_is_zero():
    g = Grid(DomainSpec.box(1, 1), 9)
    assert gagliardo_seminorm(g.evaluate(lambda x, y: 2.0 + 0 * x), 0.5) == 0.0


def test_gagliardo_linear_is_stable_under_refinement():
    vals = []
    for n in (17, 33):
        g = Grid(DomainSpec.interval(1.0), n)
        vals.append(gagliardo_seminorm(g.evaluate(lambda x: x), 0.5))
    # for u = x on (0,1) the double integral of |x-y|^{1-2s'} is finite
    exact = math.sqrt(2 / ((2 - 2 * 0.5) * (3 - 2 * 0.5)))
    assert vals[1] == pytest.approx(exact, rel=0.05)
    assert abs(vals[1] - vals[0]) / vals[1] < 0.05


def test_gagliardo_monotone_in_order_for_smoothed_step():
    g = Grid(DomainSpec.interval(1.0), 41)
    u = g.evaluate(lambda x: np.tanh(20 * (x - 0.5)))
    seq = [gagliardo_seminorm(u, s) for s in (0.2, 0.4, 0.6, 0.8)]
    assert all(a < b for a, b in zip(seq, seq[1:]))


def test_gagliardo_argument_checks():
    g = Grid(DomainSpec.interval(1.0), 9)
    for s in (0.0, 1.0):
        with pytest.raises(ValueError):
            gagliardo_seminorm(g.zeros(), s)
    with pytest.raises(DomainError):
        gagliardo_seminorm(g.zeros(), 0.5, node_cap=5)


def test_sobolev_ratio_sits_in_the_bracket(rng):
    dom = DomainSpec.box(1, 1, 1)
    e = sobolev_constant(dom)
    g = Grid(dom, 9)
    x, y, z = g.coordinates
    best = 0.0
    for _ in range(20):
        k = rng.integers(0, 3, size=3)
        c = rng.standard_normal(2)
        u = GridFunction(g, (c[0] + 1j * c[1]) * np.cos(np.pi * k[0] * x) * np.cos(np.pi * k[1] * y)
                         * np.cos(np.pi * k[2] * z) + 0.3)
        ratio = discrete_norm(u, "Linf") / discrete_norm(u, "H2")
        assert ratio <= e.C_S_upper
        best = max(best, ratio)
    const = GridFunction(g, np.ones(g.size))
    best = max(best, discrete_norm(const, "Linf") / discrete_norm(const, "H2"))
    assert best >= 0.95 * e.C_S_lower
