import numpy as np
import pytest

from gaugecocycle.errors import ChartMismatch, DegreeOverflow, DegreeUnderflow
from gaugecocycle.forms import (
    FormField,
    codifferential,
    exterior_derivative,
    graded_bracket,
    inner,
    maurer_cartan,
    partial,
    wedge_bracket,
    zero_form,
)
from gaugecocycle.grid import box_chart, single_chart_cover, sphere, sphere_cover, torus
from gaugecocycle.lie import SU2, U1, exp_map, from_coords, random_algebra, u1


def periodic_chart(d=32, n=2):
    return single_chart_cover(torus(n, d)).charts[0]


def scalar_form(chart, values, group=U1):
    """Embed a real scalar field as the u(1)-valued 0-form i*f."""
    return FormField(chart, 0, group, (1j * values)[None, ..., None, None])


def one_form(chart, comps):
    return FormField(chart, 1, U1, (1j * np.stack(comps))[..., None, None])


def test_d_of_constant_is_zero():
    c = periodic_chart()
    f = scalar_form(c, np.full(c.shape, 2.0))
    assert np.abs(exterior_derivative(f).comps).max() == 0


def test_d_sin_dy_second_order():
    errs = []
    for d in (32, 64):
        c = periodic_chart(d)
        x, y = c.mesh()
        w = one_form(c, [np.zeros_like(x), np.sin(2 * np.pi * x)])
        dw = exterior_derivative(w).comps[0, ..., 0, 0].imag
        errs.append(np.abs(dw - 2 * np.pi * np.cos(2 * np.pi * x)).max())
    assert errs[1] < 2e-2
    assert 3.5 < errs[0] / errs[1] < 4.5


def test_dd_vanishes_to_second_order_on_box():
    errs = []
    for n in (33, 65):
        c = box_chart((n, n))
        x, y = c.mesh()
        f = scalar_form(c, np.exp(x) * np.sin(3 * y))
        errs.append(np.abs(exterior_derivative(exterior_derivative(f)).comps).max())
    # axis stencils are tensor-product operators, so they commute up to rounding
    assert max(errs) < 1e-9


def test_dd_exact_on_periodic_grid():
    c = periodic_chart(16)
    rng = np.random.default_rng(0)
    f = scalar_form(c, rng.standard_normal(c.shape))
    assert np.abs(exterior_derivative(exterior_derivative(f)).comps).max() < 1e-11


def test_laplacian_matches_wide_stencil():
    c = periodic_chart(24)
    h = c.spacing[0]
    rng = np.random.default_rng(1)
    v = rng.standard_normal(c.shape)
    lap = codifferential(exterior_derivative(scalar_form(c, v))).comps[0, ..., 0, 0].imag
    # independent oracle: explicit 5-point stencil on the 2h lattice (d* d is minus the Laplacian)
    oracle = np.zeros_like(v)
    for ax in (0, 1):
        oracle -= (np.roll(v, 2, ax) - 2 * v + np.roll(v, -2, ax)) / (4 * h * h)
    assert np.abs(lap - oracle).max() < 1e-12 * np.abs(oracle).max()


@pytest.mark.parametrize("chart_kind", ["torus", "torus4", "box", "sphere"])
def test_adjointness(chart_kind):
    rng = np.random.default_rng(2)
    if chart_kind == "torus":
        c = periodic_chart(16)
    elif chart_kind == "torus4":
        c = periodic_chart(8, 4)
    elif chart_kind == "box":
        c = box_chart((12, 15))
    else:
        c = sphere_cover(sphere(32, 16), margin=4).charts[0]
    for k in range(c.ndim):
        a = zero_form(c, SU2, k).like(random_algebra(SU2, rng, (len(zero_form(c, SU2, k).index),) + c.shape))
        b = zero_form(c, SU2, k + 1).like(
            random_algebra(SU2, rng, (len(zero_form(c, SU2, k + 1).index),) + c.shape))
        lhs = inner(exterior_derivative(a), b)
        rhs = inner(a, codifferential(b))
        assert abs(lhs - rhs) < 1e-10 * max(1.0, abs(lhs))


def test_codifferential_of_constant_is_zero():
    c = periodic_chart(16)
    w = one_form(c, [np.full(c.shape, 1.3), np.full(c.shape, -0.2)])
    assert np.abs(codifferential(w).comps).max() < 1e-12


def test_degree_errors():
    c = periodic_chart(16)
    with pytest.raises(DegreeOverflow):
        exterior_derivative(zero_form(c, U1, 2))
    with pytest.raises(DegreeUnderflow):
        codifferential(zero_form(c, U1, 0))


def test_wedge_abelian_vanishes_and_graded_bracket():
    c = periodic_chart(8)
    rng = np.random.default_rng(3)
    a = FormField(c, 1, U1, random_algebra(U1, rng, (2,) + c.shape))
    assert np.abs(wedge_bracket(a, a).comps).max() < 1e-15
    x1, x2 = from_coords(SU2, [0.3, -1.0, 0.2]), from_coords(SU2, [0.5, 0.1, 0.7])
    comps = np.zeros((2,) + c.shape + (2, 2), dtype=complex)
    comps[0], comps[1] = x1, 0
    A = FormField(c, 1, SU2, comps.copy())
    comps[0], comps[1] = 0, x2
    B = FormField(c, 1, SU2, comps)
    oracle = x1 @ x2 - x2 @ x1
    assert np.abs(wedge_bracket(A, B).comps[0] - x1 @ x2).max() < 1e-15
    assert np.abs(graded_bracket(A, B).comps[0] - oracle).max() < 1e-15


def test_wedge_antisymmetry_and_self_bracket():
    c = periodic_chart(8)
    rng = np.random.default_rng(4)
    a = FormField(c, 1, SU2, random_algebra(SU2, rng, (2,) + c.shape))
    b = FormField(c, 1, SU2, random_algebra(SU2, rng, (2,) + c.shape))
    ab = wedge_bracket(a, b).comps
    # b ^ a with the matrix factors written in reversed order
    ba_reversed = a.comps[1] @ b.comps[0] - a.comps[0] @ b.comps[1]
    assert np.abs(ab[0] + ba_reversed).max() < 1e-14
    aa = wedge_bracket(a, a).comps[0]
    assert np.abs(aa - (a.comps[0] @ a.comps[1] - a.comps[1] @ a.comps[0])).max() < 1e-14


def test_wedge_chart_mismatch():
    c1, c2 = periodic_chart(8), periodic_chart(8)
    with pytest.raises(ChartMismatch):
        wedge_bracket(zero_form(c1, U1, 1), zero_form(c2, U1, 1))


def test_masked_partial_one_sided():
    c = box_chart((20,), (1.0,))
    x = c.coords[0]
    mask = x < 0.5
    d = partial(x**2, c, 0, mask)
    # quadratics are differentiated exactly by every second-order stencil
    assert np.allclose(d[mask], 2 * x[mask], atol=1e-12)
    assert np.all(d[~mask] == 0)


def test_maurer_cartan_exact_on_subgroup():
    c = periodic_chart(32)
    x, y = c.mesh()
    g = u1(2 * np.pi * (3 * x - 2 * y))
    mc = maurer_cartan(U1, g, c)
    assert np.allclose(mc.comps[0], 2j * np.pi * 3, atol=1e-11)
    assert np.allclose(mc.comps[1], -2j * np.pi * 2, atol=1e-11)
    xi = from_coords(SU2, [0.4, 0.2, -0.1])
    c1 = box_chart((40,), (1.0,))
    t = c1.coords[0]
    gs = exp_map(SU2, t[:, None, None] * xi)
    assert np.abs(maurer_cartan(SU2, gs, c1).comps[0] - xi).max() < 1e-12
