import math

import numpy as np
import pytest

from multisym.ddw import (
    CFLError,
    DDWSystem,
    DiscreteGamma,
    GridError,
    LagrangianField,
    LegendreError,
    ddw_from_mechanics,
    ddw_identification,
    ddw_residual,
    energy,
    energy_density,
    equivalence_signs,
    euler_lagrange_residual,
    gamma_from_trajectory,
    geometric_residual,
    higher_momenta,
    legendre_field,
    legendre_mechanics,
    poincare_cartan_check,
    residual_equivalence,
    restrict_to_ddw,
    sample_gamma,
    solve_field,
    universal_chart,
    universal_multisymplectic_form,
)
from multisym.expr import parse, var
from multisym.mechanics import HamiltonianSystem, integrate_flow

KG_L = "(v_t**2 - v_x**2)/2 - y**2/2"
K, W = 4 / 3, 5 / 3
X = 3 * math.pi / 2


@pytest.fixture(scope="module")
def kg():
    return legendre_field(LagrangianField(KG_L))


def test_klein_gordon_legendre(kg):
    assert kg.H == parse("(p_t**2 - p_x**2)/2 + y**2/2", kg.chart.names)
    assert kg.chart.names == ("t", "x", "y", "p_t", "p_x", "e")


def test_ddw_forms(kg):
    c = kg.chart
    d = c.d
    theta = var("e") * (d("t") ^ d("x")) + var("p_x") * (d("t") ^ d("y")) - var("p_t") * (d("x") ^ d("y"))
    assert kg.theta == theta
    omega = (d("t") ^ d("x") ^ d("e")) + (d("t") ^ d("y") ^ d("p_x")) - (d("x") ^ d("y") ^ d("p_t"))
    assert kg.omega == omega


def test_mechanics_legendre_symbolic_and_numeric():
    leg = legendre_mechanics("z**2/2 - q**2/2")
    assert leg.H == parse("p**2/2 + q**2/2", ["q", "p"])
    quartic = legendre_mechanics("z**4/4 + z**2/2")
    assert quartic.H is None
    z = quartic.numeric_inverse([0.0], [2.0])
    assert z[0] ** 3 + z[0] == pytest.approx(2.0)
    assert quartic.numeric_H([0.0], [2.0]) == pytest.approx(2 * z[0] - (z[0] ** 4 / 4 + z[0] ** 2 / 2))


def test_degenerate_lagrangian_rejected():
    with pytest.raises(LegendreError):
        LagrangianField("v_t**2/2 - y**2/2")
    with pytest.raises(LegendreError):
        legendre_field(LagrangianField("v_t**4/4 + v_t**2/2 - v_x**2/2"))


def test_universal_form_restricts_to_ddw(kg):
    U = universal_multisymplectic_form(universal_chart(["t", "x"], ["y"]))
    assert poincare_cartan_check(U) < 1e-12
    assert restrict_to_ddw(U, kg) == kg.omega
    assert higher_momenta(U, kg) == []
    U2 = universal_multisymplectic_form(universal_chart(["t", "x"], ["y", "z"]))
    two = DDWSystem("(p_t_y**2 - p_x_y**2 + p_t_z**2 - p_x_z**2)/2", fields=("y", "z"))
    assert higher_momenta(U2, two) == ["P_y_z"]
    assert restrict_to_ddw(U2, two) == two.omega
    assert ddw_identification(U2, two).components["P_y_z"] == 0


def test_equivalence_signs_are_fixed(kg):
    assert equivalence_signs(kg) == {"y": -1, "p_t": 1, "p_x": 1}


def manufactured(kg, N):
    t = np.linspace(0.0, 1.0, N + 1)
    x = np.arange(N) * X / N
    y = f"cos({W}*t)*cos({K}*x)"
    p = [[f"-{W}*sin({W}*t)*cos({K}*x)"], [f"{K}*cos({W}*t)*sin({K}*x)"]]
    return sample_gamma(kg, (t, x), [y], p, periodic=(False, True))


def test_manufactured_residuals_second_order(kg):
    Lf = LagrangianField(KG_L)
    el = [euler_lagrange_residual(Lf, manufactured(kg, N)).max for N in (32, 64)]
    dd = [ddw_residual(kg, manufactured(kg, N)).max for N in (32, 64)]
    assert 3.5 < el[0] / el[1] < 4.5
    assert 3.5 < dd[0] / dd[1] < 4.5


def test_geometric_residual_equivalent(kg):
    g = solve_field(kg, "cos(4/3*x) + 1/2", "5/3*sin(4/3*x)", 1.0, X, 32, 32)
    assert residual_equivalence(kg, g) <= 1e-12
    assert geometric_residual(kg, g).max > 0


def test_solver_converges_and_conserves(kg):
    errs, drift = [], []
    for N in (32, 64):
        g = solve_field(kg, f"cos({K}*x)", "0", 1.0, X, N, N)
        t, x = g.mesh()
        errs.append(np.max(np.abs(g.y[0] - np.cos(W * t) * np.cos(K * x))))
        E = energy(g)
        drift.append(np.max(np.abs(E - E[0])))
    assert 3.5 < errs[0] / errs[1] < 4.5
    assert 3.5 < drift[0] / drift[1] < 4.5


def test_energy_density(kg):
    assert energy_density(kg) == parse("(p_t**2 + p_x**2)/2 + y**2/2", kg.chart.names)


def test_cfl_and_grid_errors(kg):
    with pytest.raises(CFLError):
        solve_field(kg, "cos(x)", "0", 1.0, X, 4, 64)
    with pytest.raises(GridError):
        DiscreteGamma(kg, (np.array([0.0, 1.0, 3.0]), np.arange(4.0)), np.zeros((3, 4)))
    with pytest.raises(GridError):
        DiscreteGamma(kg, (np.arange(3.0),), np.zeros(3))


def test_mechanics_embeds_as_one_dimensional_ddw():
    osc = HamiltonianSystem("(p**2 + q**2)/2")
    sys = ddw_from_mechanics(osc)
    d = sys.chart.d
    assert sys.theta == d("t") * var("e") + d("q") * var("p")
    assert sys.omega == (d("e") ^ d("t")) + (d("p") ^ d("q"))
    g = gamma_from_trajectory(integrate_flow(osc, [1.0, 0.0], 1.0, 0.01))
    assert ddw_residual(sys, g).max < 1e-3
    assert residual_equivalence(sys, g) <= 1e-12


def test_gamma_json_and_csv(kg, tmp_path):
    g = manufactured(kg, 8)
    back = DiscreteGamma.from_json(g.to_json())
    assert np.array_equal(back.y, g.y) and np.array_equal(back.p, g.p)
    assert back.periodic == (False, True)
    files = g.to_csv(tmp_path)
    assert sorted(p.split("/")[-1] for p in files) == ["e.csv", "p_t.csv", "p_x.csv", "y.csv"]
    assert open(files[0]).readline().startswith("# t:start=0.0")
