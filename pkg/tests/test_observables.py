import itertools
import math
import warnings

import numpy as np
import pytest

from multisym.ddw import LagrangianField, legendre_field, sample_gamma, solve_field, gamma_from_trajectory
from multisym.exterior import DifferentialForm, MultiVector
from multisym.expr import var
from multisym.mechanics import HamiltonianSystem, integrate_flow
from multisym.observables import (
    Slice,
    SliceError,
    canonical_momentum,
    compare_observables,
    corrupt_momenta,
    cps_variation_check,
    form_bracket,
    homology_independence,
    jacobi_defect,
    observable,
    position_form,
    pseudobracket_along,
    slice_integral,
)

X = 3 * math.pi / 2
U0, V0 = "cos(4/3*x) + 1/2", "5/3*sin(4/3*x)"


@pytest.fixture(scope="module")
def kg():
    return legendre_field(LagrangianField("(v_t**2 - v_x**2)/2 - y**2/2"))


@pytest.fixture(scope="module")
def osc():
    return HamiltonianSystem("(p**2 + q**2)/2")


def wave(kg, N):
    return solve_field(kg, U0, V0, 1.0, X, N, N)


def test_field_momentum(kg):
    P = canonical_momentum(kg, {"y": 1})
    d = kg.chart.d
    assert P.F == -var("p_x") * d("t") + var("p_t") * d("x")
    assert P.xi == kg.chart.partial("y")
    assert P.defining_residual().is_zero()
    assert P.dynamical is False


def test_spacetime_momenta_are_dynamical(kg):
    d = kg.chart.d
    Px = canonical_momentum(kg, {"x": 1})
    assert Px.F == -var("e") * d("t") - var("p_t") * d("y")
    assert Px.xi == kg.chart.partial("x") and Px.dynamical
    Pt = canonical_momentum(kg, {"t": 1})
    assert Pt.F == var("e") * d("x") + var("p_x") * d("y")
    assert Pt.dynamical


def test_position_forms(kg):
    Q = position_form(kg, {("x",): "y"})
    assert Q.status == "observable"
    assert Q.xi == -1 * kg.chart.partial("p_t")
    assert position_form(kg, {("x",): "y**2"}).algebraic_observable
    with pytest.raises(ValueError):
        position_form(kg, {("x",): "p_t"})


def test_non_observable_found_by_search(kg):
    """Scan c * m dx^mu for monomials m in the momenta; p_t dx must be rejected."""
    d = kg.chart.d
    rejected = []
    for mono, mu in itertools.product(["p_t", "p_x", "e", "y*p_t"], ["t", "x"]):
        F = d(mu) * var(mono.split("*")[0]) if "*" not in mono else d(mu) * var("y") * var("p_t")
        obs = observable(kg, F)
        if not obs.algebraic_observable:
            rejected.append((mono, mu))
            assert obs.status == "not observable" and obs.certificate
    assert ("p_t", "x") in rejected


def test_bracket_values(kg):
    Py = canonical_momentum(kg, {"y": 1})
    Q = position_form(kg, {("x",): "y"})
    B = form_bracket(kg, Py, Q)
    assert B.F == kg.chart.d("x")
    assert form_bracket(kg, Q, Py).F == -B.F


def test_antisymmetry_and_jacobi(kg):
    forms = [canonical_momentum(kg, {"y": 1}), canonical_momentum(kg, {"x": 1}),
             canonical_momentum(kg, {"t": 1}), position_form(kg, {("x",): "y**2"}),
             canonical_momentum(kg, {"x": "y"})]
    for F, G in itertools.combinations(forms, 2):
        assert form_bracket(kg, F, G).F == -form_bracket(kg, G, F).F
    for F, G, K in itertools.combinations(forms, 3):
        assert jacobi_defect(kg, F, G, K).matches


def test_mechanics_observables(osc):
    q = observable(osc, "q")
    p = observable(osc, "p")
    assert q.algebraic_observable and not q.dynamical
    assert observable(osc, osc.H).dynamical
    assert form_bracket(osc, q, p).F[()] == -1
    assert jacobi_defect(osc, q, p, observable(osc, "q*p")).S.is_zero()


def test_pseudobracket_second_order_and_control(kg):
    Px = canonical_momentum(kg, {"x": 1})
    res = [pseudobracket_along(kg, Px, wave(kg, N)).residual for N in (64, 128)]
    assert 3.5 < res[0] / res[1] < 4.5
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        bad = pseudobracket_along(kg, Px, corrupt_momenta(wave(kg, 128))).residual
    assert bad >= 10 * res[1]


def test_corruption_triggers_warning(kg):
    g = corrupt_momenta(wave(kg, 128))
    with pytest.warns(RuntimeWarning):
        r = pseudobracket_along(kg, canonical_momentum(kg, {"x": 1}), g)
    assert r.warning


def test_compare_second_order(kg):
    Py = canonical_momentum(kg, {"y": 1})
    Q = position_form(kg, {("x",): "y"})
    res = [compare_observables(kg, Py, Q, wave(kg, N)) for N in (32, 64)]
    assert 3.5 < res[0] / res[1] < 4.5


def test_energy_slice_integral(kg):
    g = wave(kg, 128)
    E = -slice_integral(Slice(0.0), g, canonical_momentum(kg, {"t": 1}))
    assert E == pytest.approx(109 * math.pi / 48, abs=5e-3)
    with pytest.raises(SliceError):
        Slice(0.3333).index(g)


def test_homology(kg):
    g = wave(kg, 64)
    Px = canonical_momentum(kg, {"x": 1})
    assert homology_independence(kg, Px, g, Slice(0.0), Slice(1.0)) < 1e-12
    Py = canonical_momentum(kg, {"y": 1})
    with pytest.raises(ValueError):
        homology_independence(kg, Py, g, Slice(0.0), Slice(1.0))
    drift = homology_independence(kg, Py, g, Slice(0.0), Slice(1.0), require_dynamical=False)
    assert drift > 1.0


def test_cps_oscillator(osc):
    fam = lambda s: gamma_from_trajectory(integrate_flow(osc, [1 + s, 0.3], 1.0, 0.01))
    rep = cps_variation_check(gamma_from_trajectory(integrate_flow(osc, [1, 0.3], 1.0, 0.01)).system,
                              fam, Slice(0.0), Slice(1.0))
    assert rep.ok
    assert rep.richardson["termII_shift"] < 1e-8
    bad = lambda s: corrupt_momenta(fam(s))
    rep_bad = cps_variation_check(fam(0).system, bad, Slice(0.0), Slice(1.0))
    assert abs(rep_bad.termII) >= 10 * abs(rep.termII)


def test_cps_klein_gordon(kg):
    fam = lambda s: solve_field(kg, f"(1 + {s!r})*({U0})", f"(1 + {s!r})*{V0}", 1.0, X, 64, 64)
    rep = cps_variation_check(kg, fam, Slice(0.0), Slice(1.0))
    assert rep.ok and rep.presymplectic_match
