"""JSON scenarios: static validation and execution of verification checks.

A scenario is a JSON object::

    {"name": ..., "kind": "mechanics" | "extended" | "ddw" | "observables" | "cps",
     "seed": 0,
     "system": {...},
     "checks": [{"name": ..., "type": ..., ...}, ...]}

Mechanical systems declare ``hamiltonian``, ``positions`` and ``momenta``.
Field systems declare ``spacetime``, ``fields``, ``signature`` ("+-" for
1+1 Minkowski) and either a ``lagrangian`` in the velocities ``v_<mu>``
(``v_<field>_<mu>`` for several fields) or a DDW ``hamiltonian``.
``parameters`` maps names to numbers and may be used in every expression.
Grid lengths may be numbers or expressions in ``pi``.

Each check may carry ``"expect": "fail"`` to mark a negative control, and
``"corrupt": r`` to run it on curves whose momenta are scaled by ``1 + r``.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import ddw, mechanics, observables
from .expr import Expression, ExpressionError, as_expression, evaluate, lambdify, parse, var
from .exterior import DifferentialForm, MultiVector, is_zero
from .report import CheckResult, decide, order_from_ratio

KINDS = ("mechanics", "extended", "ddw", "observables", "cps")


@dataclass
class Diagnostic:
    line: Optional[int]
    message: str

    def __str__(self):
        return f"line {self.line}: {self.message}" if self.line else self.message


class ScenarioError(ValueError):
    def __init__(self, diagnostics: Sequence[Diagnostic]):
        super().__init__("; ".join(map(str, diagnostics)))
        self.diagnostics = list(diagnostics)


def _line_of(text: str, *needles) -> Optional[int]:
    for needle in needles:
        if needle is None:
            continue
        token = json.dumps(needle) if not isinstance(needle, (int, float)) else str(needle)
        for i, line in enumerate(text.splitlines(), 1):
            if token in line:
                return i
    return None


def load(path):
    """Read a scenario file; returns ``(document, raw_text)``."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ScenarioError([Diagnostic(None, f"cannot read {path}: {exc.strerror}")]) from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError([Diagnostic(exc.lineno, f"invalid JSON: {exc.msg}")]) from None
    if not isinstance(doc, dict):
        raise ScenarioError([Diagnostic(1, "scenario must be a JSON object")])
    return doc, text


# -- parameter helpers ----------------------------------------------------------------

def _number(v) -> float:
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return float(v)
    if isinstance(v, str):
        e = parse(v, ["pi"])
        return float(evaluate(e, {"pi": math.pi}))
    raise ValueError(f"expected a number, got {v!r}")


def _exact_number(v):
    if isinstance(v, str):
        return parse(v, [])
    if isinstance(v, float):
        return Fraction(repr(v))
    return v


class Context:
    """Parsed scenario: the system plus helpers shared by the check runners."""

    def __init__(self, doc: dict):
        self.doc = doc
        self.kind = doc["kind"]
        self.seed = int(doc["seed"])
        spec = doc["system"]
        self.params = {k: _exact_number(v) for k, v in spec.get("parameters", {}).items()}
        if "positions" in spec:
            self.field = False
            self.mech = mechanics.HamiltonianSystem(
                self._expr(spec["hamiltonian"], list(spec["positions"]) + list(spec["momenta"])),
                spec["positions"], spec["momenta"])
            self.sys = self.mech
            self.coords = list(self.mech.chart.names)
        else:
            self.field = True
            st, fl = tuple(spec["spacetime"]), tuple(spec["fields"])
            if "lagrangian" in spec:
                k = len(fl)
                vel = [ddw._vel_name(mu, i, k) for i in fl for mu in st]
                self.lagrangian = ddw.LagrangianField(
                    self._expr(spec["lagrangian"], list(st) + list(fl) + vel), st, fl)
                self.sys = ddw.legendre_field(self.lagrangian)
            else:
                self.lagrangian = None
                probe = ddw.DDWSystem(0, st, fl, check=False)
                self.sys = ddw.DDWSystem(self._expr(spec["hamiltonian"], probe.chart.names), st, fl)
            self.coords = list(self.sys.chart.names)

    def _expr(self, text, allowed) -> Expression:
        e = parse(text, list(allowed) + list(self.params))
        return _subs(e, self.params)

    def expr(self, text, allowed=None) -> Expression:
        return self._expr(text, self.coords if allowed is None else allowed)

    # systems seen by the observable calculus
    @property
    def ddw_view(self):
        if self.field:
            return self.sys
        return ddw.ddw_from_mechanics(self.mech)

    def form(self, spec) -> observables.ObservableForm:
        sys = self.sys
        if "momentum" in spec:
            return observables.canonical_momentum(
                sys, {k: self.expr(v) for k, v in spec["momentum"].items()})
        if "position" in spec:
            comps = {tuple(filter(None, k.split(","))): self.expr(v) for k, v in spec["position"].items()}
            return observables.position_form(sys, comps)
        if "form" in spec:
            F = None
            for k, v in spec["form"].items():
                names = tuple(filter(None, k.split(",")))
                term = sys.chart.volume(names) * self.expr(v)
                F = term if F is None else F + term
            return observables.observable(sys, F)
        raise ValueError("form spec needs one of 'momentum', 'position', 'form'")

    # field solutions
    def solve(self, data, N: int, s: float = 0.0) -> ddw.DiscreteGamma:
        x = self.sys.spacetime[1]
        allowed = [x, "s"]
        u0 = _subs(self.expr(data["u0"], allowed), {"s": _exact_number(s)})
        v0 = _subs(self.expr(data.get("v0", "0"), allowed), {"s": _exact_number(s)})
        g = ddw.solve_field(self.sys, u0, v0, _number(data["T"]), _number(data["X"]), N, N)
        if data.get("corrupt"):
            g = observables.corrupt_momenta(g, float(data["corrupt"]))
        return g

    def trajectory(self, data, h, s: float = 0.0) -> mechanics.Trajectory:
        z0 = [float(evaluate(self.expr(str(z), ["s"]), {"s": s})) for z in data["z0"]]
        return mechanics.integrate_flow(self.mech, z0, _number(data["T"]), h)


def _subs(e, bindings):
    from .expr import substitute

    return substitute(e, bindings) if bindings else e


# -- check runners ----------------------------------------------------------------------

REFS = {
    "flow_oracle": "Hamilton's equations for a mechanical Hamiltonian",
    "energy_drift_order": "conservation of H along the Hamiltonian flow",
    "evolution": "observable evolution df/dt = {H, f}",
    "bracket": "Poisson bracket {f, g} = Omega(xi_f, xi_g)",
    "noether": "symplectomorphisms and Noether's theorem in mechanics",
    "presymplectic": "presymplectic constraint surface p0 = -H in extended phase space",
    "dirac_weak": "weak vanishing of brackets with the constraints",
    "legendre": "field Legendre transform p = dL/dv",
    "universal_restriction": "universal multisymplectic form restricted to the DDW submanifold",
    "manufactured_order": "Euler-Lagrange and DDW field equations",
    "equivalence": "generalized Hamilton equations for n-curves versus the DDW system",
    "solver_order": "Hamiltonian n-curves of the wave-type DDW system",
    "field_energy_drift": "conserved energy of the wave-type DDW system",
    "observable": "algebraic observable (n-1)-forms",
    "bracket_antisymmetry": "Poisson bracket of observable forms",
    "bracket_value": "Poisson bracket of observable forms",
    "jacobi": "Jacobi identity modulo an exact term",
    "pseudobracket_order": "pseudobracket along Hamiltonian n-curves",
    "pseudobracket_control": "pseudobracket along Hamiltonian n-curves",
    "compare_order": "comparison of two observations along a Hamiltonian n-curve",
    "slice_integral": "observable functionals on slices",
    "homology_order": "slice integrals of dynamical observables depend only on the homology class",
    "cps": "covariant phase space variational identity",
    "cps_control": "covariant phase space variational identity",
}


def _ratio_ok(ratio, rng):
    lo, hi = rng
    return ratio is not None and math.isfinite(ratio) and lo <= ratio <= hi


def _series(values):
    return values[0] / values[1] if values[1] != 0 else math.inf


@dataclass
class Outcome:
    passed: bool
    measured: Optional[float]
    tolerance: Optional[float] = None
    order: Optional[float] = None
    series: Optional[List[tuple]] = None


def _order_outcome(levels, values, rng, tolerance=None):
    ratio = _series(values[-2:])
    ok = _ratio_ok(ratio, rng) and (tolerance is None or values[-1] <= tolerance)
    return Outcome(ok, values[-1], tolerance, order_from_ratio(ratio),
                   [(lv, v) for lv, v in zip(levels, values)])


def run_flow_oracle(ctx, c, out):
    tr = ctx.trajectory(c, float(c["h"]))
    exact = [lambdify(ctx.expr(e, ["t"]), ["t"]) for e in c["exact"]]
    T = tr.t[-1]
    err = max(abs(float(v) - float(f(T))) for v, f in zip(tr.states[-1], exact))
    if out:
        tr.to_csv(os.path.join(out, f"{c['name']}.csv"))
    return Outcome(err <= c["tolerance"], err, c["tolerance"])


def _drift(ctx, c, h):
    tr = ctx.trajectory(c, h)
    E = tr.values(ctx.mech.H)
    return float(np.max(np.abs(E - E[0])))


def run_energy_drift_order(ctx, c, out):
    h = float(c["h"])
    levels = [h, h / 2]
    return _order_outcome(levels, [_drift(ctx, c, x) for x in levels], c["ratio_range"])


def run_evolution(ctx, c, out):
    tr = ctx.trajectory(c, float(c["h"]))
    r = mechanics.evolution_check(ctx.mech, ctx.expr(c["f"]), tr)
    return Outcome(r <= c["tolerance"], r, c["tolerance"])


def run_bracket(ctx, c, out):
    b = mechanics.poisson_bracket(ctx.mech, ctx.expr(c["f"]), ctx.expr(c["g"]))
    diff = b - ctx.expr(c["expected"])
    return Outcome(diff.is_zero, 0.0 if diff.is_zero else 1.0)


def run_noether(ctx, c, out):
    xi = MultiVector.vector(ctx.mech.chart, {k: ctx.expr(v) for k, v in c["vector"].items()})
    rep = mechanics.classify_symmetry(ctx.mech, xi)
    ok = rep.status == c["expected_status"]
    if ok and "witness" in c:
        ok = (rep.witness - ctx.expr(c["witness"])).is_zero
    return Outcome(ok, 0.0 if ok else 1.0)


def run_presymplectic(ctx, c, out):
    z0 = [_number(z) for z in c["z0"]]
    rep = mechanics.extended_presymplectic_check(ctx.mech, z0, _number(c["T"]), float(c["h"]),
                                                 int(c.get("probes", mechanics.PROBE_COUNT)),
                                                 ctx.seed)
    ratio = rep.order_ratio
    ok = rep.ok and _ratio_ok(ratio, c["ratio_range"])
    return Outcome(ok, rep.flow_errors[-1], None, order_from_ratio(ratio),
                   list(zip(rep.flow_steps, rep.flow_errors)))


def run_dirac_weak(ctx, c, out):
    ext = mechanics.extended_system(ctx.mech)
    allowed = list(ext.chart.names)
    got = mechanics.dirac_weak_check(ext, ctx.expr(c["observable"], allowed),
                                     [ctx.expr(x, allowed) for x in c["constraints"]])
    return Outcome(got == bool(c["expected"]), float(got))


def run_legendre(ctx, c, out):
    ok = (ctx.sys.H - ctx.expr(c["expected"])).is_zero
    return Outcome(ok, 0.0 if ok else 1.0)


def run_universal_restriction(ctx, c, out):
    sys = ctx.sys
    U = ddw.universal_multisymplectic_form(ddw.universal_chart(sys.spacetime, sys.fields))
    ok = (ddw.restrict_to_ddw(U, sys) - sys.omega).is_zero()
    pc = ddw.poincare_cartan_check(U, seed=ctx.seed)
    ok = ok and pc <= c["tolerance"]
    return Outcome(ok, pc, c["tolerance"])


def _manufactured(ctx, c, N):
    sys = ctx.sys
    t, x = sys.spacetime
    u = ctx.expr(c["exact"], list(sys.spacetime))
    Lf = ctx.lagrangian
    from .expr import differentiate, substitute

    vel = {Lf.velocities[(mu, sys.fields[0])]: differentiate(u, mu) for mu in sys.spacetime}
    y = sys.fields[0]
    moms = [[substitute(substitute(differentiate(Lf.L, Lf.velocities[(mu, y)]), vel), {y: u})]
            for mu in sys.spacetime]
    T, X = _number(c["T"]), _number(c["X"])
    axes = (np.linspace(0.0, T, N + 1), np.arange(N) * X / N)
    return ddw.sample_gamma(sys, axes, [u], moms, periodic=(False, True))


def run_manufactured_order(ctx, c, out):
    levels = [int(c["N"]) * 2 ** j for j in range(int(c.get("levels", 2)))]
    vals = []
    for N in levels:
        g = _manufactured(ctx, c, N)
        if c["residual"] == "euler_lagrange":
            vals.append(ddw.euler_lagrange_residual(ctx.lagrangian, g).max)
        else:
            vals.append(ddw.ddw_residual(ctx.sys, g).max)
    return _order_outcome(levels, vals, c["ratio_range"])


def run_equivalence(ctx, c, out):
    worst = 0.0
    for N in c["grids"]:
        worst = max(worst, ddw.residual_equivalence(ctx.sys, ctx.solve(c, int(N))))
    return Outcome(worst <= c["tolerance"], worst, c["tolerance"])


def run_solver_order(ctx, c, out):
    levels = [int(c["N"]) * 2 ** j for j in range(int(c.get("levels", 2)))]
    sys = ctx.sys
    ex = lambdify(ctx.expr(c["exact"], list(sys.spacetime)), list(sys.spacetime))
    vals = []
    for N in levels:
        g = ctx.solve(c, N)
        tt, xx = g.mesh()
        vals.append(float(np.max(np.abs(g.y[0] - ex(tt, xx)))))
    return _order_outcome(levels, vals, c["ratio_range"])


def run_field_energy_drift(ctx, c, out):
    levels = [int(c["N"]) * 2 ** j for j in range(int(c.get("levels", 2)))]
    vals = []
    for N in levels:
        E = ddw.energy(ctx.solve(c, N))
        vals.append(float(np.max(np.abs(E - E[0]))))
    return _order_outcome(levels, vals, c["ratio_range"])


def run_observable(ctx, c, out):
    F = ctx.form(c["form"])
    ok = F.status == c["expected"]
    if F.algebraic_observable:
        ok = ok and F.defining_residual().is_zero() and F.generates_symplectomorphism()
    if ok and "dynamical" in c:
        ok = F.dynamical == bool(c["dynamical"])
    return Outcome(ok, 0.0 if ok else 1.0)


def run_bracket_antisymmetry(ctx, c, out):
    F, G = ctx.form(c["F"]), ctx.form(c["G"])
    s = observables.form_bracket(ctx.sys, F, G).F + observables.form_bracket(ctx.sys, G, F).F
    return Outcome(s.is_zero(), 0.0 if s.is_zero() else 1.0)


def run_bracket_value(ctx, c, out):
    F, G = ctx.form(c["F"]), ctx.form(c["G"])
    B = observables.form_bracket(ctx.sys, F, G).F
    ok = (B - ctx.form(c["expected"]).F).is_zero()
    return Outcome(ok, 0.0 if ok else 1.0)


def run_jacobi(ctx, c, out):
    F, G, K = (ctx.form(c[k]) for k in ("F", "G", "K"))
    J = observables.jacobi_defect(ctx.sys, F, G, K)
    ok = J.matches and ("zero" not in c or J.S.is_zero() == bool(c["zero"]))
    return Outcome(ok, 0.0 if ok else 1.0)


def _levels(c):
    return [int(c["N"]) * 2 ** j for j in range(int(c.get("levels", 2)))]


def _quiet(fn, *a):
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return fn(*a)


def run_pseudobracket_order(ctx, c, out):
    F = ctx.form(c["form"])
    vals = [_quiet(observables.pseudobracket_along, ctx.sys, F, ctx.solve(c, N)).residual
            for N in _levels(c)]
    return _order_outcome(_levels(c), vals, c["ratio_range"])


def run_compare_order(ctx, c, out):
    F, G = ctx.form(c["F"]), ctx.form(c["G"])
    vals = [observables.compare_observables(ctx.sys, F, G, ctx.solve(c, N)) for N in _levels(c)]
    return _order_outcome(_levels(c), vals, c["ratio_range"])


def run_pseudobracket_control(ctx, c, out):
    F = ctx.form(c["form"])
    g = ctx.solve(c, int(c["N"]))
    good = _quiet(observables.pseudobracket_along, ctx.sys, F, g).residual
    bad_g = observables.corrupt_momenta(g, float(c.get("corruption", 0.01)))
    if c.get("compare_with"):
        G = ctx.form(c["compare_with"])
        good = observables.compare_observables(ctx.sys, F, G, g)
        bad = observables.compare_observables(ctx.sys, F, G, bad_g)
    else:
        bad = _quiet(observables.pseudobracket_along, ctx.sys, F, bad_g).residual
    ratio = bad / good if good > 0 else math.inf
    return Outcome(ratio >= c["factor"], ratio, c["factor"])


def run_slice_integral(ctx, c, out):
    F = ctx.form(c["form"])
    g = ctx.solve(c, int(c["N"]))
    val = observables.slice_integral(observables.Slice(_number(c.get("level", 0))), g, F)
    err = abs(val - _number(c["expected"]))
    return Outcome(err <= c["tolerance"], err, c["tolerance"])


def run_homology_order(ctx, c, out):
    F = ctx.form(c["form"])
    s0, s1 = observables.Slice(_number(c["slices"][0])), observables.Slice(_number(c["slices"][1]))
    vals = [observables.homology_independence(ctx.sys, F, ctx.solve(c, N), s0, s1,
                                              c.get("expect") != "fail")
            for N in _levels(c)]
    return _order_outcome(_levels(c), vals, c["ratio_range"])


def _family(ctx, c, corrupt=False):
    if ctx.field:
        fam = lambda s: ctx.solve(c, int(c["N"]), s)
        sys = ctx.sys
    else:
        def fam(s):
            g = ddw.gamma_from_trajectory(ctx.trajectory(c, float(c["h"]), s))
            return observables.corrupt_momenta(g, float(c["corrupt"])) if c.get("corrupt") else g
        sys = ctx.ddw_view
    if corrupt:
        rel = float(c.get("corruption", 0.01))
        return sys, (lambda s: observables.corrupt_momenta(fam(s), rel))
    return sys, fam


def _cps(ctx, c, corrupt=False):
    sys, fam = _family(ctx, c, corrupt)
    s0, s1 = observables.Slice(_number(c["slices"][0])), observables.Slice(_number(c["slices"][1]))
    return observables.cps_variation_check(sys, fam, s0, s1, float(c.get("eps", 1e-4)),
                                           c.get("tolerance"))


def run_cps(ctx, c, out):
    r = _cps(ctx, c)
    shift = max(r.richardson["termI_shift"], r.richardson["termII_shift"])
    ok = r.ok and shift <= r.tolerance
    return Outcome(ok, max(abs(r.termI), abs(r.termII)), r.tolerance)


def run_cps_control(ctx, c, out):
    good = abs(_cps(ctx, c).termII)
    bad = abs(_cps(ctx, c, corrupt=True).termII)
    ratio = bad / good if good > 0 else math.inf
    return Outcome(ratio >= c["factor"], ratio, c["factor"])


_MECH = ("mechanics",)
_FIELD = ("ddw", "observables", "cps")

# type -> (runner, kinds, required keys, needs field system)
CHECKS: Dict[str, tuple] = {
    "flow_oracle": (run_flow_oracle, _MECH, ("z0", "T", "h", "exact", "tolerance"), False),
    "energy_drift_order": (run_energy_drift_order, _MECH, ("z0", "T", "h", "ratio_range"), False),
    "evolution": (run_evolution, _MECH, ("z0", "T", "h", "f", "tolerance"), False),
    "bracket": (run_bracket, _MECH, ("f", "g", "expected"), False),
    "noether": (run_noether, _MECH, ("vector", "expected_status"), False),
    "presymplectic": (run_presymplectic, ("extended",), ("z0", "T", "h", "ratio_range"), False),
    "dirac_weak": (run_dirac_weak, ("extended",), ("observable", "constraints", "expected"), False),
    "legendre": (run_legendre, ("ddw",), ("expected",), True),
    "universal_restriction": (run_universal_restriction, ("ddw",), ("tolerance",), True),
    "manufactured_order": (run_manufactured_order, ("ddw",),
                           ("exact", "T", "X", "N", "residual", "ratio_range"), True),
    "equivalence": (run_equivalence, ("ddw",), ("u0", "T", "X", "grids", "tolerance"), True),
    "solver_order": (run_solver_order, ("ddw",), ("u0", "T", "X", "N", "exact", "ratio_range"), True),
    "field_energy_drift": (run_field_energy_drift, ("ddw", "observables"),
                           ("u0", "T", "X", "N", "ratio_range"), True),
    "observable": (run_observable, ("observables",), ("form", "expected"), None),
    "bracket_antisymmetry": (run_bracket_antisymmetry, ("observables",), ("F", "G"), None),
    "bracket_value": (run_bracket_value, ("observables",), ("F", "G", "expected"), None),
    "jacobi": (run_jacobi, ("observables",), ("F", "G", "K"), None),
    "pseudobracket_order": (run_pseudobracket_order, ("observables",),
                            ("form", "u0", "T", "X", "N", "ratio_range"), True),
    "compare_order": (run_compare_order, ("observables",),
                      ("F", "G", "u0", "T", "X", "N", "ratio_range"), True),
    "pseudobracket_control": (run_pseudobracket_control, ("observables",),
                              ("form", "u0", "T", "X", "N", "factor"), True),
    "slice_integral": (run_slice_integral, ("observables",),
                       ("form", "u0", "T", "X", "N", "expected", "tolerance"), True),
    "homology_order": (run_homology_order, ("observables",),
                       ("form", "u0", "T", "X", "N", "slices", "ratio_range"), True),
    "cps": (run_cps, ("cps",), ("slices",), None),
    "cps_control": (run_cps_control, ("cps",), ("slices", "factor"), None),
}

_POSITIVE = ("tolerance", "factor", "h", "T", "X", "eps", "corruption", "corrupt")


# -- validation ------------------------------------------------------------------------------

def validate(doc: dict, text: str = "") -> List[Diagnostic]:
    """Static checks: structure, expressions, declared coordinates, tolerances."""
    diags: List[Diagnostic] = []

    def bad(msg, *needles):
        diags.append(Diagnostic(_line_of(text, *needles), msg))

    for key in ("name", "kind", "seed", "system", "checks"):
        if key not in doc:
            bad(f"missing top-level field {key!r}")
    if diags:
        return diags
    if doc["kind"] not in KINDS:
        bad(f"unknown kind {doc['kind']!r} (expected one of {', '.join(KINDS)})", doc["kind"])
        return diags
    if not isinstance(doc["seed"], int) or isinstance(doc["seed"], bool):
        bad("seed must be an integer", "seed")
    spec = doc["system"]
    if not isinstance(spec, dict):
        bad("system must be an object", "system")
        return diags
    if "positions" in spec:
        for key in ("hamiltonian", "momenta"):
            if key not in spec:
                bad(f"mechanical system needs {key!r}", "system")
    elif "spacetime" in spec:
        for key in ("fields", "signature"):
            if key not in spec:
                bad(f"field system needs {key!r}", "system")
        if "lagrangian" not in spec and "hamiltonian" not in spec:
            bad("field system needs a 'lagrangian' or a 'hamiltonian'", "system")
        sig = spec.get("signature")
        n = len(spec["spacetime"])
        if sig is not None and sig != "+" + "-" * (n - 1):
            bad(f"signature {sig!r} is not supported (use {'+' + '-' * (n - 1)!r})", sig)
    else:
        bad("system must declare 'positions' (mechanics) or 'spacetime' (fields)", "system")
    for k, v in spec.get("parameters", {}).items():
        try:
            _exact_number(v)
        except ExpressionError as exc:
            bad(f"parameter {k!r}: {exc}", k)
    if diags:
        return diags
    try:
        ctx = Context(doc)
    except ExpressionError as exc:
        bad(f"system: {exc}", *_needles_from(exc, spec))
        return diags
    except (ValueError, KeyError) as exc:
        bad(f"system: {exc}", "system")
        return diags
    names = set()
    for i, c in enumerate(doc["checks"]):
        cname = c.get("name") if isinstance(c, dict) else None
        label = f"check {cname!r}" if cname else f"check #{i + 1}"
        if not isinstance(c, dict) or not cname:
            bad(f"{label}: every check needs a 'name'", cname)
            continue
        if cname in names:
            bad(f"{label}: duplicate check name", cname)
        names.add(cname)
        t = c.get("type")
        if t not in CHECKS:
            bad(f"{label}: unknown check type {t!r}", t, cname)
            continue
        _, kinds, required, needs_field = CHECKS[t]
        if doc["kind"] not in kinds:
            bad(f"{label}: type {t!r} is not available for kind {doc['kind']!r}", t, cname)
        if needs_field is True and not ctx.field:
            bad(f"{label}: type {t!r} needs a field system", t, cname)
        if t == "cps" or t == "cps_control":
            required = required + (("u0", "T", "X", "N") if ctx.field else ("z0", "T", "h"))
        missing = [k for k in required if k not in c]
        if missing:
            bad(f"{label}: missing {', '.join(missing)}", cname)
            continue
        if c.get("expect", "pass") not in ("pass", "fail"):
            bad(f"{label}: expect must be 'pass' or 'fail'", cname)
        for k in _POSITIVE:
            if k in c:
                try:
                    val = _number(c[k])
                except (ValueError, ExpressionError):
                    bad(f"{label}: {k} must be a number", cname)
                    continue
                if not val > 0:
                    bad(f"{label}: {k} must be positive, got {c[k]}", cname)
        if "ratio_range" in c:
            r = c["ratio_range"]
            if not (isinstance(r, list) and len(r) == 2 and 0 < r[0] <= r[1]):
                bad(f"{label}: ratio_range must be [low, high] with 0 < low <= high", cname)
        for msg, needle in _check_expressions(ctx, c):
            bad(f"{label}: {msg}", needle, cname)
    return diags


def _needles_from(exc, spec):
    return [v for v in spec.values() if isinstance(v, str)]


def _check_expressions(ctx: Context, c: dict):
    """Parse every expression a check refers to against its allowed symbols."""
    out = []
    coords = ctx.coords

    def tryparse(text, allowed):
        try:
            ctx.expr(str(text), allowed)
        except ExpressionError as exc:
            out.append((str(exc), text))

    def tryform(spec):
        if not isinstance(spec, dict) or len(spec) != 1:
            out.append(("form spec needs exactly one of 'momentum', 'position', 'form'", None))
            return
        (kind, body), = spec.items()
        if kind not in ("momentum", "position", "form"):
            out.append((f"unknown form spec {kind!r}", kind))
            return
        for key, v in body.items():
            for nm in filter(None, key.split(",")):
                if nm not in coords:
                    out.append((f"unknown coordinate {nm!r}", key))
            tryparse(v, coords)

    if ctx.field:
        st = list(ctx.sys.spacetime)
        for k in ("u0", "v0"):
            if k in c:
                tryparse(c[k], [st[1], "s"])
        if "exact" in c:
            tryparse(c["exact"], st)
    else:
        for z in c.get("z0", []):
            tryparse(z, ["s"])
        if "z0" in c and len(c["z0"]) != 2 * ctx.mech.dof:
            out.append((f"z0 needs {2 * ctx.mech.dof} entries", None))
        for e in c.get("exact", []) if isinstance(c.get("exact"), list) else []:
            tryparse(e, ["t"])
    for k in ("f", "g", "expected") if c.get("type") in ("bracket", "evolution") else ("f",):
        if k in c:
            tryparse(c[k], coords)
    if c.get("type") == "legendre":
        tryparse(c["expected"], coords)
    if c.get("type") == "noether":
        for k, v in c["vector"].items():
            if k not in coords:
                out.append((f"unknown coordinate {k!r}", k))
            tryparse(v, coords)
        if "witness" in c:
            tryparse(c["witness"], coords)
    if c.get("type") == "dirac_weak":
        ext = list(mechanics.extended_system(ctx.mech).chart.names)
        tryparse(c["observable"], ext)
        for x in c["constraints"]:
            tryparse(x, ext)
    for k in ("form", "F", "G", "K", "compare_with"):
        if k in c:
            tryform(c[k])
    if c.get("type") == "bracket_value":
        tryform(c["expected"])
    return out


# -- execution -------------------------------------------------------------------------------

def run(doc: dict, out_dir: Optional[str] = None) -> List[CheckResult]:
    """Execute every check in order; module errors become ``error`` results."""
    ctx = Context(doc)
    results = []
    for c in doc["checks"]:
        runner = CHECKS[c["type"]][0]
        expect_fail = c.get("expect") == "fail"
        ref = REFS[c["type"]]
        try:
            o = runner(ctx, c, out_dir)
        except Exception as exc:  # reported, never swallowed silently
            results.append(CheckResult(c["name"], ref, f"error: {type(exc).__name__}: {exc}",
                                       None, None, None))
            continue
        if out_dir and o.series:
            _write_series(os.path.join(out_dir, f"{c['name']}.series.csv"), o.series)
        results.append(decide(c["name"], ref, o.passed, o.measured, o.tolerance, o.order,
                              expect_fail))
    return results


def _write_series(path, series):
    with open(path, "w") as fh:
        fh.write("level,value\n")
        for lv, v in series:
            fh.write(f"{format(float(lv), '.17g')},{format(float(v), '.17g')}\n")
