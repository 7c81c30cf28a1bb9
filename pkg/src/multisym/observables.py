"""Observable (n-1)-forms, their brackets, and slice functionals.

An (n-1)-form ``F`` is an algebraic observable when some vector field
``xi_F`` satisfies ``xi_F _| Omega + dF = 0``. Brackets use the leading-slot
contraction of :mod:`multisym.exterior`::

    {F, G} = (xi_F ^ xi_G) _| Omega = xi_F _| dG = -xi_G _| dF

Systems are duck-typed: anything with ``chart``, ``theta``, ``omega`` and a
Hamiltonian works (``calH = e + H`` on DDW charts, ``H`` in mechanics).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence

import numpy as np

from .ddw import DiscreteGamma, GridError, ddw_residual
from .expr import ZERO, Expression, as_expression, evaluate, normalize_equal, var
from .exterior import (
    DegreeError,
    DifferentialForm,
    MultiVector,
    contract_numeric,
    exterior_derivative,
    interior_product,
    lie_derivative,
    wedge,
)
from .linalg import InconsistentSystemError, SymbolicPivotError, solve_linear
from .mechanics import PROBE_COUNT, PROBE_SEED, InvariantViolation


class SliceError(ValueError):
    pass


def covariant_hamiltonian(sys) -> Expression:
    return getattr(sys, "calH", None) or sys.H


def _n(sys) -> int:
    return sys.omega.degree - 1


@dataclass
class ObservableForm:
    F: DifferentialForm
    omega: DifferentialForm
    xi: Optional[MultiVector] = None
    algebraic_observable: Optional[bool] = None
    unique: Optional[bool] = None
    status: str = "unsolved"
    certificate: Optional[list] = None
    dynamical: Optional[bool] = None

    @property
    def chart(self):
        return self.F.chart

    def defining_residual(self) -> DifferentialForm:
        """``xi_F _| Omega + dF``; zero for algebraic observables."""
        if self.xi is None:
            raise ValueError("no generator")
        return interior_product(self.xi, self.omega) + exterior_derivative(self.F)

    def generates_symplectomorphism(self) -> bool:
        return lie_derivative(self.xi, self.omega).is_zero()


def _contraction_system(omega: DifferentialForm, beta: DifferentialForm):
    chart = omega.chart
    cols = [interior_product(chart.partial(nm), omega) for nm in chart.names]
    keys = sorted(set(beta.terms).union(*(c.terms for c in cols)))
    A = [[c.terms.get(k, ZERO) for c in cols] for k in keys]
    b = [beta.terms.get(k, ZERO) for k in keys]
    return A, b, keys


def _numeric_solve(A, b, probes=PROBE_COUNT, seed=PROBE_SEED):
    names = sorted(set().union(*(e.free_symbols for row in A for e in row),
                               *(e.free_symbols for e in b)))
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(probes):
        pt = dict(zip(names, rng.uniform(-1, 1, len(names))))
        An = np.array([[evaluate(e, pt) for e in row] for row in A])
        bn = np.array([evaluate(e, pt) for e in b])
        x, *_ = np.linalg.lstsq(An, bn, rcond=None)
        worst = max(worst, float(np.max(np.abs(An @ x - bn))) if bn.size else 0.0)
    return worst


def solve_observable_vf(F: DifferentialForm, omega: DifferentialForm) -> ObservableForm:
    """Find ``xi_F`` with ``xi_F _| Omega + dF = 0``.

    On inconsistency the returned object has ``algebraic_observable = False``
    and carries the multipliers of the inconsistency certificate. When a
    pivot cannot be decided symbolically the system is solved in the
    least-squares sense at seeded probes and ``status`` starts with
    ``"numeric-only"``.
    """
    if F.chart != omega.chart:
        raise ValueError("form and multisymplectic form live on different charts")
    if F.degree != omega.degree - 2:
        raise DegreeError(f"observable must have degree {omega.degree - 2}")
    beta = -exterior_derivative(F)
    A, b, _ = _contraction_system(omega, beta)
    try:
        sol = solve_linear(A, b)
    except InconsistentSystemError as exc:
        return ObservableForm(F, omega, None, False, None, "not observable", list(exc.multipliers))
    except SymbolicPivotError:
        worst = _numeric_solve(A, b)
        if worst > 1e-9:
            return ObservableForm(F, omega, None, False, None, "numeric-only certificate")
        return ObservableForm(F, omega, None, None, None, "numeric-only observable")
    comps = {nm: v for nm, v in zip(F.chart.names, sol.values)}
    xi = MultiVector.vector(F.chart, comps)
    obs = ObservableForm(F, omega, xi, True, sol.unique, "observable")
    if not obs.defining_residual().is_zero():
        raise InvariantViolation("generator does not satisfy the defining equation")
    return obs


def observable(sys, F) -> ObservableForm:
    """Solve for the generator of ``F`` on the system's chart and classify it."""
    if not isinstance(F, DifferentialForm):
        F = DifferentialForm.scalar(sys.chart, as_expression(F))
    obs = solve_observable_vf(F, sys.omega)
    if obs.algebraic_observable:
        obs.dynamical = dynamical_check(sys, obs)
    return obs


def dynamical_check(sys, F: ObservableForm) -> bool:
    """True iff ``d calH (xi_F) = 0``."""
    if not F.algebraic_observable:
        raise ValueError("dynamical check needs an algebraic observable")
    return normalize_equal(F.xi(covariant_hamiltonian(sys)), 0)


def canonical_momentum(sys, zeta: Mapping[str, object]) -> ObservableForm:
    """``P_zeta = zeta _| theta`` for a vector field ``zeta`` on the base."""
    chart = sys.chart
    for nm, c in zeta.items():
        if chart.role(nm) not in ("spacetime", "field", "q", "generic"):
            raise ValueError(f"{nm!r} is not a base coordinate")
        bad = [s for s in as_expression(c).free_symbols
               if s in chart and chart.role(s) not in ("spacetime", "field", "q", "generic")]
        if bad:
            raise ValueError(f"zeta components may only depend on base coordinates, got {bad}")
    Z = MultiVector.vector(chart, zeta)
    return observable(sys, interior_product(Z, sys.theta))


def position_form(sys, components: Mapping[tuple, object]) -> ObservableForm:
    """``Q = sum_I c_I(x, y) dx^I`` over (n-1)-subsets ``I`` of spacetime.

    In mechanics (n = 1) the only key is ``()`` and ``Q`` is a function of q.
    """
    chart = sys.chart
    n = _n(sys)
    F = DifferentialForm.zero(chart, n - 1)
    for key, c in components.items():
        key = tuple(key)
        if len(key) != n - 1:
            raise ValueError(f"multi-index {key} must have length {n - 1}")
        c = as_expression(c)
        bad = [s for s in c.free_symbols
               if s in chart and chart.role(s) not in ("spacetime", "field", "q", "generic")]
        if bad:
            raise ValueError(f"position coefficients depend on momenta {bad}")
        F = F + chart.volume(key) * c
    return observable(sys, F)


def _require(*forms):
    for f in forms:
        if not f.algebraic_observable or f.xi is None:
            raise ValueError("bracket needs algebraic observables with generators")


def form_bracket(sys, F: ObservableForm, G: ObservableForm) -> ObservableForm:
    """``{F, G} = (xi_F ^ xi_G) _| Omega``, with the chain identity verified."""
    _require(F, G)
    B = interior_product(wedge(F.xi, G.xi), sys.omega)
    via_dG = interior_product(F.xi, exterior_derivative(G.F))
    via_dF = -interior_product(G.xi, exterior_derivative(F.F))
    if not ((B - via_dG).is_zero() and (B - via_dF).is_zero()):
        raise InvariantViolation("bracket chain {F,G} = xi_F _| dG = -xi_G _| dF failed")
    out = observable(sys, B)
    if not out.algebraic_observable:
        raise InvariantViolation("bracket left the algebra of observables")
    return out


@dataclass
class JacobiDefect:
    S: DifferentialForm
    exact_term: DifferentialForm

    @property
    def matches(self) -> bool:
        return (self.S - self.exact_term).is_zero()


def jacobi_defect(sys, F: ObservableForm, G: ObservableForm, K: ObservableForm) -> JacobiDefect:
    """Cyclic sum ``{{F,G},K} + {{G,K},F} + {{K,F},G}`` and ``d((xi_F^xi_G^xi_K) _| Omega)``."""
    _require(F, G, K)
    S = (form_bracket(sys, form_bracket(sys, F, G), K).F
         + form_bracket(sys, form_bracket(sys, G, K), F).F
         + form_bracket(sys, form_bracket(sys, K, F), G).F)
    if sys.omega.degree < 3:
        exact = DifferentialForm.zero(sys.chart, S.degree)
    else:
        X = wedge(wedge(F.xi, G.xi), K.xi)
        exact = exterior_derivative(interior_product(X, sys.omega))
    return JacobiDefect(S, exact)


# -- along discrete n-curves ---------------------------------------------------------

def _as_obs(sys, F):
    return F if isinstance(F, ObservableForm) else observable(sys, F)


def pseudobracket_values(sys, F: ObservableForm, gamma: DiscreteGamma) -> np.ndarray:
    """``{calH, F} = -d calH(xi_F)`` sampled on the interior of ``gamma``.

    This depends on ``calH`` only through its differential, as it must for
    every tangent ``X`` with ``X _| Omega = (-1)^n d calH``.
    """
    F = _as_obs(sys, F)
    if not F.algebraic_observable:
        raise ValueError("pseudobracket needs an algebraic observable")
    sl = gamma.interior(1)
    val = gamma.evaluate(-F.xi(covariant_hamiltonian(sys)))
    return val[sl]


def pulled_back(F: DifferentialForm, gamma: DiscreteGamma) -> np.ndarray:
    """``<X, F>`` on interior points: the coefficient of ``F|_Gamma`` on ``dx^1..dx^n``."""
    from .ddw import tangent_vectors

    vecs = tangent_vectors(gamma)
    sl = gamma.interior(1)
    point = {nm: a[sl] for nm, a in gamma.arrays().items()}
    out = contract_numeric(F, point, vecs).get((), 0.0)
    return np.broadcast_to(out, vecs[0].shape[1:]).copy()


@dataclass
class PseudobracketResult:
    values: np.ndarray
    residual: float
    warning: Optional[str] = None


def _curve_warning(sys, gamma):
    if not hasattr(sys, "calH"):
        return None
    r = ddw_residual(sys, gamma).max
    h = max(gamma.steps)
    if r > 10 * h * h:
        msg = f"curve is not Hamiltonian within 10 h^2 (DDW residual {r:.3e}, h = {h:.3e})"
        warnings.warn(msg, RuntimeWarning, stacklevel=3)
        return msg
    return None


def pseudobracket_along(sys, F, gamma: DiscreteGamma) -> PseudobracketResult:
    """Compare ``dF|_Gamma`` with ``{calH, F} dvol|_Gamma`` at interior points."""
    F = _as_obs(sys, F)
    pb = pseudobracket_values(sys, F, gamma)
    lhs = pulled_back(exterior_derivative(F.F), gamma)
    res = float(np.max(np.abs(lhs - pb))) if pb.size else 0.0
    return PseudobracketResult(pb, res, _curve_warning(sys, gamma))


def compare_observables(sys, F, G, gamma: DiscreteGamma) -> float:
    """``max |{calH,F} dG|_Gamma - {calH,G} dF|_Gamma|`` over interior points."""
    F, G = _as_obs(sys, F), _as_obs(sys, G)
    a = pseudobracket_values(sys, F, gamma) * pulled_back(exterior_derivative(G.F), gamma)
    b = pseudobracket_values(sys, G, gamma) * pulled_back(exterior_derivative(F.F), gamma)
    return float(np.max(np.abs(a - b))) if a.size else 0.0


def corrupt_momenta(gamma: DiscreteGamma, rel: float = 0.01, time_only: bool = False) -> DiscreteGamma:
    """Copy of ``gamma`` with momenta scaled by ``1 + rel`` and ``e`` refilled.

    With ``time_only`` only the ``p^t_i`` are scaled.
    """
    p = gamma.p.copy()
    if time_only:
        p[0] *= 1 + rel
    else:
        p *= 1 + rel
    g = DiscreteGamma(gamma.system, gamma.axes, gamma.y.copy(), p, None, gamma.periodic)
    return g.fill_energy()


# -- slices ----------------------------------------------------------------------------

@dataclass(frozen=True)
class Slice:
    """The level set ``{t = level}`` of the time coordinate, oriented by ``dvol``."""
    level: float
    orientation: int = 1

    def index(self, gamma: DiscreteGamma) -> int:
        t = gamma.axes[0]
        i = int(np.argmin(np.abs(t - self.level)))
        if abs(t[i] - self.level) > 1e-9 * max(1.0, abs(self.level)):
            raise SliceError(f"slice level {self.level} is not on the time grid")
        return i


def _full_diff(gamma: DiscreteGamma, arr: np.ndarray, axis: int) -> np.ndarray:
    """Centered differences everywhere; second-order one-sided at open edges."""
    if gamma.periodic[axis]:
        return gamma.diff(arr, axis)
    return np.gradient(arr, gamma.steps[axis], axis=arr.ndim - len(gamma.shape) + axis,
                       edge_order=2)


def full_tangents(gamma: DiscreteGamma) -> List[np.ndarray]:
    sys = gamma.system
    arrs = gamma.arrays()
    vecs = []
    for m, mu in enumerate(sys.spacetime):
        comps = []
        for nm in sys.chart.names:
            if nm in sys.spacetime:
                comps.append(np.full(gamma.shape, 1.0 if nm == mu else 0.0))
            else:
                comps.append(_full_diff(gamma, arrs[nm], m))
        vecs.append(np.stack(comps))
    return vecs


def _line_weights(gamma: DiscreteGamma):
    if len(gamma.shape) == 1:
        return np.ones(1)
    h = gamma.steps[1]
    n = gamma.shape[1]
    if gamma.periodic[1]:
        return np.full(n, h)
    w = np.full(n, h)
    w[0] = w[-1] = h / 2
    return w


def _time_weights(gamma: DiscreteGamma, i0: int, i1: int):
    h = gamma.steps[0]
    w = np.zeros(gamma.shape[0])
    w[i0:i1 + 1] = h
    w[i0] = w[i1] = h / 2
    return w


def _slice_density(F: DifferentialForm, gamma: DiscreteGamma, i: int, extra=None) -> np.ndarray:
    """Coefficient of ``(extra _| F)|_Sigma`` on the spatial volume along row ``i``."""
    vecs = full_tangents(gamma)
    point = {nm: a[i] for nm, a in gamma.arrays().items()}
    spatial = [v[:, i] for v in vecs[1:]]
    front = ([extra[:, i]] if extra is not None else []) + spatial
    val = contract_numeric(F, point, front).get((), 0.0)
    shape = gamma.shape[1:]
    return np.broadcast_to(val, shape).copy() if shape else np.asarray(val, dtype=float)


def slice_integral(sigma: Slice, gamma: DiscreteGamma, F) -> float:
    """``int_{Sigma cap Gamma} F`` by the trapezoid (periodic: rectangle) rule."""
    if isinstance(F, ObservableForm):
        F = F.F
    if F.degree != gamma.system.n - 1:
        raise DegreeError("slice integrals need an (n-1)-form")
    i = sigma.index(gamma)
    dens = _slice_density(F, gamma, i)
    return sigma.orientation * float(np.sum(np.atleast_1d(dens) * _line_weights(gamma)))


def slice_bracket(sys, sigma: Slice, F: ObservableForm, G: ObservableForm,
                  gamma: DiscreteGamma) -> float:
    """``int_{Sigma cap Gamma} {F, G}``."""
    return slice_integral(sigma, gamma, form_bracket(sys, F, G))


def homology_independence(sys, F, gamma: DiscreteGamma, sigma0: Slice, sigma1: Slice,
                          require_dynamical: bool = True) -> float:
    """``|int_{Sigma0} F - int_{Sigma1} F|`` along ``gamma``."""
    F = _as_obs(sys, F)
    if require_dynamical and not F.dynamical:
        raise ValueError("homology independence is only asserted for dynamical observables")
    return abs(slice_integral(sigma0, gamma, F) - slice_integral(sigma1, gamma, F))


# -- covariant phase space identity ------------------------------------------------------

@dataclass
class CPSReport:
    termI: float
    termII: float
    delta_S: float
    theta0: float
    theta1: float
    eps: float
    tolerance: float
    richardson: Dict[str, float] = field(default_factory=dict)

    @property
    def presymplectic_match(self) -> bool:
        return abs(self.theta1 - self.theta0 - self.delta_S) <= self.tolerance

    @property
    def ok(self) -> bool:
        return (abs(self.termI) <= self.tolerance and abs(self.termII) <= self.tolerance
                and self.presymplectic_match)


def action(gamma: DiscreteGamma, theta: DifferentialForm, i0: int, i1: int) -> float:
    """``int_{Gamma cap D} theta`` over the slab between time rows ``i0`` and ``i1``."""
    vecs = full_tangents(gamma)
    point = gamma.arrays()
    dens = contract_numeric(theta, point, vecs).get((), 0.0)
    dens = np.broadcast_to(dens, gamma.shape)
    wt = _time_weights(gamma, i0, i1)
    if len(gamma.shape) == 1:
        return float(np.sum(wt * dens))
    return float(wt @ dens @ _line_weights(gamma))


def _check_family(gs):
    ref = gs[0]
    for g in gs[1:]:
        if g.shape != ref.shape or any(np.max(np.abs(a - b)) > 0 for a, b in zip(g.axes, ref.axes)):
            raise GridError("variation family members live on different grids")


def _cps_terms(sys, family, sigma0, sigma1, eps):
    gp, gm, g0 = family(eps), family(-eps), family(0.0)
    _check_family([g0, gp, gm])
    for g in (gp, gm, g0):
        if g.e is None:
            g.fill_energy()
    i0, i1 = sigma0.index(g0), sigma1.index(g0)
    if i1 <= i0:
        raise SliceError("the second slice must lie after the first")
    dS = (action(gp, sys.theta, i0, i1) - action(gm, sys.theta, i0, i1)) / (2 * eps)
    a_p, a_m = gp.arrays(), gm.arrays()
    xi = np.stack([np.zeros(g0.shape) if nm in sys.spacetime else (a_p[nm] - a_m[nm]) / (2 * eps)
                   for nm in sys.chart.names])
    th0 = sigma0.orientation * float(np.sum(np.atleast_1d(_slice_density(sys.theta, g0, i0, xi))
                                           * _line_weights(g0)))
    th1 = sigma1.orientation * float(np.sum(np.atleast_1d(_slice_density(sys.theta, g0, i1, xi))
                                           * _line_weights(g0)))
    vecs = full_tangents(g0)
    dens = contract_numeric(sys.omega, g0.arrays(), [xi] + vecs).get((), 0.0)
    dens = np.broadcast_to(dens, g0.shape)
    wt = _time_weights(g0, i0, i1)
    tII = float(np.sum(wt * dens)) if len(g0.shape) == 1 else float(wt @ dens @ _line_weights(g0))
    return dS - th1 + th0, tII, dS, th0, th1, max(g0.steps)


CPS_TOL_FACTOR = 10.0


def cps_variation_check(sys, family: Callable[[float], DiscreteGamma], sigma0: Slice,
                        sigma1: Slice, eps: float = 1e-4, tolerance: float = None) -> CPSReport:
    """Variational identity ``delta S = Theta(Sigma1) - Theta(Sigma0) + int xi _| Omega``.

    ``family(s)`` returns the member ``Gamma_s``; the variation ``xi`` is the
    centered difference at ``+-eps``. ``termI = delta S - Theta1 + Theta0``
    and ``termII = int xi _| Omega``; both vanish on Hamiltonian families.
    The default tolerance is ``10 (h^2 + eps^2)``. The same terms at
    ``eps/2`` are reported under ``richardson``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    tI, tII, dS, th0, th1, h = _cps_terms(sys, family, sigma0, sigma1, eps)
    tol = tolerance if tolerance is not None else CPS_TOL_FACTOR * (h * h + eps * eps)
    rI, rII, *_ = _cps_terms(sys, family, sigma0, sigma1, eps / 2)
    return CPSReport(tI, tII, dS, th0, th1, eps, tol,
                     {"termI_half_eps": rI, "termII_half_eps": rII,
                      "termI_shift": abs(tI - rI), "termII_shift": abs(tII - rII)})
