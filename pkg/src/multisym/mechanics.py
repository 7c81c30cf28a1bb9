"""Symplectic mechanics on canonical (q, p) charts.

Sign conventions used throughout::

    theta = sum_i p_i dq^i,     Omega = d theta = sum_i dp_i ^ dq^i
    xi_f _| Omega = -df
    {f, g} = Omega(xi_f, xi_g) = sum_i (df/dp_i dg/dq^i - df/dq^i dg/dp_i)

so that ``{H, f} = df/dt`` along the flow of ``H``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from .expr import (
    ZERO,
    Expression,
    as_expression,
    differentiate,
    lambdify,
    normalize_equal,
    substitute,
    var,
)
from .exterior import (
    Chart,
    ChartMap,
    DifferentialForm,
    MultiVector,
    exterior_derivative,
    interior_product,
    lie_derivative,
    pullback,
    solve_vector_contraction,
    wedge,
)
from .linalg import InconsistentSystemError, solve_linear

PROBE_COUNT = 20
PROBE_SEED = 0


class InvariantViolation(RuntimeError):
    """An internal mathematical invariant failed; indicates a bug or bad input."""


class IntegrationError(RuntimeError):
    def __init__(self, step, message):
        super().__init__(f"step {step}: {message}")
        self.step = step


def probe_points(names: Sequence[str], count: int = PROBE_COUNT, seed: int = PROBE_SEED):
    """Seeded uniform probe points in [-1, 1]^dim."""
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-1.0, 1.0, size=(count, len(names)))
    return [dict(zip(names, row)) for row in pts]


def form_matrix(omega: DifferentialForm, point: Mapping[str, float]) -> np.ndarray:
    """Numeric matrix ``Omega(d_a, d_b)`` of a 2-form at a point."""
    n = omega.chart.dim
    M = np.zeros((n, n))
    for (a, b), v in omega.evaluate(point).items():
        M[a, b] = v
        M[b, a] = -v
    return M


def _as_point_dict(names, z):
    return dict(zip(names, map(float, z)))


class HamiltonianSystem:
    """A Hamiltonian on a canonical chart ``(q^1..q^n, p_1..p_n)``."""

    def __init__(self, hamiltonian, positions: Sequence[str] = ("q",),
                 momenta: Sequence[str] = ("p",), parameters: Mapping[str, object] = None,
                 check: bool = True):
        positions, momenta = tuple(positions), tuple(momenta)
        if len(positions) != len(momenta) or not positions:
            raise ValueError("need equally many positions and momenta")
        self.chart = Chart(positions + momenta, ("q",) * len(positions) + ("p",) * len(momenta))
        self.positions = positions
        self.momenta = momenta
        self.parameters = dict(parameters or {})
        H = as_expression(hamiltonian)
        if self.parameters:
            H = substitute(H, self.parameters)
        stray = sorted(s for s in H.free_symbols if s not in self.chart)
        if stray:
            raise ValueError(f"Hamiltonian uses undeclared symbols {stray}")
        self.H = H
        theta = DifferentialForm.zero(self.chart, 1)
        for q, p in zip(positions, momenta):
            theta = theta + self.chart.d(q) * var(p)
        self.theta = theta
        self.omega = exterior_derivative(theta)
        self._compiled = None
        if check:
            self.check_invariants()

    @property
    def dof(self) -> int:
        return len(self.positions)

    def check_invariants(self):
        if not exterior_derivative(self.omega).is_zero():
            raise InvariantViolation("symplectic form is not closed")
        grads = [differentiate(self.H, n) for n in self.chart.names]
        pts = probe_points(self.chart.names)
        if all(g.is_zero for g in grads):
            raise InvariantViolation("dH vanishes identically")
        for pt in pts:
            if np.linalg.matrix_rank(form_matrix(self.omega, pt)) != self.chart.dim:
                raise InvariantViolation(f"symplectic form degenerate at {pt}")

    def compiled(self):
        """Numeric vector field and its Jacobian, ``(f(z), Df(z))``."""
        if self._compiled is None:
            names = self.chart.names
            n = self.dof
            grad = [differentiate(self.H, c) for c in names]
            rhs = grad[n:] + [-g for g in grad[:n]]
            jac = [[differentiate(r, c) for c in names] for r in rhs]
            f = lambdify(rhs, names)
            J = lambdify([x for row in jac for x in row], names)
            dim = len(names)
            self._compiled = (
                lambda z: np.array(f(*z), dtype=float),
                lambda z: np.array(J(*z), dtype=float).reshape(dim, dim),
            )
        return self._compiled

    def __repr__(self):
        return f"HamiltonianSystem(H={self.H}, chart={list(self.chart.names)})"


def hamiltonian_vector_field(sys: HamiltonianSystem, f) -> MultiVector:
    """The vector field ``xi_f`` with ``xi_f _| Omega = -df``."""
    f = as_expression(f)
    df = exterior_derivative(DifferentialForm.scalar(sys.chart, f))
    try:
        xi = solve_vector_contraction(sys.omega, -df)
    except InconsistentSystemError as exc:
        raise InvariantViolation(f"no Hamiltonian vector field for {f}") from exc
    return xi


def poisson_bracket(sys: HamiltonianSystem, f, g) -> Expression:
    """``{f, g} = (xi_f ^ xi_g) _| Omega``."""
    xf = hamiltonian_vector_field(sys, f)
    xg = hamiltonian_vector_field(sys, g)
    w = interior_product(wedge(xf, xg), sys.omega)
    return w.terms.get((), ZERO)


def coordinate_bracket(sys: HamiltonianSystem, f, g) -> Expression:
    """``sum_i (df/dp_i dg/dq^i - df/dq^i dg/dp_i)``."""
    f, g = as_expression(f), as_expression(g)
    out = ZERO
    for q, p in zip(sys.positions, sys.momenta):
        out = out + differentiate(f, p) * differentiate(g, q) - differentiate(f, q) * differentiate(g, p)
    return out


# -- time integration ----------------------------------------------------------

def implicit_midpoint(rhs, jac, z0, h: float, steps: int, tol: float = 1e-12,
                      max_iter: int = 50) -> np.ndarray:
    """Implicit midpoint rule with Newton inner iterations.

    Returns an array of shape ``(steps + 1, dim)``.
    """
    z = np.array(z0, dtype=float)
    dim = z.size
    out = np.empty((steps + 1, dim))
    out[0] = z
    eye = np.eye(dim)
    for n in range(steps):
        z_old = out[n]
        z_new = z_old + h * rhs(z_old)
        for it in range(max_iter + 1):
            mid = 0.5 * (z_old + z_new)
            res = z_new - z_old - h * rhs(mid)
            if np.max(np.abs(res)) <= tol * max(1.0, np.max(np.abs(z_new))):
                break
            if it == max_iter:
                raise IntegrationError(n, f"Newton did not converge in {max_iter} iterations "
                                          f"(residual {np.max(np.abs(res)):.3e})")
            z_new = z_new - np.linalg.solve(eye - 0.5 * h * jac(mid), res)
        if not np.all(np.isfinite(z_new)):
            raise IntegrationError(n, "non-finite state")
        out[n + 1] = z_new
    return out


@dataclass
class Trajectory:
    t: np.ndarray
    q: np.ndarray
    p: np.ndarray
    system: HamiltonianSystem

    def __post_init__(self):
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("time grid must be strictly increasing")
        if not (len(self.t) == len(self.q) == len(self.p)):
            raise ValueError("sample arrays must match the time grid")

    @property
    def h(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def states(self) -> np.ndarray:
        return np.hstack([self.q, self.p])

    def values(self, f) -> np.ndarray:
        """Samples of a phase-space function along the trajectory."""
        names = self.system.chart.names
        fn = lambdify(as_expression(f), names)
        cols = [self.states[:, i] for i in range(len(names))]
        return np.broadcast_to(np.asarray(fn(*cols), dtype=float), self.t.shape).copy()

    def to_csv(self, path):
        n = self.system.dof
        header = ["t"] + [f"q{i + 1}" for i in range(n)] + [f"p{i + 1}" for i in range(n)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in np.column_stack([self.t, self.q, self.p]):
                w.writerow([format(v, ".17g") for v in row])


def integrate_flow(sys: HamiltonianSystem, z0: Sequence[float], T: float, h: float) -> Trajectory:
    """Integrate Hamilton's equations with the implicit midpoint rule.

    The step is adjusted to ``T / round(T / h)`` so the grid ends at ``T``.
    """
    if h <= 0:
        raise ValueError("step must be positive")
    if T < h * (1 - 1e-12):
        raise ValueError("duration must be at least one step")
    steps = max(1, int(round(T / h)))
    h_eff = T / steps
    rhs, jac = sys.compiled()
    z0 = np.asarray(z0, dtype=float)
    if z0.shape != (2 * sys.dof,):
        raise ValueError(f"initial state must have {2 * sys.dof} entries")
    Z = implicit_midpoint(rhs, jac, z0, h_eff, steps)
    t = np.linspace(0.0, T, steps + 1)
    n = sys.dof
    return Trajectory(t, Z[:, :n], Z[:, n:], sys)


def evolution_check(sys: HamiltonianSystem, f, gamma: Trajectory) -> float:
    """Max over interior samples of ``|d/dt f(gamma) - {H, f}(gamma)|``."""
    if len(gamma.t) < 3:
        raise ValueError("need at least three samples for a centered difference")
    f = as_expression(f)
    vals = gamma.values(f)
    br = gamma.values(coordinate_bracket(sys, sys.H, f))
    dt = (vals[2:] - vals[:-2]) / (gamma.t[2:] - gamma.t[:-2])
    return float(np.max(np.abs(dt - br[1:-1])))


# -- symmetries ------------------------------------------------------------------

@dataclass
class SymmetryReport:
    symplectic: Optional[bool]
    witness: Optional[Expression]
    conserved: Optional[bool]
    status: str
    closed_defect: Optional[DifferentialForm] = None
    drift: Optional[float] = None


def radial_primitive(alpha: DifferentialForm) -> Expression:
    """``f`` with ``df = alpha`` for a closed polynomial 1-form, ``f(0) = 0``.

    Uses ``f(x) = int_0^1 alpha_i(s x) x^i ds``, exact on monomials.
    """
    out = ZERO
    names = alpha.chart.names
    for (i,), c in alpha.items():
        xi = var(names[i])
        for coef, mono in c.terms():
            deg = sum(mono.values())
            term = Expression(Fraction(coef) / (deg + 1)) * xi
            for v, e in mono.items():
                term = term * var(v) ** e
            out = out + term
    return out


def classify_symmetry(sys: HamiltonianSystem, xi: MultiVector,
                      trajectory: Trajectory = None) -> SymmetryReport:
    """Classify a vector field as symplectic / Hamiltonian / Noether symmetry.

    The witness ``f`` satisfies ``xi _| Omega = -df``.
    """
    alpha = interior_product(xi, sys.omega)
    dalpha = exterior_derivative(alpha)
    undecided = False
    for _, c in dalpha.items():
        if not c.has_functions:
            return SymmetryReport(False, None, False, "not symplectic", dalpha)
        if not normalize_equal(c, 0):
            return SymmetryReport(False, None, False, "not symplectic", dalpha)
        undecided = True
    if undecided or any(not c.is_polynomial for _, c in alpha.items()):
        return SymmetryReport(True if not undecided else None, None, None, "undecided", dalpha)
    f = -radial_primitive(alpha)
    check = alpha + exterior_derivative(DifferentialForm.scalar(sys.chart, f))
    if not check.is_zero():
        raise InvariantViolation("radial primitive does not reproduce the closed form")
    conserved = normalize_equal(xi(sys.H), 0)
    report = SymmetryReport(True, f, conserved,
                            "conserved" if conserved else "hamiltonian", dalpha)
    if conserved and trajectory is not None:
        report.drift = evolution_check(sys, f, trajectory)
    return report


# -- extended phase space ----------------------------------------------------------

def extended_system(sys: HamiltonianSystem, time: str = "q0", energy: str = "p0") -> HamiltonianSystem:
    """Extended phase space with covariant Hamiltonian ``p0 + H``."""
    return HamiltonianSystem(var(energy) + sys.H, (time,) + sys.positions,
                             (energy,) + sys.momenta)


@dataclass
class PresymplecticReport:
    kernel_dims: List[int]
    probes: List[Dict[str, float]]
    kernel: MultiVector
    matches_flow: bool
    time_component: Expression
    flow_errors: List[float] = field(default_factory=list)
    flow_steps: List[float] = field(default_factory=list)

    @property
    def order_ratio(self) -> float:
        return self.flow_errors[0] / self.flow_errors[1]

    @property
    def ok(self) -> bool:
        return (all(k == 1 for k in self.kernel_dims) and self.matches_flow
                and not self.time_component.is_zero)


def constraint_surface(sys: HamiltonianSystem, time="q0", energy="p0"):
    """Chart map embedding ``{p0 = -H}`` in the extended phase space."""
    ext = extended_system(sys, time, energy)
    src_names = (time,) + sys.positions + sys.momenta
    src = Chart(src_names, ("generic",) * len(src_names))
    comps = {n: var(n) for n in src_names}
    comps[energy] = -sys.H
    return ext, ChartMap(src, ext.chart, comps)


def extended_presymplectic_check(sys: HamiltonianSystem, z0: Sequence[float] = None,
                                 T: float = 1.0, h: float = 1e-2,
                                 probes: int = PROBE_COUNT, seed: int = PROBE_SEED,
                                 time="q0", energy="p0") -> PresymplecticReport:
    """Check the presymplectic structure of the constraint surface ``p0 = -H``.

    (a) the pulled-back form has a one-dimensional kernel at seeded probes;
    (b) the kernel direction with unit ``dq0`` component equals
    ``d/dq0 + xi_H`` and its numerical flow tracks the Hamilton flow at second
    order (errors at steps ``h`` and ``h/2`` against a tight reference);
    (c) ``dq0`` does not vanish on the kernel.
    """
    from scipy.integrate import solve_ivp

    ext, incl = constraint_surface(sys, time, energy)
    src = incl.source
    omega_s = pullback(incl, ext.omega)
    pts = probe_points(src.names, probes, seed)
    dims = []
    for pt in pts:
        M = form_matrix(omega_s, pt)
        rank = np.linalg.matrix_rank(M)
        dims.append(src.dim - rank)
    # kernel vector normalized by its time component
    others = [n for n in src.names if n != time]
    cols = [interior_product(src.partial(n), omega_s) for n in others]
    rhs = -interior_product(src.partial(time), omega_s)
    keys = sorted(set(rhs.terms).union(*(c.terms for c in cols)))
    A = [[c.terms.get(k, ZERO) for c in cols] for k in keys]
    b = [rhs.terms.get(k, ZERO) for k in keys]
    sol = solve_linear(A, b)
    comps = {time: Expression(1)}
    comps.update(dict(zip(others, sol.values)))
    kernel = MultiVector.vector(src, comps)
    residual = interior_product(kernel, omega_s)
    if not residual.is_zero():
        raise InvariantViolation("kernel vector does not annihilate the presymplectic form")
    xh = hamiltonian_vector_field(sys, sys.H)
    matches = sol.unique and all(
        normalize_equal(kernel[n], xh[n]) for n in sys.chart.names
    )
    report = PresymplecticReport(dims, pts, kernel, matches, kernel[time])
    if z0 is not None:
        names = src.names
        fields = [kernel[n] for n in names]
        jac = [[differentiate(f, c) for c in names] for f in fields]
        fn = lambdify(fields, names)
        jn = lambdify([x for row in jac for x in row], names)
        dim = len(names)
        rhs_fn = lambda z: np.array(fn(*z), dtype=float)
        jac_fn = lambda z: np.array(jn(*z), dtype=float).reshape(dim, dim)
        frhs, _ = sys.compiled()
        ref = solve_ivp(lambda t, z: frhs(z), (0.0, T), np.asarray(z0, float),
                        method="DOP853", rtol=1e-13, atol=1e-13)
        z_ref = ref.y[:, -1]
        for step in (h, h / 2):
            steps = max(1, int(round(T / step)))
            Z = implicit_midpoint(rhs_fn, jac_fn, np.concatenate([[0.0], z0]), T / steps, steps)
            report.flow_errors.append(float(np.max(np.abs(Z[-1, 1:] - z_ref))))
            report.flow_steps.append(T / steps)
    return report


def _solve_binding(chi: Expression, chart: Chart):
    for name in sorted(chi.free_symbols, key=lambda n: (chart.role(n) != "p", chart.index(n))):
        c = differentiate(chi, name)
        if c.is_constant and not c.is_zero:
            rest = chi - c * var(name)
            if name not in rest.free_symbols:
                return name, -rest / c
    raise ValueError(f"cannot solve constraint {chi} for any coordinate")


def dirac_weak_check(sys_ext: HamiltonianSystem, observable, constraints: Sequence) -> bool:
    """True iff ``{O, chi}`` vanishes on the constraint set for every ``chi``."""
    O = as_expression(observable)
    chis = [as_expression(c) for c in constraints]
    bindings = {}
    for chi in chis:
        name, value = _solve_binding(substitute(chi, bindings), sys_ext.chart)
        bindings = {k: substitute(v, {name: value}) for k, v in bindings.items()}
        bindings[name] = value
    for chi in chis:
        if not substitute(chi, bindings).is_zero:
            raise ValueError(f"bindings do not solve constraint {chi}")
    for chi in chis:
        br = poisson_bracket(sys_ext, O, chi)
        if not normalize_equal(substitute(br, bindings), 0):
            return False
    return True
