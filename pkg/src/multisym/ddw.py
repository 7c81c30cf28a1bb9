"""Covariant (De Donder-Weyl) Hamiltonian field theory.

A DDW chart carries spacetime coordinates ``x^mu``, field values ``y^i``,
momenta ``p^mu_i`` and one energy variable ``e``. With
``vol = dx^1 ^ ... ^ dx^n`` and ``vol_mu = d/dx^mu _| vol``::

    theta = e vol + sum p^mu_i dy^i ^ vol_mu
    Omega = d theta = de ^ vol + sum dp^mu_i ^ dy^i ^ vol_mu

and a Hamiltonian n-curve with tangent ``X = X_1 ^ ... ^ X_n`` solves
``X _| Omega = (-1)^n d(e + H)`` modulo the ideal generated by the ``dx^mu``.
The n-vector is inserted into the leading slots of ``Omega`` (see
:mod:`multisym.exterior`).
"""
from __future__ import annotations

import csv
import itertools
import json
import os
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .expr import (
    ZERO,
    Expression,
    as_expression,
    differentiate,
    lambdify,
    substitute,
    var,
)
from .exterior import (
    Chart,
    ChartError,
    ChartMap,
    DifferentialForm,
    MultiVector,
    contract_numeric,
    exterior_derivative,
    interior_product,
    pullback,
)
from .linalg import solve_linear
from .mechanics import PROBE_COUNT, PROBE_SEED, InvariantViolation, probe_points


class LegendreError(ValueError):
    """The Legendre map is not invertible."""


class GridError(ValueError):
    pass


class CFLError(GridError):
    def __init__(self, ratio, limit):
        super().__init__(f"CFL ratio h_t/h_x = {ratio:.6g} exceeds {limit}")
        self.ratio = ratio
        self.limit = limit


# -- Legendre transform ----------------------------------------------------------

@dataclass
class Legendre:
    """Result of a Legendre transform.

    ``H`` is an :class:`Expression` when the velocities could be inverted
    symbolically (quadratic Lagrangians) and ``None`` otherwise, in which case
    ``numeric_H`` evaluates the Hamiltonian by Newton inversion.
    """
    H: Optional[Expression]
    inverse: Optional[Dict[str, Expression]]
    numeric_H: Callable
    numeric_inverse: Callable

    def __iter__(self):
        yield self.H if self.H is not None else self.numeric_H
        yield self.inverse if self.inverse is not None else self.numeric_inverse


def _legendre(L: Expression, base: Sequence[str], velocities: Sequence[str],
              momenta: Sequence[str], seed: int = PROBE_SEED) -> Legendre:
    L = as_expression(L)
    grad = [differentiate(L, v) for v in velocities]
    hess = [[differentiate(g, v) for v in velocities] for g in grad]
    names = list(base) + list(velocities)
    hfun = lambdify([h for row in hess for h in row], names)
    m = len(velocities)
    for pt in probe_points(names, PROBE_COUNT, seed):
        Hm = np.array(hfun(*[pt[n] for n in names]), dtype=float).reshape(m, m)
        if np.linalg.matrix_rank(Hm) < m:
            raise LegendreError(f"Legendre map is degenerate: velocity Hessian has rank "
                                f"{np.linalg.matrix_rank(Hm)} < {m} at {pt}")
    quadratic = all(not (set(h.free_symbols) & set(velocities)) for row in hess for h in row)

    gfun = lambdify(grad, names)
    Lfun = lambdify(L, names)

    def numeric_inverse(base_vals, p_vals, tol=1e-13, max_iter=50):
        z = np.zeros(m)
        p_vals = np.asarray(p_vals, dtype=float)
        for _ in range(max_iter):
            args = list(base_vals) + list(z)
            r = np.array(gfun(*args), dtype=float) - p_vals
            if np.max(np.abs(r)) <= tol * max(1.0, np.max(np.abs(p_vals))):
                return z
            J = np.array(hfun(*args), dtype=float).reshape(m, m)
            z = z - np.linalg.solve(J, r)
        raise LegendreError("Newton inversion of the Legendre map did not converge")

    def numeric_H(base_vals, p_vals):
        z = numeric_inverse(base_vals, p_vals)
        return float(np.dot(p_vals, z) - Lfun(*(list(base_vals) + list(z))))

    if not quadratic:
        return Legendre(None, None, numeric_H, numeric_inverse)
    zero_v = {v: 0 for v in velocities}
    b = [substitute(g, zero_v) for g in grad]
    sol = solve_linear(hess, [var(p) - bi for p, bi in zip(momenta, b)])
    inverse = dict(zip(velocities, sol.values))
    H = sum((var(p) * inverse[v] for p, v in zip(momenta, velocities)), ZERO) - substitute(L, inverse)
    return Legendre(H, inverse, numeric_H, numeric_inverse)


def legendre_mechanics(L, positions: Sequence[str] = ("q",), velocities: Sequence[str] = ("z",),
                       momenta: Sequence[str] = ("p",)) -> Legendre:
    """``H(q, p) = p . Z(q, p) - L(q, Z(q, p))`` with ``p = dL/dz``."""
    return _legendre(L, positions, velocities, momenta)


def _vel_name(mu, i, k):
    return f"v_{mu}" if k == 1 else f"v_{i}_{mu}"


def _mom_name(mu, i, k):
    return f"p_{mu}" if k == 1 else f"p_{mu}_{i}"


class LagrangianField:
    """A first-order Lagrangian ``L(x, y, v)`` with ``v^i_mu = dy^i/dx^mu``."""

    def __init__(self, lagrangian, spacetime: Sequence[str] = ("t", "x"),
                 fields: Sequence[str] = ("y",), velocities: Mapping[Tuple[str, str], str] = None,
                 parameters: Mapping[str, object] = None, check: bool = True):
        self.spacetime = tuple(spacetime)
        self.fields = tuple(fields)
        k = len(self.fields)
        self.velocities = {(mu, i): _vel_name(mu, i, k) for i in self.fields for mu in self.spacetime}
        if velocities:
            self.velocities.update(velocities)
        self.parameters = dict(parameters or {})
        L = as_expression(lagrangian)
        if self.parameters:
            L = substitute(L, self.parameters)
        known = set(self.spacetime) | set(self.fields) | set(self.velocities.values())
        stray = sorted(set(L.free_symbols) - known)
        if stray:
            raise ValueError(f"Lagrangian uses undeclared symbols {stray}")
        self.L = L
        if check:
            _legendre(L, self.spacetime + self.fields, self.velocity_names, self.velocity_names)

    @property
    def n(self):
        return len(self.spacetime)

    @property
    def k(self):
        return len(self.fields)

    @property
    def velocity_names(self) -> List[str]:
        return [self.velocities[(mu, i)] for i in self.fields for mu in self.spacetime]


# -- DDW system --------------------------------------------------------------------

class DDWSystem:
    """DDW Hamiltonian ``H(x, y, p)`` with covariant Hamiltonian ``e + H``."""

    def __init__(self, hamiltonian, spacetime: Sequence[str] = ("t", "x"),
                 fields: Sequence[str] = ("y",), energy: str = "e",
                 momenta: Mapping[Tuple[str, str], str] = None,
                 parameters: Mapping[str, object] = None, check: bool = True):
        self.spacetime = tuple(spacetime)
        self.fields = tuple(fields)
        k = len(self.fields)
        self.momenta = {(mu, i): _mom_name(mu, i, k) for i in self.fields for mu in self.spacetime}
        if momenta:
            self.momenta.update(momenta)
        mom_items = [((mu, i), self.momenta[(mu, i)]) for i in self.fields for mu in self.spacetime]
        names = list(self.spacetime) + list(self.fields) + [n for _, n in mom_items] + [energy]
        roles = (["spacetime"] * self.n + ["field"] * k + ["momentum"] * len(mom_items) + ["energy"])
        labels = [None] * (self.n + k) + [lab for lab, _ in mom_items] + [None]
        self.chart = Chart(names, roles, labels)
        self.energy = energy
        self.parameters = dict(parameters or {})
        H = as_expression(hamiltonian)
        if self.parameters:
            H = substitute(H, self.parameters)
        stray = sorted(s for s in H.free_symbols if s not in self.chart)
        if stray:
            raise ValueError(f"Hamiltonian uses undeclared symbols {stray}")
        if energy in H.free_symbols:
            raise InvariantViolation("H must not depend on the energy variable")
        self.H = H
        self.calH = var(energy) + H
        self.theta, self.omega = self._forms()
        if check:
            if not exterior_derivative(self.omega).is_zero():
                raise InvariantViolation("DDW form is not closed")
            if differentiate(self.calH, energy) != Expression(1):
                raise InvariantViolation("covariant Hamiltonian must be e + H")

    @property
    def n(self):
        return len(self.spacetime)

    @property
    def k(self):
        return len(self.fields)

    def volume(self) -> DifferentialForm:
        return self.chart.volume(self.spacetime)

    def volume_mu(self, mu: str) -> DifferentialForm:
        return interior_product(self.chart.partial(mu), self.volume())

    def _forms(self):
        c = self.chart
        theta = self.volume() * var(self.energy)
        for (mu, i), p in self.momenta.items():
            theta = theta + (c.d(i) ^ self.volume_mu(mu)) * var(p)
        return theta, exterior_derivative(theta)

    def __repr__(self):
        return f"DDWSystem(H={self.H}, chart={list(self.chart.names)})"


def legendre_field(Lf: LagrangianField, energy: str = "e") -> DDWSystem:
    """``p^mu_i = dL/dv^i_mu`` and ``H = p^mu_i v^i_mu - L``."""
    vel = Lf.velocity_names
    keys = [(mu, i) for i in Lf.fields for mu in Lf.spacetime]
    moms = [_mom_name(mu, i, Lf.k) for mu, i in keys]
    leg = _legendre(Lf.L, Lf.spacetime + Lf.fields, vel, moms)
    if leg.H is None:
        raise LegendreError("velocities can only be inverted symbolically for Lagrangians "
                            "quadratic in the field derivatives")
    return DDWSystem(leg.H, Lf.spacetime, Lf.fields, energy, dict(zip(keys, moms)))


def ddw_from_mechanics(sys, time: str = "t", energy: str = "e") -> DDWSystem:
    """The n = 1 DDW system of a mechanical Hamiltonian."""
    moms = {(time, q): p for q, p in zip(sys.positions, sys.momenta)}
    return DDWSystem(sys.H, (time,), sys.positions, energy, moms)


# -- universal multisymplectic form ------------------------------------------------------

def universal_chart(spacetime: Sequence[str], fields: Sequence[str], prefix: str = "P") -> Chart:
    """Chart of the n-forms on ``Z = (x, y)``: base plus one momentum per n-subset."""
    base = list(spacetime) + list(fields)
    n = len(spacetime)
    names, roles, labels = list(base), ["spacetime"] * n + ["field"] * len(fields), [None] * len(base)
    for sub in itertools.combinations(base, n):
        names.append(prefix + "_" + "_".join(sub))
        roles.append("multimomentum")
        labels.append(sub)
    return Chart(names, roles, labels)


@dataclass
class UniversalForm:
    chart: Chart
    theta: DifferentialForm
    omega: DifferentialForm
    n: int


def universal_multisymplectic_form(chart: Chart) -> UniversalForm:
    """``theta = sum p_I dq^I`` and ``Omega = d theta = sum dp_I ^ dq^I``."""
    moms = chart.with_role("multimomentum")
    if not moms:
        raise ChartError("chart declares no multimomenta")
    base = [nm for nm in chart.names if chart.role(nm) != "multimomentum"]
    n = len(chart.label(moms[0]))
    order = {nm: i for i, nm in enumerate(base)}
    have = {tuple(sorted(chart.label(m), key=order.get)) for m in moms}
    want = set(itertools.combinations(base, n))
    if have != want or len(moms) != len(want):
        raise ChartError(f"chart must declare exactly one multimomentum per {n}-subset of {base}")
    theta = DifferentialForm.zero(chart, n)
    for m in moms:
        theta = theta + chart.volume(chart.label(m)) * var(m)
    omega = exterior_derivative(theta)
    if not exterior_derivative(omega).is_zero():
        raise InvariantViolation("universal form is not closed")
    return UniversalForm(chart, theta, omega, n)


def poincare_cartan_check(U: UniversalForm, probes: int = PROBE_COUNT, seed: int = PROBE_SEED) -> float:
    """Spot-check ``theta_(q,p)(V_1..V_n) = p(pi_* V_1, ..., pi_* V_n)``.

    ``pi`` forgets the multimomenta. Returns the max deviation over seeded
    random points and vectors.
    """
    chart = U.chart
    rng = np.random.default_rng(seed)
    base_idx = [i for i, r in enumerate(chart.roles) if r != "multimomentum"]
    worst = 0.0
    for _ in range(probes):
        pt = dict(zip(chart.names, rng.uniform(-1, 1, chart.dim)))
        vecs = [rng.uniform(-1, 1, chart.dim) for _ in range(U.n)]
        lhs = contract_numeric(U.theta, pt, vecs).get((), 0.0)
        proj = [np.where(np.isin(np.arange(chart.dim), base_idx), v, 0.0) for v in vecs]
        rhs = 0.0
        for m in chart.with_role("multimomentum"):
            idx = [chart.index(b) for b in chart.label(m)]
            M = np.array([[v[i] for i in idx] for v in proj])
            rhs += pt[m] * np.linalg.det(M)
        worst = max(worst, abs(lhs - rhs))
    return worst


def ddw_identification(U: UniversalForm, sys: DDWSystem) -> ChartMap:
    """Embedding of the DDW chart into the universal chart.

    Higher multimomenta (two or more field indices) are set to zero, the
    all-spacetime momentum becomes ``e`` and the momentum dual to
    ``dy^i ^ vol_mu`` becomes ``p^mu_i`` with the sign fixed by comparing the
    Liouville forms.
    """
    uc = U.chart
    for nm in sys.spacetime + sys.fields:
        if nm not in uc:
            raise ChartError(f"universal chart lacks base coordinate {nm!r}")
        want = "spacetime" if nm in sys.spacetime else "field"
        if uc.role(nm) != want:
            raise ChartError(f"role tag of {nm!r} is {uc.role(nm)!r}, expected {want!r}")
    if U.n != sys.n:
        raise ChartError("form degree does not match the number of spacetime coordinates")
    dc = sys.chart
    comps: Dict[str, object] = {nm: var(nm) for nm in sys.spacetime + sys.fields}
    for m in uc.with_role("multimomentum"):
        lab = uc.label(m)
        nf = [b for b in lab if b in sys.fields]
        if not nf:
            comps[m] = var(sys.energy)
        elif len(nf) == 1:
            i = nf[0]
            (mu,) = [s for s in sys.spacetime if s not in lab]
            target = dc.d(i) ^ sys.volume_mu(mu)
            basis = dc.volume(lab)
            ((key, c),) = target.items()
            ((key2, c2),) = basis.items()
            assert key == key2
            comps[m] = var(sys.momenta[(mu, i)]) * (c / c2)
        else:
            comps[m] = 0
    return ChartMap(dc, uc, comps)


def restrict_to_ddw(U: UniversalForm, sys: DDWSystem) -> DifferentialForm:
    """Pull the universal form back to the DDW chart (higher momenta set to zero)."""
    return pullback(ddw_identification(U, sys), U.omega)


def higher_momenta(U: UniversalForm, sys: DDWSystem) -> List[str]:
    """Multimomenta carrying two or more field indices."""
    return [m for m in U.chart.with_role("multimomentum")
            if sum(b in sys.fields for b in U.chart.label(m)) >= 2]


# -- discrete n-curves -------------------------------------------------------------------

@dataclass
class DiscreteGamma:
    """Samples of a field and its momenta on a rectangular grid.

    Arrays are indexed ``[component..., i_t, i_x]``: ``y`` has shape
    ``(k, *grid)`` and ``p`` has shape ``(n, k, *grid)`` with
    ``p[mu, i] = p^mu_i``. Periodic axes do not repeat the endpoint.
    """
    system: DDWSystem
    axes: Tuple[np.ndarray, ...]
    y: np.ndarray
    p: Optional[np.ndarray] = None
    e: Optional[np.ndarray] = None
    periodic: Tuple[bool, ...] = None
    graph: bool = field(default=True, init=False)

    def __post_init__(self):
        sys = self.system
        self.axes = tuple(np.asarray(a, dtype=float) for a in self.axes)
        if len(self.axes) != sys.n:
            raise GridError(f"need {sys.n} grid axes")
        if self.periodic is None:
            self.periodic = (False,) * sys.n
        self.periodic = tuple(bool(b) for b in self.periodic)
        if self.periodic[0]:
            raise GridError("the time axis cannot be periodic")
        for a in self.axes:
            if a.size < 2:
                raise GridError("each axis needs at least two samples")
            d = np.diff(a)
            if np.any(d <= 0) or np.max(np.abs(d - d[0])) > 1e-9 * abs(d[0]):
                raise GridError("grid axes must be uniform and increasing")
        shape = self.shape
        self.y = np.asarray(self.y, dtype=float).reshape((sys.k,) + shape)
        if self.p is not None:
            self.p = np.asarray(self.p, dtype=float).reshape((sys.n, sys.k) + shape)
        if self.e is not None:
            self.e = np.asarray(self.e, dtype=float).reshape(shape)

    @property
    def shape(self):
        return tuple(a.size for a in self.axes)

    @property
    def steps(self):
        return tuple(float(a[1] - a[0]) for a in self.axes)

    def mesh(self):
        return np.meshgrid(*self.axes, indexing="ij")

    def arrays(self) -> Dict[str, np.ndarray]:
        """Full-grid samples of every chart coordinate that is available."""
        sys = self.system
        out = dict(zip(sys.spacetime, self.mesh()))
        for a, i in enumerate(sys.fields):
            out[i] = self.y[a]
        if self.p is not None:
            for m, mu in enumerate(sys.spacetime):
                for a, i in enumerate(sys.fields):
                    out[sys.momenta[(mu, i)]] = self.p[m, a]
        if self.e is not None:
            out[sys.energy] = self.e
        return out

    def evaluate(self, expr, arrays=None) -> np.ndarray:
        arrays = self.arrays() if arrays is None else arrays
        expr = as_expression(expr)
        names = sorted(expr.free_symbols)
        missing = [nm for nm in names if nm not in arrays]
        if missing:
            raise GridError(f"no samples for {missing}")
        val = lambdify(expr, names)(*[arrays[nm] for nm in names])
        shape = next(iter(arrays.values())).shape
        return np.broadcast_to(np.asarray(val, dtype=float), shape).copy()

    def fill_energy(self) -> "DiscreteGamma":
        """Set ``e = -H`` pointwise so the samples lie on ``e + H = 0``."""
        if self.p is None:
            raise GridError("momenta are required to evaluate H")
        self.e = -self.evaluate(self.system.H)
        return self

    # finite differences
    def interior(self, width: int = 1) -> Tuple[slice, ...]:
        return tuple(slice(None) if per else slice(width, -width) for per in self.periodic)

    def diff(self, arr: np.ndarray, axis: int) -> np.ndarray:
        """Centered difference along a grid axis (full grid, edges invalid)."""
        h = self.steps[axis]
        ax = arr.ndim - len(self.shape) + axis
        if self.periodic[axis]:
            return (np.roll(arr, -1, axis=ax) - np.roll(arr, 1, axis=ax)) / (2 * h)
        out = np.full(arr.shape, np.nan)
        lo = [slice(None)] * arr.ndim
        hi = [slice(None)] * arr.ndim
        mid = [slice(None)] * arr.ndim
        lo[ax], hi[ax], mid[ax] = slice(None, -2), slice(2, None), slice(1, -1)
        out[tuple(mid)] = (arr[tuple(hi)] - arr[tuple(lo)]) / (2 * h)
        return out

    def _need(self, width):
        for n_, per in zip(self.shape, self.periodic):
            if not per and n_ < 2 * width + 1:
                raise GridError(f"grid too small for a stencil of half-width {width}")

    # export
    def to_json(self) -> str:
        sys = self.system
        doc = {
            "spacetime": list(sys.spacetime),
            "fields": list(sys.fields),
            "hamiltonian": str(sys.H),
            "axes": [a.tolist() for a in self.axes],
            "periodic": list(self.periodic),
            "y": self.y.tolist(),
            "p": None if self.p is None else self.p.tolist(),
            "e": None if self.e is None else self.e.tolist(),
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str, system: DDWSystem = None) -> "DiscreteGamma":
        doc = json.loads(text)
        if system is None:
            system = DDWSystem(doc["hamiltonian"], doc["spacetime"], doc["fields"])
        return cls(system, tuple(np.array(a) for a in doc["axes"]), np.array(doc["y"]),
                   None if doc["p"] is None else np.array(doc["p"]),
                   None if doc["e"] is None else np.array(doc["e"]), tuple(doc["periodic"]))

    def to_csv(self, directory) -> List[str]:
        """One CSV per variable; first line is a ``#`` metadata header."""
        os.makedirs(directory, exist_ok=True)
        meta = "# " + " ".join(
            f"{nm}:start={float(a[0])!r},step={b!r},count={a.size},periodic={per}"
            for nm, a, b, per in zip(self.system.spacetime, self.axes, self.steps, self.periodic))
        written = []
        for nm, arr in self.arrays().items():
            if nm in self.system.spacetime:
                continue
            path = os.path.join(directory, f"{nm}.csv")
            with open(path, "w", newline="") as fh:
                fh.write(meta + "\n")
                w = csv.writer(fh)
                for row in np.atleast_2d(arr):
                    w.writerow([format(v, ".17g") for v in np.atleast_1d(row)])
            written.append(path)
        return written


def gamma_from_trajectory(traj, time: str = "t", energy: str = "e") -> DiscreteGamma:
    """View a mechanics trajectory as a discrete 1-curve of the n = 1 DDW system."""
    sys = ddw_from_mechanics(traj.system, time, energy)
    g = DiscreteGamma(sys, (traj.t,), traj.q.T, traj.p.T[None, :, :])
    return g.fill_energy()


def sample_gamma(sys: DDWSystem, axes, y_exprs, p_exprs=None, periodic=None) -> DiscreteGamma:
    """Sample closed-form fields (and optionally momenta) on a grid."""
    g = DiscreteGamma(sys, tuple(axes), np.zeros((sys.k,) + tuple(len(a) for a in axes)),
                      periodic=periodic)
    arrays = dict(zip(sys.spacetime, g.mesh()))
    g.y = np.stack([g.evaluate(as_expression(e), arrays) for e in y_exprs])
    if p_exprs is not None:
        g.p = np.stack([np.stack([g.evaluate(as_expression(p_exprs[m][a]), arrays)
                                  for a in range(sys.k)]) for m in range(sys.n)])
        g.fill_energy()
    return g


# -- residuals -------------------------------------------------------------------

@dataclass
class Residual:
    components: Dict[str, np.ndarray]

    @property
    def max(self) -> float:
        return max((float(np.max(np.abs(v))) if v.size else 0.0) for v in self.components.values())


def euler_lagrange_residual(Lf: LagrangianField, gamma: DiscreteGamma) -> Residual:
    """``d_mu (dL/dv^i_mu) - dL/dy^i`` with nested centered differences.

    Reported on points two cells away from non-periodic edges.
    """
    gamma._need(2)
    base = dict(zip(Lf.spacetime, gamma.mesh()))
    for a, i in enumerate(Lf.fields):
        base[i] = gamma.y[a]
    for m, mu in enumerate(Lf.spacetime):
        for a, i in enumerate(Lf.fields):
            base[Lf.velocities[(mu, i)]] = gamma.diff(gamma.y[a], m)
    sl = gamma.interior(2)
    out = {}
    for a, i in enumerate(Lf.fields):
        div = 0.0
        for m, mu in enumerate(Lf.spacetime):
            P = gamma.evaluate(differentiate(Lf.L, Lf.velocities[(mu, i)]), base)
            div = div + gamma.diff(P, m)
        r = div - gamma.evaluate(differentiate(Lf.L, i), base)
        out[i] = r[sl]
    return Residual(out)


def ddw_residual(sys: DDWSystem, gamma: DiscreteGamma) -> Residual:
    """The two DDW families on interior points.

    ``dy^i/dx^mu - dH/dp^mu_i`` keyed by the momentum name and
    ``sum_mu dp^mu_i/dx^mu + dH/dy^i`` keyed by the field name.
    """
    if gamma.p is None:
        raise GridError("DDW residual needs momentum samples")
    gamma._need(1)
    arrs = gamma.arrays()
    sl = gamma.interior(1)
    out = {}
    for a, i in enumerate(sys.fields):
        for m, mu in enumerate(sys.spacetime):
            p = sys.momenta[(mu, i)]
            r = gamma.diff(gamma.y[a], m) - gamma.evaluate(differentiate(sys.H, p), arrs)
            out[p] = r[sl]
    for a, i in enumerate(sys.fields):
        div = sum(gamma.diff(gamma.p[m, a], m) for m in range(sys.n))
        out[i] = (div + gamma.evaluate(differentiate(sys.H, i), arrs))[sl]
    return Residual(out)


def tangent_vectors(gamma: DiscreteGamma) -> List[np.ndarray]:
    """``X_mu`` = column mu of the Jacobian of the graph map, on interior points."""
    sys = gamma.system
    if gamma.e is None:
        raise GridError("geometric residual needs energy samples (call fill_energy)")
    arrs = gamma.arrays()
    sl = gamma.interior(1)
    vecs = []
    for m, mu in enumerate(sys.spacetime):
        comps = []
        for nm in sys.chart.names:
            if nm in sys.spacetime:
                val = 1.0 if nm == mu else 0.0
                comps.append(np.full(arrs[nm][sl].shape, val))
            else:
                comps.append(gamma.diff(arrs[nm], m)[sl])
        vecs.append(np.stack(comps))
    return vecs


def geometric_residual(sys: DDWSystem, gamma: DiscreteGamma) -> Residual:
    """``X _| Omega - (-1)^n d(e + H)`` with the ``dx^mu`` components dropped.

    Keyed by the coordinate whose differential carries the component.
    """
    gamma._need(1)
    vecs = tangent_vectors(gamma)
    sl = gamma.interior(1)
    point = {nm: a[sl] for nm, a in gamma.arrays().items()}
    contracted = contract_numeric(sys.omega, point, vecs)
    sign = (-1) ** sys.n
    out = {}
    shape = vecs[0].shape[1:]
    for idx, nm in enumerate(sys.chart.names):
        if nm in sys.spacetime:
            continue
        dH = gamma.evaluate(differentiate(sys.calH, nm), point) if point else 0.0
        out[nm] = np.broadcast_to(contracted.get((idx,), 0.0) - sign * dH, shape).copy()
    return Residual(out)


def equivalence_signs(sys: DDWSystem) -> Dict[str, int]:
    """Signs relating geometric and coordinate residual components.

    Expands ``X _| Omega - (-1)^n d(e + H)`` with symbolic tangent data and
    verifies it equals ``sign * (coordinate residual)`` componentwise, the
    energy component vanishing identically. Raises on failure.
    """
    c = sys.chart
    sym = {}
    vecs = []
    for mu in sys.spacetime:
        comps = {}
        for nm in c.names:
            if nm in sys.spacetime:
                comps[nm] = 1 if nm == mu else 0
            else:
                sym[(mu, nm)] = var(f"D__{mu}__{nm}")
                comps[nm] = sym[(mu, nm)]
        vecs.append(MultiVector.vector(c, comps))
    X = MultiVector.from_vectors(vecs)
    form = interior_product(X, sys.omega)
    dH = exterior_derivative(DifferentialForm.scalar(c, sys.calH)) * ((-1) ** sys.n)
    R = form - dH
    signs = {}
    for nm in c.names:
        if nm in sys.spacetime:
            continue
        comp = R.terms.get((c.index(nm),), ZERO)
        if nm == sys.energy:
            if not comp.is_zero:
                raise InvariantViolation(f"energy component does not vanish: {comp}")
            continue
        if c.role(nm) == "momentum":
            mu, i = c.label(nm)
            coord = sym[(mu, i)] - differentiate(sys.H, nm)
        else:
            coord = sum((sym[(mu, sys.momenta[(mu, nm)])] for mu in sys.spacetime), ZERO) \
                + differentiate(sys.H, nm)
        for s in (1, -1):
            if (comp - coord * s).is_zero:
                signs[nm] = s
                break
        else:
            raise InvariantViolation(f"component d{nm} is not proportional to its DDW equation")
    return signs


def residual_equivalence(sys: DDWSystem, gamma: DiscreteGamma) -> float:
    """Max relative deviation between geometric and coordinate residuals."""
    signs = equivalence_signs(sys)
    geo = geometric_residual(sys, gamma).components
    crd = ddw_residual(sys, gamma).components
    worst = 0.0
    for nm, s in signs.items():
        scale = max(1.0, float(np.max(np.abs(crd[nm]))))
        worst = max(worst, float(np.max(np.abs(geo[nm] - s * crd[nm]))) / scale)
    return worst


# -- Klein-Gordon type solver ------------------------------------------------------------

CFL_LIMIT = 0.9


def _periodic_dx(u, h):
    return (np.roll(u, -1, axis=-1) - np.roll(u, 1, axis=-1)) / (2 * h)


def solve_field(sys: DDWSystem, u0, v0, T: float, X: float, nt: int, nx: int) -> DiscreteGamma:
    """Stormer-Verlet on the DDW variables of a wave-type system.

    Requires ``n = 2``, ``k = 1`` and ``H = (p_t^2 - p_x^2)/2 + V(x, y)``.
    The grid has ``nt`` time steps over ``[0, T]`` and ``nx`` periodic cells
    over ``[0, X)``. ``p_x = -D u`` with the centered difference ``D``, so
    the update is ``u' = p_t``, ``p_t' = D D u - dV/dy``. ``u0`` and ``v0``
    are expressions in the spatial coordinate or callables.
    """
    if sys.n != 2 or sys.k != 1:
        raise ValueError("solver handles one field on 1+1 spacetime")
    t_name, x_name = sys.spacetime
    (y_name,) = sys.fields
    pt, px = sys.momenta[(t_name, y_name)], sys.momenta[(x_name, y_name)]
    if not (differentiate(sys.H, pt) - var(pt)).is_zero or not (differentiate(sys.H, px) + var(px)).is_zero:
        raise ValueError("solver needs dH/dp_t = p_t and dH/dp_x = -p_x")
    V = substitute(sys.H, {pt: 0, px: 0})
    if t_name in V.free_symbols:
        raise ValueError("potential must not depend on time")
    ht, hx = T / nt, X / nx
    if ht / hx > CFL_LIMIT:
        raise CFLError(ht / hx, CFL_LIMIT)
    t = np.linspace(0.0, T, nt + 1)
    x = np.arange(nx) * hx

    def sample(f):
        if callable(f) and not isinstance(f, Expression):
            return np.broadcast_to(np.asarray(f(x), dtype=float), x.shape).copy()
        e = as_expression(f)
        names = sorted(e.free_symbols)
        if set(names) - {x_name}:
            raise ValueError(f"initial data may only depend on {x_name}")
        return np.broadcast_to(np.asarray(lambdify(e, names)(*[x] * len(names)), dtype=float),
                               x.shape).copy()

    dV = lambdify(differentiate(V, y_name), [x_name, y_name])

    def force(u):
        return _periodic_dx(_periodic_dx(u, hx), hx) - np.broadcast_to(dV(x, u), u.shape)

    U = np.empty((nt + 1, nx))
    PT = np.empty((nt + 1, nx))
    U[0], PT[0] = sample(u0), sample(v0)
    f = force(U[0])
    for n in range(nt):
        half = PT[n] + 0.5 * ht * f
        U[n + 1] = U[n] + ht * half
        f = force(U[n + 1])
        PT[n + 1] = half + 0.5 * ht * f
        if not np.all(np.isfinite(U[n + 1])):
            raise GridError(f"non-finite field at step {n}")
    PX = -_periodic_dx(U, hx)
    g = DiscreteGamma(sys, (t, x), U[None], np.stack([PT[None], PX[None]]), periodic=(False, True))
    return g.fill_energy()


def energy_density(sys: DDWSystem) -> Expression:
    """``H - sum_{mu != 0} p^mu_i dH/dp^mu_i``, the conserved density for time translations."""
    out = sys.H
    for (mu, i), p in sys.momenta.items():
        if mu != sys.spacetime[0]:
            out = out - var(p) * differentiate(sys.H, p)
    return out


def energy(gamma: DiscreteGamma) -> np.ndarray:
    """Rectangle-rule integral of the energy density over each time slice."""
    sys = gamma.system
    dens = gamma.evaluate(energy_density(sys))
    if sys.n == 1:
        return dens
    return dens.reshape(dens.shape[0], -1).sum(axis=1) * float(np.prod(gamma.steps[1:]))
