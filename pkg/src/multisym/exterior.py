"""Charts, differential forms and multivectors with exact coefficients.

Forms and multivectors are stored sparsely: a mapping from strictly increasing
tuples of chart positions to nonzero :class:`~multisym.expr.Expression`
coefficients.

Contraction convention: a k-vector is inserted into the *leading* slots of a
form, in the order its factors are written::

    (X1 ^ ... ^ Xk) _| w  =  w(X1, ..., Xk, . , ..., .)

so that for a single vector the usual alternating sum is recovered, and
``(xi_f ^ xi_g) _| Omega = Omega(xi_f, xi_g)``.
"""
from __future__ import annotations

import itertools
import json
from typing import Dict, Iterable, Mapping, Optional, Sequence, Tuple

import numpy as np

from .expr import (
    ONE,
    ZERO,
    Expression,
    as_expression,
    differentiate,
    lambdify,
    substitute,
    var,
)

ROLES = ("generic", "q", "p", "spacetime", "field", "momentum", "multimomentum", "energy")


class ChartError(ValueError):
    pass


class ChartMismatchError(ChartError):
    pass


class DegreeError(ValueError):
    pass


class Chart:
    """An ordered list of coordinate names tagged with roles.

    ``labels`` carries role metadata: for ``momentum`` coordinates of a
    De Donder-Weyl chart the pair ``(spacetime_name, field_name)``; for
    ``multimomentum`` coordinates the sorted tuple of base coordinate names
    they are conjugate to.
    """

    __slots__ = ("names", "roles", "labels", "_index")

    def __init__(self, names: Sequence[str], roles: Sequence[str] = None,
                 labels: Sequence[Optional[tuple]] = None):
        names = tuple(names)
        roles = tuple(roles) if roles is not None else ("generic",) * len(names)
        labels = tuple(labels) if labels is not None else (None,) * len(names)
        if len(roles) != len(names) or len(labels) != len(names):
            raise ChartError("names, roles and labels must have equal length")
        if len(set(names)) != len(names):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise ChartError(f"duplicate coordinate names: {dup}")
        for n in names:
            var(n)  # validates identifier
        for r in roles:
            if r not in ROLES:
                raise ChartError(f"unknown role {r!r}")
        if roles.count("energy") > 1:
            raise ChartError("a chart carries at most one energy coordinate")
        base = {n for n, r in zip(names, roles) if r in ("spacetime", "field", "q", "generic")}
        for n, r, lab in zip(names, roles, labels):
            if r == "momentum":
                if lab is None or len(lab) != 2:
                    raise ChartError(f"momentum {n!r} needs a (spacetime, field) label")
                mu, i = lab
                if mu not in names or roles[names.index(mu)] != "spacetime":
                    raise ChartError(f"momentum {n!r}: {mu!r} is not a spacetime coordinate")
                if i not in names or roles[names.index(i)] != "field":
                    raise ChartError(f"momentum {n!r}: {i!r} is not a field coordinate")
            if r == "multimomentum":
                if lab is None or not set(lab) <= base:
                    raise ChartError(f"multimomentum {n!r} has an invalid multi-index {lab!r}")
        self.names = names
        self.roles = roles
        self.labels = tuple(tuple(l) if l is not None else None for l in labels)
        self._index = {n: i for i, n in enumerate(names)}

    @property
    def dim(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise ChartError(f"coordinate {name!r} is not on chart {self.names}") from None

    def __contains__(self, name):
        return name in self._index

    def with_role(self, role: str) -> Tuple[str, ...]:
        return tuple(n for n, r in zip(self.names, self.roles) if r == role)

    def role(self, name: str) -> str:
        return self.roles[self.index(name)]

    def label(self, name: str):
        return self.labels[self.index(name)]

    def coord(self, name: str) -> Expression:
        self.index(name)
        return var(name)

    def coords(self) -> Tuple[Expression, ...]:
        return tuple(var(n) for n in self.names)

    def d(self, name: str) -> "DifferentialForm":
        return DifferentialForm(self, 1, {(self.index(name),): ONE})

    def partial(self, name: str) -> "MultiVector":
        return MultiVector(self, 1, {(self.index(name),): ONE})

    def volume(self, names: Sequence[str]) -> "DifferentialForm":
        """``d(names[0]) ^ d(names[1]) ^ ...``"""
        out = DifferentialForm.scalar(self, 1)
        for n in names:
            out = wedge(out, self.d(n))
        return out

    def __eq__(self, other):
        return (isinstance(other, Chart) and self.names == other.names
                and self.roles == other.roles and self.labels == other.labels)

    def __hash__(self):
        return hash((self.names, self.roles, self.labels))

    def __repr__(self):
        return f"Chart({list(self.names)})"

    def to_dict(self):
        out = {"coordinates": list(self.names), "roles": list(self.roles)}
        if any(l is not None for l in self.labels):
            out["labels"] = [list(l) if l is not None else None for l in self.labels]
        return out

    @classmethod
    def from_dict(cls, d):
        labels = d.get("labels")
        if labels is not None:
            labels = [tuple(l) if l is not None else None for l in labels]
        return cls(d["coordinates"], d.get("roles"), labels)


def _check_key(key, dim):
    if any(a >= b for a, b in zip(key, key[1:])):
        raise ValueError(f"multi-index {key} is not strictly increasing")
    if key and (key[0] < 0 or key[-1] >= dim):
        raise ValueError(f"multi-index {key} out of range for dimension {dim}")


def _merge_sign(a: Tuple[int, ...], b: Tuple[int, ...]):
    """Sign and sorted key of the concatenation ``a + b`` (0 if they overlap)."""
    if set(a) & set(b):
        return 0, None
    inversions = sum(1 for x in a for y in b if y < x)
    return (-1 if inversions % 2 else 1), tuple(sorted(a + b))


def _split_sign(key: Tuple[int, ...], front: Tuple[int, ...]):
    """Sign s with ``dx^key = s * dx^front ^ dx^rest``."""
    rest = tuple(i for i in key if i not in front)
    inversions = sum(1 for x in front for y in rest if y < x)
    return (-1 if inversions % 2 else 1), rest


class _Alternating:
    __slots__ = ("chart", "degree", "_terms")
    kind = "alternating"

    def __init__(self, chart: Chart, degree: int, terms: Mapping[Tuple[int, ...], object] = None):
        if degree < 0:
            raise DegreeError(f"negative degree {degree}")
        clean = {}
        for key, c in (terms or {}).items():
            key = tuple(key)
            if len(key) != degree:
                raise DegreeError(f"key {key} does not match degree {degree}")
            _check_key(key, chart.dim)
            c = as_expression(c)
            if not c.is_zero:
                clean[key] = c
        self.chart = chart
        self.degree = degree
        self._terms = clean

    @classmethod
    def _raw(cls, chart, degree, terms):
        obj = cls.__new__(cls)
        obj.chart, obj.degree = chart, degree
        obj._terms = {k: v for k, v in terms.items() if not v.is_zero}
        return obj

    @classmethod
    def zero(cls, chart, degree):
        return cls._raw(chart, degree, {})

    @classmethod
    def scalar(cls, chart, f):
        return cls(chart, 0, {(): f})

    @property
    def terms(self) -> Dict[Tuple[int, ...], Expression]:
        return dict(self._terms)

    def items(self):
        return sorted(self._terms.items())

    def __getitem__(self, names) -> Expression:
        if isinstance(names, str):
            names = (names,)
        idx = [self.chart.index(n) for n in names]
        key = tuple(sorted(idx))
        if len(set(idx)) != len(idx):
            return ZERO
        inversions = sum(1 for a, b in itertools.combinations(idx, 2) if a > b)
        c = self._terms.get(key, ZERO)
        return -c if inversions % 2 else c

    def is_zero(self) -> bool:
        return not self._terms

    def _same(self, other):
        if type(other) is not type(self):
            raise TypeError(f"cannot combine {type(self).__name__} with {type(other).__name__}")
        if other.chart != self.chart:
            raise ChartMismatchError("operands live on different charts")
        if other.degree != self.degree:
            raise DegreeError(f"degree mismatch {self.degree} vs {other.degree}")

    def __add__(self, other):
        self._same(other)
        out = dict(self._terms)
        for k, v in other._terms.items():
            out[k] = out[k] + v if k in out else v
        return type(self)._raw(self.chart, self.degree, out)

    def __sub__(self, other):
        return self + (-other)

    def __neg__(self):
        return type(self)._raw(self.chart, self.degree, {k: -v for k, v in self._terms.items()})

    def __mul__(self, f):
        if isinstance(f, _Alternating):
            return NotImplemented
        f = as_expression(f)
        return type(self)._raw(self.chart, self.degree, {k: v * f for k, v in self._terms.items()})

    __rmul__ = __mul__

    def __xor__(self, other):
        return wedge(self, other)

    def __eq__(self, other):
        return (type(other) is type(self) and other.chart == self.chart
                and other.degree == self.degree and other._terms == self._terms)

    def __hash__(self):
        return hash((type(self).__name__, self.chart, self.degree, frozenset(self._terms.items())))

    def map_coefficients(self, fn):
        return type(self)._raw(self.chart, self.degree, {k: fn(v) for k, v in self._terms.items()})

    def subs(self, bindings):
        return self.map_coefficients(lambda c: substitute(c, bindings))

    def __repr__(self):
        if not self._terms:
            return f"{type(self).__name__}(0, degree={self.degree})"
        parts = []
        for key, c in self.items():
            basis = self._basis(key)
            parts.append(f"({c})" + (f" {basis}" if basis else ""))
        return " + ".join(parts)

    def _basis(self, key):
        raise NotImplementedError

    # -- numerics ----------------------------------------------------------
    def compile(self, args: Sequence[str] = None):
        """Return ``(keys, f)`` where ``f(**values)`` gives coefficient arrays."""
        args = tuple(args if args is not None else self.chart.names)
        keys = [k for k, _ in self.items()]
        fn = lambdify([c for _, c in self.items()], args) if keys else (lambda *a: ())
        return keys, fn, args


class DifferentialForm(_Alternating):
    """Sparse differential p-form on a chart."""

    __slots__ = ()
    kind = "form"

    def _basis(self, key):
        return "^".join(f"d{self.chart.names[i]}" for i in key)

    def to_json(self) -> str:
        return form_to_json(self)

    @classmethod
    def from_json(cls, text: str) -> "DifferentialForm":
        return form_from_json(text)

    def evaluate(self, point: Mapping[str, float]) -> Dict[Tuple[int, ...], float]:
        from .expr import evaluate
        return {k: evaluate(c, point) for k, c in self.items()}


class MultiVector(_Alternating):
    """Sparse k-vector field on a chart, optionally with a factorization.

    ``witness`` (when present) is the ordered tuple of vector fields whose
    wedge product equals this multivector.
    """

    __slots__ = ("witness",)
    kind = "multivector"

    def __init__(self, chart, degree, terms=None, witness=None):
        super().__init__(chart, degree, terms)
        self.witness = None
        if witness is not None:
            self._set_witness(witness)

    @classmethod
    def _raw(cls, chart, degree, terms):
        obj = super()._raw(chart, degree, terms)
        obj.witness = None
        return obj

    def _set_witness(self, vectors):
        vectors = tuple(vectors)
        if len(vectors) != self.degree or any(v.degree != 1 for v in vectors):
            raise DegreeError("witness must be degree-many vector fields")
        prod = MultiVector.scalar(self.chart, 1)
        for v in vectors:
            prod = wedge(prod, v)
        if prod._terms != self._terms:
            raise ValueError("decomposability witness does not re-expand to the components")
        self.witness = vectors

    @classmethod
    def vector(cls, chart: Chart, components: Mapping[str, object]) -> "MultiVector":
        return cls(chart, 1, {(chart.index(n),): c for n, c in components.items()})

    @classmethod
    def from_vectors(cls, vectors: Sequence["MultiVector"]) -> "MultiVector":
        vectors = list(vectors)
        if not vectors:
            raise DegreeError("need at least one vector")
        prod = vectors[0]
        for v in vectors[1:]:
            prod = wedge(prod, v)
        out = cls._raw(prod.chart, prod.degree, prod._terms)
        out.witness = tuple(vectors)
        return out

    def _basis(self, key):
        return "^".join(f"@{self.chart.names[i]}" for i in key)

    def component(self, name: str) -> Expression:
        return self[name]

    def __call__(self, f) -> Expression:
        """Directional derivative of a scalar along a vector field."""
        if self.degree != 1:
            raise DegreeError("only vector fields act on functions")
        f = as_expression(f)
        out = ZERO
        for (i,), c in self._terms.items():
            out = out + c * differentiate(f, self.chart.names[i])
        return out


# -- operations --------------------------------------------------------------

def wedge(a: _Alternating, b: _Alternating) -> _Alternating:
    """Exterior product. A result of degree above the chart dimension is the zero form."""
    if type(a) is not type(b):
        raise TypeError("wedge needs two forms or two multivectors")
    if a.chart != b.chart:
        raise ChartMismatchError("wedge of objects on different charts")
    out = {}
    for ka, ca in a._terms.items():
        for kb, cb in b._terms.items():
            s, key = _merge_sign(ka, kb)
            if not s:
                continue
            term = ca * cb
            if s < 0:
                term = -term
            out[key] = out[key] + term if key in out else term
    return type(a)._raw(a.chart, a.degree + b.degree, out)


def exterior_derivative(w: DifferentialForm) -> DifferentialForm:
    if not isinstance(w, DifferentialForm):
        raise TypeError("exterior derivative of a non-form")
    chart = w.chart
    out = {}
    for key, c in w._terms.items():
        for name in c.free_symbols:
            if name not in chart:
                continue  # parameters are constants
            a = chart.index(name)
            if a in key:
                continue
            dc = differentiate(c, name)
            if dc.is_zero:
                continue
            below = sum(1 for i in key if i < a)
            nk = tuple(sorted(key + (a,)))
            term = -dc if below % 2 else dc
            out[nk] = out[nk] + term if nk in out else term
    return DifferentialForm._raw(chart, w.degree + 1, out)


def interior_product(X: MultiVector, w: DifferentialForm) -> DifferentialForm:
    """``X _| w`` with X inserted into the leading slots of ``w``."""
    if not isinstance(X, MultiVector) or not isinstance(w, DifferentialForm):
        raise TypeError("interior_product(MultiVector, DifferentialForm)")
    if X.chart != w.chart:
        raise ChartMismatchError("interior product across charts")
    if X.degree > w.degree:
        raise DegreeError(f"cannot contract a {X.degree}-vector into a {w.degree}-form")
    out = {}
    for kx, cx in X._terms.items():
        sx = set(kx)
        for kw, cw in w._terms.items():
            if not sx <= set(kw):
                continue
            s, rest = _split_sign(kw, kx)
            term = cx * cw
            if s < 0:
                term = -term
            out[rest] = out[rest] + term if rest in out else term
    return DifferentialForm._raw(w.chart, w.degree - X.degree, out)


def lie_derivative(xi: MultiVector, w: DifferentialForm) -> DifferentialForm:
    """Lie derivative along a vector field via Cartan's formula."""
    if xi.degree != 1:
        raise DegreeError("Lie derivative needs a vector field")
    dw = exterior_derivative(w)
    first = (exterior_derivative(interior_product(xi, w)) if w.degree > 0
             else DifferentialForm.zero(w.chart, 0))
    return first + interior_product(xi, dw)


def is_zero(w: _Alternating) -> bool:
    return w.is_zero()


class ChartMap:
    """A map between charts given by target-coordinate expressions in source coordinates."""

    def __init__(self, source: Chart, target: Chart, components: Mapping[str, object]):
        self.source = source
        self.target = target
        self.components = {k: as_expression(v) for k, v in components.items()}
        for k in self.components:
            target.index(k)
        for k, v in self.components.items():
            stray = [s for s in v.free_symbols if s not in source and s in target]
            if stray:
                raise ChartError(f"component {k} uses target coordinates {stray}")

    def __repr__(self):
        return f"ChartMap({self.source.names} -> {self.target.names})"


def pullback(phi: ChartMap, w: DifferentialForm) -> DifferentialForm:
    """Pull ``w`` back along ``phi``; the result lives on ``phi.source``."""
    if w.chart != phi.target:
        raise ChartMismatchError("form does not live on the map's target chart")
    tnames = phi.target.names
    used = set()
    for key, c in w._terms.items():
        used.update(tnames[i] for i in key)
        used.update(s for s in c.free_symbols if s in phi.target)
    missing = sorted(used - phi.components.keys())
    if missing:
        raise ChartError(f"map has no component for coordinates {missing}")
    diffs = {}

    def dphi(name):
        if name not in diffs:
            f = phi.components[name]
            diffs[name] = DifferentialForm._raw(phi.source, 1, {
                (phi.source.index(s),): differentiate(f, s)
                for s in f.free_symbols if s in phi.source
            })
        return diffs[name]

    bindings = {n: phi.components[n] for n in used}
    out = DifferentialForm.zero(phi.source, w.degree)
    for key, c in w._terms.items():
        piece = DifferentialForm.scalar(phi.source, substitute(c, bindings))
        for i in key:
            piece = wedge(piece, dphi(tnames[i]))
        out = out + piece
    return out


# -- numeric evaluation on sampled vectors -----------------------------------

def contract_numeric(w: DifferentialForm, point: Mapping[str, np.ndarray],
                     vectors: Sequence[np.ndarray]) -> Dict[Tuple[int, ...], np.ndarray]:
    """Numerically insert sampled vectors into the leading slots of ``w``.

    ``point`` maps coordinate names (and parameters) to sample arrays;
    each vector is an array of shape ``(dim, *grid)``. Returns the components
    of ``w(V1, ..., Vk, ...)`` keyed by the remaining multi-index.
    """
    k = len(vectors)
    if k > w.degree:
        raise DegreeError("more vectors than form degree")
    out: Dict[Tuple[int, ...], np.ndarray] = {}
    for key, c in w.items():
        names = sorted(c.free_symbols)
        coeff = lambdify(c, names)(*[point[n] for n in names]) if names else float(c.value)
        for front in itertools.combinations(key, k):
            s, rest = _split_sign(key, front)
            if k == 0:
                det = 1.0
            elif k == 1:
                det = vectors[0][front[0]]
            elif k == 2:
                det = vectors[0][front[0]] * vectors[1][front[1]] - vectors[0][front[1]] * vectors[1][front[0]]
            else:
                mat = np.stack([np.stack([v[i] for i in front], axis=-1) for v in vectors], axis=-2)
                det = np.linalg.det(mat)
            term = s * coeff * det
            out[rest] = out[rest] + term if rest in out else term
    return out


# -- serialization -----------------------------------------------------------

def form_to_json(w: DifferentialForm) -> str:
    doc = {
        "chart": w.chart.to_dict(),
        "degree": w.degree,
        "terms": [{"indices": list(k), "coeff": str(c)} for k, c in w.items()],
    }
    return json.dumps(doc, sort_keys=True)


def form_from_json(text: str) -> DifferentialForm:
    from .expr import parse

    doc = json.loads(text)
    chart = Chart.from_dict(doc["chart"])
    terms = {}
    for t in doc["terms"]:
        key = tuple(t["indices"])
        if key in terms:
            raise ValueError(f"duplicate multi-index {key}")
        terms[key] = parse(t["coeff"])
    return DifferentialForm(chart, int(doc["degree"]), terms)


def solve_vector_contraction(omega: DifferentialForm, beta: DifferentialForm) -> MultiVector:
    """Solve ``xi _| omega == beta`` for a vector field ``xi``.

    Raises :class:`~multisym.linalg.InconsistentSystemError` (with certificate)
    when no vector field works. If ``omega`` is degenerate the free
    components are set to zero.
    """
    from .linalg import solve_linear

    if omega.chart != beta.chart:
        raise ChartMismatchError("contraction equation across charts")
    if beta.degree != omega.degree - 1:
        raise DegreeError(f"need a {omega.degree - 1}-form on the right-hand side")
    chart = omega.chart
    columns = [interior_product(chart.partial(n), omega) for n in chart.names]
    keys = sorted(set(beta._terms).union(*(c._terms for c in columns)))
    A = [[col._terms.get(k, ZERO) for col in columns] for k in keys]
    b = [beta._terms.get(k, ZERO) for k in keys]
    sol = solve_linear(A, b)
    return MultiVector._raw(chart, 1, {(i,): v for i, v in enumerate(sol.values)})
