"""Exact scalar expressions over named coordinates.

An :class:`Expression` is a quotient of two sparse polynomials with rational
coefficients. Polynomial "atoms" are coordinate names or applications of one
of the analytic primitives ``sin``, ``cos`` and ``exp`` to another expression.
Arithmetic keeps everything in expanded, collected form, so two expressions
that agree as rational functions of their atoms have identical
representations.

Text form
---------
``str(e)`` produces an infix string that :func:`parse` reads back exactly::

    expr    := term (('+' | '-') term)*
    term    := factor (('*' | '/') factor)*
    factor  := ('-' | '+') factor | power
    power   := atom ('**' signed-integer)?
    atom    := number | name | func '(' expr ')' | '(' expr ')'
    func    := 'sin' | 'cos' | 'exp'

Numbers are integers or decimal literals; decimals are converted exactly
(``0.1`` is ``1/10``).
"""
from __future__ import annotations

import ast
import math
import random
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Sequence, Union

import numpy as np

__all__ = [
    "Expression",
    "ExpressionError",
    "ParseError",
    "UnknownCoordinateError",
    "EvaluationError",
    "Func",
    "const",
    "var",
    "symbols",
    "sin",
    "cos",
    "exp",
    "parse",
    "differentiate",
    "evaluate",
    "normalize_equal",
    "substitute",
    "lambdify",
]

FUNCTIONS = ("sin", "cos", "exp")


class ExpressionError(ValueError):
    """Malformed symbolic input."""


class ParseError(ExpressionError):
    def __init__(self, message, text=None, offset=None):
        super().__init__(message)
        self.text = text
        self.offset = offset


class UnknownCoordinateError(ExpressionError):
    def __init__(self, name, declared=None):
        msg = f"unknown coordinate {name!r}"
        if declared is not None:
            msg += f" (declared: {', '.join(declared)})"
        super().__init__(msg)
        self.name = name


class EvaluationError(ArithmeticError):
    """Numeric evaluation failed (unbound variable or zero denominator)."""


@dataclass(frozen=True)
class Func:
    """Application of an analytic primitive; acts as a polynomial atom."""

    name: str
    arg: "Expression"

    @property
    def key(self):
        return (self.name, str(self.arg))

    def __str__(self):
        return f"{self.name}({self.arg})"


Number = Union[int, Fraction]
Scalar = Union[int, float, Fraction, "Expression"]


def _akey(atom):
    if type(atom) is str:
        return (0, atom, "")
    return (1, atom.name, str(atom.arg))


def _num(c) -> Number:
    if isinstance(c, Fraction):
        return c.numerator if c.denominator == 1 else c
    return c


def _mono_mul(m1, m2):
    if not m1:
        return m2
    if not m2:
        return m1
    d = dict(m1)
    for a, e in m2:
        d[a] = d.get(a, 0) + e
    return tuple(sorted(d.items(), key=lambda it: _akey(it[0])))


def _mono_key(m):
    # graded ordering: higher total degree first, then by atom keys
    return (-sum(e for _, e in m), tuple((_akey(a), -e) for a, e in m))


def _padd(a, b, sign=1):
    out = dict(a)
    for m, c in b.items():
        v = out.get(m, 0) + sign * c
        if v:
            out[m] = _num(v)
        else:
            out.pop(m, None)
    return out


def _pmul(a, b):
    out = {}
    for m1, c1 in a.items():
        for m2, c2 in b.items():
            m = _mono_mul(m1, m2)
            v = out.get(m, 0) + c1 * c2
            if v:
                out[m] = v
            else:
                out.pop(m, None)
    return {m: _num(c) for m, c in out.items()}


def _pscale(a, c):
    if c == 0:
        return {}
    return {m: _num(v * c) for m, v in a.items()}


def _pconst(a):
    """Return the constant value of a polynomial, or None if non-constant."""
    if not a:
        return 0
    if len(a) == 1 and () in a:
        return a[()]
    return None


def _patoms(a):
    return {at for m in a for at, _ in m}


def _pdeg(a):
    return max((sum(e for _, e in m) for m in a), default=0)


def _plead(a):
    return min(a, key=_mono_key)


class Expression:
    """Immutable exact rational function of coordinates and analytic atoms."""

    __slots__ = ("_n", "_d", "_hash", "_str")

    def __init__(self, value: Union[int, Fraction, str] = 0):
        if isinstance(value, str):
            e = parse(value)
            self._n, self._d = e._n, e._d
        else:
            c = _num(Fraction(value))
            self._n = {(): c} if c else {}
            self._d = {(): 1}
        self._hash = None
        self._str = None

    @classmethod
    def _raw(cls, n, d):
        e = cls.__new__(cls)
        e._n, e._d = n, d
        e._hash = None
        e._str = None
        return e

    @classmethod
    def _make(cls, n, d):
        if not d:
            raise ExpressionError("division by the zero expression")
        if not n:
            return cls._raw({}, {(): 1})
        c = _pconst(d)
        if c is not None:
            return cls._raw(_pscale(n, Fraction(1) / c) if c != 1 else n, {(): 1})
        if len(d) == 1:
            (dm, dc), = d.items()
            # cancel the common monomial factor
            common = dict(dm)
            for m in n:
                md = dict(m)
                for a in list(common):
                    if a in md:
                        common[a] = min(common[a], md[a])
                    else:
                        del common[a]
                if not common:
                    break
            if common:
                def strip(m):
                    out = []
                    for a, e in m:
                        e2 = e - common.get(a, 0)
                        if e2:
                            out.append((a, e2))
                    return tuple(out)
                n = {strip(m): c for m, c in n.items()}
                dm = strip(dm)
            inv = Fraction(1) / dc
            n = _pscale(n, inv)
            if not dm:
                return cls._raw(n, {(): 1})
            return cls._raw(n, {dm: 1})
        n, d = _cancel(n, d)
        lead = d[_plead(d)]
        if lead != 1:
            inv = Fraction(1) / lead
            n, d = _pscale(n, inv), _pscale(d, inv)
        if _pconst(d) == 1:
            return cls._raw(n, {(): 1})
        return cls._raw(n, d)

    @classmethod
    def _poly(cls, n):
        return cls._raw(n, {(): 1}) if n else cls._raw({}, {(): 1})

    # -- structure ---------------------------------------------------------
    @property
    def numerator(self) -> "Expression":
        return Expression._poly(dict(self._n))

    @property
    def denominator(self) -> "Expression":
        return Expression._poly(dict(self._d))

    @property
    def atoms(self) -> frozenset:
        return frozenset(_patoms(self._n) | _patoms(self._d))

    @property
    def free_symbols(self) -> frozenset:
        out = set()
        for a in self.atoms:
            if type(a) is str:
                out.add(a)
            else:
                out |= a.arg.free_symbols
        return frozenset(out)

    @property
    def has_functions(self) -> bool:
        return any(type(a) is not str for a in self.atoms)

    @property
    def is_polynomial(self) -> bool:
        """True for a polynomial in the coordinates (no analytic atoms)."""
        return _pconst(self._d) == 1 and not self.has_functions

    @property
    def is_zero(self) -> bool:
        return not self._n

    @property
    def is_constant(self) -> bool:
        return _pconst(self._n) is not None and _pconst(self._d) is not None

    @property
    def value(self) -> Number:
        """Rational value of a constant expression."""
        if not self.is_constant:
            raise ExpressionError(f"{self} is not constant")
        return _num(Fraction(_pconst(self._n)) / _pconst(self._d))

    @property
    def total_degree(self) -> int:
        return _pdeg(self._n) + _pdeg(self._d)

    def terms(self):
        """Yield ``(coefficient, {name: exponent})`` for a polynomial."""
        if not self.is_polynomial:
            raise ExpressionError(f"{self} is not a polynomial")
        for m in sorted(self._n, key=_mono_key):
            yield self._n[m], dict(m)

    # -- arithmetic --------------------------------------------------------
    def __add__(self, other):
        o = _coerce(other)
        if o is NotImplemented:
            return o
        if self._d == o._d:
            if _pconst(self._d) == 1:
                return Expression._poly(_padd(self._n, o._n))
            return Expression._make(_padd(self._n, o._n), self._d)
        return Expression._make(
            _padd(_pmul(self._n, o._d), _pmul(o._n, self._d)), _pmul(self._d, o._d)
        )

    __radd__ = __add__

    def __neg__(self):
        return Expression._raw(_pscale(self._n, -1), self._d)

    def __pos__(self):
        return self

    def __sub__(self, other):
        o = _coerce(other)
        if o is NotImplemented:
            return o
        return self + (-o)

    def __rsub__(self, other):
        o = _coerce(other)
        if o is NotImplemented:
            return o
        return o + (-self)

    def __mul__(self, other):
        o = _coerce(other)
        if o is NotImplemented:
            return o
        if not self._n or not o._n:
            return ZERO
        if _pconst(self._d) == 1 and _pconst(o._d) == 1:
            return Expression._poly(_pmul(self._n, o._n))
        return Expression._make(_pmul(self._n, o._n), _pmul(self._d, o._d))

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = _coerce(other)
        if o is NotImplemented:
            return o
        if not o._n:
            raise ExpressionError(f"division of {self} by the zero expression")
        return Expression._make(_pmul(self._n, o._d), _pmul(self._d, o._n))

    def __rtruediv__(self, other):
        o = _coerce(other)
        if o is NotImplemented:
            return o
        return o / self

    def __pow__(self, k):
        if isinstance(k, Expression):
            if not k.is_constant:
                raise ExpressionError("exponent must be an integer constant")
            k = k.value
        if isinstance(k, Fraction):
            if k.denominator != 1:
                raise ExpressionError(f"non-integer exponent {k}")
            k = k.numerator
        if not isinstance(k, int):
            raise ExpressionError(f"non-integer exponent {k!r}")
        if k < 0:
            return ONE / (self ** (-k))
        out = ONE
        base = self
        while k:
            if k & 1:
                out = out * base
            k >>= 1
            if k:
                base = base * base
        return out

    # -- comparison --------------------------------------------------------
    def __eq__(self, other):
        o = _coerce(other)
        if o is NotImplemented:
            return NotImplemented
        return self._n == o._n and self._d == o._d

    def __hash__(self):
        if self._hash is None:
            self._hash = hash((frozenset(self._n.items()), frozenset(self._d.items())))
        return self._hash

    def __bool__(self):
        return bool(self._n)

    # -- printing ----------------------------------------------------------
    def __str__(self):
        if self._str is None:
            num = _pstr(self._n)
            if _pconst(self._d) == 1:
                self._str = num
            else:
                self._str = f"({num})/({_pstr(self._d)})"
        return self._str

    def __repr__(self):
        return f"Expression({str(self)!r})"

    # -- calculus and evaluation (method forms) ----------------------------
    def diff(self, v: str) -> "Expression":
        return differentiate(self, v)

    def subs(self, bindings) -> "Expression":
        return substitute(self, bindings)

    def __call__(self, point=None, **kw):
        pt = dict(point or {})
        pt.update(kw)
        return evaluate(self, pt)


def _coerce(x):
    if isinstance(x, Expression):
        return x
    if isinstance(x, bool):
        return NotImplemented
    if isinstance(x, (int, Fraction)):
        return Expression(x)
    if isinstance(x, float):
        if not math.isfinite(x):
            raise ExpressionError(f"non-finite constant {x!r}")
        return Expression(Fraction(repr(x)))
    if isinstance(x, np.integer):
        return Expression(int(x))
    if isinstance(x, np.floating):
        return _coerce(float(x))
    return NotImplemented


def as_expression(x) -> Expression:
    """Coerce numbers and strings to :class:`Expression`."""
    if isinstance(x, str):
        return parse(x)
    e = _coerce(x)
    if e is NotImplemented:
        raise TypeError(f"cannot convert {type(x).__name__} to Expression")
    return e


ZERO = Expression._raw({}, {(): 1})
ONE = Expression._raw({(): 1}, {(): 1})


def const(c) -> Expression:
    return as_expression(c)


def var(name: str) -> Expression:
    if not name.isidentifier() or name in FUNCTIONS:
        raise ExpressionError(f"invalid coordinate name {name!r}")
    return Expression._raw({((name, 1),): 1}, {(): 1})


def symbols(names: Union[str, Iterable[str]]):
    if isinstance(names, str):
        names = names.replace(",", " ").split()
    return tuple(var(n) for n in names)


def _apply(name, arg) -> Expression:
    arg = as_expression(arg)
    if arg.is_zero:
        return ZERO if name == "sin" else ONE
    return Expression._raw({((Func(name, arg), 1),): 1}, {(): 1})


def sin(e) -> Expression:
    return _apply("sin", e)


def cos(e) -> Expression:
    return _apply("cos", e)


def exp(e) -> Expression:
    return _apply("exp", e)


# -- printing helpers -------------------------------------------------------

def _atom_str(a):
    return a if type(a) is str else str(a)


def _pstr(p):
    if not p:
        return "0"
    parts = []
    for m in sorted(p, key=_mono_key):
        c = Fraction(p[m])
        neg = c < 0
        c = abs(c)
        factors = [_atom_str(a) if e == 1 else f"{_atom_str(a)}**{e}" for a, e in m]
        if c != 1 or not factors:
            factors.insert(0, str(c))
        parts.append(("-" if neg else "+", "*".join(factors)))
    head_sign, head = parts[0]
    out = ("-" if head_sign == "-" else "") + head
    for s, t in parts[1:]:
        out += f" {s} {t}"
    return out


# -- rational-function cancellation -----------------------------------------

def _cancel(n, d):
    """Cancel the polynomial gcd of ``n/d`` (multi-term denominators only)."""
    import sympy

    atoms = sorted(_patoms(n) | _patoms(d), key=_akey)
    syms = [sympy.Symbol(f"_a{i}") for i in range(len(atoms))]
    back = dict(zip(syms, atoms))
    idx = {a: s for a, s in zip(atoms, syms)}

    def to_sym(p):
        terms = []
        for m, c in p.items():
            c = Fraction(c)
            terms.append(sympy.Rational(c.numerator, c.denominator)
                         * sympy.Mul(*[idx[a] ** e for a, e in m]))
        return sympy.Add(*terms)

    num, den = sympy.fraction(sympy.cancel(to_sym(n) / to_sym(d)))

    def from_sym(x):
        out = {}
        for exps, c in sympy.Poly(sympy.expand(x), *syms).terms():
            c = sympy.Rational(c)
            m = tuple(sorted(((back[s], e) for s, e in zip(syms, exps) if e), key=lambda it: _akey(it[0])))
            out[m] = _num(Fraction(int(c.p), int(c.q)))
        return out

    return from_sym(num), from_sym(den)


# -- parsing ----------------------------------------------------------------

def parse(text: str, coordinates: Iterable[str] = None) -> Expression:
    """Parse the infix grammar documented in the module docstring.

    If ``coordinates`` is given, any other name is rejected with
    :class:`UnknownCoordinateError`.
    """
    if not isinstance(text, str):
        raise ParseError(f"expected a string, got {type(text).__name__}")
    declared = None if coordinates is None else list(coordinates)
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise ParseError(f"syntax error in {text!r}: {exc.msg}", text, exc.offset) from None
    src = text.strip()

    def bad(node, what):
        return ParseError(f"{what} in {text!r} at column {getattr(node, 'col_offset', 0) + 1}",
                          text, getattr(node, "col_offset", None))

    def integer(node):
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = integer(node.operand)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.Constant) and type(node.value) is int:
            return node.value
        raise bad(node, "exponent must be an integer literal")

    def walk(node):
        if isinstance(node, ast.Expression):
            return walk(node.body)
        if isinstance(node, ast.Constant):
            if type(node.value) is int:
                return Expression(node.value)
            if type(node.value) is float:
                literal = ast.get_source_segment(src, node) or repr(node.value)
                try:
                    return Expression(Fraction(literal))
                except ValueError:
                    raise bad(node, f"bad number {literal!r}") from None
            raise bad(node, f"unsupported literal {node.value!r}")
        if isinstance(node, ast.Name):
            if node.id in FUNCTIONS:
                raise bad(node, f"function {node.id!r} used without argument")
            if declared is not None and node.id not in declared:
                raise UnknownCoordinateError(node.id, declared)
            return var(node.id)
        if isinstance(node, ast.UnaryOp):
            v = walk(node.operand)
            if isinstance(node.op, ast.USub):
                return -v
            if isinstance(node.op, ast.UAdd):
                return v
            raise bad(node, "unsupported unary operator")
        if isinstance(node, ast.BinOp):
            if isinstance(node.op, ast.Pow):
                return walk(node.left) ** integer(node.right)
            a, b = walk(node.left), walk(node.right)
            if isinstance(node.op, ast.Add):
                return a + b
            if isinstance(node.op, ast.Sub):
                return a - b
            if isinstance(node.op, ast.Mult):
                return a * b
            if isinstance(node.op, ast.Div):
                if b.is_zero:
                    raise bad(node, "division by zero")
                return a / b
            raise bad(node, "unsupported operator")
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in FUNCTIONS:
                raise bad(node, "unknown function")
            if len(node.args) != 1 or node.keywords:
                raise bad(node, f"{node.func.id} takes exactly one argument")
            return _apply(node.func.id, walk(node.args[0]))
        raise bad(node, f"unsupported syntax {type(node).__name__}")

    return walk(tree)


# -- calculus ---------------------------------------------------------------

def _atom_diff(atom, v) -> Expression:
    if type(atom) is str:
        return ONE if atom == v else ZERO
    inner = differentiate(atom.arg, v)
    if inner.is_zero:
        return ZERO
    if atom.name == "sin":
        outer = cos(atom.arg)
    elif atom.name == "cos":
        outer = -sin(atom.arg)
    else:
        outer = exp(atom.arg)
    return outer * inner


def _pdiff(p, v):
    """Derivative of a polynomial in its atoms; returns an Expression."""
    fast = {}
    slow = ZERO
    for m, c in p.items():
        for i, (a, e) in enumerate(m):
            if type(a) is str:
                if a != v:
                    continue
                rest = list(m)
                if e == 1:
                    del rest[i]
                else:
                    rest[i] = (a, e - 1)
                rest = tuple(rest)
                val = fast.get(rest, 0) + c * e
                if val:
                    fast[rest] = _num(val)
                else:
                    fast.pop(rest, None)
            else:
                da = _atom_diff(a, v)
                if da.is_zero:
                    continue
                rest = list(m)
                if e == 1:
                    del rest[i]
                else:
                    rest[i] = (a, e - 1)
                slow = slow + Expression._poly({tuple(rest): _num(c * e)}) * da
    return Expression._poly(fast) + slow


def differentiate(e: Expression, v: str, coordinates: Iterable[str] = None) -> Expression:
    """Exact partial derivative of ``e`` with respect to coordinate ``v``.

    If ``coordinates`` is given, ``v`` must be one of them.
    """
    e = as_expression(e)
    if coordinates is not None:
        coords = list(coordinates)
        if v not in coords:
            raise UnknownCoordinateError(v, coords)
    if _pconst(e._d) == 1:
        return _pdiff(e._n, v)
    n = Expression._poly(e._n)
    d = Expression._poly(e._d)
    dn = _pdiff(e._n, v)
    dd = _pdiff(e._d, v)
    if dd.is_zero:
        return dn / d
    return (dn * d - n * dd) / (d * d)


def substitute(e: Expression, bindings: Mapping[str, object]) -> Expression:
    """Simultaneously replace coordinates by expressions, then normalize."""
    e = as_expression(e)
    b = {k: as_expression(v) for k, v in bindings.items()}
    if not b or not (e.free_symbols & b.keys()):
        return e
    cache = {}

    def atom_value(a):
        if a not in cache:
            if type(a) is str:
                cache[a] = b.get(a, var(a))
            else:
                cache[a] = _apply(a.name, substitute(a.arg, b))
        return cache[a]

    def poly_value(p):
        out = ZERO
        for m, c in p.items():
            t = Expression(c)
            for a, k in m:
                t = t * atom_value(a) ** k
            out = out + t
        return out

    n = poly_value(e._n)
    if _pconst(e._d) == 1:
        return n
    return n / poly_value(e._d)


# -- numeric evaluation ------------------------------------------------------

_MATH = {"sin": math.sin, "cos": math.cos, "exp": math.exp}


def evaluate(e: Expression, point: Mapping[str, float]) -> float:
    """IEEE double value of ``e`` at ``point``."""
    e = as_expression(e)
    cache = {}

    def atom_value(a):
        if a in cache:
            return cache[a]
        if type(a) is str:
            if a not in point:
                raise EvaluationError(f"unbound variable {a!r}")
            v = float(point[a])
        else:
            v = _MATH[a.name](evaluate(a.arg, point))
        cache[a] = v
        return v

    def poly_value(p):
        total = 0.0
        for m, c in p.items():
            t = float(c)
            for a, k in m:
                t *= atom_value(a) ** k
            total += t
        return total

    n = poly_value(e._n)
    if _pconst(e._d) == 1:
        return n
    d = poly_value(e._d)
    if d == 0.0:
        raise EvaluationError(f"division by zero: denominator {_pstr(e._d)} vanishes at {dict(point)}")
    return n / d


def _code(e: Expression, names: Mapping[str, str]) -> str:
    def atom(a):
        if type(a) is str:
            if a not in names:
                raise EvaluationError(f"unbound variable {a!r}")
            return names[a]
        return f"_np.{a.name}({_code(a.arg, names)})"

    def poly(p):
        if not p:
            return "0.0"
        parts = []
        for m in sorted(p, key=_mono_key):
            c = Fraction(p[m])
            factors = [repr(float(c))] if (c != 1 or not m) else []
            for a, k in m:
                factors.append(atom(a) if k == 1 else f"{atom(a)}**{k}")
            parts.append("*".join(factors))
        return "(" + " + ".join(parts) + ")"

    if _pconst(e._d) == 1:
        return poly(e._n)
    return f"({poly(e._n)}/{poly(e._d)})"


def lambdify(exprs: Union[Expression, Sequence[Expression]], args: Sequence[str]) -> Callable:
    """Compile expression(s) to a function of positional numeric arguments.

    Works with floats and numpy arrays (broadcasting). Returns a scalar
    function for a single expression and a tuple-valued one for a sequence.
    """
    single = isinstance(exprs, Expression)
    seq = [exprs] if single else [as_expression(x) for x in exprs]
    names = {a: f"_x{i}" for i, a in enumerate(args)}
    body = ", ".join(_code(x, names) for x in seq)
    params = ", ".join(names[a] for a in args)
    if single:
        src = f"def _f({params}):\n    return {body}\n"
    else:
        src = f"def _f({params}):\n    return ({body}{',' if len(seq) == 1 else ''})\n"
    scope = {"_np": np}
    exec(compile(src, "<lambdify>", "exec"), scope)
    return scope["_f"]


# -- equality ---------------------------------------------------------------

PROBE_POINTS = 8
PROBE_TOL = 1e-12


def normalize_equal(a, b, seed: int = 0) -> bool:
    """Decide ``a == b`` as functions.

    Exact for the polynomial/rational fragment. When analytic atoms survive
    normalization the answer comes from probing at ``PROBE_POINTS`` seeded
    random points in [-1, 1] with agreement to ``PROBE_TOL`` (relative to the
    magnitude of the values); this is only semi-decidable.
    """
    a, b = as_expression(a), as_expression(b)
    diff = a - b
    if diff.is_zero:
        return True
    if not diff.has_functions:
        return False
    names = sorted(diff.free_symbols | a.free_symbols | b.free_symbols)
    rng = random.Random(seed)
    hits = 0
    attempts = 0
    while hits < PROBE_POINTS:
        attempts += 1
        if attempts > 50 * PROBE_POINTS:
            return False
        pt = {n: rng.uniform(-1.0, 1.0) for n in names}
        try:
            va, vb = evaluate(a, pt), evaluate(b, pt)
        except (EvaluationError, OverflowError):
            continue
        if abs(va - vb) > PROBE_TOL * max(1.0, abs(va), abs(vb)):
            return False
        hits += 1
    return True
