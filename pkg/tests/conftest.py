import random

import pytest
import sympy

from multisym.exterior import Chart, DifferentialForm, MultiVector
from multisym.expr import Expression, var

NAMES = ("a", "b", "c", "d")


def random_poly(rng: random.Random, names=NAMES, terms=3, degree=2) -> Expression:
    out = Expression(0)
    for _ in range(rng.randint(1, terms)):
        mono = Expression(rng.choice([-3, -2, -1, 1, 2, 3])) / rng.choice([1, 2, 3])
        for _ in range(rng.randint(0, degree)):
            mono = mono * var(rng.choice(names))
        out = out + mono
    return out


def random_form(rng: random.Random, chart: Chart, degree: int, density=0.6) -> DifferentialForm:
    import itertools

    terms = {}
    for key in itertools.combinations(range(chart.dim), degree):
        if rng.random() < density:
            terms[key] = random_poly(rng, chart.names)
    return DifferentialForm(chart, degree, terms)


def random_vector(rng: random.Random, chart: Chart) -> MultiVector:
    return MultiVector.vector(chart, {n: random_poly(rng, chart.names) for n in chart.names})


def to_sympy(e) -> sympy.Expr:
    return sympy.sympify(str(e))


@pytest.fixture
def chart4():
    return Chart(NAMES)
