import random

import numpy as np
import pytest

from bundlecalc.cli.generator import random_polynomial
from bundlecalc.common.models import FieldType
from bundlecalc.geometry.connections import ClassicalConnection, LinearConnection
from bundlecalc.geometry.probes import check_points
from bundlecalc.geometry.tensor_core import TensorField, TensorShape


def _random_entries(rng: random.Random, extents, m: int, degree: int, density: float = 0.6):
    entries = {}
    for index in np.ndindex(*extents):
        if rng.random() < density:
            entries[tuple(i + 1 for i in index)] = random_polynomial(rng, m, degree)
    return entries


@pytest.fixture
def example_a():
    """Rank-2 bundle over a 2-dimensional base with K^1_{2,1} = x2"""
    return LinearConnection.from_entries(2, 2, {(1, 2, 1): "x2"})


@pytest.fixture
def two_coefficient_connection():
    return LinearConnection.from_entries(2, 2, {(1, 2, 1): "x2", (2, 1, 2): "x1"})


@pytest.fixture
def random_connection():
    def make(seed: int, m: int, n: int, degree: int = 2, name: str = "K") -> LinearConnection:
        rng = random.Random(seed)
        return LinearConnection.from_entries(m, n, _random_entries(rng, (n, n, m), m, degree), name)
    return make


@pytest.fixture
def random_classical():
    def make(seed: int, m: int, degree: int = 2) -> ClassicalConnection:
        rng = random.Random(10_000 + seed)
        entries = {}
        for a, b, c in np.ndindex(m, m, m):
            if a <= c and rng.random() < 0.6:
                expr = random_polynomial(rng, m, degree)
                entries[(a + 1, b + 1, c + 1)] = expr
                entries[(c + 1, b + 1, a + 1)] = expr
        return ClassicalConnection.from_entries(m, entries)
    return make


@pytest.fixture
def random_field():
    def make(seed: int, t: FieldType, m: int, n: int, degree: int = 2, n2: int = 1) -> TensorField:
        rng = random.Random(20_000 + seed)
        shape = TensorShape.for_field_type(t, m, n, n2)
        return TensorField.from_entries(shape, _random_entries(rng, shape.extents, m, degree, density=0.8))
    return make


@pytest.fixture
def sample_points():
    def make(m: int, count: int = 5, seed: int = 0):
        return check_points(m, count, seed)
    return make
