import numpy as np
import pytest

from bundlecalc.common.models import FieldType
from bundlecalc.geometry.connections import (
    ClassicalConnection,
    LinearConnection,
    ProductSizeError,
    SymmetryError,
    covariant_apply,
    dual,
    product_coefficients,
    tensor_product,
)
from bundlecalc.geometry.tensor_core import (
    ChartMismatchError,
    IndexSort,
    ShapeError,
    TensorField,
    TensorShape,
    eval_field,
    field_outer,
    flatten,
)


def test_from_entries_fills_missing_coefficients_with_zero(example_a):
    C = example_a.evaluate((0.5, 0.7))
    expected = np.zeros((2, 2, 2))
    expected[0, 1, 0] = 0.7
    np.testing.assert_array_equal(C, expected)
    assert (example_a.m, example_a.n) == (2, 2)


def test_dual_connection_negates_transpose(example_a):
    K_dual = dual(example_a)
    assert K_dual.name == "K*"
    C = K_dual.evaluate((0.5, 0.7))
    assert C[1, 0, 0] == -0.7
    assert np.count_nonzero(C) == 1


def test_dual_is_an_involution(random_connection, sample_points):
    K = random_connection(3, 2, 3)
    twice = dual(dual(K))
    for p in sample_points(2):
        np.testing.assert_allclose(twice.evaluate(p), K.evaluate(p), atol=1e-15)


def test_tensor_product_with_trivial_line_bundle_is_identity(random_connection, sample_points):
    K = random_connection(4, 2, 2)
    line = LinearConnection.zero(2, 1, "L")
    product = tensor_product(K, line)
    assert product.n == 2
    for p in sample_points(2):
        np.testing.assert_allclose(product.evaluate(p), K.evaluate(p), atol=1e-15)


def test_tensor_product_uses_composite_index(example_a, two_coefficient_connection):
    product = tensor_product(example_a, two_coefficient_connection)
    p = (2.0, 3.0)
    C, A, B = product.evaluate(p), example_a.evaluate(p), two_coefficient_connection.evaluate(p)
    expected = np.einsum("ijl,ab->iajbl", A, np.eye(2)) + np.einsum("ij,abl->iajbl", np.eye(2), B)
    np.testing.assert_allclose(C, expected.reshape(4, 4, 2))


def test_tensor_product_requires_same_base(example_a):
    with pytest.raises(ChartMismatchError):
        tensor_product(example_a, LinearConnection.zero(3, 2))


# -------------------------------
# Classical Connections
# -------------------------------

def test_classical_symmetry_is_enforced():
    with pytest.raises(SymmetryError):
        ClassicalConnection.from_entries(2, {(1, 1, 2): "x1"})
    with pytest.raises(SymmetryError):
        ClassicalConnection.from_entries(2, {(1, 2, 2): "x1", (2, 2, 1): "x2"})


def test_symmetric_gamma_accepted_with_different_spelling():
    G = ClassicalConnection.from_entries(2, {(1, 1, 2): "x1*x2", (2, 1, 1): "x2*x1"})
    assert G.evaluate((2.0, 3.0))[1, 0, 0] == 6.0


def test_classical_as_linear_reorders_indices(random_classical):
    G = random_classical(1, 3)
    p = (0.2, -0.4, 0.9)
    np.testing.assert_array_equal(G.as_linear.evaluate(p), np.transpose(G.evaluate(p), (1, 0, 2)))


# -------------------------------
# Product Connections
# -------------------------------

def test_product_on_single_fiber_slot_is_the_connection(random_connection, random_classical, sample_points):
    K, G = random_connection(5, 2, 2), random_classical(5, 2)
    C = product_coefficients(K, G, FieldType.of(1, 0, 0, 0))
    assert C.n == 2
    for p in sample_points(2):
        np.testing.assert_allclose(C.evaluate(p), K.evaluate(p), atol=1e-15)


def test_product_on_single_cofiber_slot_is_the_dual(random_connection, random_classical, sample_points):
    K, G = random_connection(6, 2, 2), random_classical(6, 2)
    C = product_coefficients(K, G, FieldType.of(0, 1, 0, 0))
    for p in sample_points(2):
        np.testing.assert_allclose(C.evaluate(p), dual(K).evaluate(p), atol=1e-15)


def test_product_on_endomorphisms_matches_tensor_product(random_connection, random_classical, sample_points):
    K, G = random_connection(7, 2, 2), random_classical(7, 2)
    C = product_coefficients(K, G, FieldType.of(1, 1, 0, 0))
    expected = tensor_product(K, dual(K))
    assert C.n == 4
    for p in sample_points(2):
        np.testing.assert_allclose(C.evaluate(p), expected.evaluate(p), atol=1e-14)


def test_product_on_one_forms_is_dual_of_gamma(random_connection, random_classical, sample_points):
    K, G = random_connection(8, 3, 1), random_classical(8, 3)
    C = product_coefficients(K, G, FieldType.of(0, 0, 0, 1))
    for p in sample_points(3):
        np.testing.assert_allclose(C.evaluate(p), dual(G.as_linear).evaluate(p), atol=1e-15)


def test_product_size_limit(example_a):
    G = ClassicalConnection.zero(2)
    with pytest.raises(ProductSizeError):
        product_coefficients(example_a, G, FieldType.of(13, 0, 0, 0))


# -------------------------------
# Covariant Differential
# -------------------------------

def test_covariant_apply_on_constant_section(example_a):
    shape = TensorShape.for_field_type(FieldType.of(1, 0, 0, 0), 2, 2)
    Phi = TensorField.from_entries(shape, {(2,): "1"})
    value = covariant_apply(example_a, None, FieldType.of(1, 0, 0, 0), Phi, (0.5, 0.7))
    assert value.shape.slots == (IndexSort.FIBER_UP, IndexSort.BASE_DOWN)
    expected = np.zeros((2, 2))
    expected[0, 0] = -0.7
    np.testing.assert_allclose(value.entries, expected)


def test_covariant_apply_of_zero_connection_is_gradient():
    shape = TensorShape.for_field_type(FieldType.of(0, 0, 1, 1), 2)
    Omega = TensorField.from_entries(shape, {(1, 2): "x1*x2^2"})
    value = covariant_apply(None, None, FieldType.of(0, 0, 1, 1), Omega, (2.0, 3.0))
    assert value[(0, 1, 0)] == 9.0
    assert value[(0, 1, 1)] == 12.0


def test_covariant_apply_needs_connection_for_fiber_slots():
    shape = TensorShape.for_field_type(FieldType.of(1, 0, 0, 0), 2, 2)
    with pytest.raises(ShapeError):
        covariant_apply(None, None, FieldType.of(1, 0, 0, 0), TensorField.zeros(shape), (0.0, 0.0))


def test_covariant_apply_rejects_mismatched_field(example_a):
    shape = TensorShape.for_field_type(FieldType.of(1, 0, 0, 0), 2, 3)
    with pytest.raises(ShapeError):
        covariant_apply(example_a, None, FieldType.of(1, 0, 0, 0), TensorField.zeros(shape), (0.0, 0.0))


def test_covariant_differential_obeys_leibniz_rule(random_connection, random_classical, random_field, sample_points):
    m, n = 2, 2
    K, G = random_connection(9, m, n), random_classical(9, m)
    t_a, t_b = FieldType.of(1, 0, 0, 0), FieldType.of(0, 1, 0, 1)
    A, B = random_field(1, t_a, m, n), random_field(2, t_b, m, n)
    AB = field_outer(A, B)
    t_ab = FieldType.of(1, 1, 0, 1)
    for p in sample_points(m, 3):
        lhs = covariant_apply(K, G, t_ab, AB, p).entries
        dA = covariant_apply(K, G, t_a, A, p).entries
        dB = covariant_apply(K, G, t_b, B, p).entries
        Av, Bv = eval_field(A, p).entries, eval_field(B, p).entries
        rhs = np.einsum("iv,jk->ijkv", dA, Bv) + np.einsum("i,jkv->ijkv", Av, dB)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)


# -------------------------------
# Second Bundle
# -------------------------------

E_TIMES_E2 = FieldType.of(1, 0, 0, 0, p2=1)


def test_product_on_second_bundle_slots(random_connection, random_classical, sample_points):
    K, K2, G = random_connection(61, 2, 2), random_connection(62, 2, 3, name="Kprime"), random_classical(61, 2)
    only_second = product_coefficients(K, G, FieldType.of(0, 0, 0, 0, p2=1), K2)
    both = product_coefficients(K, G, E_TIMES_E2, K2)
    expected = tensor_product(K, K2)
    assert both.n == 6
    for p in sample_points(2):
        np.testing.assert_allclose(only_second.evaluate(p), K2.evaluate(p), atol=1e-15)
        np.testing.assert_allclose(both.evaluate(p), expected.evaluate(p), atol=1e-14)


@pytest.mark.parametrize(
    "t",
    [E_TIMES_E2, FieldType.of(0, 1, 0, 0, q2=1), FieldType.of(1, 0, 0, 1, q2=1), FieldType.of(0, 1, 1, 0, p2=1, q2=1)],
    ids=str,
)
def test_mixed_field_matches_flattened_product(random_connection, random_classical, random_field, sample_points, t):
    m, n, n2 = 2, 2, 3
    K, K2, G = random_connection(63, m, n), random_connection(64, m, n2, name="Kprime"), random_classical(63, m)
    Phi = random_field(63, t, m, n, n2=n2)
    C = product_coefficients(K, G, t, K2)
    flat = flatten(Phi)
    for p in sample_points(m, 3):
        implicit = covariant_apply(K, G, t, Phi, p, K2=K2).entries.reshape(flat.shape.dims.n, m)
        materialized = covariant_apply(C, None, FieldType.of(1, 0, 0, 0), flat, p).entries
        np.testing.assert_allclose(implicit, materialized, atol=1e-12)


def test_section_of_tensor_product_bundle(random_connection, random_field, sample_points):
    K, K2 = random_connection(65, 2, 2), random_connection(66, 2, 3, name="Kprime")
    Phi = random_field(65, E_TIMES_E2, 2, 2, n2=3)
    KK = tensor_product(K, K2)
    for p in sample_points(2, 3):
        split = covariant_apply(K, None, E_TIMES_E2, Phi, p, K2=K2).entries.reshape(6, 2)
        joint = covariant_apply(KK, None, FieldType.of(1, 0, 0, 0), flatten(Phi), p).entries
        np.testing.assert_allclose(split, joint, atol=1e-12)


def test_second_bundle_slots_need_second_connection(example_a):
    shape = TensorShape.for_field_type(E_TIMES_E2, 2, 2, 2)
    with pytest.raises(ShapeError):
        covariant_apply(example_a, None, E_TIMES_E2, TensorField.zeros(shape), (0.0, 0.0))
    with pytest.raises(ChartMismatchError):
        covariant_apply(example_a, None, E_TIMES_E2, TensorField.zeros(shape), (0.0, 0.0), K2=LinearConnection.zero(3, 2))
