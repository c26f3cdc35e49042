import numpy as np
import pytest

from bundlecalc.common.models import FieldType
from bundlecalc.geometry.scalar_field import VariableRangeError
from bundlecalc.geometry.tensor_core import (
    ChartDims,
    ChartMismatchError,
    FieldEvaluationError,
    IndexSort,
    ShapeError,
    TensorField,
    TensorShape,
    TensorValue,
    alt_last_two,
    contract,
    eval_field,
    eval_gradient,
    flatten,
    outer,
    retag,
    transpose,
)

UP = IndexSort.FIBER_UP
DOWN = IndexSort.FIBER_DOWN
FORM = IndexSort.BASE_DOWN


def _value(slots, m, n, entries):
    return TensorValue(TensorShape.of(slots, m, n), np.array(entries, dtype=float))


# -------------------------------
# Shapes
# -------------------------------

def test_shape_for_field_type():
    shape = TensorShape.for_field_type(FieldType.of(1, 1, 0, 2), 3, 2)
    assert shape.slots == (UP, DOWN, FORM, FORM)
    assert shape.extents == (2, 2, 3, 3)
    assert shape.size == 36
    assert shape.field_type() == FieldType.of(1, 1, 0, 2)


def test_shape_with_second_bundle_slots():
    t = FieldType.of(1, 0, 0, 1, p2=1, q2=1)
    shape = TensorShape.for_field_type(t, 2, 3, 4)
    assert shape.slots == (UP, IndexSort.FIBER2_UP, IndexSort.FIBER2_DOWN, FORM)
    assert shape.extents == (3, 4, 4, 2)
    assert shape.is_canonical
    assert shape.field_type() == t
    assert str(t) == "(1,0,0,1;1,1)"


def test_non_canonical_shape_has_no_field_type():
    shape = TensorShape.of((FORM, UP), 2, 2)
    assert not shape.is_canonical
    with pytest.raises(ShapeError):
        shape.field_type()


def test_value_rejects_wrong_extents():
    with pytest.raises(ShapeError):
        _value((UP,), 2, 3, [1.0, 2.0])


def test_values_are_read_only():
    v = _value((UP,), 2, 2, [1.0, 2.0])
    with pytest.raises(ValueError):
        v.entries[0] = 5.0


# -------------------------------
# Algebra
# -------------------------------

def test_outer_product():
    a = _value((UP,), 1, 2, [1.0, 2.0])
    b = _value((DOWN,), 1, 2, [3.0, 4.0])
    product = outer(a, b)
    assert product.shape.slots == (UP, DOWN)
    np.testing.assert_array_equal(product.entries, [[3.0, 4.0], [6.0, 8.0]])


def test_outer_is_bilinear():
    rng = np.random.default_rng(5)
    for _ in range(20):
        A, A2 = (_value((UP, FORM), 2, 3, rng.uniform(-1, 1, (3, 2))) for _ in range(2))
        B = _value((DOWN,), 2, 3, rng.uniform(-1, 1, 3))
        a = float(rng.uniform(-2, 2))
        combined = _value((UP, FORM), 2, 3, a * A.entries + A2.entries)
        np.testing.assert_allclose(
            outer(combined, B).entries,
            a * outer(A, B).entries + outer(A2, B).entries,
            rtol=1e-12,
            atol=1e-15,
        )
        np.testing.assert_allclose(
            outer(B, combined).entries,
            a * outer(B, A).entries + outer(B, A2).entries,
            rtol=1e-12,
            atol=1e-15,
        )


def test_outer_requires_same_chart():
    a = _value((UP,), 1, 2, [1.0, 2.0])
    b = _value((UP,), 1, 3, [1.0, 2.0, 3.0])
    with pytest.raises(ChartMismatchError):
        outer(a, b)


def test_contract_pairs_vector_with_covector():
    a = _value((UP,), 1, 2, [1.0, 2.0])
    b = _value((DOWN,), 1, 2, [3.0, 4.0])
    scalar = contract(outer(a, b), 0, 1)
    assert scalar.shape.slots == ()
    assert float(scalar.entries) == 11.0


@pytest.mark.parametrize("n", [1, 2, 4])
def test_contract_identity_gives_rank(n):
    identity = _value((UP, DOWN), 1, n, np.eye(n))
    assert float(contract(identity, 0, 1).entries) == n


def test_contract_keeps_remaining_slots_in_order():
    rng = np.random.default_rng(0)
    T = _value((UP, FORM, DOWN), 3, 2, rng.normal(size=(2, 3, 2)))
    result = contract(T, 0, 2)
    assert result.shape.slots == (FORM,)
    np.testing.assert_allclose(result.entries, np.einsum("ivi->v", T.entries))


@pytest.mark.parametrize(
    "slots, up, down",
    [
        ((UP, UP), 0, 1),
        ((UP, FORM), 0, 1),
        ((DOWN, UP), 0, 1),
        ((UP, DOWN), 0, 0),
        ((UP, DOWN), 0, 2),
    ],
)
def test_contract_rejects_mismatched_slots(slots, up, down):
    T = TensorValue.zeros(TensorShape.of(slots, 2, 2))
    with pytest.raises(ShapeError):
        contract(T, up, down)


def test_alt_last_two_on_values():
    T = _value((FORM, FORM), 2, 1, [[1.0, 3.0], [-1.0, 5.0]])
    alt = alt_last_two(T)
    np.testing.assert_array_equal(alt.entries, [[0.0, 2.0], [-2.0, 0.0]])
    np.testing.assert_array_equal(alt_last_two(alt).entries, alt.entries)


def test_alt_last_two_kills_symmetric_tensors():
    rng = np.random.default_rng(1)
    A = rng.normal(size=(2, 3, 3))
    T = _value((UP, FORM, FORM), 3, 2, A + np.swapaxes(A, 1, 2))
    np.testing.assert_allclose(alt_last_two(T).entries, 0.0, atol=1e-15)


def test_alt_last_two_is_linear():
    rng = np.random.default_rng(2)
    shape = TensorShape.of((UP, FORM, FORM), 3, 2)
    A, B = rng.normal(size=shape.extents), rng.normal(size=shape.extents)
    combined = alt_last_two(TensorValue(shape, 2.0 * A - 3.0 * B)).entries
    separate = 2.0 * alt_last_two(TensorValue(shape, A)).entries - 3.0 * alt_last_two(TensorValue(shape, B)).entries
    np.testing.assert_allclose(combined, separate, atol=1e-14)


def test_alt_last_two_on_fields_matches_values():
    shape = TensorShape.of((UP, FORM, FORM), 2, 2)
    F = TensorField.from_entries(shape, {(1, 1, 2): "x1*x2", (1, 2, 1): "x2", (2, 2, 2): "3"})
    p = (0.4, -1.2)
    symbolic = eval_field(alt_last_two(F), p).entries
    numeric = alt_last_two(eval_field(F, p)).entries
    np.testing.assert_allclose(symbolic, numeric, atol=1e-15)


def test_alt_last_two_needs_trailing_forms():
    with pytest.raises(ShapeError):
        alt_last_two(TensorValue.zeros(TensorShape.of((UP, DOWN), 2, 2)))


def test_transpose_and_retag():
    T = _value((UP, FORM), 3, 2, [[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    swapped = transpose(T, (1, 0))
    assert swapped.shape.slots == (FORM, UP)
    assert swapped[(2, 1)] == 6.0
    with pytest.raises(ShapeError):
        transpose(T, (0, 0))

    square = _value((UP, FORM), 2, 2, [[1.0, 2.0], [3.0, 4.0]])
    as_base = retag(square, (IndexSort.BASE_UP, FORM), ChartDims(2))
    assert as_base.shape.slots == (IndexSort.BASE_UP, FORM)
    np.testing.assert_array_equal(as_base.entries, square.entries)
    with pytest.raises(ShapeError):
        retag(T, (IndexSort.BASE_UP, FORM), ChartDims(3))


def test_flatten_is_row_major():
    T = _value((UP, FORM), 3, 2, [[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    flat = flatten(T)
    assert flat.shape.slots == (UP,)
    assert flat.shape.dims == ChartDims(3, 6)
    np.testing.assert_array_equal(flat.entries, [1.0, 2.0, 3.0, 4.0, 5.0, 6.0])


# -------------------------------
# Fields
# -------------------------------

def test_field_from_entries_and_evaluation():
    shape = TensorShape.of((UP, FORM), 2, 2)
    F = TensorField.from_entries(shape, {(1, 2): "x1*x2", (2, 1): 4.0})
    value = eval_field(F, (2.0, 3.0))
    np.testing.assert_array_equal(value.entries, [[0.0, 6.0], [4.0, 0.0]])


def test_field_entry_index_out_of_range():
    shape = TensorShape.of((UP, FORM), 2, 2)
    with pytest.raises(ShapeError):
        TensorField.from_entries(shape, {(3, 1): "1"})
    with pytest.raises(ShapeError):
        TensorField.from_entries(shape, {(1,): "1"})


def test_field_entry_variable_out_of_range():
    shape = TensorShape.of((UP,), 2, 2)
    with pytest.raises(VariableRangeError):
        TensorField.from_entries(shape, {(1,): "x3"})


def test_field_evaluation_error_names_entry():
    shape = TensorShape.of((UP,), 1, 2)
    F = TensorField.from_entries(shape, {(1,): "1", (2,): "1/x1"})
    with pytest.raises(FieldEvaluationError) as info:
        eval_field(F, (0.0,))
    assert info.value.index == (2,)


def test_eval_field_rejects_wrong_point_dimension():
    F = TensorField.zeros(TensorShape.of((UP,), 2, 2))
    with pytest.raises(ChartMismatchError):
        eval_field(F, (1.0,))


def test_partials_are_cached_and_gradient_matches():
    shape = TensorShape.of((UP,), 2, 2)
    F = TensorField.from_entries(shape, {(1,): "x1^2*x2", (2,): "sin(x2)"})
    assert F.partial(1) is F.partial(1)
    gradient = eval_gradient(F, (1.5, 0.5))
    assert gradient.shape == (2, 2)
    np.testing.assert_allclose(gradient, [[1.5, 2.25], [0.0, np.cos(0.5)]], rtol=1e-14)
