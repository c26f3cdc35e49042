"""Dense multi-index tensors with sorted index slots.

A ``TensorValue`` holds real entries at one base point; a ``TensorField``
holds one ``ScalarExpr`` per entry. Both carry a ``TensorShape``: the ordered
slot sorts plus the chart dimensions (m, n, n') that fix each slot's extent.
Indices are 0-based here and 1-based in every user-facing format.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, Mapping, Sequence, Tuple, Union

import numpy as np

from bundlecalc.common.models import FieldType
from bundlecalc.geometry.scalar_field import (
    ZERO,
    BasePoint,
    Const,
    EvaluationError,
    ScalarExpr,
    VariableRangeError,
    diff_symbolic,
    evaluate,
    lift,
    mul,
    neg,
    sub,
    variables,
)

logger = logging.getLogger(__name__)


class ShapeError(ValueError):
    pass


class ChartMismatchError(ShapeError):
    pass


class FieldEvaluationError(EvaluationError):
    def __init__(self, index: Tuple[int, ...], cause: Exception):
        one_based = tuple(i + 1 for i in index)
        super().__init__(f"Entry {list(one_based)}: {cause}")
        self.index = one_based


class IndexSort(str, Enum):
    FIBER_UP = "fiber_up"
    FIBER_DOWN = "fiber_down"
    FIBER2_UP = "fiber2_up"
    FIBER2_DOWN = "fiber2_down"
    BASE_UP = "base_up"
    BASE_DOWN = "base_down"

    @property
    def is_up(self) -> bool:
        return self in (IndexSort.FIBER_UP, IndexSort.FIBER2_UP, IndexSort.BASE_UP)

    @property
    def dual(self) -> "IndexSort":
        return _DUALS[self]


_DUALS = {
    IndexSort.FIBER_UP: IndexSort.FIBER_DOWN,
    IndexSort.FIBER_DOWN: IndexSort.FIBER_UP,
    IndexSort.FIBER2_UP: IndexSort.FIBER2_DOWN,
    IndexSort.FIBER2_DOWN: IndexSort.FIBER2_UP,
    IndexSort.BASE_UP: IndexSort.BASE_DOWN,
    IndexSort.BASE_DOWN: IndexSort.BASE_UP,
}

CANONICAL_ORDER = (
    IndexSort.FIBER_UP,
    IndexSort.FIBER_DOWN,
    IndexSort.FIBER2_UP,
    IndexSort.FIBER2_DOWN,
    IndexSort.BASE_UP,
    IndexSort.BASE_DOWN,
)


@dataclass(frozen=True)
class ChartDims:
    m: int
    n: int = 1
    n2: int = 1

    def dim(self, sort: IndexSort) -> int:
        if sort in (IndexSort.FIBER_UP, IndexSort.FIBER_DOWN):
            return self.n
        if sort in (IndexSort.FIBER2_UP, IndexSort.FIBER2_DOWN):
            return self.n2
        return self.m


@dataclass(frozen=True)
class TensorShape:
    slots: Tuple[IndexSort, ...]
    dims: ChartDims

    @classmethod
    def of(cls, slots: Iterable[IndexSort], m: int, n: int = 1, n2: int = 1) -> "TensorShape":
        return cls(tuple(slots), ChartDims(m, n, n2))

    @classmethod
    def for_field_type(cls, t: FieldType, m: int, n: int = 1, n2: int = 1) -> "TensorShape":
        slots = (
            (IndexSort.FIBER_UP,) * t.p
            + (IndexSort.FIBER_DOWN,) * t.q
            + (IndexSort.FIBER2_UP,) * t.p2
            + (IndexSort.FIBER2_DOWN,) * t.q2
            + (IndexSort.BASE_UP,) * t.r
            + (IndexSort.BASE_DOWN,) * t.s
        )
        return cls(slots, ChartDims(m, n, n2))

    @property
    def extents(self) -> Tuple[int, ...]:
        return tuple(self.dims.dim(s) for s in self.slots)

    @property
    def size(self) -> int:
        return int(np.prod(self.extents, dtype=int))

    @property
    def is_canonical(self) -> bool:
        order = [CANONICAL_ORDER.index(s) for s in self.slots]
        return order == sorted(order)

    def field_type(self) -> FieldType:
        if not self.is_canonical:
            raise ShapeError(f"Shape {self.describe()} is not in canonical slot order")
        return FieldType(
            p=self.slots.count(IndexSort.FIBER_UP),
            q=self.slots.count(IndexSort.FIBER_DOWN),
            r=self.slots.count(IndexSort.BASE_UP),
            s=self.slots.count(IndexSort.BASE_DOWN),
            p2=self.slots.count(IndexSort.FIBER2_UP),
            q2=self.slots.count(IndexSort.FIBER2_DOWN),
        )

    def extended(self, *extra: IndexSort) -> "TensorShape":
        return TensorShape(self.slots + tuple(extra), self.dims)

    def describe(self) -> str:
        names = ",".join(s.value for s in self.slots)
        return f"[{names}] over (m={self.dims.m}, n={self.dims.n}, n'={self.dims.n2})"


def _check_chart(a: TensorShape, b: TensorShape):
    if a.dims != b.dims:
        raise ChartMismatchError(f"Chart dimensions differ: {a.dims} vs {b.dims}")


# -------------------------------
# Values
# -------------------------------

@dataclass(frozen=True, eq=False)
class TensorValue:
    shape: TensorShape
    entries: np.ndarray

    def __post_init__(self):
        array = np.array(self.entries, dtype=float)
        if array.shape != self.shape.extents:
            raise ShapeError(f"Entries of shape {array.shape} do not fit {self.shape.describe()}")
        array.setflags(write=False)
        object.__setattr__(self, "entries", array)

    @classmethod
    def zeros(cls, shape: TensorShape) -> "TensorValue":
        return cls(shape, np.zeros(shape.extents))

    def __getitem__(self, index: Tuple[int, ...]) -> float:
        return float(self.entries[index])


def basis_value(shape: TensorShape, index: Tuple[int, ...]) -> TensorValue:
    """Unit tensor with a single 1 at the 0-based multi-index"""
    entries = np.zeros(shape.extents)
    entries[index] = 1.0
    return TensorValue(shape, entries)


# -------------------------------
# Fields
# -------------------------------

def _object_array(extents: Tuple[int, ...], fill: ScalarExpr = ZERO) -> np.ndarray:
    array = np.empty(extents, dtype=object)
    array.fill(fill)
    return array


@dataclass(frozen=True, eq=False)
class TensorField:
    shape: TensorShape
    entries: np.ndarray
    _partials: Dict[int, "TensorField"] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.entries.shape != self.shape.extents:
            raise ShapeError(f"Entries of shape {self.entries.shape} do not fit {self.shape.describe()}")

    @classmethod
    def zeros(cls, shape: TensorShape) -> "TensorField":
        return cls(shape, _object_array(shape.extents))

    @classmethod
    def from_entries(
        cls,
        shape: TensorShape,
        entries: Mapping[Tuple[int, ...], Union[ScalarExpr, str, float]],
    ) -> "TensorField":
        """Build a field from sparse 1-based entries; the rest are zero"""
        m = shape.dims.m
        array = _object_array(shape.extents)
        for index, value in entries.items():
            if len(index) != len(shape.slots):
                raise ShapeError(f"Index {list(index)} has {len(index)} components, shape has {len(shape.slots)} slots")
            for position, (i, extent) in enumerate(zip(index, shape.extents)):
                if not 1 <= i <= extent:
                    raise ShapeError(f"Index {list(index)} component {position + 1} out of range [1, {extent}]")
            expr = lift(value, m)
            out_of_range = [k for k in variables(expr) if k > m]
            if out_of_range:
                raise VariableRangeError(f"Entry {list(index)} uses x{out_of_range[0]} beyond base dimension {m}")
            array[tuple(i - 1 for i in index)] = expr
        return cls(shape, array)

    def __getitem__(self, index: Tuple[int, ...]) -> ScalarExpr:
        return self.entries[index]

    def partial(self, k: int) -> "TensorField":
        """Symbolic partial derivative along x_k (1-based), cached per field"""
        cached = self._partials.get(k)
        if cached is None:
            cached = diff_field(self, k)
            self._partials[k] = cached
        return cached


Tensor = Union[TensorValue, TensorField]


def diff_field(F: TensorField, k: int) -> TensorField:
    memo: dict = {}
    out = _object_array(F.shape.extents)
    for index in np.ndindex(*F.shape.extents):
        out[index] = diff_symbolic(F.entries[index], k, memo)
    return TensorField(F.shape, out)


def eval_field(F: TensorField, p: BasePoint) -> TensorValue:
    """Entrywise evaluation at p, sharing one memo across entries"""
    if len(p) != F.shape.dims.m:
        raise ChartMismatchError(f"Point of dimension {len(p)} for a chart of dimension {F.shape.dims.m}")
    memo: dict = {}
    out = np.zeros(F.shape.extents)
    for index in np.ndindex(*F.shape.extents):
        try:
            out[index] = evaluate(F.entries[index], p, memo)
        except EvaluationError as exc:
            raise FieldEvaluationError(index, exc) from exc
    return TensorValue(F.shape, out)


def eval_gradient(F: TensorField, p: BasePoint) -> np.ndarray:
    """Array of shape F.extents + (m,) holding d_nu F at p"""
    m = F.shape.dims.m
    out = np.zeros(F.shape.extents + (m,))
    for nu in range(m):
        out[..., nu] = eval_field(F.partial(nu + 1), p).entries
    return out


# -------------------------------
# Algebra
# -------------------------------

def outer(A: TensorValue, B: TensorValue) -> TensorValue:
    _check_chart(A.shape, B.shape)
    shape = TensorShape(A.shape.slots + B.shape.slots, A.shape.dims)
    return TensorValue(shape, np.multiply.outer(A.entries, B.entries))


def field_outer(A: TensorField, B: TensorField) -> TensorField:
    _check_chart(A.shape, B.shape)
    shape = TensorShape(A.shape.slots + B.shape.slots, A.shape.dims)
    out = _object_array(shape.extents)
    for i in np.ndindex(*A.shape.extents):
        for j in np.ndindex(*B.shape.extents):
            out[i + j] = mul(A.entries[i], B.entries[j])
    return TensorField(shape, out)


def contract(A: TensorValue, up_slot: int, down_slot: int) -> TensorValue:
    """Sum over a paired up/down index; the other slots keep their order"""
    rank = len(A.shape.slots)
    for position in (up_slot, down_slot):
        if not 0 <= position < rank:
            raise ShapeError(f"Slot position {position} out of range for a rank-{rank} tensor")
    if up_slot == down_slot:
        raise ShapeError("Cannot contract a slot with itself")
    up, down = A.shape.slots[up_slot], A.shape.slots[down_slot]
    if not up.is_up or down != up.dual:
        raise ShapeError(f"Cannot contract {up.value} with {down.value}")
    remaining = tuple(s for k, s in enumerate(A.shape.slots) if k not in (up_slot, down_slot))
    entries = np.trace(A.entries, axis1=up_slot, axis2=down_slot)
    return TensorValue(TensorShape(remaining, A.shape.dims), entries)


def alt_last_two(T: Tensor) -> Tensor:
    """Antisymmetrization projector over the last two T*M slots, factor 1/2"""
    slots = T.shape.slots
    if len(slots) < 2 or slots[-1] != IndexSort.BASE_DOWN or slots[-2] != IndexSort.BASE_DOWN:
        raise ShapeError(f"alt_last_two needs two trailing base_down slots, got {T.shape.describe()}")

    if isinstance(T, TensorValue):
        return TensorValue(T.shape, 0.5 * (T.entries - np.swapaxes(T.entries, -1, -2)))

    m = T.shape.dims.m
    half = Const(0.5)
    out = _object_array(T.shape.extents)
    for head in np.ndindex(*T.shape.extents[:-2]):
        for a in range(m):
            for b in range(a + 1, m):
                value = mul(half, sub(T.entries[head + (a, b)], T.entries[head + (b, a)]))
                out[head + (a, b)] = value
                out[head + (b, a)] = neg(value)
    return TensorField(T.shape, out)


def transpose(T: Tensor, perm: Sequence[int]) -> Tensor:
    """Reorder slots: slot k of the result is slot perm[k] of T"""
    if sorted(perm) != list(range(len(T.shape.slots))):
        raise ShapeError(f"{list(perm)} is not a permutation of the slots of {T.shape.describe()}")
    shape = TensorShape(tuple(T.shape.slots[k] for k in perm), T.shape.dims)
    entries = np.transpose(T.entries, perm)
    if isinstance(T, TensorValue):
        return TensorValue(shape, entries)
    return TensorField(shape, np.ascontiguousarray(entries))


def retag(T: Tensor, slots: Sequence[IndexSort], dims: ChartDims) -> Tensor:
    """Same entries read under other slot sorts, e.g. TM curvature as a (1,3) base tensor"""
    shape = TensorShape(tuple(slots), dims)
    if shape.extents != T.shape.extents:
        raise ShapeError(f"Cannot read {T.shape.describe()} as {shape.describe()}")
    return type(T)(shape, T.entries)


def flatten(T: Tensor) -> Tensor:
    """Row-major flattening into a single fiber_up slot of rank T.shape.size"""
    shape = TensorShape((IndexSort.FIBER_UP,), ChartDims(T.shape.dims.m, T.shape.size))
    return type(T)(shape, T.entries.reshape(T.shape.size))
