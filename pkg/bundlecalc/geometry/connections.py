"""Linear connections on vector bundles and classical connections on TM.

Storage conventions (0-based inside arrays, 1-based in scenario files):

* ``LinearConnection``: ``K[i][j][l]`` is the coefficient K^i_{j,l}, so the
  covariant differential of a section is ``d_l phi^i - K^i_{j,l} phi^j``.
* ``ClassicalConnection``: ``G[a][b][c]`` is Gamma_a^b_c, symmetric in (a, c).
  Viewed as a linear connection on TM it reads ``K^b_{a,c} = G[a][b][c]``.
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Mapping, Optional, Tuple, Union

import numpy as np

from bundlecalc.common.config import IDENTITY_ASSERT_TOLERANCE, PRODUCT_RANK_LIMIT
from bundlecalc.common.models import FieldType
from bundlecalc.geometry.probes import probe_lattice
from bundlecalc.geometry.scalar_field import (
    ZERO,
    BasePoint,
    EvaluationError,
    ScalarExpr,
    add,
    evaluate,
    neg,
    total,
)
from bundlecalc.geometry.tensor_core import (
    ChartMismatchError,
    IndexSort,
    ShapeError,
    TensorField,
    TensorShape,
    TensorValue,
    eval_field,
    eval_gradient,
)

logger = logging.getLogger(__name__)

Coefficient = Union[ScalarExpr, str, float]


class SymmetryError(ValueError):
    pass


class ProductSizeError(ValueError):
    pass


def _linear_shape(m: int, n: int) -> TensorShape:
    return TensorShape.of((IndexSort.FIBER_UP, IndexSort.FIBER_DOWN, IndexSort.BASE_DOWN), m, n)


def _classical_shape(m: int) -> TensorShape:
    return TensorShape.of((IndexSort.BASE_DOWN, IndexSort.BASE_UP, IndexSort.BASE_DOWN), m)


@dataclass(frozen=True, eq=False)
class LinearConnection:
    field: TensorField
    name: str = "K"

    def __post_init__(self):
        if self.field.shape.slots != _linear_shape(1, 1).slots:
            raise ShapeError(f"Connection coefficients need (fiber_up, fiber_down, base_down) slots, got {self.field.shape.describe()}")

    @classmethod
    def zero(cls, m: int, n: int, name: str = "K") -> "LinearConnection":
        return cls(TensorField.zeros(_linear_shape(m, n)), name)

    @classmethod
    def from_entries(
        cls, m: int, n: int, entries: Mapping[Tuple[int, int, int], Coefficient], name: str = "K"
    ) -> "LinearConnection":
        return cls(TensorField.from_entries(_linear_shape(m, n), entries), name)

    @classmethod
    def from_array(cls, m: int, n: int, coefficients: np.ndarray, name: str = "K") -> "LinearConnection":
        return cls(TensorField(_linear_shape(m, n), coefficients), name)

    @property
    def m(self) -> int:
        return self.field.shape.dims.m

    @property
    def n(self) -> int:
        return self.field.shape.dims.n

    @property
    def coefficients(self) -> np.ndarray:
        return self.field.entries

    def evaluate(self, p: BasePoint) -> np.ndarray:
        return eval_field(self.field, p).entries


@dataclass(frozen=True, eq=False)
class ClassicalConnection:
    field: TensorField
    name: str = "Gamma"

    def __post_init__(self):
        if self.field.shape.slots != _classical_shape(1).slots:
            raise ShapeError(f"Classical coefficients need (base_down, base_up, base_down) slots, got {self.field.shape.describe()}")
        self._validate_symmetry()

    @classmethod
    def zero(cls, m: int, name: str = "Gamma") -> "ClassicalConnection":
        return cls(TensorField.zeros(_classical_shape(m)), name)

    @classmethod
    def from_entries(
        cls, m: int, entries: Mapping[Tuple[int, int, int], Coefficient], name: str = "Gamma"
    ) -> "ClassicalConnection":
        return cls(TensorField.from_entries(_classical_shape(m), entries), name)

    @property
    def m(self) -> int:
        return self.field.shape.dims.m

    @property
    def coefficients(self) -> np.ndarray:
        return self.field.entries

    def evaluate(self, p: BasePoint) -> np.ndarray:
        return eval_field(self.field, p).entries

    @cached_property
    def as_linear(self) -> LinearConnection:
        """Gamma as a linear connection on the rank-m bundle TM"""
        coefficients = np.ascontiguousarray(np.transpose(self.coefficients, (1, 0, 2)))
        return LinearConnection.from_array(self.m, self.m, coefficients, self.name)

    def _validate_symmetry(self):
        m = self.m
        pending = []
        for a in range(m):
            for b in range(m):
                for c in range(a + 1, m):
                    left, right = self.coefficients[a, b, c], self.coefficients[c, b, a]
                    if left is not right and left != right:
                        pending.append(((a, b, c), left, right))
        if not pending:
            return

        for point in probe_lattice(m):
            memo: dict = {}
            for index, left, right in pending:
                try:
                    lv, rv = evaluate(left, point, memo), evaluate(right, point, memo)
                except EvaluationError:
                    continue
                if abs(lv - rv) > IDENTITY_ASSERT_TOLERANCE * (1.0 + abs(lv) + abs(rv)):
                    a, b, c = (k + 1 for k in index)
                    raise SymmetryError(
                        f"{self.name}[{a},{b},{c}] = {lv:.6g} but {self.name}[{c},{b},{a}] = {rv:.6g} at {point}"
                    )


# -------------------------------
# Induced Connections
# -------------------------------

def dual(K: LinearConnection) -> LinearConnection:
    """Connection on E*: K*[i][j][l] = -K[j][i][l]"""
    coefficients = np.empty_like(K.coefficients)
    for i, j, l in np.ndindex(*coefficients.shape):
        coefficients[i, j, l] = neg(K.coefficients[j, i, l])
    return LinearConnection.from_array(K.m, K.n, coefficients, f"{K.name}*")


def kron_sum(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """A (x) 1 + 1 (x) B on the composite index I = i * n' + a

    A has shape (n, n, *tail) and B (n', n', *tail), both object arrays.
    """
    n, n2, tail = A.shape[0], B.shape[0], A.shape[2:]
    if B.shape[2:] != tail:
        raise ShapeError(f"Trailing axes differ: {tail} vs {B.shape[2:]}")
    out = np.empty((n * n2, n * n2) + tail, dtype=object)
    out.fill(ZERO)
    for i, a, j, b in np.ndindex(n, n2, n, n2):
        if a == b and i == j:
            block = [add(x, y) for x, y in zip(A[i, j].flat, B[a, b].flat)]
        elif a == b:
            block = list(A[i, j].flat)
        elif i == j:
            block = list(B[a, b].flat)
        else:
            continue
        for position, value in zip(np.ndindex(*tail), block):
            out[(i * n2 + a, j * n2 + b) + position] = value
    return out


def tensor_product(K: LinearConnection, K2: LinearConnection) -> LinearConnection:
    """Connection on E (x) E' with composite fiber index I = i * n' + a"""
    if K.m != K2.m:
        raise ChartMismatchError(f"Base dimensions differ: {K.m} vs {K2.m}")
    coefficients = kron_sum(K.coefficients, K2.coefficients)
    return LinearConnection.from_array(K.m, K.n * K2.n, coefficients, f"{K.name}x{K2.name}")


FIBER_SORTS = (IndexSort.FIBER_UP, IndexSort.FIBER_DOWN)
FIBER2_SORTS = (IndexSort.FIBER2_UP, IndexSort.FIBER2_DOWN)


def slot_sources(shape: TensorShape, fiber, base, fiber2=None) -> list:
    """Per-slot (source, is_up) pairs: fiber on E/E* slots, fiber2 on E'/E'* slots, base on TM/T*M slots"""
    sources = []
    for sort in shape.slots:
        if sort in FIBER_SORTS:
            sources.append((fiber, sort.is_up))
        elif sort in FIBER2_SORTS:
            sources.append((fiber2, sort.is_up))
        else:
            sources.append((base, sort.is_up))
    return sources


def require_connections(
    K: Optional[LinearConnection],
    G: Optional[ClassicalConnection],
    t: FieldType,
    m: int,
    K2: Optional[LinearConnection] = None,
):
    """Chart and presence checks shared by every differential of a typed field"""
    for connection in (K, G, K2):
        if connection is not None and connection.m != m:
            raise ChartMismatchError(f"{connection.name} lives over dimension {connection.m}, the field over {m}")
    if K is None and t.has_fiber:
        raise ShapeError("A linear connection is required for fields with fiber slots")
    if K2 is None and t.has_second_fiber:
        raise ShapeError("A second linear connection is required for fields with E' slots")


def product_coefficients(
    K: LinearConnection,
    G: ClassicalConnection,
    t: FieldType,
    K2: Optional[LinearConnection] = None,
) -> LinearConnection:
    """Materialized coefficients of K^p_q (x) Gamma^r_s on a single fiber of rank n^(p+q) * m^(r+s)

    With K2 given, E' factors of t contribute K2^p2_q2 as well.
    """
    if K.m != G.m:
        raise ChartMismatchError(f"Base dimensions differ: {K.m} vs {G.m}")
    require_connections(K, G, t, K.m, K2)
    shape = TensorShape.for_field_type(t, K.m, K.n, K2.n if K2 is not None else 1)
    rank = shape.size
    if rank > PRODUCT_RANK_LIMIT:
        raise ProductSizeError(f"Product bundle of type {t} has rank {rank}, above the limit {PRODUCT_RANK_LIMIT}")
    logger.debug(f"Materializing product connection of type {t}, rank {rank}")

    extents = shape.extents
    m = K.m
    second = K2.coefficients if K2 is not None else None
    terms = {}
    for s, (source, up) in enumerate(slot_sources(shape, K.coefficients, G.as_linear.coefficients, second)):
        for I in np.ndindex(*extents):
            row = int(np.ravel_multi_index(I, extents))
            for k in range(extents[s]):
                J = I[:s] + (k,) + I[s + 1:]
                col = int(np.ravel_multi_index(J, extents))
                for l in range(m):
                    coefficient = source[I[s], k, l] if up else neg(source[k, I[s], l])
                    terms.setdefault((row, col, l), []).append(coefficient)

    factors = f"{K.name}^{t.p}_{t.q}x{G.name}^{t.r}_{t.s}"
    if K2 is not None and t.has_second_fiber:
        factors += f"x{K2.name}^{t.p2}_{t.q2}"
    result = LinearConnection.zero(m, rank, factors)
    for index, parts in terms.items():
        result.coefficients[index] = total(parts)
    return result


# -------------------------------
# Pointwise Application
# -------------------------------

def slot_action(V: np.ndarray, A: np.ndarray, s: int, up: bool) -> np.ndarray:
    """Action of an endomorphism-valued array A[a][k][...] on slot s of V

    Up slots get sum_k A[a][k] V[..k..], down slots get -sum_k A[k][b] V[..k..].
    The result has shape V.shape + A.shape[2:].
    """
    if up:
        moved = np.tensordot(V, A, axes=([s], [1]))
        return np.moveaxis(moved, V.ndim - 1, s)
    moved = np.tensordot(V, A, axes=([s], [0]))
    return -np.moveaxis(moved, V.ndim - 1, s)


def product_action(
    V: np.ndarray,
    shape: TensorShape,
    fiber: Optional[np.ndarray],
    base: Optional[np.ndarray],
    fiber2: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Sum of slot actions, each slot acted on by the source of its sort; zero where the source is None"""
    extra = next((source.shape[2:] for source in (fiber, fiber2, base) if source is not None), ())
    result = np.zeros(V.shape + extra)
    for s, (source, up) in enumerate(slot_sources(shape, fiber, base, fiber2)):
        if source is not None:
            result += slot_action(V, source, s, up)
    return result


def require_field_shape(Phi: TensorField, t: FieldType, m: int, n: int, n2: int = 1):
    expected = TensorShape.for_field_type(t, m, n, n2)
    if Phi.shape.slots != expected.slots or Phi.shape.extents != expected.extents or Phi.shape.dims.m != m:
        raise ShapeError(f"Field shape {Phi.shape.describe()} does not match type {t} over (m={m}, n={n}, n'={n2})")


def covariant_apply(
    K: Optional[LinearConnection],
    G: Optional[ClassicalConnection],
    t: FieldType,
    Phi: TensorField,
    p: BasePoint,
    K2: Optional[LinearConnection] = None,
) -> TensorValue:
    """Value of the covariant differential of Phi at p, one correction per slot

    None stands for the zero connection; K may only be None when t has no
    E factors, and K2 (acting on E' slots) only when it has no E' factors.
    """
    m = Phi.shape.dims.m
    require_connections(K, G, t, m, K2)
    n = K.n if K is not None else Phi.shape.dims.n
    n2 = K2.n if K2 is not None else Phi.shape.dims.n2
    require_field_shape(Phi, t, m, n, n2)

    V = eval_field(Phi, p).entries
    gradient = eval_gradient(Phi, p)
    fiber = K.evaluate(p) if K is not None and t.has_fiber else None
    fiber2 = K2.evaluate(p) if K2 is not None and t.has_second_fiber else None
    base = G.as_linear.evaluate(p) if G is not None and t.has_base else None
    if fiber is not None or fiber2 is not None or base is not None:
        gradient = gradient - product_action(V, Phi.shape, fiber, base, fiber2)
    return TensorValue(Phi.shape.extended(IndexSort.BASE_DOWN), gradient)
