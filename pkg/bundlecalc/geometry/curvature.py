"""Curvature fields of linear connections and their algebraic decompositions.

A ``CurvatureField`` is stored in canonical (1,1,0,2) order,
``R[i][j][l][m] = R^i_{j,lm}``, antisymmetric in the last two slots:

    R^i_{j,lm} = d_m K^i_{j,l} - d_l K^i_{j,m} + K^p_{j,m} K^i_{p,l} - K^p_{j,l} K^i_{p,m}
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from bundlecalc.common.config import FD_STEP, IDENTITY_ASSERT_TOLERANCE
from bundlecalc.common.models import FieldType
from bundlecalc.geometry.connections import (
    ClassicalConnection,
    LinearConnection,
    dual,
    kron_sum,
    product_action,
    require_connections,
)
from bundlecalc.geometry.probes import probe_sample
from bundlecalc.geometry.scalar_field import (
    ZERO,
    BasePoint,
    EvaluationError,
    add,
    call,
    const,
    diff_numeric,
    mul,
    neg,
    sub,
    total,
    var,
)
from bundlecalc.geometry.tensor_core import (
    ChartMismatchError,
    IndexSort,
    ShapeError,
    TensorField,
    TensorShape,
    TensorValue,
    eval_field,
)

logger = logging.getLogger(__name__)

CURVATURE_SLOTS = (IndexSort.FIBER_UP, IndexSort.FIBER_DOWN, IndexSort.BASE_DOWN, IndexSort.BASE_DOWN)


class IdentityMismatchError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class CurvatureField:
    field: TensorField
    provenance: str

    def __post_init__(self):
        if self.field.shape.slots != CURVATURE_SLOTS:
            raise ShapeError(f"Curvature needs (1,1,0,2) slots, got {self.field.shape.describe()}")

    @property
    def m(self) -> int:
        return self.field.shape.dims.m

    @property
    def n(self) -> int:
        return self.field.shape.dims.n

    @property
    def entries(self) -> np.ndarray:
        return self.field.entries

    def at(self, p: BasePoint) -> TensorValue:
        return eval_field(self.field, p)

    def evaluate(self, p: BasePoint) -> np.ndarray:
        return self.at(p).entries


def _curvature_shape(m: int, n: int) -> TensorShape:
    return TensorShape.of(CURVATURE_SLOTS, m, n)


def assert_two_path(
    label: str,
    m: int,
    left: Callable[[BasePoint], np.ndarray],
    right: Callable[[BasePoint], np.ndarray],
    tol: float = IDENTITY_ASSERT_TOLERANCE,
):
    """Compare two computations of the same array on the probe sample; raise on mismatch"""
    for point in probe_sample(m):
        try:
            a, b = left(point), right(point)
        except EvaluationError as exc:
            logger.debug(f"{label}: skipping probe {point}: {exc}")
            continue
        scale = 1.0 + max(float(np.max(np.abs(a), initial=0.0)), float(np.max(np.abs(b), initial=0.0)))
        gap = float(np.max(np.abs(a - b), initial=0.0))
        if gap > tol * scale:
            raise IdentityMismatchError(f"{label}: two computations differ by {gap:.3e} at {point}")


# -------------------------------
# Curvature Of A Connection
# -------------------------------

def curvature(K: LinearConnection, provenance: Optional[str] = None) -> CurvatureField:
    n, m = K.n, K.m
    C = K.coefficients
    partials = [K.field.partial(k + 1).entries for k in range(m)]
    R = np.empty((n, n, m, m), dtype=object)
    R.fill(ZERO)
    for i, j in np.ndindex(n, n):
        for l in range(m):
            for mu in range(l + 1, m):
                terms = [partials[mu][i, j, l], neg(partials[l][i, j, mu])]
                for p in range(n):
                    terms.append(mul(C[p, j, mu], C[i, p, l]))
                    terms.append(neg(mul(C[p, j, l], C[i, p, mu])))
                value = total(terms)
                R[i, j, l, mu] = value
                R[i, j, mu, l] = neg(value)
    logger.debug(f"Assembled curvature of {K.name}: n={n}, m={m}")
    return CurvatureField(TensorField(_curvature_shape(m, n), R), provenance or f"R[{K.name}]")


def curvature_classical(G: ClassicalConnection) -> CurvatureField:
    """R[Gamma], Gamma taken as a linear connection on TM: R[a][b][l][m] = R^a_{b,lm}"""
    return curvature(G.as_linear, f"R[{G.name}]")


def curvature_dual(K: LinearConnection, verify: bool = True) -> CurvatureField:
    """Curvature of the dual connection, checked against R[K*][a][b] = -R[K][b][a]"""
    R_dual = curvature(dual(K))
    if verify:
        R = curvature(K)
        assert_two_path(
            f"dual curvature of {K.name}",
            K.m,
            R_dual.evaluate,
            lambda p: -np.transpose(R.evaluate(p), (1, 0, 2, 3)),
        )
    return R_dual


def curvature_tensor_product(K: LinearConnection, K2: LinearConnection) -> CurvatureField:
    """R[K (x) K'] assembled as R[K] (x) 1 + 1 (x) R[K']"""
    if K.m != K2.m:
        raise ChartMismatchError(f"Base dimensions differ: {K.m} vs {K2.m}")
    R, R2 = curvature(K), curvature(K2)
    entries = kron_sum(R.entries, R2.entries)
    return CurvatureField(TensorField(_curvature_shape(K.m, K.n * K2.n), entries), f"R[{K.name}x{K2.name}]")


def curvature_numeric(K: LinearConnection, p: BasePoint, h: float = FD_STEP) -> np.ndarray:
    """Curvature at p with every derivative replaced by a central difference"""
    n, m = K.n, K.m
    C = K.evaluate(p)
    D = np.zeros((n, n, m, m))
    for i, j, l, mu in np.ndindex(n, n, m, m):
        D[i, j, l, mu] = diff_numeric(K.coefficients[i, j, l], mu + 1, p, h)
    quadratic = np.einsum("pjm,ipl->ijlm", C, C) - np.einsum("pjl,ipm->ijlm", C, C)
    return D - np.swapaxes(D, 2, 3) + quadratic


def perturbed(R: CurvatureField, delta: float) -> CurvatureField:
    """Negative-control copy of R with delta * exp(x_m) added to R^1_{1,12} (and its antisymmetric partner)"""
    if R.m < 2:
        raise ShapeError("Perturbing a curvature needs a base of dimension at least 2")
    entries = R.entries.copy()
    bump = mul(const(delta), call("exp", var(R.m)))
    entries[0, 0, 0, 1] = add(entries[0, 0, 0, 1], bump)
    entries[0, 0, 1, 0] = sub(entries[0, 0, 1, 0], bump)
    logger.warning(f"Perturbing {R.provenance} by {delta:g} * exp(x{R.m}) for a negative control")
    return CurvatureField(TensorField(R.field.shape, entries), f"{R.provenance}+{delta:g}")


# -------------------------------
# Bilinear Characterization
# -------------------------------

def _vector(v: TensorValue, n: int, role: str) -> np.ndarray:
    entries = np.asarray(v.entries, dtype=float)
    if entries.shape != (n,):
        raise ShapeError(f"{role} must be a vector of dimension {n}, got shape {entries.shape}")
    return entries


def _two_form(entries: np.ndarray, m: int) -> TensorValue:
    return TensorValue(TensorShape.of((IndexSort.BASE_DOWN, IndexSort.BASE_DOWN), m), entries)


def curvature_bilinear_eval(
    Rk: CurvatureField,
    Rk2: CurvatureField,
    e: TensorValue,
    e2: TensorValue,
    e_star: TensorValue,
    e2_star: TensorValue,
    p: BasePoint,
) -> TensorValue:
    """<e', e'*> R[K](e, e*) + <e, e*> R[K'](e', e'*) at p"""
    if Rk.m != Rk2.m:
        raise ChartMismatchError(f"Base dimensions differ: {Rk.m} vs {Rk2.m}")
    v, vs = _vector(e, Rk.n, "e"), _vector(e_star, Rk.n, "e*")
    w, ws = _vector(e2, Rk2.n, "e'"), _vector(e2_star, Rk2.n, "e'*")
    first = np.einsum("i,ijlm,j->lm", vs, Rk.evaluate(p), v)
    second = np.einsum("a,ablm,b->lm", ws, Rk2.evaluate(p), w)
    return _two_form(float(w @ ws) * first + float(v @ vs) * second, Rk.m)


def tensor_product_bilinear_eval(
    R_product: CurvatureField,
    e: TensorValue,
    e2: TensorValue,
    e_star: TensorValue,
    e2_star: TensorValue,
    p: BasePoint,
) -> TensorValue:
    """R[K (x) K'](e (x) e', e* (x) e'*) at p"""
    v, vs = np.asarray(e.entries, dtype=float), np.asarray(e_star.entries, dtype=float)
    w, ws = np.asarray(e2.entries, dtype=float), np.asarray(e2_star.entries, dtype=float)
    if v.size * w.size != R_product.n or v.shape != vs.shape or w.shape != ws.shape:
        raise ShapeError(f"Vectors of dimensions {v.size}, {w.size} do not fit a product fiber of rank {R_product.n}")
    vector, covector = np.kron(v, w), np.kron(vs, ws)
    return _two_form(np.einsum("I,IJlm,J->lm", covector, R_product.evaluate(p), vector), R_product.m)


# -------------------------------
# Action On Mixed Tensors
# -------------------------------

def curvature_product_action(
    K: Optional[LinearConnection],
    G: Optional[ClassicalConnection],
    t: FieldType,
    Rk: Optional[CurvatureField],
    RG: Optional[CurvatureField],
    V: TensorValue,
    p: BasePoint,
    K2: Optional[LinearConnection] = None,
    Rk2: Optional[CurvatureField] = None,
) -> TensorValue:
    """Curvature of K^p_q (x) K'^p2_q2 (x) Gamma^r_s acting on V

    +R[K] on E slots, -R[K] transposed on E* slots, and the same with R[K']
    on E'/E'* slots and R[Gamma] on TM/T*M slots. The result carries two
    extra trailing T*M slots.
    """
    m = V.shape.dims.m
    expected = TensorShape.for_field_type(t, m, V.shape.dims.n, V.shape.dims.n2)
    if V.shape.slots != expected.slots:
        raise ShapeError(f"Value shape {V.shape.describe()} does not match type {t}")
    require_connections(K, G, t, m, K2)
    if t.has_fiber and Rk is None:
        raise ShapeError("R[K] is required for fields with fiber slots")
    if t.has_second_fiber and Rk2 is None:
        raise ShapeError("R[K'] is required for fields with E' slots")

    fiber = Rk.evaluate(p) if Rk is not None and t.has_fiber else None
    fiber2 = Rk2.evaluate(p) if Rk2 is not None and t.has_second_fiber else None
    base = RG.evaluate(p) if RG is not None and t.has_base else None
    if fiber is None and fiber2 is None and base is None:
        entries = np.zeros(V.shape.extents + (m, m))
    else:
        entries = product_action(np.asarray(V.entries), V.shape, fiber, base, fiber2)
    return TensorValue(V.shape.extended(IndexSort.BASE_DOWN, IndexSort.BASE_DOWN), entries)
