"""Covariant differentials of (p,q,r,s) fields and the identity checks built on them.

Every ``check_*`` function evaluates both sides of an identity at the given
points and returns a finalized ``CheckReport``. Evaluation singularities are
recorded on the point (residual ``inf``) instead of raised.
"""

import logging
import math
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np

from bundlecalc.common.config import CHECK_TOLERANCE, FD_CURVATURE_TOLERANCE, FD_STEP
from bundlecalc.common.models import CheckReport, FieldType, PointResidual
from bundlecalc.geometry.connections import (
    ClassicalConnection,
    LinearConnection,
    covariant_apply,
    dual,
    product_coefficients,
    require_connections,
    require_field_shape,
    slot_sources,
    tensor_product,
)
from bundlecalc.geometry.curvature import (
    CurvatureField,
    assert_two_path,
    curvature,
    curvature_bilinear_eval,
    curvature_classical,
    curvature_dual,
    curvature_numeric,
    curvature_product_action,
    curvature_tensor_product,
    tensor_product_bilinear_eval,
)
from bundlecalc.geometry.probes import Point
from bundlecalc.geometry.scalar_field import (
    EvaluationError,
    diff_symbolic,
    evaluate,
    mul,
    neg,
    total,
)
from bundlecalc.geometry.tensor_core import (
    ChartDims,
    ChartMismatchError,
    IndexSort,
    ShapeError,
    TensorField,
    TensorShape,
    alt_last_two,
    basis_value,
    eval_field,
    flatten,
    retag,
)

logger = logging.getLogger(__name__)

CURVATURE_TYPE = FieldType.of(1, 1, 0, 2)


# -------------------------------
# Covariant Differentials
# -------------------------------

def nabla(
    K: Optional[LinearConnection],
    G: Optional[ClassicalConnection],
    t: FieldType,
    Phi: TensorField,
    K2: Optional[LinearConnection] = None,
) -> TensorField:
    """Symbolic covariant differential: one extra trailing T*M slot

    None stands for the zero connection; K may only be None when t has no
    E factors, and K2 (acting on E' slots) only when it has no E' factors.
    """
    m = Phi.shape.dims.m
    require_connections(K, G, t, m, K2)
    n = K.n if K is not None else Phi.shape.dims.n
    n2 = K2.n if K2 is not None else Phi.shape.dims.n2
    require_field_shape(Phi, t, m, n, n2)

    sources = slot_sources(
        Phi.shape,
        K.coefficients if K is not None else None,
        G.as_linear.coefficients if G is not None else None,
        K2.coefficients if K2 is not None else None,
    )

    extents = Phi.shape.extents
    shape = Phi.shape.extended(IndexSort.BASE_DOWN)
    out = np.empty(shape.extents, dtype=object)
    partials = [Phi.partial(nu + 1).entries for nu in range(m)]
    for I in np.ndindex(*extents):
        for nu in range(m):
            terms = [partials[nu][I]]
            for s, (A, up) in enumerate(sources):
                if A is None:
                    continue
                for k in range(extents[s]):
                    neighbour = Phi.entries[I[:s] + (k,) + I[s + 1:]]
                    if up:
                        terms.append(neg(mul(A[I[s], k, nu], neighbour)))
                    else:
                        terms.append(mul(A[k, I[s], nu], neighbour))
            out[I + (nu,)] = total(terms)
    logger.debug(f"Assembled nabla of a type {t} field: {shape.size} entries")
    return TensorField(shape, out)


def _nabla_curvature_expansion(K: LinearConnection, G: Optional[ClassicalConnection], R: CurvatureField) -> TensorField:
    """R^i_{j,lm;v} written out term by term, Gamma read as Gamma_v^r_l"""
    n, m = K.n, K.m
    C = K.coefficients
    Gc = G.coefficients if G is not None else None
    entries = R.entries
    partials = [R.field.partial(nu + 1).entries for nu in range(m)]
    out = np.empty((n, n, m, m, m), dtype=object)
    for i, j, l, mu, nu in np.ndindex(n, n, m, m, m):
        terms = [partials[nu][i, j, l, mu]]
        for k in range(n):
            terms.append(neg(mul(C[i, k, nu], entries[k, j, l, mu])))
            terms.append(mul(C[k, j, nu], entries[i, k, l, mu]))
        if Gc is not None:
            for rho in range(m):
                terms.append(mul(Gc[nu, rho, l], entries[i, j, rho, mu]))
                terms.append(mul(Gc[nu, rho, mu], entries[i, j, l, rho]))
        out[i, j, l, mu, nu] = total(terms)
    return TensorField(R.field.shape.extended(IndexSort.BASE_DOWN), out)


def nabla_curvature(
    K: LinearConnection,
    G: Optional[ClassicalConnection],
    R: Optional[CurvatureField] = None,
    verify: bool = True,
) -> TensorField:
    """Covariant differential of R[K] (or of the given R) as a (1,1,0,3) field"""
    R = R if R is not None else curvature(K)
    result = nabla(K, G, CURVATURE_TYPE, R.field)
    if verify:
        expansion = _nabla_curvature_expansion(K, G, R)
        assert_two_path(
            f"nabla {R.provenance}",
            K.m,
            lambda p: eval_field(result, p).entries,
            lambda p: eval_field(expansion, p).entries,
        )
    return result


# -------------------------------
# Pointwise Reports
# -------------------------------

Outcome = Union[float, Dict[str, float]]


def _max_abs(array) -> float:
    return float(np.max(np.abs(array), initial=0.0))


def run_pointwise(
    report: CheckReport,
    points: Sequence[Point],
    residual_at: Callable[[Point], Outcome],
) -> CheckReport:
    logger.info(f"Running {report.label} on {len(points)} points (tol {report.tolerance:g})")
    for k, point in enumerate(points):
        try:
            outcome = residual_at(point)
            components = outcome if isinstance(outcome, dict) else {}
            residual = max(components.values(), default=0.0) if components else float(outcome)
            report.residuals.append(
                PointResidual(index=k, point=list(point), residual=residual, components=components)
            )
        except EvaluationError as e:
            logger.warning(f"{report.label}: evaluation failed at point {k} {point}: {e}")
            report.residuals.append(
                PointResidual(index=k, point=list(point), residual=math.inf, error=str(e))
            )
    report.finalize()
    if report.passed:
        logger.info(f"{report.label} passed, worst residual {report.worst:.3e}")
    else:
        logger.warning(f"{report.label} FAILED, worst residual {report.worst:.3e}")
    return report


def _report(name: str, target: Optional[List[str]], default: List[str], tol: float, **parameters) -> CheckReport:
    return CheckReport(
        name=name,
        target=list(target) if target is not None else default,
        tolerance=tol,
        parameters={key: str(value) for key, value in parameters.items()},
    )


def curvature_lines(values: np.ndarray, skip_zero: bool = True) -> List[str]:
    """Dump lines R_<j>^<i>_{<l><m>} = value with 1-based indices"""
    lines = []
    for i, j, l, mu in np.ndindex(*values.shape):
        value = float(values[i, j, l, mu])
        if value != 0.0 or not skip_zero:
            lines.append(f"R_{j + 1}^{i + 1}_{{{l + 1}{mu + 1}}} = {value:.12g}")
    return lines


# -------------------------------
# Curvature Checks
# -------------------------------

def check_curvature_oracle(
    K: LinearConnection,
    points: Sequence[Point],
    tol: float = FD_CURVATURE_TOLERANCE,
    h: float = FD_STEP,
    R: Optional[CurvatureField] = None,
    target: Optional[List[str]] = None,
) -> CheckReport:
    """Symbolic curvature against the finite-difference curvature"""
    R = R if R is not None else curvature(K)
    report = _report("curvature", target, [K.name], tol, h=h)
    if points:
        try:
            report.details = curvature_lines(R.evaluate(points[0]))
        except EvaluationError as e:
            report.details = [f"curvature not evaluable at {points[0]}: {e}"]
    return run_pointwise(report, points, lambda p: _max_abs(R.evaluate(p) - curvature_numeric(K, p, h)))


def check_dual_curvature(
    K: LinearConnection,
    points: Sequence[Point],
    tol: float = CHECK_TOLERANCE,
    target: Optional[List[str]] = None,
) -> CheckReport:
    """R[K*][a][b] = -R[K][b][a], the dual side computed from dual(K) directly"""
    R, R_dual = curvature(K), curvature_dual(K, verify=False)
    report = _report("dual_curvature", target, [K.name], tol)
    return run_pointwise(
        report,
        points,
        lambda p: _max_abs(R_dual.evaluate(p) + np.transpose(R.evaluate(p), (1, 0, 2, 3))),
    )


def check_tensor_curvature(
    K: LinearConnection,
    K2: LinearConnection,
    points: Sequence[Point],
    tol: float = CHECK_TOLERANCE,
    target: Optional[List[str]] = None,
) -> CheckReport:
    """Curvature of K (x) K' against R[K] (x) 1 + 1 (x) R[K']"""
    direct = curvature(tensor_product(K, K2))
    assembled = curvature_tensor_product(K, K2)
    report = _report("tensor_curvature", target, [K.name, K2.name], tol)
    return run_pointwise(report, points, lambda p: _max_abs(direct.evaluate(p) - assembled.evaluate(p)))


def check_bilinear_decomposition(
    K: LinearConnection,
    K2: LinearConnection,
    points: Sequence[Point],
    tol: float = CHECK_TOLERANCE,
    target: Optional[List[str]] = None,
) -> CheckReport:
    """Bilinear decomposition of R[K (x) K'] over every basis 4-tuple (e, e', e*, e'*)"""
    if K.m != K2.m:
        raise ChartMismatchError(f"Base dimensions differ: {K.m} vs {K2.m}")
    m, n, n2 = K.m, K.n, K2.n
    R, R2 = curvature(K), curvature(K2)
    R_product = curvature(tensor_product(K, K2))
    up, down = TensorShape.of((IndexSort.FIBER_UP,), m, n), TensorShape.of((IndexSort.FIBER_DOWN,), m, n)
    up2, down2 = TensorShape.of((IndexSort.FIBER_UP,), m, n2), TensorShape.of((IndexSort.FIBER_DOWN,), m, n2)

    def residual_at(p: Point) -> float:
        worst = 0.0
        for i, a, j, b in np.ndindex(n, n2, n, n2):
            e, e2 = basis_value(up, (i,)), basis_value(up2, (a,))
            e_star, e2_star = basis_value(down, (j,)), basis_value(down2, (b,))
            split = curvature_bilinear_eval(R, R2, e, e2, e_star, e2_star, p)
            joint = tensor_product_bilinear_eval(R_product, e, e2, e_star, e2_star, p)
            worst = max(worst, _max_abs(split.entries - joint.entries))
        return worst

    report = _report("bilinear_decomposition", target, [K.name, K2.name], tol, tuples=(n * n2) ** 2)
    return run_pointwise(report, points, residual_at)


# -------------------------------
# Bianchi Identities
# -------------------------------

def _cyclic_last_three(D: np.ndarray) -> np.ndarray:
    """D[..., l, m, v] + D[..., m, v, l] + D[..., v, l, m]"""
    head = tuple(range(D.ndim - 3))
    a, b, c = D.ndim - 3, D.ndim - 2, D.ndim - 1
    return D + np.transpose(D, head + (b, c, a)) + np.transpose(D, head + (c, a, b))


def check_bianchi_linear(
    K: LinearConnection,
    G: Optional[ClassicalConnection],
    points: Sequence[Point],
    tol: float = CHECK_TOLERANCE,
    R: Optional[CurvatureField] = None,
    target: Optional[List[str]] = None,
) -> CheckReport:
    """Cyclic sum R_{lm;v} + R_{mv;l} + R_{vl;m} of the (K, Gamma) differential of R[K]"""
    D = nabla_curvature(K, G, R, verify=R is None)
    report = _report("bianchi_linear", target, [K.name] + ([G.name] if G else []), tol)
    return run_pointwise(report, points, lambda p: _max_abs(_cyclic_last_three(eval_field(D, p).entries)))


def check_bianchi_classical(
    G: ClassicalConnection,
    points: Sequence[Point],
    tol: float = CHECK_TOLERANCE,
    target: Optional[List[str]] = None,
) -> CheckReport:
    """First and second Bianchi identities of R[Gamma]"""
    m = G.m
    RG = curvature_classical(G)
    as_base = retag(
        RG.field,
        (IndexSort.BASE_UP, IndexSort.BASE_DOWN, IndexSort.BASE_DOWN, IndexSort.BASE_DOWN),
        ChartDims(m),
    )
    D = nabla(None, G, FieldType.of(0, 0, 1, 3), as_base)

    def residual_at(p: Point) -> Dict[str, float]:
        return {
            "first": _max_abs(_cyclic_last_three(RG.evaluate(p))),
            "second": _max_abs(_cyclic_last_three(eval_field(D, p).entries)),
        }

    report = _report("bianchi_classical", target, [G.name], tol)
    return run_pointwise(report, points, residual_at)


# -------------------------------
# Ricci Identities
# -------------------------------

def check_ricci_identity(
    K: Optional[LinearConnection],
    G: Optional[ClassicalConnection],
    t: FieldType,
    Phi: TensorField,
    points: Sequence[Point],
    tol: float = CHECK_TOLERANCE,
    R: Optional[CurvatureField] = None,
    target: Optional[List[str]] = None,
    K2: Optional[LinearConnection] = None,
) -> CheckReport:
    """Alt nabla^2 Phi = -1/2 R[K^p_q (x) K'^p2_q2 (x) Gamma^r_s] acting on Phi"""
    second = nabla(K, G, t.with_extra_form(), nabla(K, G, t, Phi, K2), K2)
    Rk = (R if R is not None else curvature(K)) if t.has_fiber else None
    Rk2 = curvature(K2) if K2 is not None and t.has_second_fiber else None
    RG = curvature_classical(G) if G is not None and t.has_base else None

    def residual_at(p: Point) -> float:
        lhs = alt_last_two(eval_field(second, p))
        action = curvature_product_action(K, G, t, Rk, RG, eval_field(Phi, p), p, K2=K2, Rk2=Rk2)
        return _max_abs(lhs.entries + 0.5 * action.entries)

    default = [c.name for c in (K, K2, G) if c is not None]
    report = _report("ricci", target, default, tol, type=t)
    return run_pointwise(report, points, residual_at)


def check_ricci_on_curvature(
    K: LinearConnection,
    G: Optional[ClassicalConnection],
    points: Sequence[Point],
    tol: float = CHECK_TOLERANCE,
    R: Optional[CurvatureField] = None,
    target: Optional[List[str]] = None,
) -> CheckReport:
    """Alt nabla^2 R[K] against its expansion in products of R[K] and R[Gamma]"""
    R = R if R is not None else curvature(K)
    first = nabla(K, G, CURVATURE_TYPE, R.field)
    second = nabla(K, G, CURVATURE_TYPE.with_extra_form(), first)
    RG = curvature_classical(G) if G is not None else None

    def residual_at(p: Point) -> float:
        direct = alt_last_two(eval_field(second, p)).entries
        Rv = R.evaluate(p)
        Rg = RG.evaluate(p) if RG is not None else np.zeros((K.m,) * 4)
        expansion = -0.5 * (
            np.einsum("ipab,pjlm->ijlmab", Rv, Rv)
            - np.einsum("pjab,iplm->ijlmab", Rv, Rv)
            - np.einsum("wlab,ijwm->ijlmab", Rg, Rv)
            - np.einsum("wmab,ijlw->ijlmab", Rg, Rv)
        )
        return _max_abs(direct - expansion)

    report = _report("ricci_on_curvature", target, [K.name] + ([G.name] if G else []), tol)
    return run_pointwise(report, points, residual_at)


# -------------------------------
# Induced Connection Checks
# -------------------------------

def check_product_connection(
    K: LinearConnection,
    G: ClassicalConnection,
    t: FieldType,
    Phi: TensorField,
    points: Sequence[Point],
    tol: float = CHECK_TOLERANCE,
    target: Optional[List[str]] = None,
    K2: Optional[LinearConnection] = None,
) -> CheckReport:
    """Materialized product connection on flattened Phi against the slot-by-slot differential"""
    C = product_coefficients(K, G, t, K2)
    flat = flatten(Phi)
    rank = flat.shape.dims.n

    def residual_at(p: Point) -> float:
        materialized = covariant_apply(C, None, FieldType.of(1, 0, 0, 0), flat, p).entries
        implicit = covariant_apply(K, G, t, Phi, p, K2).entries.reshape(rank, K.m)
        return _max_abs(materialized - implicit)

    default = [c.name for c in (K, K2 if t.has_second_fiber else None, G) if c is not None]
    report = _report("product_connection", target, default, tol, type=t, rank=rank)
    return run_pointwise(report, points, residual_at)


def check_duality_pairing(
    K: LinearConnection,
    G: Optional[ClassicalConnection],
    Phi: TensorField,
    Psi: TensorField,
    points: Sequence[Point],
    tol: float = CHECK_TOLERANCE,
    target: Optional[List[str]] = None,
) -> CheckReport:
    """d<Phi, Psi> = <nabla Phi, Psi> + <Phi, nabla* Psi>, nabla* taken from dual(K)"""
    m, n = K.m, K.n
    require_field_shape(Phi, FieldType.of(1, 0, 0, 0), m, n)
    require_field_shape(Psi, FieldType.of(0, 1, 0, 0), m, n)
    K_dual = dual(K)
    Psi_up = retag(Psi, (IndexSort.FIBER_UP,), Psi.shape.dims)
    pairing = total(mul(Phi.entries[i], Psi.entries[i]) for i in range(n))
    gradient = [diff_symbolic(pairing, nu + 1) for nu in range(m)]

    def residual_at(p: Point) -> float:
        lhs = np.array([evaluate(g, p) for g in gradient])
        d_phi = covariant_apply(K, G, FieldType.of(1, 0, 0, 0), Phi, p).entries
        d_psi = covariant_apply(K_dual, G, FieldType.of(1, 0, 0, 0), Psi_up, p).entries
        phi, psi = eval_field(Phi, p).entries, eval_field(Psi, p).entries
        rhs = np.einsum("iv,i->v", d_phi, psi) + np.einsum("i,iv->v", phi, d_psi)
        return _max_abs(lhs - rhs)

    report = _report("duality_pairing", target, [K.name] + ([G.name] if G else []), tol)
    return run_pointwise(report, points, residual_at)
