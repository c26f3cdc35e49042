import logging
import random
from typing import List, Tuple

from bundlecalc.common.config import MAX_GENERATED_DEGREE, MAX_GENERATED_DIM
from bundlecalc.common.models import (
    BundleSpec,
    CheckRequest,
    ClassicalSpec,
    CoefficientEntry,
    ConnectionSpec,
    FieldSpec,
    FieldType,
    Scenario,
    ScenarioOptions,
)

logger = logging.getLogger(__name__)

MAX_TERMS = 3


def _monomial(rng: random.Random, m: int, degree: int) -> Tuple[int, ...]:
    exponents = [0] * m
    for _ in range(rng.randint(0, degree)):
        exponents[rng.randrange(m)] += 1
    return tuple(exponents)


def random_polynomial(rng: random.Random, m: int, degree: int) -> str:
    """Sparse polynomial in x1..xm with coefficients in [-1, 1], rounded to 6 decimals"""
    terms = {}
    for _ in range(rng.randint(1, MAX_TERMS)):
        exponents = _monomial(rng, m, degree)
        coefficient = round(rng.uniform(-1.0, 1.0), 6)
        if coefficient != 0.0:
            terms[exponents] = coefficient

    text = ""
    for exponents, coefficient in sorted(terms.items(), reverse=True):
        factors = [f"{abs(coefficient):.6f}"]
        for k, e in enumerate(exponents, start=1):
            if e == 1:
                factors.append(f"x{k}")
            elif e > 1:
                factors.append(f"x{k}^{e}")
        monomial = "*".join(factors)
        if not text:
            text = f"-{monomial}" if coefficient < 0 else monomial
        else:
            text += f" - {monomial}" if coefficient < 0 else f" + {monomial}"
    return text or "0"


def _sparse_entries(rng: random.Random, extents: Tuple[int, ...], m: int, degree: int) -> List[CoefficientEntry]:
    entries = []
    for index in _indices(extents):
        if rng.random() < 0.5:
            entries.append(CoefficientEntry(index=index, expr=random_polynomial(rng, m, degree)))
    return entries


def _indices(extents: Tuple[int, ...]) -> List[Tuple[int, ...]]:
    indices = [()]
    for extent in extents:
        indices = [index + (i,) for index in indices for i in range(1, extent + 1)]
    return indices


def _symmetric_gamma(rng: random.Random, m: int, degree: int) -> List[CoefficientEntry]:
    """Gamma[a,b,c] drawn for a <= c and mirrored to Gamma[c,b,a]"""
    drawn = {}
    for a, b, c in _indices((m, m, m)):
        if a <= c and rng.random() < 0.5:
            drawn[(a, b, c)] = random_polynomial(rng, m, degree)
    entries = []
    for a, b, c in _indices((m, m, m)):
        expr = drawn.get((min(a, c), b, max(a, c)))
        if expr is not None:
            entries.append(CoefficientEntry(index=(a, b, c), expr=expr))
    return entries


def generate_random(seed: int, m: int, n: int, degree: int) -> Scenario:
    """Random polynomial K, K' and symmetric Gamma with every check enabled"""
    if not 1 <= m <= MAX_GENERATED_DIM or not 1 <= n <= MAX_GENERATED_DIM:
        raise ValueError(f"m and n must lie in [1, {MAX_GENERATED_DIM}], got m={m}, n={n}")
    if not 0 <= degree <= MAX_GENERATED_DEGREE:
        raise ValueError(f"degree must lie in [0, {MAX_GENERATED_DEGREE}], got {degree}")

    rng = random.Random(seed)
    logger.info(f"Generating scenario: seed={seed}, m={m}, n={n}, degree={degree}")

    connections = [
        ConnectionSpec(name="K", bundle="E", entries=_sparse_entries(rng, (n, n, m), m, degree)),
        ConnectionSpec(name="Kprime", bundle="Eprime", entries=_sparse_entries(rng, (n, n, m), m, degree)),
    ]
    classical = ClassicalSpec(name="Gamma", entries=_symmetric_gamma(rng, m, degree))

    field_types = {
        "Phi": (FieldType.of(1, 0, 0, 0), "E"),
        "Psi": (FieldType.of(0, 1, 0, 0), "E"),
        "Mixed": (FieldType.of(1, 0, 0, 1), "E"),
        "Omega": (FieldType.of(0, 0, 1, 1), None),
    }
    fields = []
    for name, (t, bundle) in field_types.items():
        extents = (n,) * (t.p + t.q) + (m,) * (t.r + t.s)
        fields.append(FieldSpec(name=name, field_type=t, bundle=bundle, entries=_sparse_entries(rng, extents, m, degree)))

    checks = [
        CheckRequest(name="curvature", args=["K"]),
        CheckRequest(name="dual_curvature", args=["K"]),
        CheckRequest(name="tensor_curvature", args=["K", "Kprime"]),
        CheckRequest(name="bilinear_decomposition", args=["K", "Kprime"]),
        CheckRequest(name="bianchi_linear", args=["K", "Gamma"]),
        CheckRequest(name="bianchi_classical", args=["Gamma"]),
        CheckRequest(name="ricci", args=["Phi", "K", "Gamma"]),
        CheckRequest(name="ricci", args=["Psi", "K", "Gamma"]),
        CheckRequest(name="ricci", args=["Mixed", "K", "Gamma"]),
        CheckRequest(name="ricci", args=["Omega", "Gamma"]),
        CheckRequest(name="ricci_on_curvature", args=["K", "Gamma"]),
        CheckRequest(name="product_connection", args=["Mixed", "K", "Gamma"]),
        CheckRequest(name="duality_pairing", args=["Phi", "Psi", "K", "Gamma"]),
    ]

    return Scenario(
        base_dim=m,
        bundles=[BundleSpec(name="E", rank=n), BundleSpec(name="Eprime", rank=n)],
        connections=connections,
        classical=classical,
        fields=fields,
        checks=checks,
        options=ScenarioOptions(seed=seed),
    )
