from typing import Dict, List, Optional, Tuple
from pydantic import BaseModel, Field, model_validator


class FieldType(BaseModel):
    """Multiplicities of the E, E*, TM and T*M factors of a field, plus optional E' and E'* factors"""
    p: int = Field(default=0, ge=0, description="Number of E factors")
    q: int = Field(default=0, ge=0, description="Number of E* factors")
    r: int = Field(default=0, ge=0, description="Number of TM factors")
    s: int = Field(default=0, ge=0, description="Number of T*M factors")
    p2: int = Field(default=0, ge=0, description="Number of factors of a second bundle E'")
    q2: int = Field(default=0, ge=0, description="Number of E'* factors")

    model_config = {"frozen": True}

    @classmethod
    def of(cls, p: int, q: int, r: int, s: int, p2: int = 0, q2: int = 0) -> "FieldType":
        return cls(p=p, q=q, r=r, s=s, p2=p2, q2=q2)

    def as_tuple(self) -> Tuple[int, int, int, int]:
        return (self.p, self.q, self.r, self.s)

    @property
    def has_fiber(self) -> bool:
        return self.p + self.q > 0

    @property
    def has_second_fiber(self) -> bool:
        return self.p2 + self.q2 > 0

    @property
    def has_base(self) -> bool:
        return self.r + self.s > 0

    def with_extra_form(self) -> "FieldType":
        """Type of the covariant differential: one more T*M factor"""
        return self.model_copy(update={"s": self.s + 1})

    def __str__(self) -> str:
        if self.has_second_fiber:
            return f"({self.p},{self.q},{self.r},{self.s};{self.p2},{self.q2})"
        return f"({self.p},{self.q},{self.r},{self.s})"


class PointResidual(BaseModel):
    """Residual of one identity at one sample point"""
    index: int = Field(description="Position of the point in the report's point list")
    point: List[float] = Field(description="Base coordinates of the sample point")
    residual: float = Field(description="Max-abs residual over all entries (inf on evaluation error)")
    components: Dict[str, float] = Field(default_factory=dict, description="Residuals of sub-identities, if any")
    error: Optional[str] = Field(default=None, description="Evaluation error at this point, if any")


class CheckReport(BaseModel):
    """Outcome of one identity check over a set of sample points"""
    name: str = Field(description="Identity name, e.g. bianchi_linear")
    target: List[str] = Field(default_factory=list, description="Scenario objects the check ran on")
    tolerance: float = Field(description="Residual bound for a point to pass")
    residuals: List[PointResidual] = Field(default_factory=list, description="Per-point residuals in point order")
    passed: bool = Field(default=False, description="True iff every residual is within tolerance")
    seed: Optional[int] = Field(default=None, description="Seed used to draw the sample points")
    parameters: Dict[str, str] = Field(default_factory=dict, description="Parameters used by the check")
    details: List[str] = Field(default_factory=list, description="Human-readable extra lines")

    @property
    def label(self) -> str:
        return f"{self.name}[{','.join(self.target)}]" if self.target else self.name

    @property
    def worst(self) -> float:
        return max((r.residual for r in self.residuals), default=0.0)

    def finalize(self) -> "CheckReport":
        self.passed = all(r.error is None and r.residual <= self.tolerance for r in self.residuals)
        return self


# -------------------------------
# Scenario Models
# -------------------------------

class CoefficientEntry(BaseModel):
    """One sparse coefficient assignment, 1-based indices"""
    index: Tuple[int, ...] = Field(description="1-based multi-index")
    expr: str = Field(description="Coefficient expression in the scalar DSL")
    line: Optional[int] = Field(default=None, exclude=True, description="Source line, for error messages")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CoefficientEntry):
            return NotImplemented
        return self.index == other.index and self.expr == other.expr


class BundleSpec(BaseModel):
    name: str
    rank: int = Field(ge=1)


class ConnectionSpec(BaseModel):
    name: str
    bundle: str = Field(description="Name of the bundle the connection lives on")
    entries: List[CoefficientEntry] = Field(default_factory=list)


class ClassicalSpec(BaseModel):
    name: str
    entries: List[CoefficientEntry] = Field(default_factory=list)


class FieldSpec(BaseModel):
    name: str
    field_type: FieldType
    bundle: Optional[str] = Field(default=None, description="Bundle of the fiber slots; optional when p = q = 0")
    entries: List[CoefficientEntry] = Field(default_factory=list)


class CheckRequest(BaseModel):
    name: str = Field(description="Check name, e.g. ricci")
    args: List[str] = Field(default_factory=list, description="Names of scenario objects")
    tol: Optional[float] = Field(default=None, description="Per-check tolerance override")
    points: Optional[int] = Field(default=None, ge=0, description="Per-check random point count override")


class ScenarioOptions(BaseModel):
    tol: Optional[float] = Field(default=None, gt=0)
    points: Optional[int] = Field(default=None, ge=0)
    seed: Optional[int] = None
    perturb_curvature: float = Field(default=0.0, description="Negative-control perturbation of R^1_1,12")


class Scenario(BaseModel):
    """Fully validated scenario: one chart, its bundles, connections, fields and checks"""
    base_dim: int = Field(ge=1)
    bundles: List[BundleSpec] = Field(default_factory=list)
    connections: List[ConnectionSpec] = Field(default_factory=list)
    classical: Optional[ClassicalSpec] = None
    fields: List[FieldSpec] = Field(default_factory=list)
    checks: List[CheckRequest] = Field(default_factory=list)
    options: ScenarioOptions = Field(default_factory=ScenarioOptions)

    @model_validator(mode="after")
    def unique_names(self):
        names = [b.name for b in self.bundles] + [c.name for c in self.connections] + [f.name for f in self.fields]
        if self.classical:
            names.append(self.classical.name)
        duplicates = {n for n in names if names.count(n) > 1}
        if duplicates:
            raise ValueError(f"Duplicate names in scenario: {sorted(duplicates)}")
        return self

    def bundle(self, name: str) -> Optional[BundleSpec]:
        return next((b for b in self.bundles if b.name == name), None)

    def connection(self, name: str) -> Optional[ConnectionSpec]:
        return next((c for c in self.connections if c.name == name), None)

    def field(self, name: str) -> Optional[FieldSpec]:
        return next((f for f in self.fields if f.name == name), None)
