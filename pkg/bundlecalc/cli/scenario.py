"""Scenario files: a line-oriented text format with bracketed sections.

    [space] base_dim = 2
    [bundle E] rank = 2
    [connection K on E]
    K[1,2,1] = x2
    [classical Gamma]
    Gamma[1,1,2] = x1
    Gamma[2,1,1] = x1
    [field Phi type (1,0,0,0) on E]
    Phi[2] = 1
    [checks]
    bianchi_linear K Gamma
    ricci Phi K Gamma tol=1e-6 points=3
    [options] tol = 1e-8  points = 5  seed = 42

Indices are 1-based, ``#`` starts a comment, omitted coefficients are zero.
"""

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from pydantic import ValidationError

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
from bundlecalc.geometry.connections import ClassicalConnection, LinearConnection, SymmetryError
from bundlecalc.geometry.scalar_field import ExpressionError, ExpressionSyntaxError, parse
from bundlecalc.geometry.tensor_core import ShapeError, TensorField, TensorShape

logger = logging.getLogger(__name__)


class ScenarioError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


# Argument kinds per check; a trailing "?" marks an optional argument.
CHECK_SIGNATURES: Dict[str, Tuple[str, ...]] = {
    "curvature": ("connection",),
    "dual_curvature": ("connection",),
    "tensor_curvature": ("connection", "connection"),
    "bilinear_decomposition": ("connection", "connection"),
    "bianchi_linear": ("connection", "classical?"),
    "bianchi_classical": ("classical",),
    "ricci": ("field", "connection?", "classical?"),
    "ricci_on_curvature": ("connection", "classical?"),
    "product_connection": ("field", "connection", "classical?"),
    "duality_pairing": ("field", "field", "connection", "classical?"),
}

_HEADER = re.compile(r"^\[([^\]]*)\](.*)$")
_ENTRY = re.compile(r"^(\w+)\s*\[([^\]]*)\]\s*=\s*(.+)$")
_SCALAR_ENTRY = re.compile(r"^(\w+)\s*=\s*(.+)$")
_SETTING = re.compile(r"(\w+)\s*=\s*(\S+)")
_FIELD_HEADER = re.compile(
    r"^field\s+(\w+)\s+type\s*\(\s*(\d+)\s*,\s*(\d+)\s*,\s*(\d+)\s*,\s*(\d+)\s*\)(?:\s+on\s+(\w+))?$"
)


def _settings(text: str, line: int) -> Dict[str, str]:
    """Parse 'key = value' pairs; anything left over is an error"""
    pairs = dict(_SETTING.findall(text))
    if _SETTING.sub("", text).strip():
        raise ScenarioError(f"Cannot read settings '{text.strip()}'", line)
    return pairs


def _number(value: str, kind, key: str, line: int):
    try:
        return kind(value)
    except ValueError:
        raise ScenarioError(f"{key} must be {'an integer' if kind is int else 'a number'}, got '{value}'", line)


@dataclass
class _Section:
    kind: str
    line: int
    name: Optional[str] = None
    bundle: Optional[str] = None
    field_type: Optional[FieldType] = None
    settings: Dict[str, str] = field(default_factory=dict)
    entries: List[CoefficientEntry] = field(default_factory=list)
    checks: List[CheckRequest] = field(default_factory=list)


# -------------------------------
# Reading
# -------------------------------

class _ScenarioReader:
    def __init__(self, text: str):
        self.text = text
        self.sections: List[_Section] = []

    def read(self) -> List[_Section]:
        for number, raw in enumerate(self.text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            header = _HEADER.match(line)
            if header:
                self.sections.append(self._open(header.group(1).strip(), header.group(2), number))
            elif not self.sections:
                raise ScenarioError(f"Content before the first section: '{line}'", number)
            else:
                self._body(self.sections[-1], line, number)
        return self.sections

    def _open(self, title: str, rest: str, line: int) -> _Section:
        words = title.split()
        if title == "space":
            section = _Section("space", line)
        elif title in ("checks", "options"):
            section = _Section(title, line)
        elif len(words) == 2 and words[0] == "bundle":
            section = _Section("bundle", line, name=words[1])
        elif len(words) == 4 and words[0] == "connection" and words[2] == "on":
            section = _Section("connection", line, name=words[1], bundle=words[3])
        elif len(words) == 2 and words[0] == "classical":
            section = _Section("classical", line, name=words[1])
        elif _FIELD_HEADER.match(title):
            match = _FIELD_HEADER.match(title)
            p, q, r, s = (int(match.group(k)) for k in range(2, 6))
            section = _Section(
                "field", line, name=match.group(1), bundle=match.group(6), field_type=FieldType.of(p, q, r, s)
            )
        else:
            raise ScenarioError(f"Unknown section [{title}]", line)
        section.settings = _settings(rest, line)
        if section.settings and section.kind not in ("space", "bundle", "options"):
            raise ScenarioError(f"[{title}] takes no settings", line)
        return section

    def _body(self, section: _Section, line: str, number: int):
        if section.kind in ("space", "bundle", "options"):
            section.settings.update(_settings(line, number))
        elif section.kind == "checks":
            section.checks.append(self._check(line, number))
        elif section.kind in ("connection", "classical", "field"):
            section.entries.append(self._entry(section, line, number))

    @staticmethod
    def _entry(section: _Section, line: str, number: int) -> CoefficientEntry:
        match = _ENTRY.match(line)
        if match:
            name, raw_index, expr = match.groups()
            try:
                index = tuple(int(part) for part in raw_index.split(",")) if raw_index.strip() else ()
            except ValueError:
                raise ScenarioError(f"Malformed index [{raw_index}]", number)
        else:
            match = _SCALAR_ENTRY.match(line)
            if not match:
                raise ScenarioError(f"Expected 'Name[i,...] = expression', got '{line}'", number)
            name, expr = match.groups()
            index = ()
        if name != section.name:
            raise ScenarioError(f"Entry for '{name}' inside section of '{section.name}'", number)
        return CoefficientEntry(index=index, expr=expr.strip(), line=number)

    @staticmethod
    def _check(line: str, number: int) -> CheckRequest:
        words = line.split()
        name, args, overrides = words[0], [], {}
        for word in words[1:]:
            if "=" in word:
                key, _, value = word.partition("=")
                overrides[key] = value
            else:
                args.append(word)
        if name not in CHECK_SIGNATURES:
            raise ScenarioError(f"Unknown check '{name}'", number)
        unknown = set(overrides) - {"tol", "points"}
        if unknown:
            raise ScenarioError(f"Unknown check option(s) {sorted(unknown)}", number)
        tol = _number(overrides["tol"], float, "tol", number) if "tol" in overrides else None
        points = _number(overrides["points"], int, "points", number) if "points" in overrides else None
        if tol is not None and tol <= 0 or points is not None and points < 0:
            raise ScenarioError("tol must be positive and points non-negative", number)
        return CheckRequest(name=name, args=args, tol=tol, points=points)


def _assemble(sections: List[_Section]) -> Tuple[Scenario, Dict[str, int]]:
    spaces = [s for s in sections if s.kind == "space"]
    if len(spaces) != 1:
        raise ScenarioError(f"Expected exactly one [space] section, found {len(spaces)}")
    space = spaces[0]
    if set(space.settings) != {"base_dim"}:
        raise ScenarioError("[space] takes exactly one setting, base_dim", space.line)
    base_dim = _number(space.settings["base_dim"], int, "base_dim", space.line)
    if base_dim < 1:
        raise ScenarioError("base_dim must be at least 1", space.line)

    lines: Dict[str, int] = {}
    bundles, connections, fields, checks = [], [], [], []
    classical = None
    options = ScenarioOptions()
    for section in sections:
        if section.name is not None:
            lines[section.name] = section.line
        if section.kind == "bundle":
            if set(section.settings) != {"rank"}:
                raise ScenarioError(f"[bundle {section.name}] takes exactly one setting, rank", section.line)
            rank = _number(section.settings["rank"], int, "rank", section.line)
            if rank < 1:
                raise ScenarioError("rank must be at least 1", section.line)
            bundles.append(BundleSpec(name=section.name, rank=rank))
        elif section.kind == "connection":
            connections.append(ConnectionSpec(name=section.name, bundle=section.bundle, entries=section.entries))
        elif section.kind == "classical":
            if classical is not None:
                raise ScenarioError("Only one [classical] section is allowed", section.line)
            classical = ClassicalSpec(name=section.name, entries=section.entries)
        elif section.kind == "field":
            fields.append(
                FieldSpec(name=section.name, field_type=section.field_type, bundle=section.bundle, entries=section.entries)
            )
        elif section.kind == "checks":
            checks.extend(section.checks)
        elif section.kind == "options":
            unknown = set(section.settings) - {"tol", "points", "seed", "perturb_curvature"}
            if unknown:
                raise ScenarioError(f"Unknown option(s) {sorted(unknown)}", section.line)
            values = dict(options.model_dump(exclude_unset=True))
            for key, value in section.settings.items():
                kind = int if key in ("points", "seed") else float
                values[key] = _number(value, kind, key, section.line)
            try:
                options = ScenarioOptions(**values)
            except ValidationError as e:
                raise ScenarioError(f"Invalid options: {e.errors()[0]['msg']}", section.line)

    try:
        scenario = Scenario(
            base_dim=base_dim,
            bundles=bundles,
            connections=connections,
            classical=classical,
            fields=fields,
            checks=checks,
            options=options,
        )
    except ValidationError as e:
        raise ScenarioError(e.errors()[0]["msg"])
    return scenario, lines


# -------------------------------
# Validation
# -------------------------------

@dataclass
class ScenarioObjects:
    """Library objects built from a Scenario"""
    connections: Dict[str, LinearConnection] = field(default_factory=dict)
    classical: Optional[ClassicalConnection] = None
    fields: Dict[str, Tuple[FieldType, TensorField]] = field(default_factory=dict)


def _field_entries(entries: List[CoefficientEntry], m: int, owner: str) -> Dict[Tuple[int, ...], object]:
    parsed = {}
    for entry in entries:
        if entry.index in parsed:
            raise ScenarioError(f"Duplicate entry {owner}{list(entry.index)}", entry.line)
        try:
            parsed[entry.index] = parse(entry.expr, m)
        except ExpressionSyntaxError as e:
            raise ScenarioError(f"{e} (column {e.offset + 1} of '{entry.expr}')", entry.line)
        except ExpressionError as e:
            raise ScenarioError(str(e), entry.line)
    return parsed


def _check_bounds(entries: List[CoefficientEntry], extents: Tuple[int, ...], owner: str):
    for entry in entries:
        if len(entry.index) != len(extents):
            raise ScenarioError(f"{owner} takes {len(extents)} indices, got {list(entry.index)}", entry.line)
        for position, (i, extent) in enumerate(zip(entry.index, extents)):
            if not 1 <= i <= extent:
                raise ScenarioError(
                    f"Index {position + 1} of {owner}{list(entry.index)} out of range [1, {extent}]", entry.line
                )


def build_objects(scenario: Scenario, lines: Optional[Dict[str, int]] = None) -> ScenarioObjects:
    lines = lines or {}
    m = scenario.base_dim
    objects = ScenarioObjects()

    for spec in scenario.connections:
        bundle = scenario.bundle(spec.bundle)
        if bundle is None:
            raise ScenarioError(f"Connection {spec.name} refers to unknown bundle '{spec.bundle}'", lines.get(spec.name))
        _check_bounds(spec.entries, (bundle.rank, bundle.rank, m), spec.name)
        entries = _field_entries(spec.entries, m, spec.name)
        objects.connections[spec.name] = LinearConnection.from_entries(m, bundle.rank, entries, spec.name)

    if scenario.classical is not None:
        spec = scenario.classical
        _check_bounds(spec.entries, (m, m, m), spec.name)
        entries = _field_entries(spec.entries, m, spec.name)
        try:
            objects.classical = ClassicalConnection.from_entries(m, entries, spec.name)
        except SymmetryError as e:
            raise ScenarioError(f"Classical connection is not symmetric: {e}", lines.get(spec.name))

    for spec in scenario.fields:
        t = spec.field_type
        if t.p + t.q > 0 or spec.bundle is not None:
            bundle = scenario.bundle(spec.bundle) if spec.bundle else None
            if bundle is None:
                raise ScenarioError(f"Field {spec.name} needs a known bundle, got '{spec.bundle}'", lines.get(spec.name))
            n = bundle.rank
        else:
            n = 1
        shape = TensorShape.for_field_type(t, m, n)
        _check_bounds(spec.entries, shape.extents, spec.name)
        entries = _field_entries(spec.entries, m, spec.name)
        try:
            field_value = TensorField.from_entries(shape, entries)
        except (ShapeError, ExpressionError) as e:
            raise ScenarioError(str(e), lines.get(spec.name))
        objects.fields[spec.name] = (t, field_value)

    for request in scenario.checks:
        _check_arguments(scenario, request)
    return objects


def _kind_of(scenario: Scenario, name: str) -> Optional[str]:
    if scenario.connection(name):
        return "connection"
    if scenario.classical is not None and scenario.classical.name == name:
        return "classical"
    if scenario.field(name):
        return "field"
    return None


def _check_arguments(scenario: Scenario, request: CheckRequest):
    signature = CHECK_SIGNATURES[request.name]
    kinds = [_kind_of(scenario, name) for name in request.args]
    for name, kind in zip(request.args, kinds):
        if kind is None:
            raise ScenarioError(f"Check {request.name} refers to unknown object '{name}'")

    position = 0
    for slot in signature:
        wanted, optional = slot.rstrip("?"), slot.endswith("?")
        if position < len(kinds) and kinds[position] == wanted:
            position += 1
        elif not optional:
            raise ScenarioError(f"Check {request.name} expects arguments {' '.join(signature)}, got {request.args}")
    if position != len(kinds):
        raise ScenarioError(f"Check {request.name} expects arguments {' '.join(signature)}, got {request.args}")

    connections = [scenario.connection(a) for a, kind in zip(request.args, kinds) if kind == "connection"]
    connection = connections[0] if connections else None
    for name in request.args:
        spec = scenario.field(name)
        if spec is None:
            continue
        t = spec.field_type
        if t.p + t.q > 0:
            if connection is None:
                raise ScenarioError(f"Check {request.name}: field {name} has fiber slots and needs a connection")
            if spec.bundle != connection.bundle:
                raise ScenarioError(f"Check {request.name}: field {name} lives on {spec.bundle}, {connection.name} on {connection.bundle}")

    if request.name == "duality_pairing":
        phi, psi = scenario.field(request.args[0]), scenario.field(request.args[1])
        if phi.field_type.as_tuple() != (1, 0, 0, 0) or psi.field_type.as_tuple() != (0, 1, 0, 0):
            raise ScenarioError("duality_pairing needs a (1,0,0,0) field and a (0,1,0,0) field")
    if request.name in ("tensor_curvature", "bilinear_decomposition") and request.args[0] == request.args[1]:
        logger.info(f"Check {request.name} pairs {request.args[0]} with itself")


# -------------------------------
# Public API
# -------------------------------

def parse_scenario_text(text: str) -> Scenario:
    scenario, lines = _assemble(_ScenarioReader(text).read())
    build_objects(scenario, lines)
    return scenario


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ScenarioError(f"Cannot read scenario {path}: {e}")
    scenario = parse_scenario_text(text)
    logger.info(
        f"Loaded scenario {path.name}: m={scenario.base_dim}, {len(scenario.connections)} connection(s), "
        f"{len(scenario.fields)} field(s), {len(scenario.checks)} check(s)"
    )
    return scenario


def dump_scenario(scenario: Scenario) -> str:
    """Text form of a scenario; parse_scenario_text(dump_scenario(s)) == s"""
    out = [f"[space] base_dim = {scenario.base_dim}"]
    for bundle in scenario.bundles:
        out.append(f"[bundle {bundle.name}] rank = {bundle.rank}")
    for connection in scenario.connections:
        out.append(f"[connection {connection.name} on {connection.bundle}]")
        out.extend(_entry_line(connection.name, e) for e in connection.entries)
    if scenario.classical is not None:
        out.append(f"[classical {scenario.classical.name}]")
        out.extend(_entry_line(scenario.classical.name, e) for e in scenario.classical.entries)
    for spec in scenario.fields:
        bundle = f" on {spec.bundle}" if spec.bundle else ""
        t = spec.field_type
        out.append(f"[field {spec.name} type ({t.p},{t.q},{t.r},{t.s}){bundle}]")
        out.extend(_entry_line(spec.name, e) for e in spec.entries)
    if scenario.checks:
        out.append("[checks]")
        for request in scenario.checks:
            words = [request.name, *request.args]
            if request.tol is not None:
                words.append(f"tol={request.tol!r}")
            if request.points is not None:
                words.append(f"points={request.points}")
            out.append(" ".join(words))

    options = scenario.options
    settings = []
    if options.tol is not None:
        settings.append(f"tol = {options.tol!r}")
    if options.points is not None:
        settings.append(f"points = {options.points}")
    if options.seed is not None:
        settings.append(f"seed = {options.seed}")
    if options.perturb_curvature:
        settings.append(f"perturb_curvature = {options.perturb_curvature!r}")
    if settings:
        out.append("[options] " + "  ".join(settings))
    return "\n".join(out) + "\n"


def _entry_line(name: str, entry: CoefficientEntry) -> str:
    if not entry.index:
        return f"{name} = {entry.expr}"
    return f"{name}[{','.join(str(i) for i in entry.index)}] = {entry.expr}"
