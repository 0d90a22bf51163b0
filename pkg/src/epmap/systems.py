"""Problem specifications: parsing, validation, builtin examples.

A SystemSpec is a JSON document (or the shortcut ``builtin:example-P``)
describing a control-affine system: dimension, polynomial fields in text
form, initial point, reference control, optional candidate covectors and
test controls, probe parameters and tolerances.  Parsing round-trips
(parse -> serialize -> parse gives an identical spec).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

from .errors import SignalParseError, ValidationError
from .polyalg import PolyVectorField, parse_polynomial
from .signals import ControlSignal, parse_channel

SCHEMA_VERSION = 1

_BUILTIN_RE = re.compile(r"^builtin:example-(-?\d+)$")

DEFAULT_TOLERANCES = {
    "svd": 1e-9,
    "membership": 1e-8,
    "condition": 1e-8,
}


@dataclass(frozen=True)
class SystemSpec:
    name: str
    dimension: int
    k: int
    field_texts: Tuple[Tuple[str, ...], ...]
    q0: Tuple[float, ...]
    u_texts: Tuple[str, ...]
    candidate_covectors: Tuple[Tuple[float, ...], ...] = ()
    test_control_texts: Tuple[Tuple[str, ...], ...] = ()
    probe_max_freq: int = 8
    tolerances: Dict[str, float] = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    schema_version: int = SCHEMA_VERSION

    def fields(self) -> List[PolyVectorField]:
        out = []
        for comps in self.field_texts:
            out.append(
                PolyVectorField(
                    [parse_polynomial(s, self.dimension) for s in comps]
                )
            )
        return out

    def control(self) -> ControlSignal:
        return ControlSignal([parse_channel(s) for s in self.u_texts])

    def test_controls(self) -> List[ControlSignal]:
        return [
            ControlSignal([parse_channel(s) for s in texts])
            for texts in self.test_control_texts
        ]

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "name": self.name,
            "dimension": self.dimension,
            "k": self.k,
            "fields": [list(c) for c in self.field_texts],
            "q0": list(self.q0),
            "u": list(self.u_texts),
            "candidate_covectors": [list(c) for c in self.candidate_covectors],
            "test_controls": [list(c) for c in self.test_control_texts],
            "probe_max_freq": self.probe_max_freq,
            "tolerances": dict(self.tolerances),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def builtin_example(p: int) -> SystemSpec:
    """The R^3 model family: f1 = d/dx1, f2 = (1 - x1) d/dx2 + x1^p d/dx3."""
    if p < 1:
        raise ValidationError(f"builtin example needs p >= 1, got {p}")
    return SystemSpec(
        name=f"example-{p}",
        dimension=3,
        k=2,
        field_texts=(
            ("1", "0", "0"),
            ("0", "1 - x1", f"x1^{p}" if p != 1 else "x1"),
        ),
        q0=(0.0, 0.0, 0.0),
        u_texts=("0", "1"),
        candidate_covectors=((0.0, 0.0, 1.0),),
        test_control_texts=(("2*pi*sin(2*pi*t)", "1"),),
    )


def spec_from_dict(data: dict) -> SystemSpec:
    if not isinstance(data, dict):
        raise ValidationError("spec document must be a JSON object")
    version = data.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ValidationError(f"unsupported schema version {version}")
    try:
        n = int(data["dimension"])
        k = int(data["k"])
        fields = data["fields"]
        q0 = tuple(float(v) for v in data["q0"])
        u = tuple(str(s) for s in data["u"])
    except KeyError as exc:
        raise ValidationError(f"spec is missing required key {exc}")
    if n < 1 or k < 1:
        raise ValidationError("dimension and k must be positive")
    if len(fields) != k:
        raise ValidationError(f"{len(fields)} fields for k = {k}")
    for i, comps in enumerate(fields):
        if len(comps) != n:
            raise ValidationError(
                f"field {i + 1} has {len(comps)} components, expected {n}"
            )
    if len(q0) != n:
        raise ValidationError(f"q0 has {len(q0)} entries, expected {n}")
    if len(u) != k:
        raise ValidationError(f"u has {len(u)} channels, expected {k}")
    covs = tuple(
        tuple(float(v) for v in row) for row in data.get("candidate_covectors", [])
    )
    for row in covs:
        if len(row) != n:
            raise ValidationError("candidate covector of wrong dimension")
    tests = tuple(
        tuple(str(s) for s in row) for row in data.get("test_controls", [])
    )
    for row in tests:
        if len(row) != k:
            raise ValidationError("test control with wrong channel count")
    spec = SystemSpec(
        name=str(data.get("name", "unnamed")),
        dimension=n,
        k=k,
        field_texts=tuple(tuple(str(s) for s in comps) for comps in fields),
        q0=q0,
        u_texts=u,
        candidate_covectors=covs,
        test_control_texts=tests,
        probe_max_freq=int(data.get("probe_max_freq", 8)),
        tolerances={**DEFAULT_TOLERANCES, **data.get("tolerances", {})},
    )
    # parse everything now so malformed text fails at load time
    try:
        spec.fields()
        spec.control()
        spec.test_controls()
    except SignalParseError as exc:
        raise ValidationError(f"parse error in spec: {exc}")
    return spec


def parse_system_spec(source: str) -> SystemSpec:
    """Load a spec from a file path or the ``builtin:example-P`` shortcut."""
    m = _BUILTIN_RE.match(source.strip())
    if m:
        return builtin_example(int(m.group(1)))
    try:
        with open(source) as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ValidationError(f"spec file not found: {source}")
    except json.JSONDecodeError as exc:
        raise ValidationError(f"invalid JSON in {source}: {exc}")
    return spec_from_dict(data)


def roundtrip_identical(spec: SystemSpec) -> bool:
    return spec_from_dict(json.loads(spec.to_json())) == spec
