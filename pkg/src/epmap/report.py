"""Analysis orchestration: runs the module pipeline and assembles a report.

The report is a plain JSON-serializable dict with a versioned schema.
Given the same spec and seed it is byte-identical apart from the timestamp
field, which keeps golden-file diffs meaningful.
"""

from __future__ import annotations

import datetime
import json
from dataclasses import dataclass
from typing import Dict, List

import numpy as np

from . import __version__, kernels
from .conditions import (
    goh_check,
    make_adjoint,
    pmp_check,
    singularity_classify,
    third_order_condition,
)
from .cubic import w0_regular_zero_check
from .endpoint import (
    cokernel,
    dom3_membership,
    first_diff,
    hessian_scalar,
    make_problem,
    probe_basis,
    third_scalar,
)
from .errors import (
    ConstructionError,
    ExactBackendUnavailable,
    MembershipError,
)
from .openness import (
    ball_cover_verify,
    build_corank1_family,
    expansion_order_check,
    make_evaluator,
)
from .signals import ControlSignal
from .systems import SystemSpec

REPORT_SCHEMA_VERSION = 1

# jsonschema document for emitted reports; validated in the test suite and
# available to consumers via validate_report()
REPORT_SCHEMA = {
    "type": "object",
    "required": [
        "schema_version",
        "spec",
        "flow_backend",
        "q1",
        "corank",
        "cokernel_basis",
        "singularity",
        "condition_covector",
        "differentials",
        "provenance",
    ],
    "properties": {
        "schema_version": {"const": REPORT_SCHEMA_VERSION},
        "spec": {"type": "object"},
        "flow_backend": {"enum": ["exact-polynomial", "numeric"]},
        "q1": {"type": "array", "items": {"type": "number"}},
        "corank": {"type": "integer", "minimum": 0},
        "cokernel_basis": {
            "type": "array",
            "items": {"type": "array", "items": {"type": "number"}},
        },
        "singularity": {
            "type": "object",
            "required": ["label", "annihilators", "max_length_component"],
            "properties": {
                "label": {"enum": ["regular", "singular", "strictly singular"]},
            },
        },
        "conditions": {
            "type": "object",
            "properties": {
                name: {
                    "type": "object",
                    "required": ["holds", "max_violation", "tolerance", "symbolic"],
                }
                for name in ("pmp", "goh", "third_order")
            },
        },
        "differentials": {"type": "array", "items": {"type": "object"}},
        "openness": {
            "type": "object",
            "required": ["certified"],
        },
        "provenance": {
            "type": "object",
            "required": [
                "tool_version",
                "kernel_backend",
                "seed",
                "rk_step",
                "grid_size",
                "probe_max_freq",
                "svd_tol",
                "timestamp",
            ],
        },
    },
}


def validate_report(report: dict) -> None:
    """Raise jsonschema.ValidationError if the report violates the schema."""
    import jsonschema

    jsonschema.validate(report, REPORT_SCHEMA)


@dataclass
class ReportFlags:
    rk_step: float = 1e-3
    grid: int = 101
    probe_max_freq: int | None = None  # None: use the spec's value
    svd_tol: float | None = None
    seed: int = 0
    openness: str = "off"  # off | corank1 | general
    eps: float = 0.3
    delta: float = 1e-3
    targets: int = 125
    cover_tol: float = 1e-6
    csv_path: str | None = None  # coverage-grid dump when openness runs


def run_report(spec: SystemSpec, flags: ReportFlags | None = None) -> dict:
    """Execute flow construction, cokernel, conditions and differentials.

    Errors in optional stages (openness constructions, non-exact systems)
    are captured into the report rather than aborting the run.
    """
    flags = flags or ReportFlags()
    svd_tol = flags.svd_tol if flags.svd_tol is not None else spec.tolerances["svd"]
    cond_tol = spec.tolerances["condition"]
    max_freq = (
        flags.probe_max_freq if flags.probe_max_freq is not None else spec.probe_max_freq
    )
    fields = spec.fields()
    u = spec.control()
    problem = make_problem(fields, u, spec.q0, rk_step=flags.rk_step)
    grid = np.linspace(0.0, 1.0, flags.grid)
    probes = probe_basis(spec.k, max_freq)

    ck = cokernel(problem, probe_grid=grid, threshold=svd_tol)
    report: Dict = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "spec": spec.to_dict(),
        "flow_backend": problem.flow.backend,
        "q1": problem.q1.tolist(),
        "corank": ck.corank,
        "cokernel_basis": ck.lambdas.tolist(),
        "cokernel_singular_values": ck.singular_values.tolist(),
    }

    cls = singularity_classify(problem, probes, svd_tol=svd_tol)
    report["singularity"] = cls.to_dict()

    # primary covector: cokernel generator if the point is critical,
    # otherwise the first candidate from the spec
    if ck.corank > 0:
        lam = ck.lambdas[0]
        lam_source = "cokernel"
    elif spec.candidate_covectors:
        lam = np.asarray(spec.candidate_covectors[0], dtype=float)
        lam_source = "candidate"
    else:
        lam = None
        lam_source = "none"
    report["condition_covector"] = {
        "source": lam_source,
        "value": lam.tolist() if lam is not None else None,
    }
    if lam is not None:
        curve = make_adjoint(problem, lam)
        report["conditions"] = {
            "pmp": pmp_check(problem, curve, grid, tol=cond_tol).to_dict(),
            "goh": goh_check(problem, curve, grid, tol=cond_tol).to_dict(),
            "third_order": third_order_condition(
                problem, curve, grid, tol=cond_tol, corank=ck.corank
            ).to_dict(),
        }

    # scalarized differentials for the supplied test controls
    tests = spec.test_controls()
    diff_rows: List[dict] = []
    for idx, v in enumerate(tests):
        row: Dict = {"control": list(spec.test_control_texts[idx])}
        row["first_diff"] = first_diff(problem, v).tolist()
        if problem.is_exact() and ck.corank > 0:
            in_dom = dom3_membership(problem, ck.lambdas, v, probes)
            row["in_domain"] = bool(in_dom)
            hess = [
                hessian_scalar(problem, l, v, v, enforce_kernel=False)
                for l in ck.lambdas
            ]
            row["hessian"] = hess
            thirds = [
                third_scalar(problem, l, v, enforce_domain=False) for l in ck.lambdas
            ]
            row["third"] = thirds
            row["third_representation"] = "ascending"
            if not in_dom:
                row["note"] = (
                    "control is outside dom(D^3): the third value is "
                    "representation-dependent"
                )
        diff_rows.append(row)
    report["differentials"] = diff_rows

    # openness verification
    if flags.openness != "off" and tests and problem.is_exact():
        v = tests[0]
        openness: Dict = {"route": flags.openness}
        try:
            if ck.corank != 1:
                raise ConstructionError(
                    f"openness verification implemented for corank 1, got {ck.corank}"
                )
            lam0 = ck.lambdas[0]
            family = build_corank1_family(problem, lam0, v)
            evaluator = make_evaluator(problem)
            verdict = ball_cover_verify(
                family,
                evaluator,
                delta=flags.delta,
                eps=flags.eps,
                samples=flags.targets,
                tol=flags.cover_tol,
            )
            openness["ball_cover"] = verdict.to_dict()
            if flags.csv_path:
                rows = coverage_csv_rows(
                    verdict.to_dict(),
                    verdict.targets,
                    verdict.reached,
                    verdict.residuals,
                )
                with open(flags.csv_path, "w") as fh:
                    fh.write("\n".join(rows) + "\n")
                openness["coverage_csv"] = flags.csv_path
            slope, norms = expansion_order_check(family, evaluator)
            openness["expansion_slope"] = slope
            openness["expansion_norms"] = norms.tolist()
            openness["residuals"] = {
                k: float(r) for k, r in family.residuals.items()
            }
            openness["certified"] = bool(verdict.coverage == 1.0 and slope >= 9.5)
            if flags.openness == "general":
                w0 = ControlSignal.zero(spec.k)
                openness["w0_check"] = w0_regular_zero_check(
                    problem, ck.lambdas, w0, v, probes
                ).to_dict()
        except (ConstructionError, MembershipError, ExactBackendUnavailable) as exc:
            openness["certified"] = False
            openness["error"] = f"{type(exc).__name__}: {exc}"
        report["openness"] = openness
    elif flags.openness != "off":
        report["openness"] = {
            "certified": False,
            "error": "openness verification needs an exact problem and a test control",
        }

    report["provenance"] = {
        "tool_version": __version__,
        "kernel_backend": kernels.backend_name(),
        "seed": flags.seed,
        "rk_step": flags.rk_step,
        "grid_size": flags.grid,
        "probe_max_freq": max_freq,
        "svd_tol": svd_tol,
        "tolerances": dict(spec.tolerances),
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    return report


def report_to_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True)


def reports_equal_modulo_timestamp(a: dict, b: dict) -> bool:
    def strip(r):
        r = json.loads(json.dumps(r))
        r.get("provenance", {}).pop("timestamp", None)
        return r

    return json.dumps(strip(a), sort_keys=True) == json.dumps(strip(b), sort_keys=True)


def coverage_csv_rows(verdict_dict: dict, targets, reached, residuals) -> List[str]:
    """CSV lines (header + rows) for the reached/unreached target grid."""
    m = len(targets[0])
    header = ",".join([f"target_{i}" for i in range(m)] + ["reached", "residual"])
    lines = [header]
    for t, r, res in zip(targets, reached, residuals):
        coords = ",".join(repr(float(c)) for c in t)
        lines.append(f"{coords},{int(r)},{res!r}")
    return lines
