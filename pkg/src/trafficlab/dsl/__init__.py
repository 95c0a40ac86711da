"""Sandboxed expression language for agent-generated candidate models."""

from trafficlab.dsl.interp import (
    CompiledCandidate,
    Diagnostic,
    Diagnostics,
    compile_candidate,
    eval_candidate,
    validate_candidate,
)
from trafficlab.dsl.signatures import SIGNATURES, FamilySignature, get_signature
from trafficlab.dsl.syntax import (
    GRAMMAR,
    CandidateModel,
    ExtraParam,
    extract_dsl_block,
    parse_candidate,
    parse_expr,
    render_candidate,
    render_expr,
)

__all__ = [
    "GRAMMAR",
    "SIGNATURES",
    "CandidateModel",
    "CompiledCandidate",
    "Diagnostic",
    "Diagnostics",
    "ExtraParam",
    "FamilySignature",
    "compile_candidate",
    "eval_candidate",
    "extract_dsl_block",
    "get_signature",
    "parse_candidate",
    "parse_expr",
    "render_candidate",
    "render_expr",
    "validate_candidate",
]
