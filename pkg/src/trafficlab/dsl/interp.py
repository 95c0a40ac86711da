"""Batch interpreter and validator for candidate models.

The interpreter only has numpy arithmetic in scope: there is no name
lookup beyond the parameter and input tables handed to it, so a candidate
cannot reach files, the network or interpreter state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from trafficlab.dsl.signatures import FamilySignature, get_signature, mid_bound_params
from trafficlab.dsl.syntax import (
    MAX_EXTRA_PARAMS,
    Binary,
    CandidateModel,
    Clip,
    Cmp,
    Const,
    If,
    Input,
    Param,
    Percentile,
    Reduce,
    Unary,
    walk,
)
from trafficlab.errors import CandidateRuntimeError, DslError
from trafficlab.models import sigmoid

PROBE_LIMIT = 1e6

_UNARY = {
    "neg": np.negative,
    "abs": np.abs,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "tanh": np.tanh,
    "sigmoid": sigmoid,
}
_BINARY = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "div": np.divide,
    "pow": np.power,
    "min": np.minimum,
    "max": np.maximum,
}
_CMP = {"gt": np.greater, "ge": np.greater_equal, "lt": np.less, "le": np.less_equal}


def _compile(node):
    """Turn an AST into a closure ``f(params, inputs) -> scalar | (n,) array``."""
    if isinstance(node, Const):
        value = float(node.value)
        return lambda p, x: value
    if isinstance(node, Param):
        name = node.name
        return lambda p, x: p[name]
    if isinstance(node, Input):
        name = node.name
        return lambda p, x: x[name]
    if isinstance(node, Unary):
        fn, child = _UNARY[node.op], _compile(node.child)
        return lambda p, x: fn(child(p, x))
    if isinstance(node, Binary):
        fn, left, right = _BINARY[node.op], _compile(node.left), _compile(node.right)
        return lambda p, x: fn(left(p, x), right(p, x))
    if isinstance(node, Cmp):
        fn, left, right = _CMP[node.op], _compile(node.left), _compile(node.right)
        return lambda p, x: np.asarray(fn(left(p, x), right(p, x)), dtype=float)
    if isinstance(node, Clip):
        child, lo, hi = _compile(node.child), _compile(node.lo), _compile(node.hi)
        return lambda p, x: np.minimum(np.maximum(child(p, x), lo(p, x)), hi(p, x))
    if isinstance(node, If):
        cond, then, orelse = _compile(node.cond), _compile(node.then), _compile(node.orelse)
        return lambda p, x: np.where(np.asarray(cond(p, x)) > 0, then(p, x), orelse(p, x))
    if isinstance(node, Reduce):
        child = _compile(node.child)
        if node.op == "mean":
            return lambda p, x: float(np.mean(_rows(child(p, x), x)))
        return lambda p, x: float(np.std(_rows(child(p, x), x)))
    if isinstance(node, Percentile):
        child, q = _compile(node.child), float(node.q)
        return lambda p, x: float(np.percentile(_rows(child(p, x), x), q))
    raise DslError(f"cannot interpret node {node!r}")


def _rows(value, inputs):
    """Broadcast a scalar or per-row value to the batch length before reducing."""
    n = inputs["__n__"]
    return np.broadcast_to(np.asarray(value, dtype=float), (n,))


@dataclass
class CompiledCandidate:
    """A candidate bound to its family signature, ready for repeated evaluation."""

    candidate: CandidateModel
    signature: FamilySignature
    _fn: object = field(repr=False, default=None)

    def __post_init__(self):
        self._fn = _compile(self.candidate.body)

    @property
    def param_names(self) -> tuple:
        return self.signature.param_names + self.candidate.extra_names

    def bind(self, params) -> dict:
        params = [float(v) for v in np.asarray(params, dtype=float).ravel()]
        names = self.param_names
        if len(params) != len(names):
            raise ValueError(f"expected {len(names)} parameters ({', '.join(names)}), got {len(params)}")
        return dict(zip(names, params))

    def raw(self, bound: dict, inputs: dict, n: int) -> np.ndarray:
        """Evaluate without finiteness checks; ``inputs`` maps names to (n,) arrays."""
        env = dict(inputs)
        env["__n__"] = n
        with np.errstate(all="ignore"):
            out = self._fn(bound, env)
        return np.array(np.broadcast_to(np.asarray(out, dtype=float), (n,)))

    def __call__(self, params, rows) -> np.ndarray:
        bound = self.bind(params)
        inputs, n = _columns(rows, self.signature.input_names)
        out = self.raw(bound, inputs, n)
        bad = np.flatnonzero(~np.isfinite(out))
        if bad.size:
            i = int(bad[0])
            raise CandidateRuntimeError(f"candidate produced non-finite value {out[i]!r} at row {i}", row=i)
        return out


def _columns(rows, input_names):
    """Accept a mapping of columns, a sequence of row mappings, or an (n, k) matrix."""
    if isinstance(rows, dict):
        cols = {name: np.atleast_1d(np.asarray(rows[name], dtype=float)) for name in input_names if name in rows}
    elif isinstance(rows, np.ndarray) and rows.ndim == 2:
        if rows.shape[1] != len(input_names):
            raise ValueError(f"input matrix must have {len(input_names)} columns, got {rows.shape[1]}")
        cols = {name: rows[:, i].astype(float) for i, name in enumerate(input_names)}
    else:
        rows = list(rows)
        cols = {name: np.array([float(r[name]) for r in rows]) for name in input_names if rows and name in rows[0]}
        if not rows:
            cols = {name: np.zeros(0) for name in input_names}
    missing = [name for name in input_names if name not in cols]
    if missing:
        raise ValueError(f"missing input column(s): {', '.join(missing)}")
    lengths = {c.shape[0] for c in cols.values()}
    if len(lengths) > 1:
        raise ValueError("input columns differ in length")
    return cols, lengths.pop()


def compile_candidate(cand: CandidateModel, sig: FamilySignature | None = None) -> CompiledCandidate:
    return CompiledCandidate(cand, sig or get_signature(cand.family))


def eval_candidate(cand: CandidateModel, params, rows, sig: FamilySignature | None = None) -> np.ndarray:
    """Evaluate ``cand`` on a batch; one output per row."""
    return compile_candidate(cand, sig)(params, rows)


# --------------------------------------------------------------------------
# Validation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "error" | "warning"
    message: str
    path: str = ""

    def __str__(self):
        where = f" at {self.path}" if self.path else ""
        return f"{self.severity}{where}: {self.message}"


class Diagnostics(list):
    """List of :class:`Diagnostic`; validation passes iff no error entries."""

    @property
    def ok(self) -> bool:
        return not any(d.severity == "error" for d in self)

    @property
    def errors(self) -> list:
        return [d for d in self if d.severity == "error"]

    def text(self) -> str:
        return "\n".join(str(d) for d in self)


def validate_candidate(cand: CandidateModel, sig: FamilySignature | None = None) -> Diagnostics:
    sig = sig or get_signature(cand.family)
    diags = Diagnostics()
    if cand.family != sig.family:
        diags.append(Diagnostic("error", f"candidate family {cand.family!r} does not match {sig.family!r}"))
        return diags

    if len(cand.extra_params) > MAX_EXTRA_PARAMS:
        diags.append(
            Diagnostic("error", f"at most {MAX_EXTRA_PARAMS} extra parameters allowed, got {len(cand.extra_params)}",
                       "extra-params")
        )
    seen = set()
    for p in cand.extra_params:
        where = f"extra-params/{p.name}"
        if p.name in sig.param_names or p.name in sig.input_names:
            diags.append(Diagnostic("error", f"extra parameter {p.name!r} clashes with a canonical name", where))
        if p.name in seen:
            diags.append(Diagnostic("error", f"duplicate extra parameter {p.name!r}", where))
        seen.add(p.name)
        if not p.lower < p.upper:
            diags.append(Diagnostic("error", f"bounds of {p.name!r} must satisfy lower < upper", where))

    known_params = set(sig.param_names) | set(cand.extra_names)
    has_reduction = False
    for path, node in walk(cand.body):
        if isinstance(node, Param) and node.name not in known_params:
            diags.append(Diagnostic("error", f"unresolved parameter name {node.name!r}", path))
        elif isinstance(node, Input) and node.name not in sig.input_names:
            diags.append(
                Diagnostic("error", f"unresolved input name {node.name!r}; inputs are {', '.join(sig.input_names)}",
                           path)
            )
        elif isinstance(node, (Reduce, Percentile)):
            has_reduction = True
    if has_reduction and sig.family == "idm":
        diags.append(
            Diagnostic("warning", "batch reductions in a car-following model collapse over the events "
                                  "simulated at the same time step")
        )
    if not diags.ok:
        return diags

    compiled = compile_candidate(cand, sig)
    bound = mid_bound_params(sig.family, cand.extra_params)
    for label, point in sig.probes:
        inputs = {k: np.array([v]) for k, v in point.items()}
        out = compiled.raw(bound, inputs, 1)[0]
        shown = ", ".join(f"{k}={v}" for k, v in point.items())
        if not np.isfinite(out):
            diags.append(Diagnostic("error", f"probe {label!r} ({shown}) produced non-finite value {out!r}"))
        elif abs(out) > PROBE_LIMIT:
            diags.append(Diagnostic("error", f"probe {label!r} ({shown}) produced |value| > {PROBE_LIMIT:g}: {out!r}"))
    # Reductions only mean something on a multi-row batch.
    if has_reduction:
        inputs = {k: np.array([pt[k] for _, pt in sig.probes]) for k in sig.input_names}
        out = compiled.raw(bound, inputs, len(sig.probes))
        if not np.all(np.isfinite(out)):
            diags.append(Diagnostic("error", "probe batch of all probe points produced a non-finite value"))
        elif np.max(np.abs(out)) > PROBE_LIMIT:
            diags.append(Diagnostic("error", f"probe batch produced |value| > {PROBE_LIMIT:g}"))
    return diags
