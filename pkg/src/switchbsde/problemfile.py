"""JSON problem documents with a small whitelist of data-function forms.

Expressions over ``(t, w, n)`` (time, Brownian value ``W_t``, jump count):

* a number
* ``{"affine": {"c": .., "t": .., "w": .., "n": ..}}`` (missing coefficients are 0)
* ``{"max": [e, ...]}``, ``{"min": [e, ...]}``
* ``{"abs": e}``
* ``{"indicator": {"of": e, "op": ">=", "threshold": x}}``
* ``{"product": [e1, e2]}`` (at most two factors)

Nothing else is accepted, so loading a file never executes code.
"""

from __future__ import annotations

import json
import operator
from pathlib import Path

import numpy as np

from .mpp import CompensatorSpec, KernelField
from .problem import CostStructure, ModeSpec, SwitchingProblem

__all__ = ["SCHEMA", "ProblemFileError", "parse_expression", "load_problem", "read_problem", "ProblemDocument"]

SCHEMA = "switchbsde.problem/1"

_OPS = {">=": operator.ge, ">": operator.gt, "<=": operator.le, "<": operator.lt}


class ProblemFileError(ValueError):
    pass


def parse_expression(expr):
    """Compile a whitelisted expression into a vectorized ``fn(t, w, n)``."""
    if isinstance(expr, bool):
        raise ProblemFileError("booleans are not expressions")
    if isinstance(expr, (int, float)):
        c = float(expr)
        return lambda t, w, n: c
    if not isinstance(expr, dict) or len(expr) != 1:
        raise ProblemFileError(f"expression must be a number or a one-key object, got {expr!r}")
    (kind, arg), = expr.items()
    if kind == "affine":
        if not isinstance(arg, dict) or set(arg) - {"c", "t", "w", "n"}:
            raise ProblemFileError("affine takes coefficients c, t, w, n")
        c, a, b, d = (float(arg.get(key, 0.0)) for key in ("c", "t", "w", "n"))
        return lambda t, w, n: c + a * t + b * np.asarray(w, dtype=float) + d * np.asarray(n, dtype=float)
    if kind in ("max", "min"):
        if not isinstance(arg, list) or not arg:
            raise ProblemFileError(f"{kind} takes a nonempty list")
        parts = [parse_expression(e) for e in arg]
        red = np.maximum if kind == "max" else np.minimum

        def fn(t, w, n):
            out = np.asarray(parts[0](t, w, n), dtype=float)
            for part in parts[1:]:
                out = red(out, part(t, w, n))
            return out

        return fn
    if kind == "abs":
        inner = parse_expression(arg)
        return lambda t, w, n: np.abs(inner(t, w, n))
    if kind == "indicator":
        if not isinstance(arg, dict) or set(arg) != {"of", "op", "threshold"} or arg["op"] not in _OPS:
            raise ProblemFileError("indicator takes of, op (one of >=, >, <=, <) and threshold")
        inner, op, x = parse_expression(arg["of"]), _OPS[arg["op"]], float(arg["threshold"])
        return lambda t, w, n: op(np.asarray(inner(t, w, n), dtype=float), x).astype(float)
    if kind == "product":
        if not isinstance(arg, list) or not 1 <= len(arg) <= 2:
            raise ProblemFileError("product takes one or two factors")
        parts = [parse_expression(e) for e in arg]
        if len(parts) == 1:
            return parts[0]
        a, b = parts
        return lambda t, w, n: np.asarray(a(t, w, n), dtype=float) * b(t, w, n)
    raise ProblemFileError(f"unknown expression form {kind!r}")


def _table(obj, width: int | None, what: str):
    """Piecewise-constant right-continuous table ``{"times": [...], "values": [...]}``."""
    times = np.asarray(obj["times"], dtype=float)
    values = np.asarray(obj["values"], dtype=float)
    if times.ndim != 1 or len(times) != len(values) or len(times) == 0:
        raise ProblemFileError(f"{what}: times and values must have equal nonzero length")
    if np.any(np.diff(times) <= 0):
        raise ProblemFileError(f"{what}: breakpoints must increase")
    if width is not None and (values.ndim != 2 or values.shape[1] != width):
        raise ProblemFileError(f"{what}: each row needs {width} entries")

    def fn(t):
        idx = max(int(np.searchsorted(times, t, side="right")) - 1, 0)
        return values[idx]

    return fn, values


def _lambda(obj, horizon: float):
    kind, params = obj.get("kind"), obj.get("params", {})
    if kind == "constant":
        rate = float(params["rate"])
        return (lambda t: rate), rate
    if kind == "linear":
        a, b = float(params["a"]), float(params.get("b", 0.0))
        return (lambda t: a + b * t), max(a, a + b * horizon)
    if kind == "table":
        fn, values = _table(params, None, "lambda")
        return (lambda t: float(fn(t))), float(values.max())
    raise ProblemFileError(f"lambda kind must be constant, linear or table, got {kind!r}")


def _per_mark(obj, M: int, what: str):
    if isinstance(obj, dict) and "constant" in obj:
        obj = obj["constant"]
    if isinstance(obj, list):
        vals = np.asarray(obj, dtype=float)
        if vals.shape != (M,):
            raise ProblemFileError(f"{what}: need {M} entries")
        return (lambda t: vals), vals
    if isinstance(obj, dict) and "times" in obj:
        return _table(obj, M, what)
    if isinstance(obj, dict) and "table" in obj:
        return _table(obj["table"], M, what)
    raise ProblemFileError(f"{what}: expected a list or a table")


def _costs(obj, m: int) -> CostStructure:
    if isinstance(obj, list):
        base, slope = obj, None
    elif isinstance(obj, dict):
        base, slope = obj["base"], obj.get("slope")
    else:
        raise ProblemFileError("costs must be a matrix or {base, slope}")
    base = np.asarray(base, dtype=float)
    if base.shape != (m, m):
        raise ProblemFileError(f"costs must be {m}x{m}")
    if slope is None:
        return CostStructure.constant(base)
    slope = np.asarray(slope, dtype=float)
    if slope.shape != (m, m):
        raise ProblemFileError(f"cost slope must be {m}x{m}")
    return CostStructure.affine(base, slope)


class ProblemDocument:
    """A parsed document: the problem plus chain settings."""

    def __init__(self, problem: SwitchingProblem, n_steps: int, max_jumps: int | None, raw: dict):
        self.problem = problem
        self.n_steps = n_steps
        self.max_jumps = max_jumps
        self.raw = raw


def load_problem(doc: dict, n_steps: int | None = None) -> ProblemDocument:
    """Build a :class:`SwitchingProblem` from a document; ``n_steps`` overrides the file."""
    try:
        schema = doc.get("schema", SCHEMA)
        if schema != SCHEMA:
            raise ProblemFileError(f"unsupported schema {schema!r}")
        horizon = float(doc["horizon"])
        marks = tuple(doc["marks"])
        M = len(marks)
        lam, lam_bound = _lambda(doc["lambda"], horizon)
        phi, _ = _per_mark(doc["phi"], M, "phi")
        comp = CompensatorSpec(lam=lam, lam_bound=lam_bound, marks=marks, phi=phi)
        modes = []
        for idx, md in enumerate(doc["modes"]):
            kfn, kvals = _per_mark(md.get("kernel", [1.0] * M), M, f"kernel of mode {idx}")
            bound = float(md.get("kernel_bound", kvals.max()))
            kernel = KernelField(value=kfn, bound=bound, eta=md.get("eta"))
            modes.append(ModeSpec(
                terminal=parse_expression(md["terminal"]),
                running_f=parse_expression(md.get("running_f", 0.0)),
                running_g=parse_expression(md.get("running_g", 0.0)),
                kernel=kernel,
                name=str(md.get("name", f"mode{idx}")),
            ))
        costs = _costs(doc["costs"], len(modes))
        beta = doc.get("beta")
        problem = SwitchingProblem(tuple(modes), costs, comp, horizon, None if beta is None else float(beta))
        N = int(doc["n_steps"]) if n_steps is None else int(n_steps)
        max_jumps = doc.get("max_jumps")
    except KeyError as exc:
        raise ProblemFileError(f"missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ProblemFileError):
            raise
        raise ProblemFileError(str(exc)) from None
    return ProblemDocument(problem, N, None if max_jumps is None else int(max_jumps), doc)


def read_problem(path, n_steps: int | None = None) -> ProblemDocument:
    with open(Path(path), encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ProblemFileError(f"not valid JSON: {exc}") from None
    return load_problem(doc, n_steps)
