"""Reference instances used by the test suite, the demos and ``selftest``.

All of them are plain problem documents, so each one can be written to JSON
and fed to the command line unchanged.
"""

from __future__ import annotations

import copy

from .problemfile import SCHEMA, ProblemDocument, load_problem

__all__ = ["DOCUMENTS", "INVALID_DOCUMENTS", "CI_NAMES", "document", "instance", "single_mode", "identical_modes"]


def _aff(**kw):
    return {"affine": kw}


_INSTANCE_A = {
    "schema": SCHEMA,
    "horizon": 1.0,
    "n_steps": 20,
    "lambda": {"kind": "constant", "params": {"rate": 1.5}},
    "marks": ["a", "b"],
    "phi": [0.6, 0.4],
    "modes": [
        {
            "name": "idle",
            "kernel": [1.0, 1.0],
            "terminal": {"max": [_aff(w=1.0, n=-0.1), -0.5]},
            "running_f": _aff(c=0.2, n=-0.05),
            "running_g": _aff(w=0.5),
        },
        {
            "name": "active",
            "kernel": [2.0, 0.0],
            "terminal": {"max": [_aff(c=0.05, w=1.0, n=-0.1), -0.45]},
            "running_f": _aff(c=0.1, w=0.3),
            "running_g": {"product": [_aff(w=-0.4), {"indicator": {"of": _aff(n=1.0), "op": ">=", "threshold": 1}}]},
        },
    ],
    "costs": [[0.0, 0.15], [0.1, 0.0]],
}

_INSTANCE_B = {
    "schema": SCHEMA,
    "horizon": 1.0,
    "n_steps": 20,
    "lambda": {"kind": "linear", "params": {"a": 1.0, "b": 1.0}},
    "marks": ["shock"],
    "phi": [1.0],
    "modes": [
        {
            "name": "neutral",
            "kernel": [1.0],
            "terminal": _aff(w=0.5),
            "running_f": 0.1,
            "running_g": {"product": [0.3, {"abs": _aff(w=1.0)}]},
        },
        {
            "name": "damped",
            "kernel": [0.5],
            "terminal": _aff(c=0.02, w=0.5),
            "running_f": _aff(n=0.2),
            "running_g": _aff(c=0.15, t=-0.2),
        },
        {
            "name": "excited",
            "kernel": [2.0],
            "terminal": _aff(c=-0.03, w=0.5),
            "running_f": _aff(c=0.4, n=-0.3),
            "running_g": _aff(w=-0.3),
        },
    ],
    "costs": [[0.0, 0.1, 0.15], [0.12, 0.0, 0.1], [0.15, 0.1, 0.0]],
}

_INSTANCE_C = {
    "schema": SCHEMA,
    "horizon": 1.0,
    "n_steps": 50,
    "lambda": {"kind": "constant", "params": {"rate": 2.0}},
    "marks": ["low", "mid", "high"],
    "phi": {"times": [0.0, 0.5], "values": [[0.5, 0.3, 0.2], [0.2, 0.3, 0.5]]},
    "modes": [
        {
            "name": "tilt-up",
            "kernel": [0.0, 1.0, 2.0],
            "terminal": {"min": [_aff(w=1.0), 0.5]},
            "running_f": _aff(c=-0.05, n=0.1),
            "running_g": 0.05,
        },
        {
            "name": "tilt-down",
            "kernel": [1.5, 1.0, 0.5],
            "terminal": {"min": [_aff(w=1.0), 0.5]},
            "running_f": _aff(c=0.2, n=-0.1),
            "running_g": _aff(w=0.2),
        },
    ],
    "costs": {"base": [[0.0, 0.1], [0.08, 0.0]], "slope": [[0.0, 0.05], [0.04, 0.0]]},
}

_XI_D = {"abs": _aff(w=0.8, n=-0.2)}

_INSTANCE_D = {
    "schema": SCHEMA,
    "horizon": 1.0,
    "n_steps": 50,
    "lambda": {"kind": "constant", "params": {"rate": 1.0}},
    "marks": ["x", "y"],
    "phi": [0.5, 0.5],
    "modes": [
        {"name": "plain", "kernel": [1.0, 1.0], "terminal": _XI_D, "running_f": 0.1, "running_g": _aff(w=0.2)},
        {"name": "y-only", "kernel": [0.0, 2.0], "terminal": _XI_D, "running_f": _aff(n=0.15), "running_g": 0.0},
        {"name": "x-heavy", "kernel": [2.0, 0.5], "terminal": _XI_D, "running_f": _aff(c=0.3, n=-0.1),
         "running_g": _aff(t=0.1, w=-0.2)},
    ],
    "costs": [[0.0, 0.1, 0.12], [0.1, 0.0, 0.1], [0.12, 0.1, 0.0]],
}

_INSTANCE_E = {
    "schema": SCHEMA,
    "horizon": 1.0,
    "n_steps": 20,
    "lambda": {"kind": "constant", "params": {"rate": 2.0}},
    "marks": ["hit"],
    "phi": [1.0],
    "modes": [
        {"name": "exposed", "kernel": [1.0], "terminal": _aff(n=-0.3), "running_f": 0.3, "running_g": 0.0},
        {"name": "shielded", "kernel": [0.0], "terminal": _aff(n=-0.3), "running_f": 0.0,
         "running_g": _aff(c=0.2, w=0.2)},
    ],
    "costs": [[0.0, 0.05], [0.05, 0.0]],
}

DOCUMENTS = {"A": _INSTANCE_A, "B": _INSTANCE_B, "C": _INSTANCE_C, "D": _INSTANCE_D, "E": _INSTANCE_E}
CI_NAMES = tuple(DOCUMENTS)


def _broken(base, **changes):
    doc = copy.deepcopy(base)
    for path, value in changes.items():
        target = doc
        keys = path.split("__")
        for key in keys[:-1]:
            target = target[int(key) if key.isdigit() else key]
        last = keys[-1]
        target[int(last) if last.isdigit() else last] = value
    return doc


# each violates exactly one standing assumption
INVALID_DOCUMENTS = {
    "self_cost": _broken(_INSTANCE_A, costs=[[1.0, 0.15], [0.1, 0.0]]),
    "triangle_slack": _broken(_INSTANCE_B, costs=[[0.0, 0.1, 0.2], [0.12, 0.0, 0.1], [0.15, 0.1, 0.0]]),
    "terminal_consistency": _broken(_INSTANCE_A, modes__1__terminal={"max": [_aff(c=0.5, w=1.0, n=-0.1), 0.0]}),
    "kernel_bound": _broken(_INSTANCE_A, modes__1__kernel_bound=1.5),
}


def document(name: str) -> dict:
    """Deep copy of a named document (valid or crafted invalid)."""
    if name in DOCUMENTS:
        return copy.deepcopy(DOCUMENTS[name])
    if name in INVALID_DOCUMENTS:
        return copy.deepcopy(INVALID_DOCUMENTS[name])
    raise KeyError(f"unknown instance {name!r}")


def instance(name: str, n_steps: int | None = None) -> ProblemDocument:
    return load_problem(document(name), n_steps)


def single_mode(terminal=None, running_f=0.0, running_g=0.0, kernel=(1.0,), rate=1.0, n_steps=20) -> dict:
    """One-mode document with a single mark unless ``kernel`` says otherwise."""
    M = len(kernel)
    return {
        "schema": SCHEMA,
        "horizon": 1.0,
        "n_steps": n_steps,
        "lambda": {"kind": "constant", "params": {"rate": rate}},
        "marks": [f"m{i}" for i in range(M)],
        "phi": [1.0 / M] * M,
        "modes": [{"name": "only", "kernel": list(kernel),
                   "terminal": _aff(w=1.0, n=-0.1) if terminal is None else terminal,
                   "running_f": running_f, "running_g": running_g}],
        "costs": [[0.0]],
    }


def identical_modes(cost: float = 0.1, n_steps: int = 20) -> dict:
    """Two copies of the first mode of instance A with a symmetric cost."""
    doc = copy.deepcopy(_INSTANCE_A)
    doc["n_steps"] = n_steps
    doc["modes"] = [copy.deepcopy(doc["modes"][0]) for _ in range(2)]
    doc["modes"][1]["name"] = "copy"
    doc["costs"] = [[0.0, cost], [cost, 0.0]]
    return doc
