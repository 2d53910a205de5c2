"""Quick checks with values known in closed form; run by ``switchbsde selftest``."""

from __future__ import annotations

import numpy as np

from .bsde import solve_penalized, solve_reflected
from .instances import INVALID_DOCUMENTS, identical_modes, instance, single_mode
from .lattice import build_chain
from .oracle import dp_value, enumerate_strategies, tree_value
from .problem import sample_lattice_paths, validate_problem
from .problemfile import load_problem
from .switching import extract_strategy, mode_spec, picard_solve, solve_mode_floor, solve_upper_bound


def _max_diff(a, b) -> float:
    return max(float(np.max(np.abs(x - y))) for x, y in zip(a, b))


def _constant_terminal():
    doc = load_problem(single_mode(terminal=1.25))
    grid = build_chain(doc.problem, doc.n_steps)
    y = solve_mode_floor(grid, doc.problem)[0].y
    return max(float(np.max(np.abs(s - 1.25))) for s in y) == 0.0


def _plain_expectation():
    doc = load_problem(single_mode(running_f=0.3, running_g={"affine": {"w": 0.5}}, n_steps=5))
    p = doc.problem
    grid = build_chain(p, 5)
    md = p.modes[0]
    return abs(solve_mode_floor(grid, p)[0].root - tree_value(grid, md.terminal, md.running_f, md.running_g)) < 1e-12


def _one_mode_picard():
    doc = load_problem(single_mode(kernel=(0.5, 2.0)))
    grid = build_chain(doc.problem, doc.n_steps)
    sol, rep = picard_solve(grid, doc.problem)
    floor = solve_mode_floor(grid, doc.problem)[0]
    return rep.iterations == 1 and _max_diff(sol.modes[0].y, floor.y) == 0.0


def _identical_modes():
    doc = load_problem(identical_modes(0.1))
    p = doc.problem
    grid = build_chain(p, doc.n_steps)
    sol, _ = picard_solve(grid, p)
    same = _max_diff(sol.modes[0].y, sol.modes[1].y) == 0.0
    no_push = all(float(np.max(d)) == 0.0 for s in sol.modes for d in s.dk)
    batch = sample_lattice_paths(grid, 5, 0)
    no_switch = all(not extract_strategy(sol, p, batch.path(i), (0.0, 0)).switches for i in range(5))
    return same and no_push and no_switch


def _dp_matches_picard():
    doc = instance("A")
    grid = build_chain(doc.problem, doc.n_steps)
    sol, _ = picard_solve(grid, doc.problem)
    table = dp_value(grid, doc.problem)
    return max(_max_diff(sol.y(i), table.v_mode(i)) for i in range(doc.problem.m)) <= 1e-9


def _enumeration():
    doc = instance("A", n_steps=4)
    grid = build_chain(doc.problem, 4)
    best, _ = enumerate_strategies(grid, doc.problem, max_switches=4)
    return abs(best - dp_value(grid, doc.problem).root(0)) <= 1e-9


def _bounds():
    doc = instance("A")
    p = doc.problem
    grid = build_chain(p, doc.n_steps)
    sol, _ = picard_solve(grid, p)
    upper = solve_upper_bound(grid, p)
    floor = solve_mode_floor(grid, p)
    ok = True
    for i in range(p.m):
        for k in range(grid.n_steps + 1):
            ok &= bool(np.all(floor[i].y[k] <= sol.y(i)[k] + 1e-12))
            ok &= bool(np.all(sol.y(i)[k] <= upper.y[k] + 1e-12))
    return ok


def _penalization():
    doc = instance("A")
    p = doc.problem
    grid = build_chain(p, doc.n_steps)
    sol, _ = picard_solve(grid, p)
    spec = mode_spec(p, 0, sol.obstacles()[0])
    refl = solve_reflected(grid, spec).root
    roots = [solve_penalized(grid, spec, n).root for n in (1, 10, 100, 1000, 10000)]
    return all(b >= a - 1e-12 for a, b in zip(roots, roots[1:])) and roots[-1] <= refl + 1e-12


def _validator():
    for kind, doc in INVALID_DOCUMENTS.items():
        d = load_problem(doc)
        if kind not in validate_problem(d.problem, build_chain(d.problem, d.n_steps)).kinds():
            return False
    return True


CHECKS = {
    "constant terminal gives constant solution": _constant_terminal,
    "identity kernel gives plain expectation": _plain_expectation,
    "one mode: Picard stops after one iteration": _one_mode_picard,
    "identical modes never switch": _identical_modes,
    "Picard fixed point equals dynamic programming": _dp_matches_picard,
    "exhaustive search equals dynamic programming": _enumeration,
    "floor <= solution <= upper bound": _bounds,
    "penalized roots increase to the reflected root": _penalization,
    "validator rejects crafted instances": _validator,
}


def run_selftest() -> list[dict]:
    out = []
    for name, fn in CHECKS.items():
        try:
            passed, error = bool(fn()), None
        except Exception as exc:  # reported, not raised
            passed, error = False, f"{type(exc).__name__}: {exc}"
        entry = {"check": name, "passed": passed}
        if error:
            entry["error"] = error
        out.append(entry)
    return out
