"""Command line front end.

Exit codes: 0 ok, 1 usage error, 2 invalid problem, 3 no convergence.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .lattice import StabilityViolation, build_chain
from .oracle import CONTINUE, dp_value
from .problem import Strategy, estimate_J, sample_lattice_paths, validate_problem
from .problemfile import ProblemFileError, read_problem
from .switching import NonConvergence, picard_solve, verify_representation

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_NONCONV = 0, 1, 2, 3

SOLVE_SCHEMA = "switchbsde.solve/1"
REPORT_SCHEMA = "switchbsde.picard-report/1"
ORACLE_SCHEMA = "switchbsde.oracle/1"
PATHS_SCHEMA = "switchbsde.paths/1"
ESTIMATE_SCHEMA = "switchbsde.estimate/1"
VERIFY_SCHEMA = "switchbsde.verify/1"
SELFTEST_SCHEMA = "switchbsde.selftest/1"


class UsageError(Exception):
    pass


class InvalidProblem(Exception):
    def __init__(self, report: dict):
        super().__init__("invalid problem")
        self.report = report


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(text: str) -> int:
    try:
        val = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if val < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return val


def _nonneg_int(text: str) -> int:
    try:
        val = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if val < 0:
        raise argparse.ArgumentTypeError("must be nonnegative")
    return val


def _fmt(x) -> str:
    return repr(float(x))


def _dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=True)


def _emit(text: str, out: str | None):
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def _csv_text(schema: str, header: list, rows) -> str:
    buf = io.StringIO()
    buf.write(f"# schema: {schema}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


# -- loading ------------------------------------------------------------------


def _load(path: str, n_steps: int | None):
    if not Path(path).is_file():
        raise UsageError(f"no such file: {path}")
    try:
        doc = read_problem(path, n_steps)
    except ProblemFileError as exc:
        raise InvalidProblem({"valid": False, "violations": [{"kind": "parse", "message": str(exc)}]})
    try:
        grid = build_chain(doc.problem, doc.n_steps, doc.max_jumps)
    except StabilityViolation as exc:
        raise InvalidProblem({"valid": False, "violations": [{
            "kind": "stability", "step": exc.step, "mode": str(exc.mode), "value": exc.value,
            "min_steps": exc.min_steps}]})
    except ValueError as exc:
        raise InvalidProblem({"valid": False, "violations": [{"kind": "grid", "message": str(exc)}]})
    report = validate_problem(doc.problem, grid)
    if not report.ok:
        raise InvalidProblem(report.to_dict())
    return doc.problem, grid


def _node_rows(grid, m, per_mode_fn):
    for k in range(grid.n_steps + 1):
        ws = grid.w_coords(k)
        for i in range(m):
            cols = per_mode_fn(k, i)
            for a, w in enumerate(ws):
                for n in range(grid.n_count(k)):
                    yield [k, int(w), n, i] + [c(a, n) for c in cols]


# -- commands -------------------------------------------------------------------


def cmd_solve(args) -> int:
    p, grid = _load(args.file, args.n_steps)
    try:
        sol, report = picard_solve(grid, p, tolerance=args.tol, max_iterations=args.max_iter)
        code = EXIT_OK
    except NonConvergence as exc:
        sol, report, code = exc.solution, exc.report, EXIT_NONCONV

    def cols(k, i):
        y, dk = sol.modes[i].y[k], sol.modes[i].dk[k]
        return [lambda a, n: _fmt(y[a, n]), lambda a, n: _fmt(dk[a, n])]

    text = _csv_text(SOLVE_SCHEMA, ["k", "w", "n", "mode", "y", "dK"], _node_rows(grid, p.m, cols))
    rep = {"schema": REPORT_SCHEMA, "root_values": [float(v) for v in sol.root_values()], **report.to_dict(),
           "n_steps": grid.n_steps, "modes": p.m}
    if args.out is None:
        sys.stdout.write(text)
        sys.stderr.write(_dump_json(rep) + "\n")
    else:
        _emit(text, args.out)
        Path(args.report or (str(Path(args.out).with_suffix("")) + ".report.json")).write_text(
            _dump_json(rep) + "\n", encoding="utf-8")
        sys.stdout.write(_dump_json(rep) + "\n")
    return code


def cmd_oracle(args) -> int:
    p, grid = _load(args.file, args.n_steps)
    table = dp_value(grid, p)

    def cols(k, i):
        v, act = table.v[k][i], table.action[k][i]
        return [lambda a, n: _fmt(v[a, n]),
                lambda a, n: "continue" if act[a, n] == CONTINUE else f"switch:{int(act[a, n])}"]

    _emit(_csv_text(ORACLE_SCHEMA, ["k", "w", "n", "mode", "v", "action"], _node_rows(grid, p.m, cols)), args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    p, grid = _load(args.file, args.n_steps)
    batch = sample_lattice_paths(grid, args.paths, args.seed)
    rows = ([i, k, _fmt(grid.times[k]), _fmt(batch.w[i, k]), int(batch.counts[i, k]),
             "" if k == 0 else int(batch.outcomes[i, k - 1])]
            for i in range(args.paths) for k in range(grid.n_steps + 1))
    _emit(_csv_text(PATHS_SCHEMA, ["path", "k", "t", "w", "n", "outcome"], rows), args.out)
    return EXIT_OK


def _read_strategy(path: str, grid, m: int) -> Strategy:
    if not Path(path).is_file():
        raise UsageError(f"no such file: {path}")
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UsageError(f"strategy file is not valid JSON: {exc}") from None
    if isinstance(raw, list):
        start, switches = 0, raw
    elif isinstance(raw, dict):
        start, switches = int(raw.get("start_mode", 0)), raw.get("switches", [])
    else:
        raise UsageError("strategy file must be a list of [time, mode] pairs or {start_mode, switches}")
    snapped = []
    for item in switches:
        if not isinstance(item, (list, tuple)) or len(item) != 2:
            raise UsageError(f"bad switch entry {item!r}")
        t, a = float(item[0]), int(item[1])
        if not 0 <= a < m or not 0 <= start < m:
            raise UsageError(f"mode out of range in {item!r}")
        if not 0 <= t <= grid.horizon:
            raise UsageError(f"switch time {t} outside [0, {grid.horizon}]")
        k = int(np.searchsorted(grid.times, t - 1e-12, side="left"))
        if grid.times[k] - t > grid.dt / 2:
            warnings.warn(f"switch time {t} moved to grid time {grid.times[k]}", stacklevel=2)
        snapped.append((float(grid.times[k]), a))
    try:
        return Strategy(0.0, start, tuple(snapped))
    except ValueError as exc:
        raise UsageError(f"inadmissible strategy: {exc}") from None


def cmd_evaluate(args) -> int:
    p, grid = _load(args.file, args.n_steps)
    s = _read_strategy(args.strategy_file, grid, p.m)
    if args.paths < 2:
        raise UsageError("--paths must be at least 2 for a standard error")
    mean, se = estimate_J(p, s, args.paths, args.seed, method=args.method, grid=grid, sampler=args.sampler)
    out = {"schema": ESTIMATE_SCHEMA, "mean": mean, "stderr": se, "method": args.method, "sampler": args.sampler,
           "paths": args.paths, "seed": args.seed, "start_mode": s.start_mode,
           "switches": [list(sw) for sw in s.switches]}
    sys.stdout.write(_dump_json(out) + "\n")
    return EXIT_OK


def cmd_verify(args) -> int:
    p, grid = _load(args.file, args.n_steps)
    if args.paths < 2:
        raise UsageError("--paths must be at least 2 for a standard error")
    if not 0 <= args.start_mode < p.m:
        raise UsageError("--start-mode out of range")
    try:
        sol, _ = picard_solve(grid, p)
    except NonConvergence as exc:
        sys.stderr.write(_dump_json(exc.report.to_dict()) + "\n")
        return EXIT_NONCONV
    rep = verify_representation(sol, p, grid, args.paths, args.seed, start_mode=args.start_mode,
                                n_random=args.n_random)
    sys.stdout.write(_dump_json({"schema": VERIFY_SCHEMA, "seed": args.seed, "paths": args.paths,
                                 **rep.to_dict()}) + "\n")
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    results = run_selftest()
    ok = all(r["passed"] for r in results)
    sys.stdout.write(_dump_json({"schema": SELFTEST_SCHEMA, "passed": ok, "checks": results}) + "\n")
    return EXIT_OK if ok else EXIT_USAGE


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="switchbsde", description="Optimal switching on a recombining chain.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def with_file(name, help_text):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("file", help="problem document (JSON)")
        sp.add_argument("--n-steps", type=_positive_int, default=None, help="override the document's n_steps")
        return sp

    sp = with_file("solve", "Picard solve; CSV of y and dK per node and mode")
    sp.add_argument("--tol", type=float, default=1e-10)
    sp.add_argument("--max-iter", type=_positive_int, default=None)
    sp.add_argument("--out", default=None, help="CSV path (report goes next to it)")
    sp.add_argument("--report", default=None, help="report JSON path")
    sp.set_defaults(func=cmd_solve)

    sp = with_file("oracle", "dynamic-programming value table as CSV")
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_oracle)

    sp = with_file("simulate", "sample reference-chain paths")
    sp.add_argument("--paths", type=_positive_int, required=True)
    sp.add_argument("--seed", type=_nonneg_int, required=True)
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_simulate)

    sp = with_file("evaluate", "Monte Carlo value of a fixed strategy")
    sp.add_argument("--strategy-file", required=True)
    sp.add_argument("--paths", type=_positive_int, required=True)
    sp.add_argument("--seed", type=_nonneg_int, required=True)
    sp.add_argument("--method", choices=("direct", "reweighted"), default="direct")
    sp.add_argument("--sampler", choices=("lattice", "continuous"), default="lattice")
    sp.set_defaults(func=cmd_evaluate)

    sp = with_file("verify", "compare y(root) with extracted, random and DP strategies")
    sp.add_argument("--paths", type=_positive_int, required=True)
    sp.add_argument("--seed", type=_nonneg_int, required=True)
    sp.add_argument("--start-mode", type=int, default=0)
    sp.add_argument("--n-random", type=_nonneg_int, default=50)
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("selftest", help="run the built-in checks")
    sp.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        return args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"switchbsde: error: {exc}\n")
        return EXIT_USAGE
    except InvalidProblem as exc:
        sys.stderr.write(_dump_json(exc.report) + "\n")
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
