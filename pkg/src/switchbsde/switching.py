"""Interconnected-obstacle system solved by Picard iteration over reflected solves."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bsde import BsdeSolution, BsdeSpec, solve_reflected, solve_standard
from .lattice import ChainGrid, StabilityViolation
from .mpp import KernelField
from .problem import (
    PathSample,
    Strategy,
    SwitchingProblem,
    _mean_stderr,
    estimate_J,
    evaluate,
    lattice_rollout,
)

__all__ = [
    "SystemSolution",
    "PicardReport",
    "NonConvergence",
    "mode_spec",
    "solve_mode_floor",
    "solve_upper_bound",
    "interconnected_obstacle",
    "picard_solve",
    "extract_strategy",
    "feedback_policy",
    "random_strategy",
    "VerificationReport",
    "verify_representation",
]

MONO_TOL = 1e-12
CONTACT_TOL = 1e-9


@dataclass
class PicardReport:
    iterations: int = 0
    sup_delta_history: list = field(default_factory=list)
    monotonicity_violations: int = 0
    worst_violation: float = 0.0
    bound_violations: int = 0
    converged: bool = False

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "sup_delta_history": [float(x) for x in self.sup_delta_history],
            "monotonicity_violations": self.monotonicity_violations,
            "worst_violation": float(self.worst_violation),
            "bound_violations": self.bound_violations,
            "converged": self.converged,
        }


class NonConvergence(RuntimeError):
    def __init__(self, report: PicardReport):
        self.report = report
        last = report.sup_delta_history[-1] if report.sup_delta_history else float("nan")
        super().__init__(f"Picard iteration stopped after {report.iterations} iterations (last update {last:.3g})")


@dataclass
class SystemSolution:
    grid: ChainGrid
    problem: SwitchingProblem
    modes: list  # BsdeSolution per mode

    def y(self, i: int) -> list:
        return self.modes[i].y

    def stacked(self, k: int) -> np.ndarray:
        """Values of every mode at step ``k``, shape ``(m, k + 1, n_k + 1)``."""
        return np.stack([sol.y[k] for sol in self.modes])

    def root_values(self) -> np.ndarray:
        return np.array([sol.root for sol in self.modes])

    def obstacles(self) -> list:
        """Interconnected obstacle computed from this solution, per mode and step."""
        return interconnected_obstacle(self.problem, self.grid, [s.y for s in self.modes])

    def skorohod_gap(self) -> float:
        """Largest ``|y - obstacle|`` over nodes with a positive push."""
        worst = 0.0
        obs = self.obstacles()
        for i, sol in enumerate(self.modes):
            for k in range(self.grid.n_steps + 1):
                mask = sol.dk[k] > 0
                if mask.any():
                    worst = max(worst, float(np.max(np.abs(sol.y[k][mask] - obs[i][k][mask]))))
        return worst

    def obstacle_violation(self) -> float:
        """Largest amount by which some ``y^i`` falls below its obstacle (0 if none)."""
        worst = 0.0
        obs = self.obstacles()
        for i, sol in enumerate(self.modes):
            for k in range(self.grid.n_steps + 1):
                worst = max(worst, float(np.max(obs[i][k] - sol.y[k])))
        return max(worst, 0.0)


def mode_spec(p: SwitchingProblem, i: int, obstacle=None) -> BsdeSpec:
    mode = p.modes[i]
    return BsdeSpec.from_data(mode.terminal, f=mode.running_f, g=mode.running_g, kernel=mode.kernel,
                              obstacle=obstacle)


def solve_mode_floor(grid: ChainGrid, p: SwitchingProblem) -> list[BsdeSolution]:
    """Per-mode equations without switching (the floor of the Picard sequence)."""
    return [solve_standard(grid, mode_spec(p, i)) for i in range(p.m)]


def _envelope(p: SwitchingProblem, grid: ChainGrid):
    rho = np.stack([grid.kernel_on_grid(mode.kernel) for mode in p.modes])  # (m, N, M)
    hi, lo = rho.max(axis=0) - 1.0, rho.min(axis=0) - 1.0
    tot = ((hi + 1.0) * grid.jump_probs).sum(axis=1)
    k = int(np.argmax(tot))
    if tot[k] > 1 + 1e-12:
        raise StabilityViolation(k, "max-envelope", float(tot[k]), None)
    return hi, lo


def solve_upper_bound(grid: ChainGrid, p: SwitchingProblem) -> BsdeSolution:
    """Dominating equation with data ``max_i |.|`` and driver ``sum_m h(u_m, m) phi_m``.

    ``h(u) = u max_i(rho^i - 1)`` for ``u >= 0`` and ``u min_i(rho^i - 1)`` otherwise.
    """
    hi, lo = _envelope(p, grid)
    times = list(grid.times[:-1])
    modes = p.modes

    def xi(t, w, n):
        return np.max([np.abs(evaluate(md.terminal, t, w, n)) for md in modes], axis=0)

    def g(t, w, n, y, z):
        return np.max([np.abs(evaluate(md.running_g, t, w, n)) for md in modes], axis=0)

    def f(t, w, n, u):
        k = times.index(t)
        shape = u.shape[:-1]
        data = np.max([np.abs(evaluate(md.running_f, t, w + np.zeros(shape), n)) for md in modes], axis=0)
        h = np.where(u >= 0, u * hi[k], u * lo[k])
        return data + (h * grid.phi[k]).sum(axis=-1)

    return solve_standard(grid, BsdeSpec(xi, driver_f=f, driver_g=g))


def interconnected_obstacle(p: SwitchingProblem, grid: ChainGrid, ys: list) -> list:
    """``max_{j != i} (y^j - C(t_k, i, j))`` for each mode ``i``; ``-inf`` if ``m = 1``."""
    m = p.m
    out = [[None] * (grid.n_steps + 1) for _ in range(m)]
    for k in range(grid.n_steps + 1):
        C = p.costs(grid.times[k])
        stack = np.stack([ys[j][k] for j in range(m)])
        for i in range(m):
            others = [stack[j] - C[i, j] for j in range(m) if j != i]
            out[i][k] = np.max(others, axis=0) if others else np.full(stack[0].shape, -np.inf)
    return out


def picard_solve(grid: ChainGrid, p: SwitchingProblem, tolerance: float = 1e-10,
                 max_iterations: int | None = None, track_bounds: bool = False,
                 raise_on_failure: bool = True):
    """Iterate reflected solves with obstacles built from the previous iterate.

    Starts from the per-mode floor; stops when the sup-norm update over all
    modes and nodes is within ``tolerance``.  Returns ``(SystemSolution, PicardReport)``.
    With ``track_bounds`` every iterate is also checked against the floor and
    the upper bound.
    """
    if not tolerance > 0:
        raise ValueError("tolerance must be positive")
    if max_iterations is None:
        max_iterations = 10 * grid.n_steps * p.m + 10
    floor = solve_mode_floor(grid, p)
    upper = solve_upper_bound(grid, p) if track_bounds else None
    report = PicardReport()
    current = floor
    while report.iterations < max_iterations:
        obs = interconnected_obstacle(p, grid, [s.y for s in current])
        new = [solve_reflected(grid, mode_spec(p, i, obs[i])) for i in range(p.m)]
        report.iterations += 1
        delta = 0.0
        for i in range(p.m):
            for k in range(grid.n_steps + 1):
                diff = new[i].y[k] - current[i].y[k]
                delta = max(delta, float(np.max(np.abs(diff))))
                drop = float(-diff.min())
                if drop > MONO_TOL:
                    report.monotonicity_violations += int((diff < -MONO_TOL).sum())
                    report.worst_violation = max(report.worst_violation, drop)
                if track_bounds:
                    report.bound_violations += int((new[i].y[k] < floor[i].y[k] - MONO_TOL).sum())
                    report.bound_violations += int((new[i].y[k] > upper.y[k] + MONO_TOL).sum())
        report.sup_delta_history.append(delta)
        current = new
        if delta <= tolerance:
            report.converged = True
            break
    sol = SystemSolution(grid, p, current)
    if not report.converged and raise_on_failure:
        err = NonConvergence(report)
        err.solution = sol
        raise err
    return sol, report


# -- optimal strategy --------------------------------------------------------------


def _contact_step(sol: SystemSolution, k: int, cur: np.ndarray, j: np.ndarray, n: np.ndarray):
    """One round of contact detection and argmax choice at step ``k`` (vectorized)."""
    p = sol.problem
    C = p.costs(sol.grid.times[k])
    vals = sol.stacked(k)[:, j, n]  # (m, P)
    cand = vals.T - C[cur]  # (P, m): y^j - C(cur, j)
    cand[np.arange(cur.size), cur] = -np.inf
    best = cand.max(axis=1)
    own = vals[cur, np.arange(cur.size)]
    contact = own <= best + CONTACT_TOL
    # lowest index among near-maximal targets
    target = np.argmax(cand >= (best - CONTACT_TOL)[:, None], axis=1)
    cost = np.where(contact, C[cur, target], 0.0)
    return np.where(contact, target, cur), cost, contact


def feedback_policy(sol: SystemSolution):
    """Closed-loop policy switching at first contact with the interconnected obstacle.

    Repeats the contact test at the same step until no contact remains, so
    chained switches at one time follow the literal definition.  No switches
    are taken at the horizon.
    """
    p = sol.problem
    N = sol.grid.n_steps

    def policy(k, cur, j, n):
        cost = np.zeros(cur.shape)
        if k >= N or p.m == 1:
            return cur, cost
        for _ in range(p.m):
            cur, c, contact = _contact_step(sol, k, cur, j, n)
            cost += c
            if not contact.any():
                break
        return cur, cost

    return policy


def _lattice_indices(path: PathSample, grid: ChainGrid):
    w_int = path.w / grid.sqrt_dt
    k = np.arange(len(path.times))
    rounded = np.rint(w_int).astype(np.int64)
    if np.any(np.abs(w_int - rounded) > 1e-6) or np.any((rounded + k) % 2):
        raise ValueError("path is not lattice compatible")
    j = (rounded + k) // 2
    n = np.minimum(np.asarray(path.counts, dtype=np.int64), grid.max_jumps)
    return j, n


def extract_strategy(sol: SystemSolution, p: SwitchingProblem, path: PathSample, start) -> Strategy:
    """Optimal strategy along one lattice-compatible path from ``start = (time, mode)``."""
    grid = sol.grid
    t0, mode = start
    j, n = _lattice_indices(path, grid)
    k0 = int(np.searchsorted(grid.times, t0 - 1e-12))
    cur = np.array([mode])
    switches = []
    for k in range(k0, grid.n_steps):
        while True:
            new, _, contact = _contact_step(sol, k, cur, j[k : k + 1], n[k : k + 1])
            if not contact[0]:
                break
            switches.append((float(grid.times[k]), int(new[0])))
            cur = new
            if len(switches) > p.m * (grid.n_steps + 1):
                raise RuntimeError("contact loop: check the triangle-slack condition")
    return Strategy(float(t0), int(mode), tuple(switches))


def random_strategy(grid: ChainGrid, m: int, start_mode: int, q_switch: float, rng: np.random.Generator) -> Strategy:
    """At each grid step before the horizon switch with probability ``q_switch`` to a uniform other mode."""
    cur = start_mode
    switches = []
    for k in range(grid.n_steps):
        if m > 1 and rng.random() < q_switch:
            nxt = int(rng.integers(m - 1))
            nxt = nxt + (nxt >= cur)
            switches.append((float(grid.times[k]), nxt))
            cur = nxt
    return Strategy(0.0, start_mode, tuple(switches))


@dataclass
class VerificationReport:
    start_mode: int
    y_root: float
    j_extracted: float
    j_extracted_stderr: float
    random_values: list
    random_stderrs: list
    dp_root: float | None

    @property
    def extracted_z(self) -> float:
        if self.j_extracted_stderr == 0:
            return 0.0 if abs(self.j_extracted - self.y_root) < 1e-12 else float("inf")
        return abs(self.y_root - self.j_extracted) / self.j_extracted_stderr

    @property
    def n_random_exceeding(self) -> int:
        return sum(1 for v, se in zip(self.random_values, self.random_stderrs) if v > self.y_root + 3 * se)

    @property
    def dp_gap(self) -> float | None:
        return None if self.dp_root is None else abs(self.y_root - self.dp_root)

    def to_dict(self) -> dict:
        return {
            "start_mode": self.start_mode,
            "y_root": self.y_root,
            "j_extracted": self.j_extracted,
            "j_extracted_stderr": self.j_extracted_stderr,
            "extracted_z": self.extracted_z,
            "n_random": len(self.random_values),
            "n_random_exceeding": self.n_random_exceeding,
            "random_max": max(self.random_values) if self.random_values else None,
            "dp_root": self.dp_root,
            "dp_gap": self.dp_gap,
        }


def verify_representation(sol: SystemSolution, p: SwitchingProblem, grid: ChainGrid, n_paths: int, seed: int,
                          start_mode: int = 0, n_random: int = 50, q_switch=(0.01, 0.05),
                          method: str = "direct", with_dp: bool = True) -> VerificationReport:
    """Compare ``y^i(root)`` with the extracted strategy, random strategies and the DP oracle."""
    payoff, weight, _ = lattice_rollout(p, grid, n_paths, seed, method, feedback_policy(sol), start_mode)
    mean, se = _mean_stderr(payoff * weight if method == "reweighted" else payoff)
    rng = np.random.Generator(np.random.Philox(key=np.array([seed, 1 << 32], dtype=np.uint64)))
    values, errs = [], []
    for r in range(n_random):
        s = random_strategy(grid, p.m, start_mode, q_switch[r % len(q_switch)], rng)
        v, e = estimate_J(p, s, n_paths, seed + 1 + r, method=method, grid=grid)
        values.append(v)
        errs.append(e)
    dp_root = None
    if with_dp:
        from .oracle import dp_value

        dp_root = float(dp_value(grid, p).v[0][start_mode][0, 0])
    return VerificationReport(start_mode, float(sol.modes[start_mode].root), mean, se, values, errs, dp_root)
