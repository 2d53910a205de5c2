"""Switching problem instances, strategies, pathwise rewards and Monte Carlo estimates of J.

Data functions (terminal rewards, running gains) are vectorized callables
``fn(t, w, n)`` of time, Brownian coordinate ``W_t`` and jump count ``N_t``.
Modes are 0-based indices.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import mpp
from .lattice import ChainGrid
from .mpp import CompensatorSpec, KernelField, MarkedPath

__all__ = [
    "DataFn",
    "evaluate",
    "constant",
    "ModeSpec",
    "CostStructure",
    "SwitchingProblem",
    "Strategy",
    "PathSample",
    "PathBatch",
    "Violation",
    "ValidationReport",
    "validate_problem",
    "mode_process",
    "switched_kernel",
    "cumulated_cost",
    "reward_on_path",
    "estimate_J",
    "lattice_rollout",
    "strategy_policy",
    "sample_lattice_paths",
]

DataFn = Callable[[float, np.ndarray, np.ndarray], np.ndarray]

_TOL = 1e-12


def evaluate(fn: DataFn, t: float, w, n) -> np.ndarray:
    """Evaluate a data function and broadcast it to the shape of ``(w, n)``."""
    shape = np.broadcast_shapes(np.shape(w), np.shape(n))
    return np.asarray(fn(t, w, n), dtype=float) + np.zeros(shape)


def constant(c: float) -> DataFn:
    c = float(c)
    return lambda t, w, n: c


def _zero(t, w, n):
    return 0.0


@dataclass(frozen=True)
class ModeSpec:
    terminal: DataFn
    running_f: DataFn = _zero
    running_g: DataFn = _zero
    kernel: KernelField | None = None
    name: str = ""


@dataclass(frozen=True)
class CostStructure:
    """Switching costs ``cost(t) -> (m, m)`` array, entry ``[i, j]`` for ``i -> j``."""

    cost: Callable[[float], np.ndarray]

    def __call__(self, t: float) -> np.ndarray:
        return np.asarray(self.cost(t), dtype=float)

    @classmethod
    def constant(cls, matrix) -> "CostStructure":
        c = np.asarray(matrix, dtype=float)
        return cls(lambda t: c)

    @classmethod
    def affine(cls, base, slope) -> "CostStructure":
        c0 = np.asarray(base, dtype=float)
        c1 = np.asarray(slope, dtype=float)
        return cls(lambda t: c0 + c1 * t)

    def scaled(self, factor: float) -> "CostStructure":
        fn = self.cost
        return CostStructure(lambda t: factor * np.asarray(fn(t), dtype=float))


@dataclass(frozen=True)
class SwitchingProblem:
    modes: tuple
    costs: CostStructure
    compensator: CompensatorSpec
    horizon: float
    beta: float | None = None

    def __post_init__(self):
        modes = tuple(self.modes)
        M = self.compensator.n_marks
        filled = []
        for mode in modes:
            if mode.kernel is None:
                mode = ModeSpec(mode.terminal, mode.running_f, mode.running_g, KernelField.identity(M), mode.name)
            filled.append(mode)
        object.__setattr__(self, "modes", tuple(filled))
        if not filled:
            raise ValueError("at least one mode is required")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.beta is None:
            object.__setattr__(self, "beta", self.m_prime ** 2 + 1.0)

    @property
    def m(self) -> int:
        return len(self.modes)

    @property
    def kernel_bound(self) -> float:
        return max(mode.kernel.bound for mode in self.modes)

    @property
    def m_prime(self) -> float:
        return max(abs(self.kernel_bound - 1.0), 1.0)

    def scaled(self, factor: float) -> "SwitchingProblem":
        """Same problem with every reward and cost multiplied by ``factor``."""
        a = float(factor)

        def sc(fn):
            return lambda t, w, n: a * np.asarray(fn(t, w, n), dtype=float)

        modes = [ModeSpec(sc(md.terminal), sc(md.running_f), sc(md.running_g), md.kernel, md.name) for md in self.modes]
        return SwitchingProblem(tuple(modes), self.costs.scaled(a), self.compensator, self.horizon, self.beta)


@dataclass(frozen=True)
class Strategy:
    """Start ``(start_time, start_mode)`` and switches ``(theta_k, alpha_k)``."""

    start_time: float
    start_mode: int
    switches: tuple = ()

    def __post_init__(self):
        sw = tuple((float(t), int(a)) for t, a in self.switches)
        object.__setattr__(self, "switches", sw)
        prev_t, prev_a = self.start_time, self.start_mode
        for t, a in sw:
            if t < prev_t:
                raise ValueError("switch times must be nondecreasing and not before the start")
            if a == prev_a:
                raise ValueError(f"switch at t={t} targets the current mode {a}")
            prev_t, prev_a = t, a
        times = [t for t, _ in sw]
        if len(set(times)) < len(times):
            warnings.warn("simultaneous switches collapse to the last target", stacklevel=2)

    @property
    def modes(self) -> list[int]:
        return [self.start_mode] + [a for _, a in self.switches]


@dataclass
class PathSample:
    """One trajectory observed on the grid ``times``.

    ``w`` is ``W`` at grid times, ``counts`` is ``N_t`` at grid times.
    Lattice paths also carry per-step ``outcomes`` (0 no jump, ``1 + m`` mark ``m``).
    """

    times: np.ndarray
    w: np.ndarray
    counts: np.ndarray
    events: MarkedPath | None = None
    outcomes: np.ndarray | None = None
    weight: float = 1.0

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1


@dataclass
class PathBatch:
    """Many grid trajectories; arrays have a leading path axis."""

    times: np.ndarray
    w: np.ndarray  # (P, N + 1)
    counts: np.ndarray  # (P, N + 1)
    outcomes: np.ndarray | None = None  # (P, N)
    weights: np.ndarray | None = None  # (P,)

    def __len__(self):
        return self.w.shape[0]

    def path(self, i: int) -> PathSample:
        outcomes = None if self.outcomes is None else self.outcomes[i]
        events = None
        if outcomes is not None:
            steps = np.nonzero(outcomes)[0]
            events = MarkedPath(self.times[steps + 1], outcomes[steps] - 1, float(self.times[-1]))
        weight = 1.0 if self.weights is None else float(self.weights[i])
        return PathSample(self.times, self.w[i], self.counts[i], events, outcomes, weight)


# -- validation --------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    kind: str
    detail: dict

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.detail}


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def kinds(self) -> set:
        return {v.kind for v in self.violations}

    def add(self, kind: str, **detail):
        self.violations.append(Violation(kind, detail))

    def to_dict(self) -> dict:
        return {"valid": self.ok, "violations": [v.to_dict() for v in self.violations]}


def validate_problem(p: SwitchingProblem, grid: ChainGrid) -> ValidationReport:
    """Check the standing assumptions on every grid time and chain node.

    Violations are reported, never raised.
    """
    rep = ValidationReport()
    m, M = p.m, p.compensator.n_marks
    N = grid.n_steps
    times = grid.times
    comp = p.compensator

    for k, t in enumerate(times):
        lam = comp.intensity(t)
        phi = comp.mark_probs(t)
        if lam < 0 or lam > comp.lam_bound * (1 + _TOL):
            rep.add("intensity_bound", k=k, t=float(t), value=lam, bound=comp.lam_bound)
        if np.any(phi < 0) or abs(phi.sum() - 1.0) > 1e-12:
            rep.add("mark_distribution", k=k, t=float(t), sum=float(phi.sum()))

    for i, mode in enumerate(p.modes):
        ker = mode.kernel
        if not ker.eta > 3 + ker.bound ** 4:
            rep.add("kernel_integrability", mode=i, eta=ker.eta, bound=ker.bound)
        for k, t in enumerate(times):
            for val in (ker.at(t), ker.right(t)):
                if val.shape != (M,):
                    rep.add("kernel_shape", mode=i, k=k)
                    break
                if np.any(val < 0) or np.any(val > ker.bound * (1 + _TOL)):
                    rep.add("kernel_bound", mode=i, k=k, t=float(t), max=float(val.max()),
                            min=float(val.min()), bound=ker.bound)
                    break

    for k, t in enumerate(times):
        C = p.costs(t)
        if C.shape != (m, m):
            rep.add("cost_shape", k=k, shape=list(C.shape))
            continue
        for i in range(m):
            if C[i, i] != 0:
                rep.add("self_cost", k=k, t=float(t), i=i, value=float(C[i, i]))
            for j in range(m):
                if j != i and C[i, j] < 0:
                    rep.add("negative_cost", k=k, t=float(t), i=i, j=j, value=float(C[i, j]))
        for i in range(m):
            for j in range(m):
                if j == i:
                    continue
                for l in range(m):
                    if l == j:
                        continue
                    slack = C[i, j] + C[j, l] - C[i, l]
                    if not slack > 0:
                        rep.add("triangle_slack", k=k, t=float(t), i=i, j=j, l=l, slack=float(slack))

    if not p.beta > p.m_prime ** 2:
        rep.add("beta", beta=p.beta, m_prime=p.m_prime)

    # data finiteness on all nodes, terminal consistency at the horizon
    for k in range(N + 1):
        t, w, n = grid.state(k)
        for i, mode in enumerate(p.modes):
            fns = [mode.terminal] if k == N else [mode.running_f, mode.running_g]
            for fn in fns:
                if not np.all(np.isfinite(evaluate(fn, t, w, n))):
                    rep.add("nonfinite_data", mode=i, k=k)
    t, w, n = grid.state(N)
    CT = p.costs(t)
    if CT.shape == (m, m):
        xi = [evaluate(mode.terminal, t, w, n) for mode in p.modes]
        for i in range(m):
            for j in range(m):
                if i == j:
                    continue
                gap = xi[i] - (xi[j] - CT[i, j])
                if gap.min() < -_TOL:
                    rep.add("terminal_consistency", i=i, j=j, worst=float(gap.min()))
    return rep


# -- strategy functionals ----------------------------------------------------


def mode_process(s: Strategy, t: float) -> int:
    """Mode in force at ``t``; at a switch time the old mode still applies."""
    if t < s.start_time - _TOL:
        raise ValueError(f"t={t} precedes the strategy start {s.start_time}")
    mode = s.start_mode
    for theta, alpha in s.switches:
        if theta < t:
            mode = alpha
        else:
            break
    return mode


def _mode_after(s: Strategy, t: float) -> int:
    """Mode in force just after ``t`` (switches at times <= t applied)."""
    mode = s.start_mode
    for theta, alpha in s.switches:
        if theta <= t:
            mode = alpha
        else:
            break
    return mode


def switched_kernel(s: Strategy, p: SwitchingProblem) -> KernelField:
    kernels = [mode.kernel for mode in p.modes]

    def value(t):
        return kernels[mode_process(s, max(t, s.start_time))].at(t)

    def right(t):
        return kernels[_mode_after(s, t)].right(t)

    bound = max(k.bound for k in kernels)
    eta = max(k.eta for k in kernels)
    return KernelField(value=value, bound=bound, eta=eta, right_value=right)


def cumulated_cost(s: Strategy, p: SwitchingProblem, t: float) -> float:
    """``D_t``: costs of all switches with ``theta_k <= t``."""
    total = 0.0
    prev = s.start_mode
    for theta, alpha in s.switches:
        if theta > t:
            break
        total += float(p.costs(theta)[prev, alpha])
        prev = alpha
    return total


def _start_index(times: np.ndarray, t0: float) -> int:
    k0 = int(np.searchsorted(times, t0 - 1e-12, side="left"))
    if k0 >= len(times):
        raise ValueError("strategy starts after the path horizon")
    return k0


def _running(p, mode_idx, t, w, n, dA, dt):
    mode = p.modes[mode_idx]
    return evaluate(mode.running_f, t, w, n) * dA + evaluate(mode.running_g, t, w, n) * dt


def reward_on_path(p: SwitchingProblem, s: Strategy, path: PathSample) -> float:
    """Pathwise payoff: terminal reward of ``a_T``, running gains, minus switching costs.

    Integrals use the left-endpoint rule on the path's grid with the mode in
    force on each step ``(t_k, t_{k+1}]``.
    """
    times = path.times
    N = len(times) - 1
    dt = (times[-1] - times[0]) / N
    k0 = _start_index(times, s.start_time)
    total = 0.0
    for k in range(k0, N):
        t = float(times[k])
        dA = p.compensator.intensity(t) * dt
        total += float(_running(p, _mode_after(s, t), t, path.w[k], path.counts[k], dA, dt))
    T = float(times[-1])
    total += float(evaluate(p.modes[mode_process(s, T)].terminal, T, path.w[N], path.counts[N]))
    return total - cumulated_cost(s, p, T)


# -- lattice sampling ---------------------------------------------------------


def _lattice_uniforms(n_paths: int, n_steps: int, seed: int) -> np.ndarray:
    # row-major draws: path i always sees the same uniforms whatever n_paths is
    rng = mpp.path_rng(seed, 0)
    return rng.random((n_paths, n_steps, 2))


def strategy_policy(s: Strategy, p: SwitchingProblem, grid: ChainGrid):
    """Open-loop policy: switches with ``theta`` in ``(t_{k-1}, t_k]`` act at step ``k``."""
    by_step: dict[int, list] = {}
    for theta, alpha in s.switches:
        k = int(np.searchsorted(grid.times, theta - 1e-12, side="left"))
        by_step.setdefault(min(k, grid.n_steps), []).append((theta, alpha))

    def policy(k, cur, j, n):
        cost = np.zeros(cur.shape)
        for theta, alpha in by_step.get(k, ()):
            C = p.costs(theta)
            cost += C[cur, alpha]
            cur = np.full(cur.shape, alpha)
        return cur, cost

    return policy


def lattice_rollout(p, grid: ChainGrid, n_paths: int, seed: int, method: str, policy, start_mode: int,
                    k0: int = 0, record: bool = False):
    """Simulate the chain from the root while a policy picks modes.

    ``policy(k, cur, j, n) -> (new_modes, cost)`` acts at every grid step
    ``k0..N``; at ``k = N`` only its cost counts (a switch at ``T`` leaves
    ``a_T`` unchanged).  ``method='direct'`` samples the chain under the
    current mode's kernel; ``'reweighted'`` samples the reference chain and
    carries the chain likelihood ratio.

    Returns ``(payoff, weight, batch_or_None)``.
    """
    if method not in ("direct", "reweighted"):
        raise ValueError("method must be 'direct' or 'reweighted'")
    N = grid.n_steps
    U = _lattice_uniforms(n_paths, N, seed)
    rho = grid.kernels  # (m, N, M)
    cur = np.full(n_paths, start_mode, dtype=np.int64)
    j = np.zeros(n_paths, dtype=np.int64)
    n = np.zeros(n_paths, dtype=np.int64)
    payoff = np.zeros(n_paths)
    weight = np.ones(n_paths)
    if record:
        J = np.zeros((n_paths, N + 1), dtype=np.int64)
        NC = np.zeros((n_paths, N + 1), dtype=np.int64)
        OUT = np.zeros((n_paths, N), dtype=np.int64)
    # paths reach step k0 by the reference chain before the strategy starts
    for k in range(N):
        if k >= k0:
            cur, cost = policy(k, cur, j, n)
            payoff -= cost
        t = float(grid.times[k])
        w = (2 * j - k) * grid.sqrt_dt
        p_ref = grid.jump_probs[k]
        if k >= k0:
            for i in range(p.m):
                mask = cur == i
                if mask.any():
                    payoff[mask] += _running(p, i, t, w[mask], n[mask], grid.dA[k], grid.dt)
            rp = rho[cur, k, :] * p_ref  # (P, M)
        else:
            rp = np.broadcast_to(p_ref, (n_paths, grid.n_marks))
        sample_p = rp if method == "direct" else np.broadcast_to(p_ref, rp.shape)
        cum = np.cumsum(sample_p, axis=1)
        # top sum(p) of the unit interval is split into mark slots, the rest is "no jump"
        v = U[:, k, 1] - (1.0 - cum[:, -1])
        mark = np.minimum((v[:, None] >= cum).sum(axis=1), grid.n_marks - 1)
        outcome = np.where(v < 0, 0, 1 + mark)
        if method == "reweighted" and k >= k0:
            jumped = outcome > 0
            ratio = np.empty(n_paths)
            mk = np.maximum(outcome - 1, 0)
            ratio[jumped] = rho[cur[jumped], k, mk[jumped]]
            q_ref = 1.0 - p_ref.sum()
            q_new = 1.0 - rp[~jumped].sum(axis=1)
            ratio[~jumped] = q_new / q_ref if q_ref > 0 else 0.0
            weight *= ratio
        up = U[:, k, 0] < 0.5
        if record:
            OUT[:, k] = outcome
        j = j + up
        n = np.where(outcome > 0, np.minimum(n + 1, grid.max_jumps), n)
        if record:
            J[:, k + 1] = j
            NC[:, k + 1] = n
    T = float(grid.times[N])
    w = (2 * j - N) * grid.sqrt_dt
    final = cur.copy()
    _, cost = policy(N, cur, j, n)
    payoff -= cost
    for i in range(p.m):
        mask = final == i
        if mask.any():
            payoff[mask] += evaluate(p.modes[i].terminal, T, w[mask], n[mask])
    batch = None
    if record:
        steps = np.arange(N + 1)[None, :]
        batch = PathBatch(grid.times, (2 * J - steps) * grid.sqrt_dt, NC, OUT, weight)
    return payoff, weight, batch


def sample_lattice_paths(grid: ChainGrid, n_paths: int, seed: int) -> PathBatch:
    """Reference-chain paths (no strategy), reproducible per path index."""
    dummy = _NullProblem()
    _, _, batch = lattice_rollout(dummy, grid, n_paths, seed, "reweighted",
                                  lambda k, cur, j, n: (cur, np.zeros(cur.shape)), 0, k0=grid.n_steps + 1,
                                  record=True)
    return batch


class _NullProblem:
    m = 0
    modes = ()


# -- continuous-time sampling -------------------------------------------------


def _continuous_batch(p: SwitchingProblem, grid: ChainGrid, n_paths: int, seed: int, kernel=None):
    comp = p.compensator
    N = grid.n_steps
    W = np.zeros((n_paths, N + 1))
    NC = np.zeros((n_paths, N + 1), dtype=np.int64)
    paths = []
    if kernel is None:
        rate_fn, bound = comp.rates, comp.lam_bound
    else:
        rate_fn = lambda t: kernel.at(t) * comp.rates(t)
        bound = comp.lam_bound * kernel.bound
    for i in range(n_paths):
        rng = mpp.path_rng(seed, i)
        path = mpp._thin(rate_fn, bound, p.horizon, rng, comp.n_marks)
        dW = rng.normal(0.0, grid.sqrt_dt, size=N)
        W[i, 1:] = np.cumsum(dW)
        NC[i] = np.searchsorted(path.times, grid.times, side="right")
        paths.append(path)
    return PathBatch(grid.times, W, NC), paths


def _batch_rewards(p: SwitchingProblem, s: Strategy, batch: PathBatch) -> np.ndarray:
    times = batch.times
    N = len(times) - 1
    dt = (times[-1] - times[0]) / N
    k0 = _start_index(times, s.start_time)
    total = np.zeros(len(batch))
    for k in range(k0, N):
        t = float(times[k])
        dA = p.compensator.intensity(t) * dt
        total += _running(p, _mode_after(s, t), t, batch.w[:, k], batch.counts[:, k], dA, dt)
    T = float(times[-1])
    total += evaluate(p.modes[mode_process(s, T)].terminal, T, batch.w[:, N], batch.counts[:, N])
    return total - cumulated_cost(s, p, T)


def _mean_stderr(values: np.ndarray) -> tuple[float, float]:
    if np.all(values == values[0]):
        return float(values[0]), 0.0
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(values.size))


def estimate_J(p: SwitchingProblem, s: Strategy, n_paths: int, seed: int, method: str = "direct",
               grid: ChainGrid | None = None, n_steps: int | None = None,
               sampler: str = "lattice") -> tuple[float, float]:
    """Monte Carlo estimate of ``J(start, i, a)`` with its standard error.

    ``method='reweighted'`` averages ``L_T * payoff`` over reference paths;
    ``method='direct'`` averages the payoff over paths simulated under the
    switched kernel.  ``sampler='lattice'`` draws chain paths (exact chain
    law); ``sampler='continuous'`` draws thinned point-process paths with
    Gaussian Brownian increments on the grid.
    """
    if n_paths < 2:
        raise ValueError("n_paths must be >= 2")
    if method not in ("direct", "reweighted"):
        raise ValueError("method must be 'direct' or 'reweighted'")
    if grid is None:
        if n_steps is None:
            raise ValueError("pass a grid or n_steps")
        from .lattice import build_chain

        grid = build_chain(p, n_steps)
    if sampler == "lattice":
        k0 = _start_index(grid.times, s.start_time)
        payoff, weight, _ = lattice_rollout(p, grid, n_paths, seed, method, strategy_policy(s, p, grid),
                                            s.start_mode, k0=k0)
        return _mean_stderr(payoff * weight if method == "reweighted" else payoff)
    if sampler != "continuous":
        raise ValueError("sampler must be 'lattice' or 'continuous'")
    kernel = switched_kernel(s, p)
    if method == "direct":
        batch, _ = _continuous_batch(p, grid, n_paths, seed, kernel)
        return _mean_stderr(_batch_rewards(p, s, batch))
    batch, paths = _continuous_batch(p, grid, n_paths, seed)
    L = mpp.doleans_weights(paths, p.compensator, kernel, n_grid=grid.n_steps)
    return _mean_stderr(L * _batch_rewards(p, s, batch))
