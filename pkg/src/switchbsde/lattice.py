"""Recombining chain for (W, p): binomial Brownian branch times a one-jump-per-step branch.

Nodes at step ``k`` are indexed by ``(j, n)`` with Brownian lattice coordinate
``w = 2j - k`` (so ``W = w * sqrt(dt)``) and jump count ``n``.  A slice of
values at step ``k`` is an array of shape ``(k + 1, n_k + 1)`` with
``n_k = min(k, max_jumps)``.

One-step outcomes are ordered ``[branch, outcome]`` where branch 0 is the up
move, branch 1 the down move, outcome 0 is "no jump" and outcome ``1 + m`` is a
jump with mark ``m``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .mpp import CompensatorSpec, KernelField

__all__ = [
    "ChainGrid",
    "NodeState",
    "StepCoefficients",
    "StabilityViolation",
    "make_grid",
    "build_chain",
    "step_coefficients",
    "reweighted_expectation",
    "slice_coefficients",
    "reweighted_slice",
    "node_distribution",
]

_STAB_TOL = 1e-12


class StabilityViolation(ValueError):
    """A kernel makes the reweighted one-step law improper: ``sum_m rho p > 1``."""

    def __init__(self, step: int, mode, value: float, min_steps: int | None):
        self.step = step
        self.mode = mode
        self.value = value
        self.min_steps = min_steps
        hint = f"; use n_steps >= {min_steps}" if min_steps is not None else ""
        super().__init__(f"sum_m rho*p = {value:.6g} > 1 at step {step} (kernel {mode}){hint}")


class NodeState(NamedTuple):
    k: int
    w: int
    n: int


@dataclass(frozen=True)
class StepCoefficients:
    expectation: float
    z: float
    u: np.ndarray
    jump_conditional: np.ndarray
    no_jump_conditional: float


@dataclass(frozen=True, eq=False)
class ChainGrid:
    n_steps: int
    horizon: float
    max_jumps: int
    marks: tuple
    times: np.ndarray  # (N + 1,)
    jump_probs: np.ndarray  # (N, M)
    lam: np.ndarray  # (N,) intensity at left endpoints
    phi: np.ndarray  # (N, M)
    kernels: np.ndarray  # (m, N, M) mode kernels at left endpoints, may have m = 0

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @property
    def sqrt_dt(self) -> float:
        return math.sqrt(self.dt)

    @property
    def n_marks(self) -> int:
        return len(self.marks)

    @property
    def no_jump_prob(self) -> np.ndarray:
        return 1.0 - self.jump_probs.sum(axis=1)

    @property
    def dA(self) -> np.ndarray:
        """Increment of ``A`` over each step, left-endpoint rule."""
        return self.lam * self.dt

    def n_count(self, k: int) -> int:
        return min(k, self.max_jumps) + 1

    def slice_shape(self, k: int) -> tuple[int, int]:
        return (k + 1, self.n_count(k))

    def n_nodes(self, k: int) -> int:
        a, b = self.slice_shape(k)
        return a * b

    def w_coords(self, k: int) -> np.ndarray:
        """Integer Brownian coordinates ``-k, -k+2, ..., k``."""
        return 2 * np.arange(k + 1) - k

    def state(self, k: int):
        """``(t, W, n)`` broadcastable over the slice at step ``k``."""
        w = (self.w_coords(k) * self.sqrt_dt)[:, None]
        n = np.arange(self.n_count(k))[None, :]
        return float(self.times[k]), w, n

    def jump_child(self, k: int) -> np.ndarray:
        """Column index at step ``k + 1`` reached by a jump from each column at ``k``."""
        return np.minimum(np.arange(self.n_count(k)) + 1, self.max_jumps)

    def kernel_on_grid(self, kernel: KernelField) -> np.ndarray:
        """Kernel right limits at the left endpoints, shape ``(N, M)``."""
        return np.array([kernel.right(t) for t in self.times[:-1]], dtype=float).reshape(self.n_steps, self.n_marks)


def _check_stability(jump_probs: np.ndarray, kernels: np.ndarray, labels, n_steps: int, recompute) -> None:
    worst = (0.0, -1, None)
    for label, rho in zip(labels, kernels):
        tot = (rho * jump_probs).sum(axis=1)
        k = int(np.argmax(tot))
        if tot[k] > worst[0]:
            worst = (float(tot[k]), k, label)
    if worst[0] > 1 + _STAB_TOL:
        min_steps = None
        start = max(n_steps + 1, math.ceil(n_steps * worst[0]))
        for cand in range(start, 100 * start + 1):
            if recompute(cand):
                min_steps = cand
                break
        raise StabilityViolation(worst[1], worst[2], worst[0], min_steps)


def make_grid(
    comp: CompensatorSpec,
    horizon: float,
    n_steps: int,
    kernels: Sequence[KernelField] = (),
    max_jumps: int | None = None,
    labels=None,
) -> ChainGrid:
    """Chain with ``p_{k,m} = phi(t_k, m) lam(t_k) dt`` and the given mode kernels."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    if max_jumps is None:
        max_jumps = n_steps
    if not 0 <= max_jumps <= n_steps:
        raise ValueError("max_jumps must lie in [0, n_steps]")
    M = comp.n_marks
    labels = list(range(len(kernels))) if labels is None else list(labels)

    def tables(N):
        times = np.linspace(0.0, horizon, N + 1)
        lam = np.array([comp.intensity(t) for t in times[:-1]])
        phi = np.array([comp.mark_probs(t) for t in times[:-1]]).reshape(N, M)
        rho = np.array([[kern.right(t) for t in times[:-1]] for kern in kernels], dtype=float).reshape(len(kernels), N, M)
        return times, lam, phi, rho

    times, lam, phi, rho = tables(n_steps)
    dt = horizon / n_steps
    probs = phi * lam[:, None] * dt
    if np.any(probs < 0):
        raise ValueError("negative jump probability: check lambda and phi")
    def ok(N):
        t, la, ph, rh = tables(N)
        p = ph * la[:, None] * (horizon / N)
        return p.sum(axis=1).max() <= 1 + _STAB_TOL and all(
            ((r * p).sum(axis=1) <= 1 + _STAB_TOL).all() for r in rh
        )

    # the reference law counts as the identity kernel; the worst offender is reported
    _check_stability(probs, np.concatenate([np.ones((1, n_steps, M)), rho]), ["reference"] + labels, n_steps, ok)
    return ChainGrid(
        n_steps=n_steps,
        horizon=float(horizon),
        max_jumps=int(max_jumps),
        marks=tuple(comp.marks),
        times=times,
        jump_probs=probs,
        lam=lam,
        phi=phi,
        kernels=rho,
    )


def build_chain(p, n_steps: int, max_jumps: int | None = None) -> ChainGrid:
    """Chain for a switching problem; every mode kernel must keep the step law proper."""
    return make_grid(
        p.compensator,
        p.horizon,
        n_steps,
        kernels=[mode.kernel for mode in p.modes],
        max_jumps=max_jumps,
        labels=[mode.name or i for i, mode in enumerate(p.modes)],
    )


# -- one-step primitives -----------------------------------------------------


def _as_outcome_array(values, M: int) -> np.ndarray:
    if isinstance(values, dict):
        arr = np.empty((2, M + 1))
        for b in range(2):
            for o in range(M + 1):
                if (b, o) not in values:
                    raise KeyError(f"missing child value for branch {b}, outcome {o}")
                arr[b, o] = values[(b, o)]
        return arr
    arr = np.asarray(values, dtype=float)
    if arr.shape != (2, M + 1):
        raise ValueError(f"expected child values of shape (2, {M + 1}), got {arr.shape}")
    if np.any(np.isnan(arr)):
        raise ValueError("missing child value (NaN)")
    return arr


def step_coefficients(values, node: NodeState, grid: ChainGrid) -> StepCoefficients:
    """Expectation, ``z`` and jump coefficients ``u`` of the outcome values at ``node``.

    ``values`` is a ``(2, M + 1)`` array (or a dict keyed by ``(branch, outcome)``).
    """
    k = node.k
    V = _as_outcome_array(values, grid.n_marks)
    p = grid.jump_probs[k]
    q0 = 1.0 - p.sum()
    njc = 0.5 * (V[0, 0] + V[1, 0])
    jc = 0.5 * (V[0, 1:] + V[1, 1:])
    expectation = q0 * njc + float(p @ jc)
    up = q0 * V[0, 0] + p @ V[0, 1:]
    down = q0 * V[1, 0] + p @ V[1, 1:]
    z = 0.5 * (up - down) / grid.sqrt_dt
    return StepCoefficients(float(expectation), float(z), jc - njc, jc, float(njc))


def _kernel_row(kernel, k: int, grid: ChainGrid) -> np.ndarray:
    if isinstance(kernel, KernelField):
        return kernel.right(grid.times[k]).reshape(grid.n_marks)
    return np.asarray(kernel, dtype=float).reshape(grid.n_marks)


def reweighted_expectation(values, node: NodeState, grid: ChainGrid, kernel) -> float:
    """Expectation under jump probabilities ``rho(t_k, m) p_{k,m}``."""
    k = node.k
    V = _as_outcome_array(values, grid.n_marks)
    rp = _kernel_row(kernel, k, grid) * grid.jump_probs[k]
    q0 = 1.0 - rp.sum()
    if q0 < -_STAB_TOL:
        raise StabilityViolation(k, "kernel", 1.0 - q0, None)
    return float(0.5 * (q0 * (V[0, 0] + V[1, 0]) + rp @ (V[0, 1:] + V[1, 1:])))


# -- slice primitives used by the backward solvers ---------------------------


def _children(Y_next: np.ndarray, k: int, grid: ChainGrid):
    cols = grid.n_count(k)
    jcol = grid.jump_child(k)
    up0 = Y_next[1 : k + 2, :cols]
    down0 = Y_next[0 : k + 1, :cols]
    upJ = Y_next[1 : k + 2, jcol]
    downJ = Y_next[0 : k + 1, jcol]
    return up0, down0, upJ, downJ


def slice_coefficients(Y_next: np.ndarray, k: int, grid: ChainGrid):
    """Vectorized :func:`step_coefficients` over the slice at step ``k``.

    Child values depend on the mark only through the jump count, so ``u`` is
    the same for every mark; it is returned with a trailing mark axis.
    Returns ``(expectation, z, u, jump_conditional, no_jump_conditional)``.
    """
    up0, down0, upJ, downJ = _children(Y_next, k, grid)
    p = grid.jump_probs[k]
    ptot = p.sum()
    q0 = 1.0 - ptot
    njc = 0.5 * (up0 + down0)
    jc = 0.5 * (upJ + downJ)
    expectation = q0 * njc + ptot * jc
    z = 0.5 * (q0 * (up0 - down0) + ptot * (upJ - downJ)) / grid.sqrt_dt
    u = np.repeat((jc - njc)[..., None], grid.n_marks, axis=-1)
    return expectation, z, u, jc, njc


def reweighted_slice(Y_next: np.ndarray, k: int, grid: ChainGrid, rho_row: np.ndarray) -> np.ndarray:
    """Vectorized :func:`reweighted_expectation` with kernel values ``rho_row`` at ``t_k``."""
    up0, down0, upJ, downJ = _children(Y_next, k, grid)
    rp = float(np.dot(rho_row, grid.jump_probs[k]))
    q0 = 1.0 - rp
    if q0 < -_STAB_TOL:
        raise StabilityViolation(k, "kernel", rp, None)
    return 0.5 * (q0 * (up0 + down0) + rp * (upJ + downJ))


def node_distribution(grid: ChainGrid, rho: np.ndarray | None = None) -> list[np.ndarray]:
    """Forward node probabilities per step, under the reference law or kernel ``rho`` (N, M)."""
    dist = [np.ones((1, 1))]
    for k in range(grid.n_steps):
        p = grid.jump_probs[k] if rho is None else rho[k] * grid.jump_probs[k]
        pj = float(p.sum())
        cur = dist[-1]
        nxt = np.zeros(grid.slice_shape(k + 1))
        jcol = grid.jump_child(k)
        cols = grid.n_count(k)
        for sl in (slice(1, k + 2), slice(0, k + 1)):
            nxt[sl, :cols] += 0.5 * (1.0 - pj) * cur
            for c in range(cols):
                nxt[sl, jcol[c]] += 0.5 * pj * cur[:, c]
        dist.append(nxt)
    return dist
