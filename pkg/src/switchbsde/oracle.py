"""Ground truth on the chain: Bellman recursion and exhaustive search over the history tree."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lattice import ChainGrid, StabilityViolation, reweighted_slice
from .problem import Strategy, SwitchingProblem, evaluate

__all__ = [
    "ValueTable",
    "dp_value",
    "AdaptedStrategy",
    "EnumerationTooLarge",
    "enumerate_strategies",
    "tree_value",
    "MAX_TREE_STATES",
]

CONTINUE = -1
TIE_TOL = 1e-12
MAX_TREE_STATES = 6_000_000


@dataclass
class ValueTable:
    """``v[k][i]`` and ``action[k][i]`` are slices of shape ``(k + 1, n_k + 1)``.

    ``action`` holds ``-1`` for continue or the target mode.  Actions at the
    horizon are always ``-1``.
    """

    grid: ChainGrid
    v: list
    action: list

    @property
    def m(self) -> int:
        return len(self.v[0])

    def root(self, mode: int = 0) -> float:
        return float(self.v[0][mode][0, 0])

    def stacked(self, k: int) -> np.ndarray:
        return np.stack(self.v[k])

    def v_mode(self, i: int) -> list:
        """Slices ``v(., i)`` for every step."""
        return [vk[i] for vk in self.v]


def _mode_rows(grid: ChainGrid, p: SwitchingProblem) -> np.ndarray:
    rho = np.stack([grid.kernel_on_grid(md.kernel) for md in p.modes])
    tot = (rho * grid.jump_probs[None]).sum(axis=2)
    i, k = np.unravel_index(int(np.argmax(tot)), tot.shape)
    if tot[i, k] > 1 + 1e-12:
        raise StabilityViolation(int(k), i, float(tot[i, k]), None)
    return rho


def dp_value(grid: ChainGrid, p: SwitchingProblem) -> ValueTable:
    """Backward Bellman recursion with at most one switch per grid time.

    ``v(k, i) = max_j [-C(t_k, i, j) + f^j dA_k + g^j dt + E^{rho^j} v(k + 1, j)]``.
    Ties favour continuing, then the lowest target index.
    """
    rho = _mode_rows(grid, p)
    N, m = grid.n_steps, p.m
    t, w, n = grid.state(N)
    v_next = [evaluate(md.terminal, t, w, n) for md in p.modes]
    V = [None] * (N + 1)
    A = [None] * (N + 1)
    V[N] = v_next
    A[N] = [np.full(v_next[0].shape, CONTINUE, dtype=np.int64) for _ in range(m)]
    for k in range(N - 1, -1, -1):
        t, w, n = grid.state(k)
        cont = np.stack([
            evaluate(md.running_f, t, w, n) * grid.dA[k]
            + evaluate(md.running_g, t, w, n) * grid.dt
            + reweighted_slice(v_next[j], k, grid, rho[j, k])
            for j, md in enumerate(p.modes)
        ])  # (m, ...)
        C = p.costs(t)
        vk, ak = [], []
        for i in range(m):
            best = cont[i].copy()
            act = np.full(best.shape, CONTINUE, dtype=np.int64)
            for j in range(m):
                if j == i:
                    continue
                cand = cont[j] - C[i, j]
                better = cand > best + TIE_TOL
                best = np.where(better, cand, best)
                act = np.where(better, j, act)
            vk.append(best)
            ak.append(act)
        V[k], A[k] = vk, ak
        v_next = vk
    return ValueTable(grid, V, A)


# -- history tree -------------------------------------------------------------


class EnumerationTooLarge(ValueError):
    pass


def _tree_states(grid: ChainGrid):
    """Per level: lattice index ``j`` and (capped) jump count of every history.

    Histories at level ``k + 1`` are ordered ``parent * B + outcome`` with
    ``outcome = branch * (M + 1) + o`` (branch 0 up, ``o = 0`` no jump).
    """
    M = grid.n_marks
    B = 2 * (M + 1)
    branch = np.repeat([1, 0], M + 1)  # +1 to j on the up move
    jumped = np.tile(np.r_[0, np.ones(M, dtype=np.int64)], 2)
    js, ns = [np.zeros(1, dtype=np.int64)], [np.zeros(1, dtype=np.int64)]
    for _ in range(grid.n_steps):
        j = (js[-1][:, None] + branch[None, :]).ravel()
        n = np.minimum(ns[-1][:, None] + jumped[None, :], grid.max_jumps).ravel()
        js.append(j)
        ns.append(n)
    return js, ns, B


def _outcome_probs(grid: ChainGrid, k: int, rho_row) -> np.ndarray:
    """Probability of each of the ``B`` outcomes at step ``k`` under kernel row ``rho_row``."""
    rp = rho_row * grid.jump_probs[k]
    q0 = 1.0 - rp.sum()
    if q0 < -1e-12:
        raise StabilityViolation(k, "kernel", float(rp.sum()), None)
    one = np.r_[q0, rp]
    return 0.5 * np.r_[one, one]


def _check_size(grid: ChainGrid, m: int, budget: int):
    B = 2 * (grid.n_marks + 1)
    total = sum(B ** k for k in range(grid.n_steps + 1)) * m * (budget + 1)
    if total > MAX_TREE_STATES:
        raise EnumerationTooLarge(
            f"history tree has {total} states (limit {MAX_TREE_STATES}); reduce n_steps, marks or max_switches")


def tree_value(grid: ChainGrid, terminal, f=None, g=None, kernel=None) -> float:
    """Root value ``E^rho[xi + sum f dA + sum g dt]`` by full forward enumeration of the history tree.

    No recombination is used: every history carries its own probability.
    """
    _check_size(grid, 1, 0)
    js, ns, B = _tree_states(grid)
    rho = np.ones((grid.n_steps, grid.n_marks)) if kernel is None else grid.kernel_on_grid(kernel)
    prob = np.ones(1)
    total = 0.0
    for k in range(grid.n_steps):
        t = float(grid.times[k])
        w = (2 * js[k] - k) * grid.sqrt_dt
        if f is not None:
            total += float(prob @ evaluate(f, t, w, ns[k])) * grid.dA[k]
        if g is not None:
            total += float(prob @ evaluate(g, t, w, ns[k])) * grid.dt
        prob = (prob[:, None] * _outcome_probs(grid, k, rho[k])[None, :]).ravel()
    N = grid.n_steps
    w = (2 * js[N] - N) * grid.sqrt_dt
    return total + float(prob @ evaluate(terminal, float(grid.times[N]), w, ns[N]))


@dataclass
class AdaptedStrategy:
    """Decision rule on the history tree: ``choice[k][h, i, b]`` is the mode run on step ``k``
    from history ``h`` in mode ``i`` with ``b`` switches left."""

    grid: ChainGrid
    start_mode: int
    budget: int
    choice: list
    n_outcomes: int

    def realize(self, history) -> Strategy:
        """Switches along a history given as a sequence of outcome indices (length ``<= N``)."""
        h, cur, b = 0, self.start_mode, self.budget
        switches = []
        for k in range(self.grid.n_steps):
            nxt = int(self.choice[k][h, cur, b])
            if nxt != cur:
                switches.append((float(self.grid.times[k]), nxt))
                b -= 1
                cur = nxt
            if k >= len(history):
                break
            h = h * self.n_outcomes + int(history[k])
        return Strategy(float(self.grid.times[0]), self.start_mode, tuple(switches))

    def max_switches_used(self) -> int:
        """Largest number of switches over all histories."""
        used = np.zeros(1, dtype=np.int64)
        cur = np.full(1, self.start_mode, dtype=np.int64)
        for k in range(self.grid.n_steps):
            h = np.arange(cur.size)
            nxt = self.choice[k][h, cur, self.budget - used]
            used = used + (nxt != cur)
            cur = np.repeat(nxt, self.n_outcomes)
            used = np.repeat(used, self.n_outcomes)
        return int(used.max())


def enumerate_strategies(grid: ChainGrid, p: SwitchingProblem, max_switches: int, start_mode: int = 0):
    """Best expected payoff over every adapted grid strategy with at most ``max_switches`` switches.

    The search runs over the full (non-recombining) history tree; each
    strategy's value is an exact expectation under its switched kernel, and
    the supremum is taken history by history.  Switches at the horizon are
    omitted since they only cost.  Returns ``(best_value, AdaptedStrategy)``.
    """
    if max_switches < 0:
        raise ValueError("max_switches must be nonnegative")
    m = p.m
    _check_size(grid, m, max_switches)
    rho = _mode_rows(grid, p)
    js, ns, B = _tree_states(grid)
    N = grid.n_steps
    nb = max_switches + 1
    T = float(grid.times[N])
    w = (2 * js[N] - N) * grid.sqrt_dt
    term = np.stack([evaluate(md.terminal, T, w, ns[N]) for md in p.modes], axis=1)  # (H, m)
    V = np.repeat(term[:, :, None], nb, axis=2)  # (H, m, b)
    choice = [None] * N
    for k in range(N - 1, -1, -1):
        t = float(grid.times[k])
        w = (2 * js[k] - k) * grid.sqrt_dt
        H = js[k].size
        # value of running mode j on this step with b switches left afterwards
        run = np.empty((H, m, nb))
        for j, md in enumerate(p.modes):
            gain = evaluate(md.running_f, t, w, ns[k]) * grid.dA[k] + evaluate(md.running_g, t, w, ns[k]) * grid.dt
            probs = _outcome_probs(grid, k, rho[j, k])
            child = V[:, j, :].reshape(H, B, nb)
            run[:, j, :] = gain[:, None] + np.einsum("o,hob->hb", probs, child)
        C = p.costs(t)
        best = np.empty((H, m, nb))
        pick = np.empty((H, m, nb), dtype=np.int64)
        for i in range(m):
            best[:, i, :] = run[:, i, :]
            pick[:, i, :] = i
            for j in range(m):
                if j == i:
                    continue
                cand = np.full((H, nb), -np.inf)
                cand[:, 1:] = run[:, j, :-1] - C[i, j]
                better = cand > best[:, i, :] + TIE_TOL
                best[:, i, :] = np.where(better, cand, best[:, i, :])
                pick[:, i, :] = np.where(better, j, pick[:, i, :])
        V = best
        choice[k] = pick
    value = float(V[0, start_mode, max_switches])
    return value, AdaptedStrategy(grid, start_mode, max_switches, choice, B)
