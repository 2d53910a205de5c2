"""Backward solvers on the chain: standard, penalized and reflected BSDEs.

One backward step at node ``(k, j, n)``::

    y_k = E[y_{k+1}] + F(state, u_k) dA_k + G(state, y_k, z_k) dt   (+ reflection)

with ``(u_k, z_k)`` from :func:`switchbsde.lattice.slice_coefficients`.  When a
kernel ``rho`` is attached to the :class:`BsdeSpec`, ``F`` gains the term
``sum_m u(m) (rho(m) - 1) phi(m)``, which turns ``E`` into the expectation under
the reweighted step law.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .lattice import ChainGrid, StabilityViolation, node_distribution, slice_coefficients
from .mpp import KernelField
from .problem import evaluate

__all__ = [
    "BsdeSpec",
    "BsdeSolution",
    "ComparisonReport",
    "FixedPointError",
    "solve_standard",
    "solve_penalized",
    "solve_reflected",
    "check_comparison",
    "weighted_norms",
    "data_norm_bound",
]

FP_TOL = 1e-13
FP_MAX_ITER = 50


class FixedPointError(RuntimeError):
    pass


@dataclass(frozen=True)
class BsdeSpec:
    """Data of one backward equation.

    ``driver_f(t, w, n, u)`` is integrated against ``dA`` (``u`` has a trailing
    mark axis); ``driver_g(t, w, n, y, z)`` against ``dt``.  Set
    ``g_depends_on_y`` when ``driver_g`` actually reads ``y``; the step is then
    solved by fixed-point iteration.  ``obstacle`` is a data function or a list
    of per-step slices.
    """

    terminal: Callable
    driver_f: Callable | None = None
    driver_g: Callable | None = None
    obstacle: Callable | Sequence[np.ndarray] | None = None
    kernel: KernelField | None = None
    g_depends_on_y: bool = False
    lipschitz: dict | None = None

    @classmethod
    def from_data(cls, terminal, f=None, g=None, kernel=None, obstacle=None, **kw) -> "BsdeSpec":
        """Equation data with running terms ``f(t, w, n)``, ``g(t, w, n)`` that do not depend on ``(y, u, z)``."""
        driver_f = None if f is None else (lambda t, w, n, u: f(t, w, n))
        driver_g = None if g is None else (lambda t, w, n, y, z: g(t, w, n))
        return cls(terminal, driver_f, driver_g, obstacle, kernel, **kw)

    def with_obstacle(self, obstacle) -> "BsdeSpec":
        return BsdeSpec(self.terminal, self.driver_f, self.driver_g, obstacle, self.kernel,
                        self.g_depends_on_y, self.lipschitz)


@dataclass
class BsdeSolution:
    grid: ChainGrid
    y: list  # N + 1 slices
    u: list  # N slices with trailing mark axis
    z: list  # N slices
    dk: list  # N + 1 slices, dk[N] = 0
    obstacle: list | None = None
    weighted_norms: dict = field(default_factory=dict)

    @property
    def root(self) -> float:
        return float(self.y[0][0, 0])

    def max_abs_diff(self, other: "BsdeSolution") -> float:
        return max(float(np.max(np.abs(a - b))) for a, b in zip(self.y, other.y))


# -- core backward sweep ------------------------------------------------------


def _obstacle_slice(obstacle, k, grid):
    if obstacle is None:
        return None
    if callable(obstacle):
        t, w, n = grid.state(k)
        return evaluate(obstacle, t, w, n)
    return np.asarray(obstacle[k], dtype=float)


def _kernel_rows(spec: BsdeSpec, grid: ChainGrid):
    if spec.kernel is None:
        return None
    rho = grid.kernel_on_grid(spec.kernel)
    tot = (rho * grid.jump_probs).sum(axis=1)
    k = int(np.argmax(tot))
    if tot[k] > 1 + 1e-12:
        raise StabilityViolation(k, "kernel", float(tot[k]), None)
    return rho


def _check_beta(spec: BsdeSpec, beta: float | None):
    lip = spec.lipschitz
    if not lip or beta is None:
        return
    lf, lu = lip.get("L_f", 0.0), lip.get("L_U", 0.0)
    if not beta > 2 * lf + lu ** 2:
        warnings.warn(f"beta={beta} <= 2 L_f + L_U^2 = {2 * lf + lu ** 2}; "
                      "the discrete recursion is still well posed", stacklevel=3)


def _sweep(grid: ChainGrid, spec: BsdeSpec, project):
    """Backward recursion; ``project(k, P, h) -> (y, dk)`` applies the reflection rule."""
    N = grid.n_steps
    t, w, n = grid.state(N)
    y_next = evaluate(spec.terminal, t, w, n)
    ys, us, zs, dks, obs = [None] * (N + 1), [None] * N, [None] * N, [None] * (N + 1), [None] * (N + 1)
    ys[N] = y_next
    dks[N] = np.zeros_like(y_next)
    if spec.obstacle is not None:
        obs[N] = _obstacle_slice(spec.obstacle, N, grid)
        if callable(spec.obstacle) and np.any(y_next < obs[N] - 1e-12):
            raise ValueError("terminal value lies below the obstacle at the horizon")
    rho = _kernel_rows(spec, grid)
    for k in range(N - 1, -1, -1):
        t, w, n = grid.state(k)
        expectation, z, u, _, _ = slice_coefficients(y_next, k, grid)
        base = expectation.copy()
        dA = grid.dA[k]
        if spec.driver_f is not None:
            base += evaluate(lambda tt, ww, nn: spec.driver_f(tt, ww, nn, u), t, w, n) * dA
        if rho is not None:
            base += (u * ((rho[k] - 1.0) * grid.phi[k])).sum(axis=-1) * dA
        y = base
        if spec.driver_g is not None:
            g = lambda yy: evaluate(lambda tt, ww, nn: spec.driver_g(tt, ww, nn, yy, z), t, w, n)
            y = base + g(base) * grid.dt
            if spec.g_depends_on_y:
                err = np.inf
                for _ in range(FP_MAX_ITER):
                    y_new = base + g(y) * grid.dt
                    err = float(np.max(np.abs(y_new - y)))
                    y = y_new
                    if err <= FP_TOL * max(1.0, float(np.max(np.abs(y)))):
                        break
                else:
                    raise FixedPointError(f"per-node fixed point did not converge at step {k} (residual {err:.3g})")
        h = _obstacle_slice(spec.obstacle, k, grid)
        obs[k] = h
        y, dk = project(k, y, h)
        ys[k], us[k], zs[k], dks[k] = y, u, z, dk
        y_next = y
    return BsdeSolution(grid, ys, us, zs, dks, obs if spec.obstacle is not None else None)


def solve_standard(grid: ChainGrid, spec: BsdeSpec, beta: float | None = None) -> BsdeSolution:
    """Unreflected backward recursion (any obstacle is ignored)."""
    _check_beta(spec, beta)
    bare = spec.with_obstacle(None)
    sol = _sweep(grid, bare, lambda k, P, h: (P, np.zeros_like(P)))
    if beta is not None:
        sol.weighted_norms = weighted_norms(sol, beta)
    return sol


def solve_penalized(grid: ChainGrid, spec: BsdeSpec, penalty_n: float) -> BsdeSolution:
    """Penalized equation with push ``n (y - h)^- dt``, solved implicitly per node."""
    if spec.obstacle is None:
        raise ValueError("penalization needs an obstacle")
    if penalty_n < 0:
        raise ValueError("penalty_n must be nonnegative")
    a = penalty_n * grid.dt

    def project(k, P, h):
        with np.errstate(invalid="ignore"):
            y = np.where(P >= h, P, (P + a * h) / (1.0 + a))
        return y, a * np.maximum(h - y, 0.0)

    return _sweep(grid, spec, project)


def solve_reflected(grid: ChainGrid, spec: BsdeSpec) -> BsdeSolution:
    """Reflected equation: ``y = max(P, h)``, push ``dK = (h - P)^+``."""
    if spec.obstacle is None:
        raise ValueError("reflection needs an obstacle")

    def project(k, P, h):
        return np.maximum(P, h), np.maximum(h - P, 0.0)

    return _sweep(grid, spec, project)


# -- comparison ---------------------------------------------------------------


@dataclass
class ComparisonReport:
    violations: list
    gamma_range: tuple | None
    gamma_ok: bool

    @property
    def ok(self) -> bool:
        return not self.violations


def check_comparison(grid: ChainGrid, spec1: BsdeSpec, spec2: BsdeSpec, reflected: bool = False,
                     tol: float = 1e-12) -> ComparisonReport:
    """Solve both equations and list nodes where ``y2 > y1 + tol``.

    The caller is responsible for the data ordering (spec2 below spec1).  For
    the kernel-linear drivers the comparison coefficient is ``gamma = rho - 1``;
    its range is recorded and checked against ``[-1, M - 1]``.
    """
    solve = solve_reflected if reflected else solve_standard
    s1, s2 = solve(grid, spec1), solve(grid, spec2)
    gamma_range, gamma_ok = None, True
    kern = spec2.kernel
    if kern is not None:
        g = grid.kernel_on_grid(kern) - 1.0
        gamma_range = (float(g.min()), float(g.max()))
        gamma_ok = gamma_range[0] >= -1.0 and gamma_range[1] <= kern.bound - 1.0 + 1e-12
    violations = []
    for k, (a, b) in enumerate(zip(s1.y, s2.y)):
        for j, n in zip(*np.nonzero(b > a + tol)):
            violations.append((k, int(j), int(n), float(a[j, n]), float(b[j, n])))
    return ComparisonReport(violations, gamma_range, gamma_ok)


# -- weighted norm diagnostics ---------------------------------------------------


def _A_path(grid: ChainGrid) -> np.ndarray:
    return np.concatenate([[0.0], np.cumsum(grid.dA)])


def weighted_norms(sol: BsdeSolution, beta: float) -> dict:
    """Discrete squared ``L^{2,beta}`` norms of ``y`` (vs dA and dt), ``u`` and ``z``.

    Expectations are under the reference chain law.
    """
    grid = sol.grid
    dist = node_distribution(grid)
    A = _A_path(grid)
    out = {"y_A": 0.0, "y_W": 0.0, "u_p": 0.0, "z_W": 0.0}
    for k in range(grid.n_steps):
        e = np.exp(beta * A[k])
        pr = dist[k]
        out["y_A"] += e * float((pr * sol.y[k] ** 2).sum()) * grid.dA[k]
        out["y_W"] += e * float((pr * sol.y[k] ** 2).sum()) * grid.dt
        out["u_p"] += e * float((pr * (sol.u[k] ** 2 * grid.phi[k]).sum(axis=-1)).sum()) * grid.dA[k]
        out["z_W"] += e * float((pr * sol.z[k] ** 2).sum()) * grid.dt
    return out


def data_norm_bound(sol: BsdeSolution, spec: BsdeSpec, beta: float, delta: float = 0.0) -> float:
    """Data side of the a priori estimate for one (reflected) equation.

    ``E[e^{beta A_T} xi^2] + E int e^{beta A} g^2 ds + E int e^{beta A} f^2 dA``
    plus the supremum terms for ``y`` and the obstacle.  The expected
    supremum over paths is replaced by the supremum over times of the
    expectation, which is smaller, so a bound checked against it is stricter.
    """
    grid = sol.grid
    dist = node_distribution(grid)
    A = _A_path(grid)
    N = grid.n_steps
    t, w, n = grid.state(N)
    xi = evaluate(spec.terminal, t, w, n)
    total = float(np.exp(beta * A[N]) * (dist[N] * xi ** 2).sum())
    zero_u = None
    for k in range(N):
        t, w, n = grid.state(k)
        e = np.exp(beta * A[k])
        shape = grid.slice_shape(k)
        if spec.driver_f is not None:
            zero_u = np.zeros(shape + (grid.n_marks,))
            f = evaluate(lambda tt, ww, nn: spec.driver_f(tt, ww, nn, zero_u), t, w, n)
            total += e * float((dist[k] * f ** 2).sum()) * grid.dA[k]
        if spec.driver_g is not None:
            g = evaluate(lambda tt, ww, nn: spec.driver_g(tt, ww, nn, np.zeros(shape), np.zeros(shape)), t, w, n)
            total += e * float((dist[k] * g ** 2).sum()) * grid.dt
    total += max(float(np.exp(beta * A[k]) * (dist[k] * sol.y[k] ** 2).sum()) for k in range(N + 1))
    if sol.obstacle is not None:
        sup_h = 0.0
        for k in range(N + 1):
            h = sol.obstacle[k]
            if h is None:
                continue
            h = np.where(np.isfinite(h), h, 0.0)
            sup_h = max(sup_h, float(np.exp((beta + delta) * A[k]) * (dist[k] * h ** 2).sum()))
        total += sup_h
    return total
