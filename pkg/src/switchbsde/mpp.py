"""Marked point processes with a deterministic, absolutely continuous compensator.

The compensator is ``phi_t(dm) lambda(t) dt`` over a finite ordered mark set.
Paths are simulated by thinning a dominating homogeneous Poisson process.
Every path owns a counter-based Philox stream keyed by ``(seed, index)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "CompensatorSpec",
    "KernelField",
    "MarkedPath",
    "path_rng",
    "simulate_path",
    "simulate_path_under_kernel",
    "simulate_paths",
    "compensated_integral",
    "compensated_integrals",
    "doleans_exponential",
    "doleans_weights",
    "compensator_integral",
    "DEFAULT_QUAD_STEPS",
]

DEFAULT_QUAD_STEPS = 200
_BOUND_RTOL = 1e-12


def path_rng(seed: int, index: int = 0) -> np.random.Generator:
    """Independent reproducible stream for path ``index`` of run ``seed``."""
    if seed < 0 or index < 0:
        raise ValueError("seed and index must be nonnegative")
    key = np.array([seed, index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class CompensatorSpec:
    """Intensity ``lam(t)`` of ``A`` and mark distribution ``phi(t)``.

    ``phi(t)`` returns a probability vector over ``marks``.
    """

    lam: Callable[[float], float]
    lam_bound: float
    marks: tuple
    phi: Callable[[float], np.ndarray]

    def __post_init__(self):
        if len(self.marks) == 0:
            raise ValueError("mark set must be nonempty")
        if not self.lam_bound >= 0:
            raise ValueError("lam_bound must be nonnegative")

    @property
    def n_marks(self) -> int:
        return len(self.marks)

    def intensity(self, t: float) -> float:
        return float(self.lam(t))

    def mark_probs(self, t: float) -> np.ndarray:
        return np.asarray(self.phi(t), dtype=float).reshape(self.n_marks)

    def rates(self, t: float) -> np.ndarray:
        """Per-mark intensity ``phi(t, m) * lam(t)``."""
        return self.mark_probs(t) * self.intensity(t)

    @classmethod
    def constant(cls, rate: float, weights: Sequence[float] = (1.0,), marks=None) -> "CompensatorSpec":
        w = np.asarray(weights, dtype=float)
        if marks is None:
            marks = tuple(range(len(w)))
        rate = float(rate)
        return cls(lam=lambda t: rate, lam_bound=rate, marks=tuple(marks), phi=lambda t: w)


@dataclass(frozen=True)
class KernelField:
    """Nonnegative Girsanov kernel ``rho(t, m)`` bounded by ``bound``.

    ``value(t)`` returns the per-mark vector.  ``right_value(t)``, when set,
    returns the right limit; it is what left-endpoint quadrature needs for
    kernels that jump on the grid (switched kernels).
    """

    value: Callable[[float], np.ndarray]
    bound: float
    eta: float | None = None
    right_value: Callable[[float], np.ndarray] | None = None

    def __post_init__(self):
        if not self.bound >= 0:
            raise ValueError("kernel bound must be nonnegative")
        if self.eta is None:
            object.__setattr__(self, "eta", 4.0 + self.bound ** 4)
        if not self.eta > 3.0 + self.bound ** 4:
            raise ValueError(f"eta={self.eta} must exceed 3 + M^4 = {3.0 + self.bound ** 4}")

    def at(self, t: float) -> np.ndarray:
        return np.asarray(self.value(t), dtype=float)

    def right(self, t: float) -> np.ndarray:
        fn = self.right_value if self.right_value is not None else self.value
        return np.asarray(fn(t), dtype=float)

    @classmethod
    def constant(cls, values, eta: float | None = None) -> "KernelField":
        v = np.atleast_1d(np.asarray(values, dtype=float))
        if np.any(v < 0):
            raise ValueError("kernel values must be nonnegative")
        return cls(value=lambda t: v, bound=float(v.max()), eta=eta)

    @classmethod
    def identity(cls, n_marks: int) -> "KernelField":
        return cls.constant(np.ones(n_marks))


@dataclass(frozen=True)
class MarkedPath:
    """Event times in ``(0, horizon]`` and mark indices into the mark set."""

    times: np.ndarray
    marks: np.ndarray
    horizon: float

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        marks = np.asarray(self.marks, dtype=np.int64)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "marks", marks)
        if times.shape != marks.shape or times.ndim != 1:
            raise ValueError("times and marks must be 1-d arrays of equal length")
        if times.size:
            if times[0] <= 0 or times[-1] > self.horizon:
                raise ValueError("event times must lie in (0, horizon]")
            if np.any(np.diff(times) <= 0):
                raise ValueError("event times must be strictly increasing")

    def __len__(self) -> int:
        return int(self.times.size)

    def count(self, t: float) -> int:
        """``N_t``: number of events in ``(0, t]``."""
        return int(np.searchsorted(self.times, t, side="right"))


def _thin(rate_fn, bound: float, horizon: float, rng: np.random.Generator, n_marks: int) -> MarkedPath:
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    if bound == 0:
        return MarkedPath(np.empty(0), np.empty(0, dtype=np.int64), horizon)
    n_cand = rng.poisson(bound * horizon)
    # horizon - U[0, horizon) lies in (0, horizon]
    cand = np.sort(horizon - rng.uniform(0.0, horizon, size=n_cand))
    accept_u = rng.uniform(size=n_cand)
    if n_cand == 0:
        return MarkedPath(cand, np.empty(0, dtype=np.int64), horizon)
    rates = np.array([np.asarray(rate_fn(t), dtype=float).reshape(n_marks) for t in cand])
    cum = np.cumsum(rates, axis=1)
    over = cum[:, -1] > bound * (1 + _BOUND_RTOL)
    if over.any():
        i = int(np.argmax(over))
        raise ValueError(f"intensity {cum[i, -1]} at t={cand[i]} exceeds the declared bound {bound}")
    # one uniform decides acceptance and mark: u*bound falls in the mark's slot
    idx = (cum <= (accept_u * bound)[:, None]).sum(axis=1)
    keep = idx < n_marks
    return MarkedPath(cand[keep], idx[keep], horizon)


def simulate_path(comp: CompensatorSpec, horizon: float, seed: int, index: int = 0) -> MarkedPath:
    """Reference-measure path with compensator ``phi(t, dm) lam(t) dt``."""
    return _thin(comp.rates, comp.lam_bound, horizon, path_rng(seed, index), comp.n_marks)


def simulate_path_under_kernel(
    comp: CompensatorSpec, kernel: KernelField, horizon: float, seed: int, index: int = 0
) -> MarkedPath:
    """Path whose compensator is ``rho(t, m) phi(t, dm) lam(t) dt``."""

    def rates(t):
        rho = kernel.at(t)
        if np.any(rho < 0) or np.any(rho > kernel.bound * (1 + _BOUND_RTOL)):
            raise ValueError(f"kernel value outside [0, {kernel.bound}] at t={t}")
        return rho * comp.rates(t)

    return _thin(rates, comp.lam_bound * kernel.bound, horizon, path_rng(seed, index), comp.n_marks)


def simulate_paths(comp, horizon, seed, n_paths, kernel=None, start_index=0) -> list[MarkedPath]:
    if kernel is None:
        return [simulate_path(comp, horizon, seed, start_index + i) for i in range(n_paths)]
    return [simulate_path_under_kernel(comp, kernel, horizon, seed, start_index + i) for i in range(n_paths)]


def _quad_nodes(horizon: float, t: float, n_grid: int):
    """Left endpoints and widths of the uniform grid on [0, horizon], cut at t."""
    dt = horizon / n_grid
    left = np.arange(n_grid) * dt
    left = left[left < t]
    widths = np.minimum(left + dt, t) - left
    return left, widths


def compensator_integral(comp: CompensatorSpec, integrand, t: float, horizon: float, n_grid: int) -> float:
    """Left-endpoint rule for ``int_0^t sum_m C(s, m) phi(s, m) lam(s) ds``.

    ``integrand(s)`` returns the per-mark vector ``C(s, .)``.
    """
    left, widths = _quad_nodes(horizon, t, n_grid)
    total = 0.0
    for s, w in zip(left, widths):
        total += float(np.dot(np.asarray(integrand(s), dtype=float), comp.rates(s))) * w
    return total


def compensated_integral(path: MarkedPath, comp: CompensatorSpec, integrand, n_grid: int = DEFAULT_QUAD_STEPS) -> float:
    """``int_0^T int_E C q(ds dm)`` as jump sum minus compensator integral."""
    jumps = 0.0
    for t, m in zip(path.times, path.marks):
        jumps += float(np.asarray(integrand(t), dtype=float)[m])
    return jumps - compensator_integral(comp, integrand, path.horizon, path.horizon, n_grid)


def compensated_integrals(paths: Sequence[MarkedPath], comp: CompensatorSpec, integrand,
                          n_grid: int = DEFAULT_QUAD_STEPS) -> np.ndarray:
    """:func:`compensated_integral` for many paths; the compensator part is shared."""
    if len(paths) == 0:
        return np.empty(0)
    horizon = paths[0].horizon
    drift = compensator_integral(comp, integrand, horizon, horizon, n_grid)
    out = np.empty(len(paths))
    for i, path in enumerate(paths):
        out[i] = sum(float(np.asarray(integrand(t), dtype=float)[m]) for t, m in zip(path.times, path.marks)) - drift
    return out


def _log_exponent(comp, kernel, t, horizon, n_grid) -> float:
    left, widths = _quad_nodes(horizon, t, n_grid)
    total = 0.0
    for s, w in zip(left, widths):
        total += float(np.dot(1.0 - kernel.right(s), comp.rates(s))) * w
    return total


def doleans_exponential(
    path: MarkedPath, comp: CompensatorSpec, kernel: KernelField, t: float, n_grid: int = DEFAULT_QUAD_STEPS
) -> float:
    """``L_t = prod_{T_n <= t} rho(T_n, xi_n) * exp(int_0^t sum_m (1 - rho) phi lam ds)``."""
    if t > path.horizon:
        raise ValueError("t exceeds the path horizon")
    n = path.count(t)
    prod = 1.0
    for s, m in zip(path.times[:n], path.marks[:n]):
        prod *= float(kernel.at(s)[m])
    if prod == 0.0:
        return 0.0
    return prod * float(np.exp(_log_exponent(comp, kernel, t, path.horizon, n_grid)))


def doleans_weights(paths: Sequence[MarkedPath], comp, kernel, n_grid: int = DEFAULT_QUAD_STEPS) -> np.ndarray:
    """``L_T`` for many paths sharing a horizon.

    The exponential factor is deterministic here (deterministic compensator
    and kernel), so it is computed once.
    """
    if len(paths) == 0:
        return np.empty(0)
    horizon = paths[0].horizon
    factor = float(np.exp(_log_exponent(comp, kernel, horizon, horizon, n_grid)))
    out = np.empty(len(paths))
    for i, path in enumerate(paths):
        prod = 1.0
        for s, m in zip(path.times, path.marks):
            prod *= float(kernel.at(s)[m])
        out[i] = prod * factor
    return out
