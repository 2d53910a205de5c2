import math
import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from switchbsde.bsde import (
    BsdeSpec,
    FixedPointError,
    check_comparison,
    data_norm_bound,
    solve_penalized,
    solve_reflected,
    solve_standard,
    weighted_norms,
)
from switchbsde.lattice import make_grid
from switchbsde.mpp import CompensatorSpec, KernelField
from switchbsde.oracle import tree_value

from conftest import max_slice_diff, solved
from switchbsde.instances import CI_NAMES
from switchbsde.switching import mode_spec


def grid_for(rate=1.0, weights=(1.0,), n_steps=20, kernels=()):
    return make_grid(CompensatorSpec.constant(rate, weights), 1.0, n_steps, kernels=kernels)


def const(c):
    return lambda t, w, n: c


def test_constant_terminal():
    g = grid_for(1.5, (0.6, 0.4))
    sol = solve_standard(g, BsdeSpec.from_data(const(2.5)))
    assert all(np.all(y == 2.5) for y in sol.y)
    assert all(np.all(u == 0.0) for u in sol.u) and all(np.all(z == 0.0) for z in sol.z)
    assert all(np.all(dk == 0.0) for dk in sol.dk)


def test_unit_g_integrates_time():
    g = grid_for()
    assert solve_standard(g, BsdeSpec.from_data(const(0.0), g=const(1.0))).root == pytest.approx(1.0, abs=1e-14)


def test_doubled_intensity_counts_jumps():
    g = grid_for(1.0, n_steps=6)
    kern = KernelField.constant([2.0])
    xi = lambda t, w, n: np.asarray(n, dtype=float)
    sol = solve_standard(g, BsdeSpec.from_data(xi, kernel=kern))
    assert sol.root == pytest.approx(tree_value(g, xi, kernel=kern), abs=1e-12)
    assert sol.root == pytest.approx(2.0 * g.jump_probs.sum(), abs=1e-12)


def test_kernel_in_driver_equals_attached_kernel():
    g = grid_for(1.5, (0.6, 0.4), n_steps=10)
    rho = np.array([2.0, 0.0])
    xi = lambda t, w, n: np.sin(w) + n
    explicit = BsdeSpec(xi, driver_f=lambda t, w, n, u: (u * (rho - 1.0) * g.phi[0]).sum(axis=-1))
    via_kernel = BsdeSpec.from_data(xi, kernel=KernelField.constant(rho))
    assert max_slice_diff(solve_standard(g, explicit).y, solve_standard(g, via_kernel).y) <= 1e-14


def test_y_dependent_driver_fixed_point():
    g = grid_for(n_steps=10)
    spec = BsdeSpec(const(1.0), driver_g=lambda t, w, n, y, z: -y, g_depends_on_y=True)
    # each step solves y = y_next - y dt exactly
    assert solve_standard(g, spec).root == pytest.approx((1.0 / (1.0 + g.dt)) ** 10, rel=1e-12)


def test_fixed_point_failure():
    g = grid_for(n_steps=4)
    spec = BsdeSpec(const(1.0), driver_g=lambda t, w, n, y, z: 10.0 * y, g_depends_on_y=True)
    with pytest.raises(FixedPointError):
        solve_standard(g, spec)


def test_beta_condition_warns():
    g = grid_for(n_steps=4)
    spec = BsdeSpec.from_data(const(1.0), lipschitz={"L_f": 1.0, "L_U": 2.0})
    with pytest.warns(UserWarning):
        solve_standard(g, spec, beta=5.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        sol = solve_standard(g, spec, beta=7.0)
    assert set(sol.weighted_norms) == {"y_A", "y_W", "u_p", "z_W"}


# -- penalized and reflected ------------------------------------------------------------


def test_zero_penalty_is_standard():
    g = grid_for(1.5, (0.6, 0.4))
    spec = BsdeSpec.from_data(lambda t, w, n: w, g=const(-1.0), obstacle=lambda t, w, n: w - 0.5)
    a = solve_penalized(g, spec, 0.0)
    assert max_slice_diff(a.y, solve_standard(g, spec).y) == 0.0


def test_far_obstacle_inactive():
    g = grid_for(1.5, (0.6, 0.4))
    spec = BsdeSpec.from_data(lambda t, w, n: w + n, g=const(0.3), obstacle=const(-1e9))
    std = solve_standard(g, spec)
    for sol in (solve_penalized(g, spec, 1e4), solve_reflected(g, spec)):
        assert max_slice_diff(sol.y, std.y) <= 1e-12
        assert all(np.all(d == 0.0) for d in sol.dk)


def test_penalization_converges_from_below():
    g = grid_for()
    spec = BsdeSpec.from_data(const(0.0), g=const(-1.0), obstacle=const(0.0))
    refl = solve_reflected(g, spec)
    roots = [solve_penalized(g, spec, n).root for n in (1, 10, 100, 1000, 10000)]
    assert all(b >= a - 1e-12 for a, b in zip(roots, roots[1:]))
    assert roots[-1] <= refl.root + 1e-12
    assert refl.root - roots[-1] <= 1e-3


def test_obstacle_touched_without_push():
    g = grid_for(1.5, (0.6, 0.4))
    sol = solve_reflected(g, BsdeSpec.from_data(const(1.0), obstacle=const(1.0)))
    assert all(np.all(y == 1.0) for y in sol.y) and all(np.all(d == 0.0) for d in sol.dk)


def test_never_binding_obstacle_is_standard():
    g = grid_for()
    spec = BsdeSpec.from_data(lambda t, w, n: 2.0 + np.abs(w), obstacle=const(0.0))
    assert max_slice_diff(solve_reflected(g, spec).y, solve_standard(g, spec).y) == 0.0


def _binomial_american_put(S0, K0, sigma, n_steps, horizon):
    """Plain max-recursion on a +-sigma*sqrt(dt) log-price tree with probability 1/2, no discounting."""
    dt = horizon / n_steps
    h = sigma * math.sqrt(dt)
    values = [max(K0 - S0 * math.exp(h * (2 * j - n_steps)), 0.0) for j in range(n_steps + 1)]
    for k in range(n_steps - 1, -1, -1):
        values = [max(0.5 * (values[j] + values[j + 1]), max(K0 - S0 * math.exp(h * (2 * j - k)), 0.0))
                  for j in range(k + 1)]
    return values[0]


def test_american_put():
    S0, K0, sigma = 1.0, 1.05, 0.4
    g = grid_for(2.0, (0.5, 0.5), n_steps=40)
    payoff = lambda t, w, n: np.maximum(K0 - S0 * np.exp(sigma * np.asarray(w)), 0.0)
    sol = solve_reflected(g, BsdeSpec.from_data(payoff, obstacle=payoff))
    assert sol.root == pytest.approx(_binomial_american_put(S0, K0, sigma, 40, 1.0), abs=1e-12)
    # early exercise has value here
    assert sol.root > solve_standard(g, BsdeSpec.from_data(payoff)).root + 1e-4


def test_terminal_below_obstacle_rejected():
    g = grid_for(n_steps=4)
    with pytest.raises(ValueError):
        solve_reflected(g, BsdeSpec.from_data(const(0.0), obstacle=const(1.0)))


@pytest.mark.parametrize("name", CI_NAMES)
def test_discrete_skorohod_and_penalty_order(name):
    p, grid, sol, _, _ = solved(name)
    obs = sol.obstacles()
    for i in range(p.m):
        spec = mode_spec(p, i, obs[i])
        refl = solve_reflected(grid, spec)
        for k in range(grid.n_steps):
            assert np.all(refl.y[k] >= obs[i][k])
            assert np.all(refl.dk[k] * (refl.y[k] - obs[i][k]) == 0.0)
        prev = None
        for n in (1, 10, 100):
            pen = solve_penalized(grid, spec, n)
            assert all(np.all(a <= b + 1e-12) for a, b in zip(pen.y, refl.y))
            assert all(np.all(d >= 0) for d in pen.dk)
            if prev is not None:
                assert all(np.all(a <= b + 1e-12) for a, b in zip(prev.y, pen.y))
            prev = pen


# -- comparison ---------------------------------------------------------------------------------


def test_comparison_same_data():
    g = grid_for(1.5, (0.6, 0.4))
    spec = BsdeSpec.from_data(lambda t, w, n: w * n, f=const(0.2), kernel=KernelField.constant([2.0, 0.0]))
    rep = check_comparison(g, spec, spec)
    assert rep.ok and rep.gamma_ok and rep.gamma_range == (-1.0, 1.0)


def test_terminal_shift():
    g = grid_for(1.5, (0.6, 0.4))
    xi = lambda t, w, n: np.cos(w) - 0.2 * n
    kern = KernelField.constant([0.5, 1.7])
    a = solve_standard(g, BsdeSpec.from_data(lambda t, w, n: xi(t, w, n) + 1.0, g=const(0.3), kernel=kern))
    b = solve_standard(g, BsdeSpec.from_data(xi, g=const(0.3), kernel=kern))
    assert max(float(np.max(np.abs(x - y - 1.0))) for x, y in zip(a.y, b.y)) <= 1e-12


coef = st.floats(-2.0, 2.0, allow_nan=False)
gap = st.floats(0.0, 1.0, allow_nan=False)


def _fn(c):
    return lambda t, w, n: c[0] + c[1] * np.asarray(w) + c[2] * np.asarray(n) + c[3] * np.abs(np.asarray(w) - t)


def _gap(d):
    return lambda t, w, n: d[0] + d[1] * np.abs(np.asarray(w)) + d[2] * np.asarray(n)


@settings(max_examples=100, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.lists(coef, min_size=12, max_size=12), st.lists(gap, min_size=12, max_size=12),
       st.lists(st.floats(0.0, 2.0), min_size=2, max_size=2), st.booleans())
def test_comparison_random_ordered_pairs(c, d, rho, reflected):
    g = grid_for(1.5, (0.6, 0.4), n_steps=12)
    kern = KernelField.constant(rho)
    xi2, f2, g2 = _fn(c[0:4]), _fn(c[4:8]), _fn(c[8:12])
    dx, df, dg = _gap(d[0:3]), _gap(d[3:6]), _gap(d[6:9])
    h2 = lambda t, w, n: xi2(t, w, n) - 0.5
    dh = _gap(d[9:12])
    up = lambda a, b: (lambda t, w, n: a(t, w, n) + b(t, w, n))
    # terminal must dominate the obstacle in both equations
    h1 = lambda t, w, n: np.minimum(up(h2, dh)(t, w, n), up(xi2, dx)(t, w, n))
    spec2 = BsdeSpec.from_data(xi2, f=f2, g=g2, kernel=kern, obstacle=h2 if reflected else None)
    spec1 = BsdeSpec.from_data(up(xi2, dx), f=up(f2, df), g=up(g2, dg), kernel=kern,
                               obstacle=h1 if reflected else None)
    rep = check_comparison(g, spec1, spec2, reflected=reflected)
    assert rep.ok, rep.violations[:3]
    assert rep.gamma_ok


# -- norms -----------------------------------------------------------------------------------


@pytest.mark.parametrize("name", CI_NAMES)
def test_norm_bound_pattern(name):
    p, grid, sol, _, _ = solved(name)
    beta = p.beta
    for i in range(p.m):
        spec = mode_spec(p, i)
        norms = weighted_norms(sol.modes[i], beta)
        lhs = sum(norms.values())
        assert all(math.isfinite(v) and v >= 0 for v in norms.values())
        assert lhs <= 10.0 * data_norm_bound(sol.modes[i], spec, beta, delta=0.1)
