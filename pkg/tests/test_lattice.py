import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from switchbsde.instances import CI_NAMES, instance
from switchbsde.lattice import (
    NodeState,
    StabilityViolation,
    build_chain,
    make_grid,
    node_distribution,
    reweighted_expectation,
    reweighted_slice,
    slice_coefficients,
    step_coefficients,
)
from switchbsde.mpp import CompensatorSpec, KernelField
from switchbsde.oracle import tree_value


def grid_for(rate=1.0, weights=(1.0,), n_steps=10, kernels=(), horizon=1.0, **kw):
    return make_grid(CompensatorSpec.constant(rate, weights), horizon, n_steps, kernels=kernels, **kw)


def test_stable_example():
    g = grid_for(1.0, n_steps=10, kernels=[KernelField.constant([2.0])])
    assert np.allclose(g.jump_probs, 0.1)
    assert np.all((g.kernels * g.jump_probs).sum(axis=2) <= 0.2 + 1e-15)


def test_unstable_example_suggests_min_steps():
    with pytest.raises(StabilityViolation) as exc:
        grid_for(20.0, n_steps=10, kernels=[KernelField.constant([2.0])])
    assert exc.value.value == pytest.approx(4.0)
    assert exc.value.min_steps == 40


def test_left_endpoint_probabilities():
    comp = CompensatorSpec(lam=lambda t: t, lam_bound=1.0, marks=(0,), phi=lambda t: np.ones(1))
    g = make_grid(comp, 1.0, 4)
    assert np.allclose(g.jump_probs[:, 0], [0.0, 0.0625, 0.125, 0.1875], atol=1e-15)


def test_node_bookkeeping():
    g = grid_for(n_steps=6, max_jumps=3)
    assert g.slice_shape(0) == (1, 1)
    assert g.slice_shape(5) == (6, 4)
    assert list(g.w_coords(3)) == [-3, -1, 1, 3]
    assert list(g.jump_child(4)) == [1, 2, 3, 3]


def _node(g):
    return NodeState(2, 0, 1)


def test_constant_children():
    g = grid_for(1.5, (0.6, 0.4), n_steps=10)
    c = step_coefficients(np.full((2, 3), 3.5), _node(g), g)
    assert c.expectation == pytest.approx(3.5, abs=1e-15)
    assert c.z == 0.0 and np.all(c.u == 0.0)


def test_brownian_children():
    g = grid_for(1.5, (0.6, 0.4), n_steps=10)
    vals = np.array([[1.0] * 3, [-1.0] * 3]) * g.sqrt_dt
    c = step_coefficients(vals, _node(g), g)
    assert c.z == pytest.approx(1.0, abs=1e-14)
    assert np.all(c.u == 0.0) and c.expectation == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("m0", [0, 1, 2])
def test_jump_indicator_children(m0):
    g = grid_for(2.0, (0.2, 0.5, 0.3), n_steps=10)
    vals = np.zeros((2, 4))
    vals[:, 1 + m0] = 1.0
    c = step_coefficients(vals, _node(g), g)
    expect_u = np.zeros(3)
    expect_u[m0] = 1.0
    assert np.array_equal(c.u, expect_u)
    assert c.expectation == pytest.approx(g.jump_probs[2, m0], abs=1e-15)
    assert np.allclose(c.u, c.jump_conditional - c.no_jump_conditional)


def test_missing_child():
    g = grid_for(n_steps=4)
    with pytest.raises(KeyError):
        step_coefficients({(0, 0): 1.0, (1, 0): 1.0, (0, 1): 1.0}, _node(g), g)
    with pytest.raises(ValueError):
        step_coefficients(np.array([[1.0, np.nan], [1.0, 1.0]]), _node(g), g)


@given(st.lists(st.floats(-10, 10), min_size=8, max_size=8),
       st.lists(st.floats(0.0, 2.0), min_size=3, max_size=3))
def test_reweighting_identity(values, rho):
    g = grid_for(2.0, (0.2, 0.5, 0.3), n_steps=10)
    vals = np.array(values).reshape(2, 4)
    node = NodeState(3, 1, 0)
    c = step_coefficients(vals, node, g)
    rho = np.array(rho)
    generator = c.expectation + float(np.sum(c.u * (rho - 1.0) * g.phi[3] * g.lam[3] * g.dt))
    direct = reweighted_expectation(vals, node, g, rho)
    assert direct == pytest.approx(generator, rel=1e-12, abs=1e-12)


def test_reweighted_special_kernels():
    g = grid_for(2.0, (0.2, 0.5, 0.3), n_steps=10)
    vals = np.random.default_rng(0).normal(size=(2, 4))
    node = NodeState(1, 1, 0)
    c = step_coefficients(vals, node, g)
    assert reweighted_expectation(vals, node, g, KernelField.identity(3)) == pytest.approx(c.expectation, abs=1e-15)
    assert reweighted_expectation(vals, node, g, np.zeros(3)) == pytest.approx(c.no_jump_conditional, abs=1e-15)
    rho = 1.0 + np.arange(3)
    generator = c.expectation + float(np.sum(c.u * (rho - 1.0) * g.jump_probs[1]))
    assert reweighted_expectation(vals, node, g, rho) == pytest.approx(generator, rel=1e-12)


def test_reweighted_stability_error():
    g = grid_for(2.0, n_steps=4)
    with pytest.raises(StabilityViolation):
        reweighted_expectation(np.zeros((2, 2)), NodeState(0, 0, 0), g, [3.0])


@pytest.mark.parametrize("name", CI_NAMES)
def test_identity_on_every_instance_node(name):
    doc = instance(name)
    g = build_chain(doc.problem, doc.n_steps)
    rng = np.random.default_rng(1)
    for k in range(g.n_steps):
        y_next = rng.normal(size=g.slice_shape(k + 1))
        e, z, u, jc, njc = slice_coefficients(y_next, k, g)
        for rho in g.kernels:
            direct = reweighted_slice(y_next, k, g, rho[k])
            generator = e + (u * (rho[k] - 1.0) * g.jump_probs[k]).sum(axis=-1)
            assert np.allclose(direct, generator, rtol=1e-12, atol=1e-12)


def test_slice_matches_single_node():
    g = grid_for(1.5, (0.6, 0.4), n_steps=6)
    rng = np.random.default_rng(2)
    k = 3
    y_next = rng.normal(size=g.slice_shape(k + 1))
    e, z, u, _, _ = slice_coefficients(y_next, k, g)
    jcol = g.jump_child(k)
    for j in range(k + 1):
        for n in range(g.n_count(k)):
            vals = np.empty((2, 3))
            vals[0, 0], vals[1, 0] = y_next[j + 1, n], y_next[j, n]
            vals[0, 1:], vals[1, 1:] = y_next[j + 1, jcol[n]], y_next[j, jcol[n]]
            c = step_coefficients(vals, NodeState(k, 2 * j - k, n), g)
            assert c.expectation == pytest.approx(e[j, n], abs=1e-14)
            assert c.z == pytest.approx(z[j, n], abs=1e-13)
            assert np.allclose(c.u, u[j, n], atol=1e-14)


@pytest.mark.parametrize("kernel", [None, (2.0, 0.0), (0.5, 1.5)])
def test_tower_property(kernel):
    g = grid_for(1.5, (0.6, 0.4), n_steps=5)
    xi = lambda t, w, n: np.sin(3 * w) + 0.7 * n ** 2
    rho = None if kernel is None else KernelField.constant(kernel)
    t, w, n = g.state(5)
    y = xi(t, w, n) + np.zeros(g.slice_shape(5))
    row = np.ones(2) if kernel is None else np.array(kernel)
    for k in range(4, -1, -1):
        y = reweighted_slice(y, k, g, row)
    assert y[0, 0] == pytest.approx(tree_value(g, xi, kernel=rho), abs=1e-12)


def test_jump_count_marginal():
    comp = CompensatorSpec(lam=lambda t: 1.0 + 2.0 * t, lam_bound=3.0, marks=("a", "b"),
                           phi=lambda t: np.array([0.3, 0.7]))
    g = make_grid(comp, 1.0, 10)
    dist = node_distribution(g)[-1].sum(axis=0)
    # exact law of a sum of independent Bernoulli(p_k) by enumeration of all jump patterns
    p = g.jump_probs.sum(axis=1)
    exact = np.zeros(11)
    for pattern in itertools.product((0, 1), repeat=10):
        pat = np.array(pattern)
        exact[pat.sum()] += np.prod(np.where(pat == 1, p, 1 - p))
    assert np.allclose(dist, exact, atol=1e-14)


def test_brownian_marginal_is_binomial():
    g = grid_for(1.0, n_steps=8)
    dist = node_distribution(g)[-1].sum(axis=1)
    assert np.allclose(dist, [math.comb(8, j) / 256 for j in range(9)], atol=1e-15)


@settings(max_examples=25)
@given(st.integers(1, 12), st.floats(0.0, 2.0))
def test_distribution_sums_to_one(n_steps, rho):
    g = grid_for(1.0, (0.5, 0.5), n_steps=max(n_steps, 2), kernels=[KernelField.constant([rho, rho])])
    for slab in node_distribution(g, g.kernels[0]):
        assert slab.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(slab >= 0)
