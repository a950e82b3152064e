import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rbsdelab.errors import DomainError
from rbsdelab.lattice import (build_lattice, cond_expect, expected_total, forward_step,
                              gradient)
from rbsdelab.model import TimeGrid, UncertaintyInterval

BAND = UncertaintyInterval(0.01, 0.09)


def lat(N=100, band=BAND, width=6.0):
    return build_lattice(TimeGrid(1.0, N), band, 0.0, width)


def test_sizing_example():
    L = build_lattice(TimeGrid(1.0, 100), UncertaintyInterval(0.04, 0.04), 0.0, 5.0)
    assert L.dx >= 0.02 and L.dx ** 2 >= 0.04 * L.dt
    assert L.x_nodes[0] <= -1.0 and L.x_nodes[-1] >= 1.0
    assert L.x_nodes[L.center] == 0.0
    assert L.stability_margin >= 0


def test_binomial_degeneration():
    L = build_lattice(TimeGrid(1.0, 1), UncertaintyInterval(0.25, 0.25), 0.0, 1.0)
    pu, pm, pd = L.probabilities(0.25)
    assert pm == 0.0 and pu == pd == 0.5


def test_full_cone_width():
    assert lat(20, width=None).n_nodes == 41


def test_rejects_bad_width():
    with pytest.raises(DomainError):
        lat(width=0.0)


def test_constants_and_martingale():
    L = lat()
    np.testing.assert_array_equal(cond_expect(L, np.full(L.n_nodes, 3.7), 0.05), 3.7)
    e = cond_expect(L, L.x_nodes, 0.05)
    np.testing.assert_allclose(e[1:-1], L.x_nodes[1:-1], atol=1e-15)


def test_second_moment():
    L = build_lattice(TimeGrid(1.0, 100), UncertaintyInterval(0.04, 0.04))
    i = L.center + 3
    got = cond_expect(L, L.x_nodes ** 2, 0.04, node_index=i)
    assert got == pytest.approx(L.x_nodes[i] ** 2 + 0.0004, abs=1e-15)


def test_out_of_band_rate():
    L = lat()
    with pytest.raises(DomainError):
        cond_expect(L, np.zeros(L.n_nodes), 0.2)


@settings(max_examples=40, deadline=None)
@given(a=st.floats(0.01, 0.09), k=st.integers(-20, 20))
def test_variance_matching(a, k):
    L = lat()
    i = L.center + k
    v = (L.x_nodes - L.x_nodes[i]) ** 2
    assert cond_expect(L, v, a, node_index=i) == pytest.approx(a * L.dt, rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), a=st.floats(0.01, 0.09))
def test_monotone_kernel(seed, a):
    L = lat(20)
    rng = np.random.default_rng(seed)
    v = rng.normal(size=L.n_nodes)
    w = v + rng.uniform(0, 1, L.n_nodes)
    assert np.all(cond_expect(L, w, a) >= cond_expect(L, v, a))


def test_gradient_estimators_agree_and_are_exact_on_lines():
    L = lat()
    v = np.sin(L.x_nodes)
    np.testing.assert_allclose(gradient(L, v, 0.03), gradient(L, v, 0.03, "central"),
                               rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(gradient(L, 2 * L.x_nodes, 0.05)[1:-1], 2.0, rtol=1e-12)
    with pytest.raises(DomainError):
        gradient(L, v, 0.03, "spline")


def test_forward_step_is_adjoint():
    L = lat(30)
    rng = np.random.default_rng(1)
    v, d = rng.normal(size=(2, L.n_nodes))
    a = rng.uniform(0.01, 0.09, L.n_nodes)
    assert np.dot(d, cond_expect(L, v, a)) == pytest.approx(np.dot(forward_step(L, d, a), v))
    assert forward_step(L, d, a).sum() == pytest.approx(d.sum())


def test_expected_total():
    L = lat(10)
    inc = np.ones((10, L.n_nodes)) * 0.5
    assert expected_total(L, inc, np.full((10, L.n_nodes), 0.05)) == pytest.approx(5.0)
