import numpy as np
import pytest

from rbsdelab.errors import DomainError
from rbsdelab.lattice import build_lattice
from rbsdelab.model import (Instance, TimeGrid, UncertaintyInterval, make_generator,
                            make_obstacle, make_terminal)
from rbsdelab.rbsde import Scenario, solve_rbsde
from rbsdelab.soref import (contact_set_check, epsilon_stopping, extract_K, min_condition_gap,
                            obstacle_split, optimal_stopping_value, representation_sup,
                            solve_2rbsde_dpp)
from rbsdelab.verify import convex_instance

IV = UncertaintyInterval(0.01, 0.09)
LO, HI = Scenario.constant(0.01), Scenario.constant(0.09)


def const_inst(S, xi, N=40):
    return Instance(TimeGrid(1.0, N), IV, make_generator("zero"),
                    make_obstacle("constant", {"value": S}),
                    make_terminal("constant", {"value": xi}))


@pytest.fixture(scope="module")
def convex():
    i = convex_instance(100)
    L = build_lattice(i.grid, i.interval)
    return i, L, solve_2rbsde_dpp(i, L, None, [LO, HI])


def test_singleton_grid_is_bitwise_rbsde(convex):
    i, L, _ = convex
    one = i.replace(interval=UncertaintyInterval(0.04, 0.04))
    so = solve_2rbsde_dpp(one, L, [0.04], [Scenario.constant(0.04)])
    sol = solve_rbsde(one, L, Scenario.constant(0.04))
    np.testing.assert_array_equal(so.Y, sol.y)
    assert so.min_condition_gap == 0.0


def test_convex_value_and_maximiser(convex):
    i, L, so = convex
    assert so.Y0 == pytest.approx(0.09 * i.grid.T, abs=1e-10)
    # nodes whose backward cone never touches the clamped edge
    N, half = i.grid.N, L.center
    steps = np.arange(N)[:, None]
    dist = np.abs(np.arange(L.n_nodes) - half)[None, :]
    inner = dist + (N - steps) < half
    assert inner.any() and np.all(so.a_star[inner] == 0.09)
    occ = so.occupancy()
    assert sum(occ.values()) == pytest.approx(1.0) and occ["0.089999999999999997"] > 0.9


def test_representation(convex):
    i, L, so = convex
    v1, _ = representation_sup(i, L, [LO])
    v2, per = representation_sup(i, L, [LO, HI])
    assert v1 <= v2 and per[0] == v1
    v3, _ = representation_sup(i, L, [LO, HI, so.star_scenario])
    assert abs(v3 - so.Y0) <= 1e-10
    with pytest.raises(DomainError):
        representation_sup(i, L, [])


def test_K_along_low_rate_is_positive(convex):
    i, L, so = convex
    K, k = extract_K(i, L, so, LO)
    assert K[-1, L.center] > 0 and np.all(k == 0)
    K_star, _ = extract_K(i, L, so, so.star_scenario)
    assert np.max(np.abs(K_star)) <= 1e-12


def test_min_condition_gap(convex):
    i, L, so = convex
    gap, name = min_condition_gap(i, L, so, [LO])
    assert name == "dpp-star" and abs(gap) <= 1e-12
    assert so.records["const:0.01"].K_minus_k_terminal > 0


def test_grid_validation(convex):
    i, L, _ = convex
    with pytest.raises(DomainError):
        solve_2rbsde_dpp(i, L, [0.01, 0.05])
    with pytest.raises(DomainError):
        solve_2rbsde_dpp(i, L, [0.0, 0.09])


def test_contact_set():
    i = const_inst(2.0, 1.0)
    L = build_lattice(i.grid, i.interval)
    so = solve_2rbsde_dpp(i, L, None, [LO])
    assert contact_set_check(i, L, so, LO) == 0.0
    slack = const_inst(-10.0, 1.0)
    so2 = solve_2rbsde_dpp(slack, L, None, [LO])
    assert contact_set_check(slack, L, so2, LO) == 0.0
    A, V = obstacle_split(so, so.records["const:0.01"], 1e-8)
    np.testing.assert_array_equal(V, 0.0)


def test_epsilon_stopping():
    i = const_inst(2.0, 1.0)
    L = build_lattice(i.grid, i.interval)
    so = solve_2rbsde_dpp(i, L, diagnostics=False)
    assert np.all(epsilon_stopping(so, 0.01).start == 0)
    slack = const_inst(-10.0, 1.0)
    so2 = solve_2rbsde_dpp(slack, L, diagnostics=False)
    assert np.all(epsilon_stopping(so2, 0.01).start == i.grid.N)
    with pytest.raises(DomainError):
        epsilon_stopping(so, 0.0)


def test_optimal_stopping():
    i = const_inst(2.0, 1.0)
    L = build_lattice(i.grid, i.interval)
    assert optimal_stopping_value(i, L, LO) == 2.0
    xi = make_terminal("custom_polynomial", {"coeffs": [0, 0, 1]})
    slack = Instance(i.grid, IV, make_generator("linear_discount", {"rate": 0.1}),
                     make_obstacle("constant", {"value": -1e6}), xi)
    v = optimal_stopping_value(slack, L, HI)
    assert v == pytest.approx(solve_rbsde(slack, L, HI).y0, abs=1e-12)
