import numpy as np
import pytest

from rbsdelab.errors import DomainError, InvalidInstanceError
from rbsdelab.glab import (VProcessSpec, doob_meyer, downcrossing_bound_experiment,
                           downcrossings, ramp_surface, simulate_supermartingale_paths,
                           solve_rbsde_with_V)
from rbsdelab.lattice import build_lattice
from rbsdelab.model import (Instance, TimeGrid, UncertaintyInterval, make_generator,
                            make_obstacle, make_terminal)
from rbsdelab.rbsde import Scenario, solve_rbsde
from rbsdelab.verify import binding_instance

IV = UncertaintyInterval(0.04, 0.04)
SC = Scenario.constant(0.04)


def slack(N=50, F=None, xi=0.0):
    return Instance(TimeGrid(1.0, N), IV, F or make_generator("zero"),
                    make_obstacle("constant", {"value": -1e6}),
                    make_terminal("constant", {"value": xi}))


class TestV:
    def test_validation(self):
        with pytest.raises(InvalidInstanceError):
            VProcessSpec(np.array([[1.0], [2.0]]))
        with pytest.raises(InvalidInstanceError):
            VProcessSpec(np.array([[0.0], [-1.0]]))
        with pytest.raises(InvalidInstanceError):
            VProcessSpec(np.zeros(3))

    def test_linear_V_is_earned_back(self):
        i = slack()
        L = build_lattice(i.grid, i.interval)
        sol = solve_rbsde_with_V(i, L, SC, VProcessSpec.linear(L, 50, 1.0))
        assert sol.y0 == pytest.approx(1.0, abs=1e-14)

    def test_shape_mismatch(self):
        i = slack()
        L = build_lattice(i.grid, i.interval)
        with pytest.raises(DomainError):
            solve_rbsde_with_V(i, L, SC, VProcessSpec.zero(L, 10))

    def test_ordered_V(self):
        i = binding_instance(50, IV)
        L = build_lattice(i.grid, i.interval)
        lo = solve_rbsde_with_V(i, L, SC, VProcessSpec.linear(L, 50, 0.02))
        hi = solve_rbsde_with_V(i, L, SC, VProcessSpec.linear(L, 50, 0.05))
        assert np.all(hi.y >= lo.y - 1e-12)


class TestDoobMeyer:
    def test_solution_has_no_V(self):
        i = binding_instance(60, IV)
        L = build_lattice(i.grid, i.interval)
        sol = solve_rbsde(i, L, SC)
        dm = doob_meyer(sol.y, i, L, SC)
        assert np.max(np.abs(dm.V_estimate)) <= 1e-8 * dm.scale
        assert dm.disjoint and dm.gap_nonincreasing and dm.y_nondecreasing_in_n

    def test_ramp_recovered(self):
        i = slack(100, xi=1.0)
        L = build_lattice(i.grid, i.interval)
        dm = doob_meyer(ramp_surface(solve_rbsde(i, L, SC), 0.1, 1.0), i, L, SC)
        assert dm.V_estimate[-1, L.center] == pytest.approx(0.1, rel=0.02)
        assert dm.reconstruction_residual <= 1e-10 * dm.scale
        trend = dm.gap_trend
        assert all(b <= a + 1e-12 for a, b in zip(trend, trend[1:]))

    def test_rejects_submartingale_and_below_obstacle(self):
        i = slack(20, xi=1.0)
        L = build_lattice(i.grid, i.interval)
        y = solve_rbsde(i, L, SC).y
        with pytest.raises(DomainError, match="supermartingale"):
            doob_meyer(ramp_surface(solve_rbsde(i, L, SC), -0.1, 1.0), i, L, SC)
        b = binding_instance(20, IV)
        with pytest.raises(DomainError, match="below the obstacle"):
            doob_meyer(np.full_like(y, -5.0), b, L, SC)


class TestDowncrossings:
    @pytest.mark.parametrize("path, band, n", [([3, 2, 1, 0], (0.5, 2.5), 1),
                                               ([1, 1, 1, 1], (0.5, 2.5), 0),
                                               ([3, 0, 3, 0], (1, 2), 2),
                                               ([0, 3, 0, 3, 0], (1, 2), 2),
                                               ([3, 0.5, 3], (1, 2), 1)])
    def test_counts(self, path, band, n):
        assert downcrossings(path, *band) == n

    def test_bad_band(self):
        with pytest.raises(DomainError):
            downcrossings([1.0], 2.0, 1.0)

    def test_deterministic_paths(self):
        paths = np.tile(np.linspace(3, 0, 10), (5, 1))
        rep = downcrossing_bound_experiment((0.5, 1.5), paths=paths)
        assert rep.mean == 1.0 and rep.passed and rep.bound == 1.5

    def test_band_above_paths(self):
        paths = np.full((4, 6), 1.0)
        rep = downcrossing_bound_experiment((5.0, 6.0), paths=paths)
        assert rep.mean == 0.0 and rep.passed

    def test_simulation_is_reproducible_and_supermartingale(self):
        a = simulate_supermartingale_paths(200, 30, 2.0, 0.3, 0.01, 7)
        b = simulate_supermartingale_paths(200, 30, 2.0, 0.3, 0.01, 7)
        np.testing.assert_array_equal(a, b)
        assert np.all(a > 0)
        assert a[:, -1].mean() < 2.0 + 3 * a[:, -1].std() / np.sqrt(200)

    def test_bound_with_drift_is_data_only(self):
        rep = downcrossing_bound_experiment((0.5, 1.5), 500, mu=0.2, seed=3)
        assert rep.passed is None
        assert rep.bound == pytest.approx(1.5 * np.exp(0.2))
        assert rep.to_dict()["n_paths"] == 500
