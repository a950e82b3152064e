"""Acceptance criteria, each at its stated tolerance.

Every test records one PASS/FAIL line that is printed in the terminal summary.
"""

import functools
import time

import numpy as np

from rbsdelab import cli
from rbsdelab.glab import (VProcessSpec, doob_meyer, downcrossing_bound_experiment,
                           ramp_surface, solve_rbsde_with_V)
from rbsdelab.lattice import build_lattice
from rbsdelab.model import Instance, TimeGrid, UncertaintyInterval, make_generator, make_obstacle, \
    make_terminal
from rbsdelab.pricing import MarketSpec, market_instance, price_american
from rbsdelab.rbsde import Scenario, solve_rbsde
from rbsdelab.soref import (contact_set_check, epsilon_stopping, problem_scale,
                            solve_2rbsde_dpp)
from rbsdelab.verify import binding_instance, binomial_american, convex_instance, run_suite

SEED = 42
BAND = UncertaintyInterval(0.01, 0.09)
PUT = MarketSpec(rate=0.05, drift=0.0, payoff_kind="put", strike=100.0, price0=100.0)


@functools.lru_cache(maxsize=None)
def suite(name):
    return {c.name.split("/", 1)[1]: c for c in run_suite(name, SEED).checks}


def test_01_skorohod_exactness(criterion):
    c = suite("skorohod")["skorohod-exact"]
    m = c.measured
    ok = m["instances"] >= 30 and m["max_residual"] == 0.0
    criterion(1, "Skorohod exactness", ok,
              f"{m['instances']} instances, max residual {m['max_residual']!r}")
    assert ok


def test_02_singleton_reduction(criterion):
    checks = suite("singleton-reduction")
    same = checks["dpp-equals-rbsde-bitwise"].passed
    kmk = checks["K-minus-k-zero"].measured["max_abs_K_minus_k"]
    ok = same and kmk == 0.0
    criterion(2, "Singleton reduction", ok,
              f"bitwise DPP == RBSDE: {same}; max |K - k| = {kmk!r}")
    assert ok


def test_03_representation_dominance(criterion):
    checks = suite("representation")
    slack = checks["dpp-dominates-families"].measured["min_slack"]
    gap = checks["maximiser-closes-gap"].measured["gap_with"]
    ok = slack >= -1e-10 and abs(gap) <= 1e-10
    criterion(3, "Representation dominance", ok,
              f"min slack {slack:.3e}; gap with maximiser {gap:.3e}")
    assert ok


def test_04_closed_form_convex(criterion):
    inst = convex_instance(100)
    lat = build_lattice(inst.grid, inst.interval)
    err = solve_2rbsde_dpp(inst, lat, diagnostics=False).Y0 - 0.09 * inst.grid.T
    ok = abs(err) <= 1e-10
    criterion(4, "Closed-form convex case", ok, f"Y0 - 0.09 T = {err:.3e}")
    assert ok


def test_05_american_put_oracle(criterion):
    start = time.perf_counter()
    price = price_american(PUT, UncertaintyInterval(0.04, 0.04), TimeGrid(1.0, 200)).price
    runtime = time.perf_counter() - start
    oracle = binomial_american(100.0, 100.0, 0.05, 0.2, 1.0, 500)
    rel = abs(price - oracle) / oracle
    ok = rel <= 0.01 and runtime < 5.0
    criterion(5, "American put oracle", ok,
              f"price {price:.6f} vs CRR {oracle:.6f}, rel {rel:.2e}, {runtime:.2f}s")
    assert ok


def test_06_comparison(criterion):
    m = suite("comparison")["comparison-ordered"].measured
    ok = m["pairs"] == 20 and m["violations"] == 0
    criterion(6, "Comparison suite", ok,
              f"{m['pairs']} pairs, {m['violations']} violations, "
              f"min Y1 - Y2 {m['min_difference']:.3e}")
    assert ok


def _put_gap(N):
    inst, lat = market_instance(PUT, BAND, TimeGrid(1.0, N))
    fam = [Scenario.constant(BAND.a_low), Scenario.constant(BAND.a_high)]
    so = solve_2rbsde_dpp(inst, lat, None, fam)
    return so, inst.grid.dt


def test_07_minimum_condition(criterion):
    so50, dt50 = _put_gap(50)
    so200, dt200 = _put_gap(200)
    g50, g200 = so50.min_condition_gap, so200.min_condition_gap
    c = max(g50 / dt50, g200 / dt200)
    bounded = g50 <= c * dt50 and g200 <= c * dt200
    ends = {n: r.K_minus_k_terminal for n, r in so200.records.items()}
    ok = bounded and g200 < g50
    criterion(7, "Minimum condition", ok,
              f"gap(50) = {g50!r}, gap(200) = {g200!r}, measured c = {c:.3e}; "
              f"N=200 per scenario {ends}")
    assert ok


def test_08_contact_set_identity(criterion):
    inst = binding_instance(100)
    lat = build_lattice(inst.grid, inst.interval)
    fam = [Scenario.constant(a) for a in BAND.default_grid()]
    so = solve_2rbsde_dpp(inst, lat, None, fam)
    bound = 5 * inst.grid.dt * problem_scale(inst, lat)
    worst = max(contact_set_check(inst, lat, so, sc) for sc in fam + [so.star_scenario])
    one = binding_instance(100, UncertaintyInterval(0.04, 0.04))
    lat1 = build_lattice(one.grid, one.interval)
    sc1 = Scenario.constant(0.04)
    single = contact_set_check(one, lat1, solve_2rbsde_dpp(one, lat1, [0.04], [sc1]), sc1)
    ok = worst <= bound and single == 0.0
    criterion(8, "Contact-set identity", ok,
              f"max mismatch {worst:.3e} (bound {bound:.3e}); singleton {single!r}")
    assert ok


def test_09_penalization(criterion):
    checks = suite("penalization")
    mono = checks["penalized-nondecreasing-in-n"]
    shrink = checks["penalized-gap-shrinks"]
    ok = mono.passed and shrink.passed
    criterion(9, "Penalization", ok,
              f"min step difference {mono.measured['min_step_difference']:.3e}; "
              f"gaps n=16 {np.round(shrink.measured['gap_n16'], 6).tolist()} "
              f"n=256 {np.round(shrink.measured['gap_n256'], 6).tolist()}")
    assert ok


def test_10_doob_meyer(criterion):
    grid = TimeGrid(1.0, 100)
    iv = UncertaintyInterval(0.04, 0.04)
    lat = build_lattice(grid, iv)
    sc = Scenario.constant(0.04)
    zc = 0.3 * iv.a_low / lat.dx
    gen = make_generator("linear_discount", {"z_coeff": zc}, lipschitz_C=zc / 0.2)
    slack = Instance(grid, iv, gen, make_obstacle("constant", {"value": -10.0}),
                     make_terminal("american_put", {"strike": 1.0, "price0": 1.0}))
    base = solve_rbsde(slack, lat, sc)
    dm = doob_meyer(ramp_surface(base, 0.1, grid.T), slack, lat, sc, (16, 64, 256))
    V_T = dm.V_estimate[-1, lat.center]
    rel = abs(V_T - 0.1 * grid.T) / (0.1 * grid.T)

    binding = slack.replace(obstacle=make_obstacle("american_put",
                                                   {"strike": 1.0, "price0": 1.0}),
                            gen=make_generator("linear_discount", {"rate": 0.05}))
    sol = solve_rbsde(binding, lat, sc)
    dm2 = doob_meyer(ramp_surface(sol, 0.1, grid.T), binding, lat, sc)
    resid = max(dm.reconstruction_residual / dm.scale, dm2.reconstruction_residual / dm2.scale)
    ok = rel <= 0.02 and resid <= 1e-10 and dm.disjoint and dm2.disjoint
    criterion(10, "Doob-Meyer", ok,
              f"V_T at n=256 {V_T:.6f} (rel err {rel:.2e}); scaled residual {resid:.1e}; "
              f"disjoint {dm.disjoint and dm2.disjoint}")
    assert ok


def test_11_downcrossing(criterion):
    rep = downcrossing_bound_experiment((0.5, 1.5), 10_000, y0=2.0, seed=SEED)
    ok = bool(rep.passed) and rep.mean <= min(2.0, 1.5) / 1.0 + rep.clt_margin
    criterion(11, "Downcrossing", ok,
              f"mean {rep.mean:.4f} <= bound {rep.bound:.4f} + margin {rep.clt_margin:.4f}")
    assert ok


def test_12_stopping_dominance(criterion):
    reports = {eps: price_american(PUT, BAND, TimeGrid(1.0, 200), eps=eps)
               for eps in (0.01, 0.1)}
    viol = {eps: r.dominance_violations for eps, r in reports.items()}
    later = int(np.count_nonzero(reports[0.1].D_eps.hit > reports[0.01].D_eps.hit))
    ok = all(v == 0 for v in viol.values()) and later == 0
    criterion(12, "Stopping dominance", ok,
              f"violations {viol}; nodes where larger eps stops later: {later}")
    assert ok


def test_13_stopping_oracle(criterion):
    checks = suite("snell")
    trees = checks["brute-force-equals-backward"]
    lat = checks["brute-force-equals-lattice-snell"]
    rb = checks["snell-equals-rbsde"]
    ok = trees.passed and trees.measured["trees"] == 50 and lat.passed and rb.passed
    criterion(13, "Stopping oracle", ok,
              f"50 trees exact: {trees.passed}; lattice trees exact: {lat.passed}; "
              f"max scaled |Snell - y0| {rb.measured['max_scaled_diff']:.1e}")
    assert ok


def test_14_stability(criterion):
    m = suite("stability")["stability-ratio-spread"].measured
    ok = m["max_spread"] <= 1.5
    criterion(14, "Stability", ok, f"max ratio spread {m['max_spread']:.6f} over "
                                   f"{m['instances']} instances")
    assert ok


def test_15_determinism(criterion, tmp_path, capsys):
    paths = [tmp_path / "a.json", tmp_path / "b.json"]
    codes = [cli.dispatch(["verify", "run", "--suite", "all", "--seed", "42",
                           "--report", str(p)]) for p in paths]
    capsys.readouterr()
    same = paths[0].read_bytes() == paths[1].read_bytes()
    criterion(15, "Determinism", same, f"byte-identical reports: {same}; exit codes {codes}")
    assert same


def test_with_V_zero_is_identity():
    # supports criterion 10's plumbing: V == 0 must not perturb the solve
    inst = binding_instance(50)
    lat = build_lattice(inst.grid, inst.interval)
    sc = Scenario.constant(0.05)
    a = solve_rbsde(inst, lat, sc)
    b = solve_rbsde_with_V(inst, lat, sc, VProcessSpec.zero(lat, 50))
    assert np.array_equal(a.y, b.y) and np.array_equal(a.dk, b.dk)
