"""Independent oracles and randomized property suites.

Oracles: exhaustive stopping-rule enumeration on tiny non-recombining trees
and Cox-Ross-Rubinstein binomial American pricing. Suites draw every random
number from a named stream derived from one integer seed, and their reports
contain no timings, so a report is a pure function of ``(suite, seed, sizes)``.
"""

from __future__ import annotations

import itertools
import math
import os
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, InvalidInstanceError
from .lattice import build_lattice
from .model import (Instance, ObstacleSpec, TerminalSpec, TimeGrid, UncertaintyInterval,
                    make_generator, make_obstacle, make_terminal)
from .rbsde import Scenario, skorohod_residual, solve_penalized, solve_rbsde
from .soref import (DPP_TOL, extract_K, optimal_stopping_value, problem_scale,
                    representation_sup, solve_2rbsde_dpp)

MAX_DEPTH = 4
MAX_RULES = 1_000_000
# allowance for orderings between two separately rounded solves
ROUNDOFF_REL = 1e-12


# ---------------------------------------------------------------------------
# tiny trees

@dataclass(frozen=True)
class TinyTree:
    """Non-recombining tree; node ``j`` at level ``d`` has children ``b*j + c``.

    ``probs[c]`` is the probability of branch ``c`` (the binomial case is
    ``(p, 1 - p)``). ``stop[d]`` holds the stopping reward at the ``b**d``
    nodes of level ``d < depth``; ``terminal`` the reward at the leaves.
    """

    probs: tuple
    stop: tuple = field(repr=False)
    terminal: np.ndarray = field(repr=False)

    def __post_init__(self):
        probs = tuple(float(p) for p in self.probs)
        if len(probs) < 2 or min(probs) < 0 or abs(sum(probs) - 1.0) > 1e-15:
            raise InvalidInstanceError(f"branch probabilities {probs} are not a distribution")
        stop = tuple(np.asarray(s, dtype=float) for s in self.stop)
        term = np.asarray(self.terminal, dtype=float)
        b, depth = len(probs), len(stop)
        if depth > MAX_DEPTH:
            raise DomainError(f"depth {depth} exceeds {MAX_DEPTH}: rule enumeration refused")
        for d, s in enumerate(stop):
            if s.shape != (b ** d,):
                raise InvalidInstanceError(f"level {d} needs {b ** d} stop rewards")
        if term.shape != (b ** depth,):
            raise InvalidInstanceError(f"terminal level needs {b ** depth} rewards")
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "stop", stop)
        object.__setattr__(self, "terminal", term)

    @classmethod
    def binomial(cls, p: float, stop, terminal) -> "TinyTree":
        return cls((p, 1.0 - p), stop, terminal)

    @property
    def depth(self) -> int:
        return len(self.stop)

    @property
    def branching(self) -> int:
        return len(self.probs)

    @property
    def p(self) -> float:
        return self.probs[0]

    def rule_count(self) -> int:
        """Number of adapted stopping rules (stop/continue marks up to unreachable nodes)."""
        r = 1
        for _ in range(self.depth):
            r = 1 + r ** self.branching
        return r


def _expect(probs, values) -> float:
    acc = 0.0
    for p, v in zip(probs, values):
        acc += p * v
    return acc


def tree_snell(tree: TinyTree) -> float:
    """Backward induction ``V = max(stop, E[V'])`` on the tree."""
    V = list(tree.terminal)
    b = tree.branching
    for d in range(tree.depth - 1, -1, -1):
        V = [max(float(tree.stop[d][j]), _expect(tree.probs, V[b * j:b * j + b]))
             for j in range(b ** d)]
    return V[0]


def stopping_rule_values(tree: TinyTree) -> list:
    """Expected reward of every adapted stopping rule, in enumeration order."""
    if tree.rule_count() > MAX_RULES:
        raise DomainError(f"{tree.rule_count()} stopping rules exceed the enumeration cap")
    b = tree.branching

    def values(d, j):
        if d == tree.depth:
            return [float(tree.terminal[j])]
        kids = [values(d + 1, b * j + c) for c in range(b)]
        out = [float(tree.stop[d][j])]
        out.extend(_expect(tree.probs, combo) for combo in itertools.product(*kids))
        return out

    return values(0, 0)


def brute_force_snell(tree: TinyTree, stop_reward=None, terminal_reward=None) -> float:
    """Best expected reward over all adapted stopping rules, by enumeration."""
    if stop_reward is not None or terminal_reward is not None:
        tree = TinyTree(tree.probs, tree.stop if stop_reward is None else stop_reward,
                        tree.terminal if terminal_reward is None else terminal_reward)
    return max(stopping_rule_values(tree))


def tree_from_lattice(inst, lattice, scenario: Scenario) -> TinyTree:
    """Unroll a zero-generator lattice instance from its centre into a trinomial tree.

    Branch order is (up, middle, down); moves past the lattice edge stay on
    the edge node, matching the clamped extension of the lattice operators.
    """
    if inst.gen.kind != "zero":
        raise DomainError("only zero-generator instances unroll into stopping trees")
    if scenario.value is None:
        raise DomainError("unrolling needs a constant-rate scenario")
    pu, pm, pd = (float(v) for v in lattice.probabilities(scenario.value))
    times = inst.grid.nodes
    depth = inst.grid.N
    pos = np.array([lattice.center])
    stop = []
    for d in range(depth):
        S = inst.obstacle(float(times[d]), lattice.x_nodes)
        stop.append(S[pos])
        pos = np.stack([np.minimum(pos + 1, lattice.n_nodes - 1), pos,
                        np.maximum(pos - 1, 0)], axis=1).ravel()
    return TinyTree((pu, pm, pd), stop, inst.terminal(lattice.x_nodes)[pos])


# ---------------------------------------------------------------------------
# binomial oracle

@dataclass(frozen=True)
class BinomialResult:
    price: float
    european: float
    p: float
    early_exercise_nodes: int


def binomial_tree(S0: float, K: float, r: float, sigma: float, T: float, N: int,
                  kind: str = "put") -> BinomialResult:
    """CRR backward induction; also returns the European value and counts the
    nodes where immediate exercise beats continuation by more than roundoff."""
    if not (isinstance(N, (int, np.integer)) and N >= 1):
        raise InvalidInstanceError("N must be an integer >= 1")
    if not sigma > 0:
        raise InvalidInstanceError("sigma must be positive")
    if kind not in ("put", "call"):
        raise InvalidInstanceError(f"unknown payoff kind {kind!r}")
    dt = T / N
    u = math.exp(sigma * math.sqrt(dt))
    d = 1.0 / u
    p = (math.exp(r * dt) - d) / (u - d)
    if not (0.0 <= p <= 1.0):
        raise InvalidInstanceError(f"risk-neutral probability {p} outside [0, 1]")
    disc = math.exp(-r * dt)
    sign = 1.0 if kind == "call" else -1.0
    tol = 1e-12 * max(S0, K, 1.0)

    def payoff(n):
        prices = S0 * u ** (n - 2.0 * np.arange(n + 1))
        return np.maximum(sign * (prices - K), 0.0)

    am = payoff(N)
    eu = am.copy()
    early = 0
    for n in range(N - 1, -1, -1):
        cont = disc * (p * am[:-1] + (1.0 - p) * am[1:])
        eu = disc * (p * eu[:-1] + (1.0 - p) * eu[1:])
        ex = payoff(n)
        early += int(np.count_nonzero(ex > cont + tol))
        am = np.maximum(ex, cont)
    return BinomialResult(float(am[0]), float(eu[0]), p, early)


def binomial_american(S0, K, r, sigma, T, N, kind: str = "put") -> float:
    return binomial_tree(S0, K, r, sigma, T, N, kind).price


# ---------------------------------------------------------------------------
# random instances

def stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for ``(seed, name)``; stable across runs and platforms."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])


def _shifted(spec, shift: float):
    if isinstance(spec, ObstacleSpec):
        return ObstacleSpec(lambda t, x, _S=spec.S: _S(t, x) + shift)
    return TerminalSpec(lambda x, _xi=spec.xi: _xi(x) + shift)


def _random_obstacle(rng):
    kind = rng.choice(["put", "call", "concave", "constant"])
    if kind == "put":
        return make_obstacle("american_put", {"strike": rng.uniform(0.8, 1.2), "price0": 1.0})
    if kind == "call":
        return make_obstacle("american_call", {"strike": rng.uniform(0.8, 1.2), "price0": 1.0})
    if kind == "concave":
        c = [rng.uniform(-0.2, 0.3), rng.uniform(-0.5, 0.5), -rng.uniform(0.0, 2.0)]
        return make_obstacle("custom_polynomial", {"coeffs": c})
    return make_obstacle("constant", {"value": rng.uniform(-0.2, 0.4)})


def _random_terminal(rng, obstacle, T):
    c = [rng.uniform(-0.3, 0.3), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)]
    base = make_terminal("custom_polynomial", {"coeffs": c})
    if rng.random() < 0.5:
        return TerminalSpec(lambda x: np.maximum(base(x), obstacle(T, x)))
    return base


def _random_generator(rng, a_low, dx, const=0.0):
    kind = rng.choice(["zero", "linear_discount", "custom_polynomial"])
    # |z coefficient| <= a_low/dx keeps every lattice step monotone
    zc = rng.uniform(-0.5, 0.5) * a_low / dx
    if kind == "zero" and const == 0.0:
        return make_generator("zero")
    if kind in ("zero", "linear_discount"):
        r = rng.uniform(0.0, 0.1)
        return make_generator("linear_discount", {"rate": r, "z_coeff": zc, "const": const},
                              lipschitz_C=abs(r) + abs(zc) / math.sqrt(a_low))
    c = [rng.uniform(-0.1, 0.1) + const, rng.uniform(-0.2, 0.2)]
    return make_generator("custom_polynomial", {"y_coeffs": c, "z_coeff": zc},
                          lipschitz_C=abs(c[1]) + abs(zc) / math.sqrt(a_low))


def random_instance(rng, N: int = 100, degenerate: bool = False):
    """Random conforming instance and its lattice."""
    T = float(rng.uniform(0.5, 1.5))
    a_low = float(rng.uniform(0.01, 0.05))
    a_high = a_low if degenerate else a_low + float(rng.uniform(0.01, 0.08))
    grid, iv = TimeGrid(T, N), UncertaintyInterval(a_low, a_high)
    lattice = build_lattice(grid, iv)
    obs = _random_obstacle(rng)
    inst = Instance(grid, iv, _random_generator(rng, a_low, lattice.dx), obs,
                    _random_terminal(rng, obs, T))
    return inst, lattice


def random_scenario(rng, inst, lattice, name: str) -> Scenario:
    lo, hi = inst.interval.a_low, inst.interval.a_high
    kind = rng.choice(["constant", "feedback", "switch"])
    if kind == "constant":
        return Scenario.constant(float(rng.uniform(lo, hi)), name)
    if kind == "feedback":
        return Scenario.feedback(rng.uniform(lo, hi, (inst.grid.N, lattice.n_nodes)), name)
    cut = float(rng.uniform(-0.1, 0.1))
    surf = np.where(lattice.x_nodes[None, :] > cut, hi, lo) * np.ones((inst.grid.N, 1))
    return Scenario.feedback(surf, name)


def ordered_pair(rng, N: int = 100):
    """Instances ``(hi, lo)`` sharing a lattice with ``xi, F, S`` of ``hi`` above ``lo``."""
    lo_inst, lattice = random_instance(rng, N)
    bump = [float(v) for v in rng.uniform(0.0, 0.2, 3) * (rng.random(3) < 0.7)]
    gen_lo = lo_inst.gen
    gen_hi = gen_lo if bump[1] == 0 else type(gen_lo)(
        lambda t, x, y, z, a, _F=gen_lo.F, _c=bump[1]: _F(t, x, y, z, a) + _c,
        gen_lo.lipschitz_C)
    hi_inst = lo_inst.replace(terminal=_shifted(lo_inst.terminal, bump[0] + bump[2]),
                              gen=gen_hi, obstacle=_shifted(lo_inst.obstacle, bump[2]))
    return hi_inst, lo_inst, lattice, bump


def convex_instance(N: int = 100):
    """``F = 0``, ``xi = x^2``, slack obstacle, band ``[0.01, 0.09]``, ``T = 1``."""
    grid, iv = TimeGrid(1.0, N), UncertaintyInterval(0.01, 0.09)
    inst = Instance(grid, iv, make_generator("zero"),
                    make_obstacle("constant", {"value": -1e3}),
                    make_terminal("custom_polynomial", {"coeffs": [0.0, 0.0, 1.0]}))
    return inst


def binding_instance(N: int = 100, interval=None):
    """``S = 2``, ``xi = 1``: the obstacle binds everywhere before maturity."""
    iv = interval or UncertaintyInterval(0.01, 0.09)
    return Instance(TimeGrid(1.0, N), iv, make_generator("zero"),
                    make_obstacle("constant", {"value": 2.0}),
                    make_terminal("constant", {"value": 1.0}))


def dyadic_lattice_instance(rng, depth: int):
    """Zero-generator instance whose lattice arithmetic is exact in binary floats."""
    grid = TimeGrid(0.25 * depth, depth)
    iv = UncertaintyInterval(0.25, 1.0)
    q = lambda: [float(v) / 8.0 for v in rng.integers(-8, 9, 3)]  # noqa: E731
    inst = Instance(grid, iv, make_generator("zero"),
                    make_obstacle("custom_polynomial", {"coeffs": q()}),
                    make_terminal("custom_polynomial", {"coeffs": q()}))
    lattice = build_lattice(grid, iv, 0.0, None)
    a = float(rng.choice([0.25, 0.5, 0.75, 1.0]))
    return inst, lattice, Scenario.constant(a)


def random_tiny_tree(rng) -> TinyTree:
    depth = int(rng.integers(1, MAX_DEPTH + 1))
    p = float(rng.integers(1, 16)) / 16.0
    stop = [rng.integers(-32, 65, 2 ** d) / 64.0 for d in range(depth)]
    return TinyTree.binomial(p, stop, rng.integers(-32, 65, 2 ** depth) / 64.0)


# ---------------------------------------------------------------------------
# suites

@dataclass
class CheckResult:
    name: str
    passed: bool
    measured: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": bool(self.passed), "measured": self.measured}


@dataclass
class SuiteReport:
    suite: str
    seed: int
    sizes: dict
    checks: list

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {"suite": self.suite, "seed": self.seed, "passed": self.passed,
                "sizes": dict(sorted(self.sizes.items())),
                "checks": [c.to_dict() for c in self.checks]}


def _skorohod(seed, sizes):
    rng = stream(seed, "skorohod")
    worst, count = 0.0, 0
    for k in range(sizes["instances"]):
        inst, lat = random_instance(rng, sizes["N"], degenerate=bool(k % 4 == 0))
        sc = random_scenario(rng, inst, lat, f"s{k}")
        worst = max(worst, skorohod_residual(solve_rbsde(inst, lat, sc)))
        count += 1
    return [CheckResult("skorohod-exact", worst == 0.0,
                        {"instances": count, "max_residual": worst})]


def _singleton(seed, sizes):
    rng = stream(seed, "singleton-reduction")
    same, kmk = True, 0.0
    for _ in range(sizes["instances"]):
        inst, lat = random_instance(rng, sizes["N"], degenerate=True)
        a = inst.interval.a_low
        sc = Scenario.constant(a)
        so = solve_2rbsde_dpp(inst, lat, [a], [sc])
        sol = solve_rbsde(inst, lat, sc)
        same &= bool(np.array_equal(so.Y, sol.y) and np.array_equal(so.Z, sol.z))
        K, k = extract_K(inst, lat, so, sc)
        kmk = max(kmk, float(np.max(np.abs(K - k))))
    return [CheckResult("dpp-equals-rbsde-bitwise", same, {"instances": sizes["instances"]}),
            CheckResult("K-minus-k-zero", kmk == 0.0, {"max_abs_K_minus_k": kmk})]


def _representation(seed, sizes):
    rng = stream(seed, "representation")
    worst = math.inf
    for f in range(sizes["families"]):
        inst, lat = random_instance(rng, sizes["N"])
        fam = [random_scenario(rng, inst, lat, f"f{f}s{j}") for j in range(5)]
        so = solve_2rbsde_dpp(inst, lat, None, fam, diagnostics=False)
        sup, _ = representation_sup(inst, lat, fam)
        worst = min(worst, so.Y0 - sup)
    inst = convex_instance(sizes["N"])
    lat = build_lattice(inst.grid, inst.interval)
    lo, hi = inst.interval.a_low, inst.interval.a_high
    fam = [Scenario.constant(lo + (hi - lo) * q, f"c{j}")
           for j, q in enumerate((0.0, 0.2, 0.4, 0.6, 0.8))]
    so = solve_2rbsde_dpp(inst, lat, None, fam, diagnostics=False)
    sup_fam, _ = representation_sup(inst, lat, fam)
    sup_star, _ = representation_sup(inst, lat, fam + [so.star_scenario])
    return [CheckResult("dpp-dominates-families", worst >= -DPP_TOL,
                        {"families": sizes["families"], "min_slack": worst}),
            CheckResult("maximiser-closes-gap", abs(so.Y0 - sup_star) <= DPP_TOL,
                        {"gap_without": so.Y0 - sup_fam, "gap_with": so.Y0 - sup_star})]


def _comparison(seed, sizes):
    rng = stream(seed, "comparison")
    violations, worst = 0, math.inf
    for _ in range(sizes["pairs"]):
        hi, lo, lat, _ = ordered_pair(rng, sizes["N"])
        Y1 = solve_2rbsde_dpp(hi, lat, diagnostics=False).Y
        Y2 = solve_2rbsde_dpp(lo, lat, diagnostics=False).Y
        tol = ROUNDOFF_REL * max(problem_scale(hi, lat), problem_scale(lo, lat))
        violations += int(np.count_nonzero(Y1 < Y2 - tol))
        worst = min(worst, float(np.min(Y1 - Y2)))
    return [CheckResult("comparison-ordered", violations == 0,
                        {"pairs": sizes["pairs"], "violations": violations,
                         "min_difference": worst})]


def _stability(seed, sizes):
    rng = stream(seed, "stability")
    spreads = []
    for _ in range(sizes["instances"]):
        inst, lat = random_instance(rng, sizes["N"])
        base = solve_2rbsde_dpp(inst, lat, diagnostics=False).Y
        phase = float(rng.uniform(0, 2 * math.pi))
        ratios = []
        for d in (1e-1, 1e-2, 1e-3):
            pert = inst.replace(terminal=TerminalSpec(
                lambda x, _xi=inst.terminal.xi, _d=d: _xi(x) + _d * (1.0 + 0.5 * np.sin(x + phase))))
            Y = solve_2rbsde_dpp(pert, lat, diagnostics=False).Y
            ratios.append(float(np.max(np.abs(Y - base))) / d)
        spreads.append(max(ratios) / min(ratios) if min(ratios) > 0 else math.inf)
    worst = max(spreads)
    return [CheckResult("stability-ratio-spread", worst <= 1.5,
                        {"instances": sizes["instances"], "max_spread": worst,
                         "spreads": spreads})]


def _snell(seed, sizes):
    rng = stream(seed, "snell")
    ok_trees = True
    for _ in range(sizes["trees"]):
        t = random_tiny_tree(rng)
        ok_trees &= bool(brute_force_snell(t) == tree_snell(t))
    ok_lat = True
    for k in range(sizes["lattice_trees"]):
        inst, lat, sc = dyadic_lattice_instance(rng, 1 + k % 3)
        ok_lat &= brute_force_snell(tree_from_lattice(inst, lat, sc)) == \
            optimal_stopping_value(inst, lat, sc)
    worst = 0.0
    for _ in range(sizes["instances"]):
        inst, lat = random_instance(rng, sizes["N"])
        scale = problem_scale(inst, lat)
        for a in inst.interval.default_grid():
            sc = Scenario.constant(a)
            diff = abs(optimal_stopping_value(inst, lat, sc) - solve_rbsde(inst, lat, sc).y0)
            worst = max(worst, diff / scale)
    return [CheckResult("brute-force-equals-backward", ok_trees, {"trees": sizes["trees"]}),
            CheckResult("brute-force-equals-lattice-snell", ok_lat,
                        {"trees": sizes["lattice_trees"]}),
            CheckResult("snell-equals-rbsde", worst <= 1e-9,
                        {"instances": sizes["instances"], "max_scaled_diff": worst})]


def _penalization(seed, sizes):
    rng = stream(seed, "penalization")
    levels = [2.0 ** k for k in range(9)]
    monotone, strict, worst = True, True, math.inf
    gaps16, gaps256, binding = [], [], 0
    for k in range(sizes["instances"]):
        inst, lat = random_instance(rng, sizes["N"])
        sc = random_scenario(rng, inst, lat, f"p{k}")
        ref = solve_rbsde(inst, lat, sc)
        tol = ROUNDOFF_REL * problem_scale(inst, lat)
        prev = None
        for n in levels:
            y = solve_penalized(inst, lat, sc, n).y
            if prev is not None:
                worst = min(worst, float(np.min(y - prev)))
                monotone &= bool(np.all(y >= prev - tol))
            prev = y
            if n in (16.0, 256.0):
                (gaps16 if n == 16.0 else gaps256).append(float(np.max(np.abs(ref.y - y))))
        if np.any(ref.dk > 0):
            binding += 1
            strict &= gaps256[-1] < gaps16[-1]
        else:
            # without reflection the penalty never acts: every level must match
            strict &= gaps256[-1] == 0.0 and gaps16[-1] == 0.0
    return [CheckResult("penalized-nondecreasing-in-n", monotone,
                        {"instances": sizes["instances"], "levels": levels,
                         "min_step_difference": worst}),
            CheckResult("penalized-gap-shrinks", strict,
                        {"binding_instances": binding, "gap_n16": gaps16,
                         "gap_n256": gaps256})]


SUITES = {
    "skorohod": (_skorohod, {"instances": 30, "N": 100}),
    "singleton-reduction": (_singleton, {"instances": 10, "N": 100}),
    "representation": (_representation, {"families": 10, "N": 100}),
    "comparison": (_comparison, {"pairs": 20, "N": 100}),
    "stability": (_stability, {"instances": 5, "N": 100}),
    "snell": (_snell, {"trees": 50, "lattice_trees": 12, "instances": 5, "N": 100}),
    "penalization": (_penalization, {"instances": 5, "N": 100}),
}


def worker_count(deterministic: bool = False) -> int:
    """Worker cap from ``RBSDE_LAB_THREADS`` (default 1); 1 when ``deterministic``."""
    if deterministic:
        return 1
    raw = os.environ.get("RBSDE_LAB_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError as exc:
        raise InvalidInstanceError(f"RBSDE_LAB_THREADS must be an integer, got {raw!r}") from exc


def run_suite(name: str, seed: int = 42, sizes: dict | None = None, *,
              deterministic: bool = False) -> SuiteReport:
    """Run one registered suite, or every suite with ``name='all'``.

    ``sizes`` overrides per-suite defaults by key. Suites are independent and
    may run on several threads; the report lists them in registry order.
    """
    names = list(SUITES) if name == "all" else [name]
    for n in names:
        if n not in SUITES:
            raise DomainError(f"unknown suite {n!r}; known: {', '.join(SUITES)} or all")
    jobs = []
    used = {}
    for n in names:
        fn, default = SUITES[n]
        sz = dict(default)
        sz.update({k: v for k, v in (sizes or {}).items() if k in default})
        jobs.append((fn, sz))
        used.update({f"{n}.{k}" if name == "all" else k: v for k, v in sz.items()})
    workers = min(worker_count(deterministic), len(jobs))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(lambda j: j[0](seed, j[1]), jobs))
    else:
        results = [fn(seed, sz) for fn, sz in jobs]
    checks = []
    for n, res in zip(names, results):
        for c in res:
            c.name = f"{n}/{c.name}"
            checks.append(c)
    return SuiteReport(name, int(seed), used, checks)
