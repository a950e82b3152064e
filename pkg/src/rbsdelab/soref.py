"""Second-order reflected BSDE on the lattice.

The reference value comes from a backward supremum over a finite grid of
variance rates (the dynamic programming form of the problem). Finite scenario
families give the representation lower bound. The per-scenario increasing
processes ``K`` are then read off the reference surface and compared with the
single-scenario reflection ``k``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .lattice import Lattice, cond_expect, expected_total
from .rbsde import (MAX_ITERS, PICARD_TOL, RbsdeSolution, Scenario, check_contraction,
                    continuation, implicit_step, obstacle_surface, reflect, solve_rbsde)

DPP_TOL = 1e-10
K_TOL_REL = 1e-9
CONTACT_TOL_REL = 1e-8


def problem_scale(inst, lattice: Lattice) -> float:
    """``max(1, |xi|, S^+, T |F(.,0,0,.)|)`` on the lattice; sizes every tolerance."""
    x = lattice.x_nodes
    S = obstacle_surface(inst, lattice)
    zeros = np.zeros_like(x)
    f0 = 0.0
    for a in {inst.interval.a_low, inst.interval.a_high}:
        for t in (0.0, inst.grid.T):
            f0 = max(f0, float(np.max(np.abs(inst.gen(t, x, zeros, zeros, np.full_like(x, a))))))
    return max(1.0, float(np.max(np.abs(inst.terminal(x)))), float(np.max(np.maximum(S, 0.0))),
               inst.grid.T * f0)


@dataclass
class ScenarioRecord:
    name: str
    y0: float
    K_cum: np.ndarray = field(repr=False)
    k_cum: np.ndarray = field(repr=False)
    K_minus_k_terminal: float
    rbsde: RbsdeSolution = field(repr=False)


@dataclass
class SecondOrderSolution:
    """Surfaces of the backward-sup solve plus per-scenario diagnostics.

    ``a_star`` holds the maximising rate at each step and node (first maximiser
    in ``a_grid`` order); ``star_scenario`` replays it as a feedback control.
    """

    t: np.ndarray
    x: np.ndarray
    Y: np.ndarray
    Z: np.ndarray
    a_star: np.ndarray
    a_star_index: np.ndarray
    S: np.ndarray
    a_grid: tuple
    center: int
    records: dict = field(default_factory=dict)
    min_condition_gap: float = float("nan")
    min_condition_argmin: str = ""
    contact_set_mismatch: float = float("nan")

    @property
    def Y0(self) -> float:
        return float(self.Y[0, self.center])

    @property
    def star_scenario(self) -> Scenario:
        return Scenario.feedback(self.a_star, "dpp-star")

    def occupancy(self) -> dict:
        """Share of (step, node) pairs at which each grid rate was the maximiser."""
        counts = np.bincount(self.a_star_index.ravel(), minlength=len(self.a_grid))
        total = counts.sum()
        return {f"{a:.17g}": float(c / total) for a, c in zip(self.a_grid, counts)}


def _check_grid(inst, a_grid) -> tuple:
    if a_grid is None:
        a_grid = inst.interval.default_grid()
    a_grid = tuple(float(a) for a in a_grid)
    if not a_grid:
        raise DomainError("a_grid is empty")
    lo, hi = inst.interval.a_low, inst.interval.a_high
    if not inst.interval.contains(np.array(a_grid)):
        raise DomainError(f"a_grid {a_grid} leaves [{lo}, {hi}]")
    if min(a_grid) != lo or max(a_grid) != hi:
        raise DomainError("a_grid must contain both ends of the band")
    return a_grid


def solve_2rbsde_dpp(inst, lattice: Lattice, a_grid=None, family=None, *,
                     z_method: str = "covariation", picard_tol: float = PICARD_TOL,
                     max_iters: int = MAX_ITERS, diagnostics: bool = True) -> SecondOrderSolution:
    """Backward supremum over ``a_grid`` with reflection on the obstacle.

    When ``diagnostics`` is set, K/k records are filled for every scenario in
    ``family`` plus the maximising feedback scenario, together with the
    minimum-condition gap and the contact-set mismatch.
    """
    a_grid = _check_grid(inst, a_grid)
    check_contraction(inst)
    times = inst.grid.nodes
    N, M, dt = inst.grid.N, lattice.n_nodes, inst.grid.dt
    x = lattice.x_nodes
    S = obstacle_surface(inst, lattice)
    Y = np.empty((N + 1, M))
    Z = np.empty((N, M))
    a_star = np.empty((N, M))
    idx_star = np.empty((N, M), dtype=int)
    Y[N] = inst.terminal(x)
    cols = np.arange(M)
    for i in range(N - 1, -1, -1):
        branch = [implicit_step(inst, lattice, i, Y[i + 1], np.full(M, a), z_method=z_method,
                                tol=picard_tol, max_iters=max_iters) for a in a_grid]
        U = np.stack([b[2] for b in branch])
        best = np.argmax(U, axis=0)
        e = np.stack([b[0] for b in branch])[best, cols]
        z = np.stack([b[1] for b in branch])[best, cols]
        u = U[best, cols]
        a = np.asarray(a_grid)[best]
        Y[i], _ = reflect(inst.gen, float(times[i]), x, e, z, a, dt, u, S[i])
        Z[i] = z
        a_star[i] = a
        idx_star[i] = best
    so = SecondOrderSolution(times, x, Y, Z, a_star, idx_star, S, a_grid, lattice.center)
    if diagnostics:
        fill_diagnostics(inst, lattice, so, family or [])
    return so


def fill_diagnostics(inst, lattice: Lattice, so: SecondOrderSolution, family) -> None:
    scenarios = list(family) + [so.star_scenario]
    for sc in scenarios:
        _record(inst, lattice, so, sc)
    so.min_condition_gap, so.min_condition_argmin = min_condition_gap(inst, lattice, so, family)
    so.contact_set_mismatch = max(contact_set_check(inst, lattice, so, sc) for sc in scenarios)


def _record(inst, lattice, so, scenario) -> ScenarioRecord:
    rec = so.records.get(scenario.name)
    if rec is None:
        sol = solve_rbsde(inst, lattice, scenario)
        dK = K_increments(inst, lattice, so, scenario)
        K = np.zeros_like(so.Y)
        np.cumsum(dK, axis=0, out=K[1:])
        gap = expected_total(lattice, dK - sol.dk, sol.a)
        rec = ScenarioRecord(scenario.name, sol.y0, K, sol.k_cum, gap, sol)
        so.records[scenario.name] = rec
    return rec


def K_increments(inst, lattice: Lattice, so: SecondOrderSolution, scenario: Scenario) -> np.ndarray:
    """``dK_i = Y_i - (E^{a_i}[Y_{i+1}] + F(t_i, x, Y_i, Z_i, a_i) dt)`` along the scenario."""
    times = inst.grid.nodes
    x, dt = lattice.x_nodes, inst.grid.dt
    dK = np.empty_like(so.Z)
    for i in range(inst.grid.N):
        a = scenario.rates(lattice, i, float(times[i]))
        e = cond_expect(lattice, so.Y[i + 1], a)
        dK[i] = so.Y[i] - continuation(inst.gen, float(times[i]), x, e, so.Z[i], a, dt, so.Y[i])
    return dK


def extract_K(inst, lattice: Lattice, so: SecondOrderSolution, scenario: Scenario):
    """Cumulative ``K`` read off the reference surface, and the scenario's own ``k``.

    Records are cached on ``so`` by scenario name.
    """
    if so.Y.shape[1] != lattice.n_nodes:
        raise DomainError("solution and lattice do not match")
    rec = _record(inst, lattice, so, scenario)
    return rec.K_cum, rec.k_cum


def representation_sup(inst, lattice: Lattice, family):
    """Maximum of single-scenario values at ``(0, x0)`` over a finite family."""
    family = list(family)
    if not family:
        raise DomainError("scenario family is empty")
    values = [solve_rbsde(inst, lattice, sc).y0 for sc in family]
    best = int(np.argmax(values))
    return values[best], values


def min_condition_gap(inst, lattice: Lattice, so: SecondOrderSolution, family):
    """Smallest expected ``K_T - k_T`` at ``(0, x0)`` over the family and the maximiser.

    Returns ``(gap, argmin_name)``.
    """
    best, name = np.inf, ""
    for sc in list(family) + [so.star_scenario]:
        g = _record(inst, lattice, so, sc).K_minus_k_terminal
        if g < best:
            best, name = g, sc.name
    return float(best), name


def contact_set_check(inst, lattice: Lattice, so: SecondOrderSolution, scenario: Scenario,
                      contact_tol: float | None = None) -> float:
    """``max |dK - dk|`` over nodes (t < T) where the reference value sits on the obstacle."""
    if contact_tol is None:
        contact_tol = CONTACT_TOL_REL * problem_scale(inst, lattice)
    contact = np.abs(so.Y[:-1] - so.S[:-1]) <= contact_tol
    if not np.any(contact):
        return 0.0
    rec = _record(inst, lattice, so, scenario)
    dK = np.diff(rec.K_cum, axis=0)
    return float(np.max(np.abs(dK - rec.rbsde.dk)[contact]))


def obstacle_gradient_check(lattice: Lattice, so: SecondOrderSolution, contact_tol: float):
    """``max |Z - dS/dx|`` on interior contact nodes (central difference of ``S``)."""
    contact = np.abs(so.Y[:-1] - so.S[:-1]) <= contact_tol
    contact[:, [0, -1]] = False
    if not np.any(contact):
        return 0.0
    dS = np.zeros_like(so.Z)
    dS[:, 1:-1] = (so.S[:-1, 2:] - so.S[:-1, :-2]) / (2.0 * lattice.dx)
    return float(np.max(np.abs(so.Z - dS)[contact]))


def obstacle_split(so: SecondOrderSolution, record: ScenarioRecord, contact_tol: float):
    """Candidate split of ``K`` into contact-set ``k`` and a remainder.

    Returns cumulative surfaces ``(A, V)`` with ``A = sum 1{Y = S} dk`` and
    ``V = K - A``. No minimality property is claimed for ``V``.
    """
    contact = np.abs(so.Y[:-1] - so.S[:-1]) <= contact_tol
    dA = np.where(contact, record.rbsde.dk, 0.0)
    A = np.zeros_like(so.Y)
    np.cumsum(dA, axis=0, out=A[1:])
    return A, record.K_cum - A


# ---------------------------------------------------------------------------
# stopping

@dataclass
class StoppingSurface:
    """Stopping region ``{Y <= S + eps}`` and earliest reachable hitting index.

    ``hit[i, j]`` is the smallest time index ``u >= i`` at which some lattice
    path from node ``(i, j)`` enters the region (maturity always stops).
    """

    eps: float
    region: np.ndarray
    hit: np.ndarray

    @property
    def start(self) -> np.ndarray:
        return self.hit[0]


def _surface_of(sol):
    if isinstance(sol, SecondOrderSolution):
        return sol.Y, sol.S
    return sol.y, sol.S


def epsilon_stopping(sol, eps: float) -> StoppingSurface:
    if not eps > 0:
        raise DomainError("eps must be positive")
    Y, S = _surface_of(sol)
    region = Y <= S + eps
    region[-1] = True
    N = Y.shape[0] - 1
    hit = np.empty(Y.shape, dtype=int)
    hit[N] = N
    for i in range(N - 1, -1, -1):
        h = hit[i + 1]
        nxt = np.minimum(h, np.minimum(np.r_[h[1:], h[-1]], np.r_[h[0], h[:-1]]))
        hit[i] = np.where(region[i], i, nxt)
    return StoppingSurface(float(eps), region, hit)


def stopping_rule_value(inst, lattice: Lattice, scenario: Scenario, surface: StoppingSurface,
                        y_frozen, z_frozen) -> np.ndarray:
    """Value of stopping on ``surface.region`` under one scenario.

    Running reward ``F`` is frozen at the supplied ``(y, z)`` surfaces; the
    stopped reward is ``S`` before maturity and ``xi`` at maturity.
    """
    times = inst.grid.nodes
    x, dt = lattice.x_nodes, inst.grid.dt
    S = obstacle_surface(inst, lattice)
    V = np.empty_like(S)
    V[-1] = inst.terminal(x)
    for i in range(inst.grid.N - 1, -1, -1):
        a = scenario.rates(lattice, i, float(times[i]))
        cont = cond_expect(lattice, V[i + 1], a) + inst.gen(
            float(times[i]), x, y_frozen[i], z_frozen[i], a) * dt
        V[i] = np.where(surface.region[i], S[i], cont)
    return V


def optimal_stopping_value(inst, lattice: Lattice, scenario: Scenario,
                           tol: float = 1e-13, max_iters: int = 200) -> float:
    """Snell envelope with running reward ``F`` under one scenario.

    ``V_i = max(S_i, C_i)`` with the continuation ``C_i = E[V_{i+1}] + F(C_i) dt``
    found by a plain array-wide fixed-point loop; maturity pays ``xi``.
    """
    check_contraction(inst)
    times = inst.grid.nodes
    x, dt = lattice.x_nodes, inst.grid.dt
    V = np.asarray(inst.terminal(x), dtype=float).copy()
    for i in range(inst.grid.N - 1, -1, -1):
        t = float(times[i])
        a = scenario.rates(lattice, i, t)
        ev = cond_expect(lattice, V, a)
        up = np.r_[V[1:], V[-1]]
        dn = np.r_[V[0], V[:-1]]
        zc = (up - dn) * (a * dt / (2 * lattice.dx ** 2)) * lattice.dx / (a * dt)
        C = ev.copy()
        for _ in range(max_iters):
            C_new = ev + inst.gen(t, x, C, zc, a) * dt
            done = np.max(np.abs(C_new - C)) <= tol
            C = C_new
            if done:
                break
        V = np.maximum(inst.obstacle(t, x), C)
    return float(V[lattice.center])
