"""Single-scenario reflected BSDE on the lattice.

Each backward step solves the implicit relation

    y_i = E_i[y_{i+1}] + F(t_i, x, y_i, z_i, a_i) dt + dk_i,   y_i >= S_i,
    dk_i * (y_i - S_i) = 0,

by first finding the unreflected root ``u = E + F(u) dt`` with a node-local
Picard iteration and then reflecting. On reflected nodes the increment is
``dk = S - (E + F(S) dt)``, which is positive whenever ``u < S`` because the
map ``u -> u - F(u) dt`` is increasing for ``dt * C < 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ContractionError, DomainError, NumericalFailure
from .lattice import Lattice, cond_expect, gradient

PICARD_TOL = 1e-12
MAX_ITERS = 100
SETTLE = 8


@dataclass(frozen=True)
class Scenario:
    """Feedback volatility control ``a(t_i, x_j)``.

    Build with :meth:`constant`, :meth:`feedback` (an ``(N, n_nodes)`` rate
    surface on a given lattice) or :meth:`from_function` (``fn(t, x) -> a``).
    """

    name: str
    value: float | None = None
    surface: np.ndarray | None = field(default=None, repr=False)
    fn: Callable | None = field(default=None, repr=False)

    @classmethod
    def constant(cls, a: float, name: str | None = None) -> "Scenario":
        return cls(name or f"const:{a:g}", value=float(a))

    @classmethod
    def feedback(cls, surface, name: str = "feedback") -> "Scenario":
        return cls(name, surface=np.asarray(surface, dtype=float))

    @classmethod
    def from_function(cls, fn, name: str = "function") -> "Scenario":
        return cls(name, fn=fn)

    def rates(self, lattice: Lattice, i: int, t: float) -> np.ndarray:
        n = lattice.n_nodes
        if self.value is not None:
            return np.full(n, self.value)
        if self.surface is not None:
            if self.surface.shape[1] != n:
                raise DomainError(f"scenario {self.name!r} was built on a different lattice")
            return np.array(self.surface[i], dtype=float)
        return np.broadcast_to(np.asarray(self.fn(t, lattice.x_nodes), dtype=float), (n,)).copy()

    def check(self, interval, lattice: Lattice, times) -> None:
        for i, t in enumerate(times[:-1]):
            a = self.rates(lattice, i, float(t))
            if not interval.contains(a):
                raise DomainError(
                    f"scenario {self.name!r} leaves [{interval.a_low}, {interval.a_high}] at step {i}")


@dataclass
class RbsdeSolution:
    """Nodewise surfaces of a single-scenario solve.

    ``y``, ``S`` and ``k_cum`` have shape ``(N+1, n_nodes)``; ``z``, ``dk`` and
    ``a`` have shape ``(N, n_nodes)``. ``k_cum[i]`` is the sum of ``dk`` over
    steps ``0..i-1`` at a fixed node.
    """

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    dk: np.ndarray
    S: np.ndarray
    a: np.ndarray
    picard_iters: np.ndarray
    center: int
    scenario: str = ""

    @property
    def k_cum(self) -> np.ndarray:
        out = np.zeros_like(self.y)
        np.cumsum(self.dk, axis=0, out=out[1:])
        return out

    @property
    def y0(self) -> float:
        return float(self.y[0, self.center])

    @property
    def skorohod_residual(self) -> float:
        return skorohod_residual(self)

    def rows(self):
        """Yield ``(t, x, y, z, k_cum)`` rows; ``z`` at maturity is left blank."""
        kc = self.k_cum
        for i, t in enumerate(self.t):
            for j, x in enumerate(self.x):
                z = self.z[i, j] if i < self.z.shape[0] else float("nan")
                yield float(t), float(x), float(self.y[i, j]), float(z), float(kc[i, j])


def check_contraction(inst, extra_rate: float = 0.0) -> None:
    c = inst.grid.dt * (inst.gen.lipschitz_C + extra_rate)
    if c >= 1:
        raise ContractionError(
            f"dt*C = {c:.4g} >= 1: the implicit generator step is not a contraction; "
            f"raise N above {int(inst.grid.T * (inst.gen.lipschitz_C + extra_rate)) + 1}")


def obstacle_surface(inst, lattice: Lattice) -> np.ndarray:
    t = inst.grid.nodes
    return np.stack([np.array(inst.obstacle(float(ti), lattice.x_nodes), dtype=float) for ti in t])


def fixed_point(step, start, tol: float = PICARD_TOL, max_iters: int = MAX_ITERS):
    """Node-local Picard iteration ``u <- step(idx, u[idx])``.

    A node leaves the active set once an iterate reproduces itself exactly,
    once the iterates settle into a two-step rounding cycle within ``tol``, or
    after ``SETTLE`` consecutive updates within ``tol``. The result at a node therefore never
    depends on which other nodes share the array.
    """
    u = np.array(start, dtype=float)
    back = np.full(u.size, np.nan)
    settle = np.zeros(u.size, dtype=int)
    active = np.arange(u.size)
    it = 0
    while active.size:
        if it >= max_iters:
            last = np.abs(step(active, u[active]) - u[active])
            worst = float(np.nanmax(last)) if last.size else 0.0
            if not (worst <= tol):
                raise NumericalFailure(
                    f"Picard iteration did not reach {tol:g} within {max_iters} iterations",
                    worst)
            break
        new = step(active, u[active])
        d = np.abs(new - u[active])
        close = d <= tol
        cycle = (new == back[active]) & close
        settle[active] = np.where(close, settle[active] + 1, 0)
        back[active] = u[active]
        u[active] = new
        it += 1
        active = active[(d != 0) & ~cycle & (settle[active] < SETTLE)]
    return u, it


def continuation(gen, t, x, e, z, a, dt, u):
    """``E + F(t, x, u, z, a) dt``, elementwise."""
    return e + gen(t, x, u, z, a) * dt


def implicit_step(inst, lattice: Lattice, i: int, y_next, a, *, extra=None,
                  z_method: str = "covariation", tol: float = PICARD_TOL,
                  max_iters: int = MAX_ITERS, post=None):
    """Unreflected implicit step at time index ``i``.

    Returns ``(e, z, u, iterations)`` where ``e`` already includes ``extra``
    and ``u`` solves ``u = post(e + F(u) dt)`` (``post`` defaults to identity).
    """
    t = float(inst.grid.nodes[i])
    x = lattice.x_nodes
    dt = inst.grid.dt
    a = np.broadcast_to(np.asarray(a, dtype=float), x.shape)
    e = cond_expect(lattice, y_next, a)
    if extra is not None:
        e = e + extra
    z = gradient(lattice, y_next, a, z_method)
    gen = inst.gen

    if post is None:
        def step(idx, u):
            return continuation(gen, t, x[idx], e[idx], z[idx], a[idx], dt, u)
    else:
        def step(idx, u):
            return post(idx, continuation(gen, t, x[idx], e[idx], z[idx], a[idx], dt, u))

    u, it = fixed_point(step, e, tol, max_iters)
    return e, z, u, it


def reflect(gen, t, x, e, z, a, dt, u, S):
    """Reflect the unreflected root ``u`` on the obstacle; ties keep ``dk = 0``."""
    below = u < S
    y = np.where(below, S, u)
    dk = np.zeros_like(y)
    if np.any(below):
        c = continuation(gen, t, x[below], e[below], z[below], a[below], dt, S[below])
        dk[below] = np.maximum(S[below] - c, 0.0)
    return y, dk


def solve_rbsde(inst, lattice: Lattice, scenario: Scenario, *, z_method: str = "covariation",
                picard_tol: float = PICARD_TOL, max_iters: int = MAX_ITERS,
                extra_increments=None) -> RbsdeSolution:
    """Backward reflected scheme under one volatility scenario.

    Parameters
    ----------
    extra_increments : array (N, n_nodes), optional
        Increments added to the conditional expectation before the generator
        step (the extra increasing process ``V`` of the generalised problem).
    """
    check_contraction(inst)
    times = inst.grid.nodes
    scenario.check(inst.interval, lattice, times)
    N, M, dt = inst.grid.N, lattice.n_nodes, inst.grid.dt
    x = lattice.x_nodes
    S = obstacle_surface(inst, lattice)
    y = np.empty((N + 1, M))
    z = np.empty((N, M))
    dk = np.zeros((N, M))
    arr = np.empty((N, M))
    iters = np.zeros(N, dtype=int)
    y[N] = inst.terminal(x)
    for i in range(N - 1, -1, -1):
        a = scenario.rates(lattice, i, float(times[i]))
        extra = None if extra_increments is None else extra_increments[i]
        e, z[i], u, iters[i] = implicit_step(inst, lattice, i, y[i + 1], a, extra=extra,
                                             z_method=z_method, tol=picard_tol,
                                             max_iters=max_iters)
        y[i], dk[i] = reflect(inst.gen, float(times[i]), x, e, z[i], a, dt, u, S[i])
        arr[i] = a
    return RbsdeSolution(times, x, y, z, dk, S, arr, iters, lattice.center, scenario.name)


def solve_penalized(inst, lattice: Lattice, scenario: Scenario, n: float, *,
                    z_method: str = "covariation", picard_tol: float = PICARD_TOL,
                    max_iters: int = MAX_ITERS) -> RbsdeSolution:
    """Penalised BSDE with driver ``F + n (y - S)^-`` and no reflection.

    The penalty is piecewise linear in ``y`` and is solved in closed form
    inside each Picard update, so only ``dt * C < 1`` is needed regardless of
    ``n``. The returned ``dk`` is ``n (y - S)^- dt``.
    """
    if n < 0:
        raise DomainError("penalty level must be nonnegative")
    check_contraction(inst)
    times = inst.grid.nodes
    scenario.check(inst.interval, lattice, times)
    N, M, dt = inst.grid.N, lattice.n_nodes, inst.grid.dt
    x = lattice.x_nodes
    S = obstacle_surface(inst, lattice)
    y = np.empty((N + 1, M))
    z = np.empty((N, M))
    dk = np.zeros((N, M))
    arr = np.empty((N, M))
    iters = np.zeros(N, dtype=int)
    y[N] = inst.terminal(x)
    w = n * dt
    for i in range(N - 1, -1, -1):
        a = scenario.rates(lattice, i, float(times[i]))
        Si = S[i]

        def post(idx, G, Si=Si):
            s = Si[idx]
            return np.where(G >= s, G, (G + w * s) / (1.0 + w))

        _, z[i], y[i], iters[i] = implicit_step(
            inst, lattice, i, y[i + 1], a, z_method=z_method, tol=picard_tol,
            max_iters=max_iters, post=None if n == 0 else post)
        dk[i] = n * np.maximum(Si - y[i], 0.0) * dt
        arr[i] = a
    return RbsdeSolution(times, x, y, z, dk, S, arr, iters, lattice.center,
                         f"{scenario.name}|penalty={n:g}")


def skorohod_residual(sol: RbsdeSolution) -> float:
    """``max |dk_i (y_i - S_i)|`` over steps and nodes; zero when k only acts on contact."""
    if sol.dk.size == 0:
        return 0.0
    return float(np.max(np.abs(sol.dk * (sol.y[:-1] - sol.S[:-1]))))
