"""Reflected g-supersolutions with an extra increasing process.

Three tools live here:

* :func:`solve_rbsde_with_V` runs the reflected scheme with a prescribed
  nondecreasing ``V`` added to every backward step;
* :func:`doob_meyer` splits a reflected g-supermartingale surface into its
  martingale gradient, the reflection ``k`` (active on the obstacle only) and
  the remaining increasing part ``V``, and estimates ``V`` independently
  through a monotone penalisation sequence;
* :func:`downcrossings` and :func:`downcrossing_bound_experiment` count band
  descents of simulated positive supermartingales.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, InvalidInstanceError
from .lattice import Lattice, cond_expect, gradient
from .rbsde import (MAX_ITERS, PICARD_TOL, RbsdeSolution, Scenario, check_contraction,
                    continuation, fixed_point, obstacle_surface, solve_rbsde)
from .soref import problem_scale

ACT_TOL_REL = 1e-12
SUPERMART_TOL_REL = 1e-11
CLT_Z95 = 1.6448536269514722


@dataclass(frozen=True)
class VProcessSpec:
    """Cumulative increasing process on the lattice, shape ``(N+1, n_nodes)``."""

    V: np.ndarray = field(repr=False)

    def __post_init__(self):
        V = np.asarray(self.V, dtype=float)
        if V.ndim != 2 or V.shape[0] < 2:
            raise InvalidInstanceError("V must be a (N+1, n_nodes) surface")
        if not np.all(np.isfinite(V)):
            raise InvalidInstanceError("V must be finite")
        if np.any(V[0] != 0.0):
            raise InvalidInstanceError("V must start at zero")
        if np.any(np.diff(V, axis=0) < 0):
            raise InvalidInstanceError("V must be nondecreasing in time at every node")
        object.__setattr__(self, "V", V)

    @classmethod
    def zero(cls, lattice: Lattice, N: int) -> "VProcessSpec":
        return cls(np.zeros((N + 1, lattice.n_nodes)))

    @classmethod
    def linear(cls, lattice: Lattice, N: int, total: float) -> "VProcessSpec":
        """``V_i = total * i / N`` at every node."""
        ramp = total * np.arange(N + 1, dtype=float) / N
        return cls(np.repeat(ramp[:, None], lattice.n_nodes, axis=1))

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.V, axis=0)


def solve_rbsde_with_V(inst, lattice: Lattice, scenario: Scenario, v: VProcessSpec,
                       **kwargs) -> RbsdeSolution:
    """Reflected scheme with ``e_i`` replaced by ``e_i + (V_{i+1} - V_i)``."""
    if v.V.shape != (inst.grid.N + 1, lattice.n_nodes):
        raise DomainError(f"V has shape {v.V.shape}, expected "
                          f"{(inst.grid.N + 1, lattice.n_nodes)}")
    dV = v.increments
    if not np.any(dV):
        return solve_rbsde(inst, lattice, scenario, **kwargs)
    return solve_rbsde(inst, lattice, scenario, extra_increments=dV, **kwargs)


# ---------------------------------------------------------------------------
# Doob-Meyer

@dataclass
class PenaltyRun:
    n: float
    y: np.ndarray = field(repr=False)
    V_cum: np.ndarray = field(repr=False)
    k_cum: np.ndarray = field(repr=False)
    max_gap: float


@dataclass
class DoobMeyerDecomposition:
    """Exact one-step split of a supermartingale surface plus penalisation estimates.

    ``k_cum`` and ``V_cum`` come from ``dA_i = Y_i - E[Y_{i+1}] - g(Y_i, z_i) dt``,
    assigned to ``k`` on contact nodes and to ``V`` elsewhere. ``penalized``
    keeps one :class:`PenaltyRun` per schedule level.
    """

    z: np.ndarray = field(repr=False)
    k_cum: np.ndarray = field(repr=False)
    V_cum: np.ndarray = field(repr=False)
    reconstruction_residual: float
    disjoint: bool
    center: int
    scale: float
    penalized: list = field(default_factory=list, repr=False)

    @property
    def V_estimate(self) -> np.ndarray:
        """Penalisation estimate of ``V`` at the largest level of the schedule."""
        return self.penalized[-1].V_cum

    @property
    def gap_trend(self) -> list:
        return [r.max_gap for r in self.penalized]

    @property
    def gap_nonincreasing(self) -> bool:
        """Monotone trend of ``max(Y - y^n)`` up to roundoff (``1e-12 * scale``)."""
        g, tol = self.gap_trend, ACT_TOL_REL * self.scale
        return all(b <= a + tol for a, b in zip(g, g[1:]))

    @property
    def y_nondecreasing_in_n(self) -> bool:
        runs, tol = self.penalized, ACT_TOL_REL * self.scale
        return all(bool(np.all(b.y >= a.y - tol)) for a, b in zip(runs, runs[1:]))

    def summary(self) -> dict:
        c = self.center
        return {
            "reconstruction_residual": self.reconstruction_residual,
            "disjoint": self.disjoint,
            "V_T_split": float(self.V_cum[-1, c]),
            "k_T_split": float(self.k_cum[-1, c]),
            "penalty_levels": [r.n for r in self.penalized],
            "V_T_penalized": [float(r.V_cum[-1, c]) for r in self.penalized],
            "max_gap": self.gap_trend,
            "gap_nonincreasing": self.gap_nonincreasing,
            "y_nondecreasing_in_n": self.y_nondecreasing_in_n,
        }


def _penalized_reflected(inst, lattice, scenario, Y, S, n, tol, max_iters):
    """Reflected solve with driver ``g + n (Y - y)`` and terminal ``Y_T``."""
    times = inst.grid.nodes
    N, dt = inst.grid.N, inst.grid.dt
    x = lattice.x_nodes
    gen = inst.gen
    w = n * dt
    y = np.empty_like(Y)
    dk = np.zeros((N, Y.shape[1]))
    y[N] = Y[N]
    for i in range(N - 1, -1, -1):
        t = float(times[i])
        a = scenario.rates(lattice, i, t)
        e = cond_expect(lattice, y[i + 1], a)
        z = gradient(lattice, y[i + 1], a)
        Yi = Y[i]

        def step(idx, u):
            G = continuation(gen, t, x[idx], e[idx], z[idx], a[idx], dt, u)
            return (G + w * Yi[idx]) / (1.0 + w)

        u, _ = fixed_point(step, e, tol, max_iters)
        below = u < S[i]
        y[i] = np.where(below, S[i], u)
        if np.any(below):
            s = S[i][below]
            c = continuation(gen, t, x[below], e[below], z[below], a[below], dt, s)
            dk[i][below] = np.maximum(s - c - w * (Yi[below] - s), 0.0)
    return y, dk


def _cum(inc: np.ndarray) -> np.ndarray:
    out = np.zeros((inc.shape[0] + 1, inc.shape[1]))
    np.cumsum(inc, axis=0, out=out[1:])
    return out


def doob_meyer(Y, inst, lattice: Lattice, scenario: Scenario, n_schedule=(16, 64, 256), *,
               contact_tol: float | None = None, picard_tol: float = PICARD_TOL,
               max_iters: int = MAX_ITERS) -> DoobMeyerDecomposition:
    """Decompose a reflected g-supermartingale surface ``Y`` under one scenario.

    ``Y`` must sit above the obstacle and satisfy the one-step supermartingale
    inequality ``Y_i >= E[Y_{i+1}] + g(Y_i, z_i) dt`` (which, since
    ``u -> u - g(u) dt`` is increasing, means ``Y`` dominates the reflected
    g-solution started from ``Y_{i+1}``). The first step violating either
    condition is named in the :class:`DomainError`.
    """
    check_contraction(inst)
    Y = np.asarray(Y, dtype=float)
    N, M, dt = inst.grid.N, lattice.n_nodes, inst.grid.dt
    if Y.shape != (N + 1, M):
        raise DomainError(f"Y has shape {Y.shape}, expected {(N + 1, M)}")
    if not np.all(np.isfinite(Y)):
        raise DomainError("Y contains non-finite values")
    scenario.check(inst.interval, lattice, inst.grid.nodes)
    scale = max(problem_scale(inst, lattice), float(np.max(np.abs(Y))))
    sm_tol = SUPERMART_TOL_REL * scale
    if contact_tol is None:
        contact_tol = 1e-8 * scale
    S = obstacle_surface(inst, lattice)
    times = inst.grid.nodes
    x = lattice.x_nodes

    under = np.nonzero(np.any(Y[:-1] < S[:-1] - sm_tol, axis=1))[0]
    z = np.empty((N, M))
    dA = np.empty((N, M))
    E = np.empty((N, M))
    G = np.empty((N, M))
    for i in range(N):
        t = float(times[i])
        a = scenario.rates(lattice, i, t)
        E[i] = cond_expect(lattice, Y[i + 1], a)
        z[i] = gradient(lattice, Y[i + 1], a)
        G[i] = inst.gen(t, x, Y[i], z[i], a) * dt
        dA[i] = Y[i] - (E[i] + G[i])
    bad = np.nonzero(np.any(dA < -sm_tol, axis=1))[0]
    first = min([int(v[0]) for v in (under, bad) if v.size], default=None)
    if first is not None:
        why = "below the obstacle" if under.size and under[0] == first else \
            "not a g-supermartingale (negative increasing part)"
        raise DomainError(f"input surface is {why} at time step {first}")

    dA = np.maximum(dA, 0.0)
    contact = np.abs(Y[:-1] - S[:-1]) <= contact_tol
    dk = np.where(contact, dA, 0.0)
    dV = np.where(contact, 0.0, dA)
    residual = float(np.max(np.abs(Y[:-1] - (E + G + dV + dk)))) if N else 0.0
    act = ACT_TOL_REL * scale
    disjoint = not bool(np.any((dk > act) & (dV > act)))

    runs = []
    for n in sorted(float(v) for v in n_schedule):
        if n <= 0:
            raise DomainError("penalty levels must be positive")
        yn, dkn = _penalized_reflected(inst, lattice, scenario, Y, S, n, picard_tol, max_iters)
        gap = Y - yn
        runs.append(PenaltyRun(n, yn, _cum(n * gap[:-1] * dt), _cum(dkn),
                               float(np.max(gap))))
    return DoobMeyerDecomposition(z, _cum(dk), _cum(dV), residual, disjoint,
                                  lattice.center, scale, runs)


def ramp_surface(sol: RbsdeSolution, c: float, T: float) -> np.ndarray:
    """``y + c (T - t)``: a solved surface with a known injected drift."""
    return sol.y + c * (T - sol.t)[:, None]


# ---------------------------------------------------------------------------
# downcrossings

def _check_band(a: float, b: float) -> None:
    if not (0 <= a < b):
        raise DomainError(f"band needs 0 <= a < b, got [{a}, {b}]")


def downcrossings(path, a: float, b: float) -> int:
    """Completed descents from ``>= b`` to ``<= a`` along ``path``."""
    _check_band(a, b)
    armed = False
    count = 0
    for v in np.asarray(path, dtype=float):
        if armed:
            if v <= a:
                count += 1
                armed = False
        elif v >= b:
            armed = True
    return count


@dataclass
class DowncrossingReport:
    band: tuple
    counts: np.ndarray = field(repr=False)
    mean: float = 0.0
    bound: float = 0.0
    clt_margin: float = 0.0
    mu: float = 0.0
    passed: bool | None = None
    seed: int | None = None

    def to_dict(self) -> dict:
        return {"band": list(self.band), "n_paths": int(self.counts.size), "mean": self.mean,
                "bound": self.bound, "clt_margin": self.clt_margin, "mu": self.mu,
                "passed": self.passed, "seed": self.seed,
                "max_count": int(self.counts.max()) if self.counts.size else 0}


def simulate_supermartingale_paths(n_paths: int, n_steps: int, y0: float, sigma: float,
                                   shrink: float, seed: int) -> np.ndarray:
    """Positive supermartingale paths ``Y_{j+1} = Y_j (1 + sigma e_j)(1 - shrink)``.

    ``e_j`` are fair signs. Path ``p`` draws from its own stream spawned from
    ``seed``, so any subset of paths is reproducible on its own.
    """
    if not (0 <= sigma < 1 and 0 <= shrink < 1 and y0 > 0):
        raise DomainError("need y0 > 0, 0 <= sigma < 1 and 0 <= shrink < 1")
    streams = np.random.SeedSequence(seed).spawn(n_paths)
    signs = np.stack([np.random.default_rng(s).integers(0, 2, n_steps) for s in streams]) \
        if n_paths else np.zeros((0, n_steps))
    factors = (1.0 + sigma * (2.0 * signs - 1.0)) * (1.0 - shrink)
    paths = np.empty((n_paths, n_steps + 1))
    paths[:, 0] = y0
    np.cumprod(factors, axis=1, out=paths[:, 1:])
    paths[:, 1:] *= y0
    return paths


def downcrossing_bound_experiment(band=(0.5, 1.5), n_paths: int = 10_000, *, paths=None,
                                  y0: float = 2.0, n_steps: int = 50, sigma: float = 0.3,
                                  shrink: float = 0.01, seed: int = 0, mu: float = 0.0,
                                  T: float = 1.0) -> DowncrossingReport:
    """Empirical mean downcrossings against ``E[Y_0 ^ b] / (b - a)``.

    With ``mu = 0`` the verdict uses a one-sided 95% normal margin on the
    sample mean. For ``mu > 0`` the right side is reported as
    ``min(Y_0, b) exp(mu T) / (b - a)`` without a verdict, since no explicit
    constant is available for that case.
    """
    a, b = float(band[0]), float(band[1])
    _check_band(a, b)
    if mu < 0:
        raise DomainError("mu must be nonnegative")
    used_seed = None
    if paths is None:
        paths = simulate_supermartingale_paths(n_paths, n_steps, y0, sigma, shrink, seed)
        used_seed = seed
    paths = np.atleast_2d(np.asarray(paths, dtype=float))
    counts = np.array([downcrossings(p, a, b) for p in paths], dtype=int)
    n = counts.size
    mean = float(counts.mean()) if n else 0.0
    sd = float(counts.std(ddof=1)) if n > 1 else 0.0
    margin = CLT_Z95 * sd / math.sqrt(n) if n else 0.0
    start = float(np.mean(np.minimum(paths[:, 0], b))) if n else 0.0
    bound = start / (b - a)
    passed = None
    if mu == 0:
        passed = bool(mean <= bound + margin)
    else:
        bound *= math.exp(mu * T)
    return DowncrossingReport((a, b), counts, mean, bound, margin, mu, passed, used_seed)
