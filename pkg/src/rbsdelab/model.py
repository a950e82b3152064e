"""Problem instances: time grid, volatility band, generator, obstacle, terminal data.

All maps are vectorised over the state argument ``x`` (and over ``y``, ``z``,
``a`` for generators); ``t`` is always a scalar time. Every ``*Spec`` part keeps
the ``kind``/``params`` pair it was built from so an instance can be written
back to JSON.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Callable, NamedTuple, Sequence

import numpy as np

from .errors import InvalidInstanceError

GeneratorFn = Callable[[float, np.ndarray, np.ndarray, np.ndarray, np.ndarray], np.ndarray]
ObstacleFn = Callable[[float, np.ndarray], np.ndarray]
TerminalFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_0 = 0 < ... < t_N = T``."""

    T: float
    N: int

    def __post_init__(self):
        if not (isinstance(self.N, (int, np.integer)) and self.N >= 1):
            raise InvalidInstanceError(f"N must be an integer >= 1, got {self.N!r}")
        if not (math.isfinite(self.T) and self.T > 0):
            raise InvalidInstanceError(f"horizon T must be positive, got {self.T!r}")

    @property
    def dt(self) -> float:
        return self.T / self.N

    @property
    def nodes(self) -> np.ndarray:
        t = np.arange(self.N + 1) * self.dt
        t[-1] = self.T
        return t


@dataclass(frozen=True)
class UncertaintyInterval:
    """Band ``[a_low, a_high]`` of admissible variance rates.

    ``a_low == 0`` is accepted here so that :func:`validate_instance` can report
    it; ``a_low > a_high`` or negative rates are rejected outright.
    """

    a_low: float
    a_high: float

    def __post_init__(self):
        if not (math.isfinite(self.a_low) and math.isfinite(self.a_high)):
            raise InvalidInstanceError("variance bounds must be finite")
        if self.a_low < 0:
            raise InvalidInstanceError(f"a_low must be nonnegative, got {self.a_low}")
        if self.a_low > self.a_high:
            raise InvalidInstanceError(
                f"a_low={self.a_low} exceeds a_high={self.a_high}")

    @property
    def degenerate(self) -> bool:
        return self.a_low == self.a_high

    def default_grid(self) -> list[float]:
        if self.degenerate:
            return [self.a_low]
        return [self.a_low, 0.5 * (self.a_low + self.a_high), self.a_high]

    def contains(self, a, rtol: float = 1e-12) -> bool:
        a = np.asarray(a, dtype=float)
        slack = rtol * max(1.0, self.a_high)
        return bool(np.all((a >= self.a_low - slack) & (a <= self.a_high + slack)))


@dataclass(frozen=True)
class GeneratorSpec:
    """Generator ``F(t, x, y, z, a)`` with a declared Lipschitz constant."""

    F: GeneratorFn
    lipschitz_C: float
    kind: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (self.lipschitz_C >= 0):
            raise InvalidInstanceError("lipschitz_C must be nonnegative")

    def __call__(self, t, x, y, z, a):
        return self.F(t, x, y, z, a)


@dataclass(frozen=True)
class HamiltonianSpec:
    """Hamiltonian ``H(t, x, y, z, gamma)`` and the finite set standing in for D_H."""

    H: Callable[..., Any]
    gamma_grid: tuple

    def __post_init__(self):
        object.__setattr__(self, "gamma_grid", tuple(float(g) for g in self.gamma_grid))


@dataclass(frozen=True)
class ObstacleSpec:
    S: ObstacleFn
    kind: str = "custom"
    params: dict = field(default_factory=dict)

    def __call__(self, t, x):
        return np.broadcast_to(np.asarray(self.S(t, x), dtype=float), np.shape(x))


@dataclass(frozen=True)
class TerminalSpec:
    xi: TerminalFn
    kind: str = "custom"
    params: dict = field(default_factory=dict)

    def __call__(self, x):
        return np.broadcast_to(np.asarray(self.xi(x), dtype=float), np.shape(x))


@dataclass(frozen=True)
class Instance:
    grid: TimeGrid
    interval: UncertaintyInterval
    gen: GeneratorSpec
    obstacle: ObstacleSpec
    terminal: TerminalSpec
    x0: float = 0.0

    def replace(self, **changes) -> "Instance":
        kw = dict(grid=self.grid, interval=self.interval, gen=self.gen,
                  obstacle=self.obstacle, terminal=self.terminal, x0=self.x0)
        kw.update(changes)
        return Instance(**kw)

    def to_dict(self) -> dict:
        for part in (self.gen, self.obstacle, self.terminal):
            if part.kind == "custom":
                raise InvalidInstanceError("custom callables cannot be serialised")
        return {
            "grid": {"T": self.grid.T, "N": self.grid.N},
            "interval": {"a_low": self.interval.a_low, "a_high": self.interval.a_high},
            "generator": {"kind": self.gen.kind, "params": dict(self.gen.params),
                          "lipschitz_C": self.gen.lipschitz_C},
            "obstacle": {"kind": self.obstacle.kind, "params": dict(self.obstacle.params)},
            "terminal": {"kind": self.terminal.kind, "params": dict(self.terminal.params)},
            "x0": self.x0,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Instance":
        try:
            grid = TimeGrid(float(doc["grid"]["T"]), int(doc["grid"]["N"]))
            interval = UncertaintyInterval(float(doc["interval"]["a_low"]),
                                           float(doc["interval"]["a_high"]))
            g = doc.get("generator", {"kind": "zero"})
            gen = make_generator(g["kind"], g.get("params", {}), g.get("lipschitz_C"))
            o = doc["obstacle"]
            obstacle = make_obstacle(o["kind"], o.get("params", {}))
            te = doc["terminal"]
            terminal = make_terminal(te["kind"], te.get("params", {}))
            x0 = float(doc.get("x0", 0.0))
        except (KeyError, TypeError) as exc:
            raise InvalidInstanceError(f"malformed instance document: {exc!r}") from exc
        return cls(grid, interval, gen, obstacle, terminal, x0)


def load_instance(path) -> Instance:
    with open(path) as fh:
        return Instance.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# built-in registry

def _poly(coeffs: Sequence[float], u):
    acc = np.zeros_like(np.asarray(u, dtype=float))
    for c in reversed(list(coeffs)):
        acc = acc * u + c
    return acc


def black_scholes_drift(rate: float, a, dx: float | None = None):
    """Coefficient of ``z`` in the log-price pricing generator.

    With ``dx=None`` this is the diffusion limit ``rate - a/2``. With a lattice
    step it is the value that makes ``exp(x)`` grow by exactly ``1 + rate*dt``
    in one trinomial step, so discounted prices are exact lattice martingales.
    """
    a = np.asarray(a, dtype=float)
    if dx is None:
        return rate - 0.5 * a
    return rate * dx / math.sinh(dx) - a * math.tanh(0.5 * dx) / dx


def black_scholes_lipschitz(rate: float, a_low: float, a_high: float,
                            dx: float | None = None) -> float:
    """Lipschitz constant of the pricing generator in ``(y, sqrt(a) z)``."""
    a = np.linspace(a_low, a_high, 257)
    a = a[a > 0]
    zpart = float(np.max(np.abs(black_scholes_drift(rate, a, dx)) / np.sqrt(a))) if a.size else 0.0
    return max(abs(rate), zpart)


def make_generator(kind: str, params: dict | None = None,
                   lipschitz_C: float | None = None) -> GeneratorSpec:
    params = dict(params or {})
    if kind == "zero":
        def F(t, x, y, z, a):
            return np.zeros(np.shape(y))
        C = 0.0
    elif kind == "linear_discount":
        r = float(params.get("rate", 0.0))
        cz = float(params.get("z_coeff", 0.0))
        f0 = float(params.get("const", 0.0))

        def F(t, x, y, z, a):
            return -r * y + cz * z + f0
        # the z part of the constant depends on the band; declare it explicitly
        C = abs(r) if cz == 0.0 else float("nan")
    elif kind == "black_scholes":
        r = float(params.get("rate", 0.0))
        mu = float(params.get("drift", 0.0))
        dx = params.get("dx")
        dx = None if dx is None else float(dx)

        def F(t, x, y, z, a):
            # wealth drift -r*y - (mu - r)*z plus the compensation that moves
            # the driftless lattice onto an asset with drift mu; mu cancels
            # analytically but is kept explicit.
            m = black_scholes_drift(r, a, dx)
            return -r * y - (mu - r) * z + (mu - r + m) * z
        if "a_low" in params and "a_high" in params:
            C = black_scholes_lipschitz(r, float(params["a_low"]), float(params["a_high"]), dx)
        else:
            C = float("nan")
    elif kind == "custom_polynomial":
        yc = [float(c) for c in params.get("y_coeffs", [0.0])]
        cz = float(params.get("z_coeff", 0.0))

        def F(t, x, y, z, a):
            return _poly(yc, y) + cz * z
        C = float("nan")
    else:
        raise InvalidInstanceError(f"unknown generator kind {kind!r}")
    if lipschitz_C is not None:
        C = float(lipschitz_C)
    elif math.isnan(C):
        raise InvalidInstanceError(f"generator kind {kind!r} needs an explicit lipschitz_C")
    return GeneratorSpec(F, C, kind, params)


def make_obstacle(kind: str, params: dict | None = None) -> ObstacleSpec:
    params = dict(params or {})
    if kind == "zero":
        fn = lambda t, x: np.zeros(np.shape(x))  # noqa: E731
    elif kind == "constant":
        v = float(params["value"])
        fn = lambda t, x: np.full(np.shape(x), v)  # noqa: E731
    elif kind in ("american_put", "american_call"):
        K = float(params["strike"])
        p0 = float(params.get("price0", 1.0))
        if kind == "american_put":
            fn = lambda t, x: np.maximum(K - p0 * np.exp(x), 0.0)  # noqa: E731
        else:
            fn = lambda t, x: np.maximum(p0 * np.exp(x) - K, 0.0)  # noqa: E731
    elif kind == "custom_polynomial":
        coeffs = [float(c) for c in params["coeffs"]]
        fn = lambda t, x: _poly(coeffs, np.asarray(x, dtype=float))  # noqa: E731
    else:
        raise InvalidInstanceError(f"unknown obstacle kind {kind!r}")
    return ObstacleSpec(fn, kind, params)


def make_terminal(kind: str, params: dict | None = None) -> TerminalSpec:
    obs = make_obstacle(kind, params)
    return TerminalSpec(lambda x, _S=obs.S: _S(0.0, x), obs.kind, obs.params)


# ---------------------------------------------------------------------------
# operations

class ConjugateValue(NamedTuple):
    value: float
    gamma: float
    divergent: bool


def conjugate_generator(h: HamiltonianSpec, t, x, y, z, a) -> ConjugateValue:
    """Evaluate ``sup_gamma { a*gamma/2 - H(t, x, y, z, gamma) }`` over the grid.

    The first maximiser in grid order wins ties. ``divergent`` is set when the
    maximiser sits on either end of the (sorted) grid, i.e. when the true
    supremum over an unbounded D_H may be larger than what the grid shows.
    """
    if len(h.gamma_grid) == 0:
        raise InvalidInstanceError("gamma_grid is empty")
    if not a > 0:
        raise InvalidInstanceError(f"variance rate must be positive, got {a}")
    best, best_g = -math.inf, h.gamma_grid[0]
    for g in h.gamma_grid:
        val = 0.5 * a * g - float(h.H(t, x, y, z, g))
        if val > best:
            best, best_g = val, g
    lo, hi = min(h.gamma_grid), max(h.gamma_grid)
    divergent = len(h.gamma_grid) > 1 and best_g in (lo, hi)
    return ConjugateValue(best, best_g, divergent)


def generator_from_hamiltonian(h: HamiltonianSpec, lipschitz_C: float) -> GeneratorSpec:
    """Wrap the grid conjugate of ``h`` as a vectorised generator."""
    gam = np.asarray(h.gamma_grid, dtype=float)
    if gam.size == 0:
        raise InvalidInstanceError("gamma_grid is empty")

    def F(t, x, y, z, a):
        x, y, z, a = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (x, y, z, a)))
        out = np.full(y.shape, -np.inf)
        for g in gam:
            out = np.maximum(out, 0.5 * a * g - np.asarray(h.H(t, x, y, z, g), dtype=float))
        return out

    return GeneratorSpec(F, lipschitz_C, "custom", {})


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    max_lipschitz_ratio: float = 0.0

    @property
    def conforming(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {"conforming": self.conforming, "violations": list(self.violations),
                "warnings": list(self.warnings),
                "max_lipschitz_ratio": self.max_lipschitz_ratio}


def lipschitz_probe(gen: GeneratorSpec, t_nodes, x_nodes, interval: UncertaintyInterval,
                    probe_range: float = 10.0, n_samples: int = 4000, seed: int = 0) -> float:
    """Largest observed ``|dF| / (|dy| + sqrt(a)|dz|)`` on random pairs."""
    rng = np.random.default_rng(seed)
    t = rng.choice(np.asarray(t_nodes), n_samples)
    x = rng.choice(np.asarray(x_nodes), n_samples)
    a = rng.uniform(max(interval.a_low, 1e-12), max(interval.a_high, 1e-12), n_samples)
    y1, y2 = rng.uniform(-probe_range, probe_range, (2, n_samples))
    z1, z2 = rng.uniform(-probe_range, probe_range, (2, n_samples))
    worst = 0.0
    # t is scalar in the generator contract, so evaluate per distinct time
    for tv in np.unique(t):
        m = t == tv
        f1 = np.asarray(gen(float(tv), x[m], y1[m], z1[m], a[m]), dtype=float)
        f2 = np.asarray(gen(float(tv), x[m], y2[m], z2[m], a[m]), dtype=float)
        den = np.abs(y1[m] - y2[m]) + np.sqrt(a[m]) * np.abs(z1[m] - z2[m])
        ok = den > 0
        if np.any(ok):
            worst = max(worst, float(np.max(np.abs(f1 - f2)[ok] / den[ok])))
    return worst


def validate_instance(inst: Instance, lattice=None, probe_range: float = 10.0,
                      slack: float = 1e-6) -> ValidationReport:
    """Report violated structural checks; never raises on bad data."""
    from .lattice import build_lattice

    rep = ValidationReport()
    if inst.interval.a_low <= 0:
        rep.violations.append("degenerate ellipticity: a_low must be > 0")
    if inst.grid.dt * inst.gen.lipschitz_C >= 1:
        rep.violations.append(
            f"picard contraction: dt*C = {inst.grid.dt * inst.gen.lipschitz_C:.3g} >= 1")
    if lattice is None:
        lattice = build_lattice(inst.grid, inst.interval, inst.x0)
    x = lattice.x_nodes
    ratio = lipschitz_probe(inst.gen, inst.grid.nodes, x, inst.interval, probe_range)
    rep.max_lipschitz_ratio = ratio
    if ratio > inst.gen.lipschitz_C * (1 + slack) + 1e-12:
        rep.violations.append(
            f"lipschitz: probed ratio {ratio:.6g} exceeds declared C={inst.gen.lipschitz_C}")
    f0_ok = s_ok = True
    for t in inst.grid.nodes:
        for a in {inst.interval.a_low, inst.interval.a_high}:
            f0 = inst.gen(float(t), x, np.zeros_like(x), np.zeros_like(x), np.full_like(x, a))
            f0_ok &= bool(np.all(np.isfinite(f0)))
        s_ok &= bool(np.all(np.isfinite(np.maximum(inst.obstacle(float(t), x), 0.0))))
    if not f0_ok:
        rep.violations.append("integrability: F(t, x, 0, 0, a) not finite on the lattice")
    if not s_ok:
        rep.violations.append("integrability: obstacle positive part not finite on the lattice")
    xi = inst.terminal(x)
    if not np.all(np.isfinite(xi)):
        rep.violations.append("terminal payoff not finite on the lattice")
    elif np.any(xi < inst.obstacle(inst.grid.T, x)):
        rep.warnings.append("terminal below obstacle: xi < S(T, x) at some nodes")
    return rep
