"""Recombining trinomial lattice for the canonical process.

One uniform spatial grid serves the whole volatility band: the transition
probabilities depend on the variance rate ``a`` through

    p_u = p_d = a*dt / (2*dx**2),    p_m = 1 - a*dt/dx**2,

so every conditional expectation below is exact for martingale increments of
variance ``a*dt``. Values beyond the edge nodes are extended by their edge
value (clamped extension).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class Lattice:
    x_nodes: np.ndarray
    dx: float
    dt: float
    a_max: float
    a_min: float = 0.0
    n_steps: int = 1

    @property
    def n_nodes(self) -> int:
        return self.x_nodes.size

    @property
    def center(self) -> int:
        """Index of the initial state (the lattice is built symmetric around it)."""
        return self.n_nodes // 2

    @property
    def stability_margin(self) -> float:
        """``1 - a_max*dt/dx**2``; the middle probability at the top of the band."""
        return 1.0 - self.a_max * self.dt / self.dx ** 2

    def probabilities(self, a):
        """Return ``(p_u, p_m, p_d)`` for variance rate(s) ``a``."""
        p = np.asarray(a, dtype=float) * self.dt / (2.0 * self.dx ** 2)
        return p, 1.0 - 2.0 * p, p

    def summary(self) -> dict:
        return {"nodes": int(self.n_nodes), "dx": self.dx, "dt": self.dt,
                "x_min": float(self.x_nodes[0]), "x_max": float(self.x_nodes[-1]),
                "stability_margin": self.stability_margin}


def build_lattice(grid, interval, x0: float = 0.0, width_sigmas: float = 6.0) -> Lattice:
    """Smallest stable uniform lattice covering ``x0 +- width_sigmas*sqrt(a_high*T)``.

    ``dx`` is the smallest step with ``dx**2 >= a_high*dt``; the half-width is
    rounded up to a whole number of steps. ``width_sigmas=None`` sizes the
    lattice to the full domain of dependence (``N`` steps each side), which
    removes every boundary effect on the value at ``(0, x0)``.
    """
    dt = grid.dt
    a_high = float(interval.a_high)
    if a_high <= 0:
        raise DomainError("a_high must be positive to size the lattice")
    dx = math.sqrt(a_high * dt)
    while dx * dx < a_high * dt:
        dx = math.nextafter(dx, math.inf)
    if width_sigmas is None:
        n_half = grid.N
    else:
        if not width_sigmas > 0:
            raise DomainError("width_sigmas must be positive")
        half = width_sigmas * math.sqrt(a_high * grid.T)
        n_half = max(1, math.ceil(half / dx - 1e-9))
    x = x0 + dx * np.arange(-n_half, n_half + 1, dtype=float)
    x[n_half] = x0
    return Lattice(x, dx, dt, a_high, float(interval.a_low), grid.N)


def _check_rate(lattice: Lattice, a) -> None:
    a = np.asarray(a, dtype=float)
    slack = 1e-12 * max(1.0, lattice.a_max)
    if np.any(a < lattice.a_min - slack) or np.any(a > lattice.a_max + slack):
        raise DomainError(
            f"variance rate outside [{lattice.a_min}, {lattice.a_max}]: "
            f"got range [{a.min()}, {a.max()}]")


def _neighbours(v: np.ndarray):
    up = np.empty_like(v)
    dn = np.empty_like(v)
    up[:-1] = v[1:]
    up[-1] = v[-1]
    dn[1:] = v[:-1]
    dn[0] = v[0]
    return up, dn


def cond_expect(lattice: Lattice, values, a, node_index=None):
    """One-step conditional expectation of next-time ``values``.

    ``a`` may be a scalar or one rate per node. Returns the full array, or a
    float when ``node_index`` is given.
    """
    v = np.asarray(values, dtype=float)
    _check_rate(lattice, a)
    p = np.asarray(a, dtype=float) * lattice.dt / (2.0 * lattice.dx ** 2)
    up, dn = _neighbours(v)
    # written as increments so constants are reproduced exactly
    out = v + p * ((up - v) + (dn - v))
    if node_index is not None:
        return float(np.broadcast_to(out, v.shape)[node_index])
    return np.broadcast_to(out, v.shape).copy()


def cond_covariation(lattice: Lattice, values, a):
    """``E[v(x') * (x' - x)]`` for one step, per node."""
    v = np.asarray(values, dtype=float)
    p = np.asarray(a, dtype=float) * lattice.dt / (2.0 * lattice.dx ** 2)
    up, dn = _neighbours(v)
    return p * lattice.dx * (up - dn)


def gradient(lattice: Lattice, values, a, method: str = "covariation"):
    """The ``z`` estimate: covariation divided by ``a*dt``, or a central difference."""
    v = np.asarray(values, dtype=float)
    if method == "central":
        up, dn = _neighbours(v)
        return np.broadcast_to((up - dn) / (2.0 * lattice.dx), v.shape).copy()
    if method != "covariation":
        raise DomainError(f"unknown gradient method {method!r}")
    a = np.broadcast_to(np.asarray(a, dtype=float), v.shape)
    cov = cond_covariation(lattice, v, a)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = cov / (a * lattice.dt)
    if np.any(a <= 0):
        up, dn = _neighbours(v)
        z = np.where(a > 0, z, (up - dn) / (2.0 * lattice.dx))
    return z


def forward_step(lattice: Lattice, dist, a):
    """Push a node distribution one step forward (adjoint of :func:`cond_expect`)."""
    d = np.asarray(dist, dtype=float)
    p = np.broadcast_to(np.asarray(a, dtype=float) * lattice.dt / (2.0 * lattice.dx ** 2), d.shape)
    out = (1.0 - 2.0 * p) * d
    out[1:] += (p * d)[:-1]
    out[-1] += p[-1] * d[-1]
    out[:-1] += (p * d)[1:]
    out[0] += p[0] * d[0]
    return out


def expected_total(lattice: Lattice, increments, rates, node: int | None = None):
    """Lattice expectation of ``sum_i increments[i]`` along the rate surface.

    Computed backward as ``W_N = 0``, ``W_i = E^{a_i}[W_{i+1}] + increments[i]``;
    returns ``W_0`` at ``node`` (default: the centre) or the whole ``W_0`` row.
    """
    inc = np.asarray(increments, dtype=float)
    W = np.zeros(inc.shape[1])
    for i in range(inc.shape[0] - 1, -1, -1):
        W = cond_expect(lattice, W, rates[i]) + inc[i]
    if node is None:
        node = lattice.center
    return float(W[node]) if node != "all" else W
