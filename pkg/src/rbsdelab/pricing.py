"""American options under volatility uncertainty.

The asset is ``price0 * exp(x)`` with ``x`` the driftless lattice state whose
variance rate ranges over the band. Pricing runs on the log-price lattice
through the linear generator

    F(y, z, a) = -r y - (mu - r) z + (mu - r + m(a)) z,

where the first two terms are the wealth drift and the last compensates the
lattice drift (``m(a)`` is the exact one-step martingale correction, close to
``r - a/2``). The physical drift ``mu`` cancels; it is kept explicit so the
wealth form stays visible. The output is reported as a robust superhedging
upper value, not as the smallest superreplicating price.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InvalidInstanceError
from .lattice import build_lattice
from .model import (Instance, ObstacleSpec, TerminalSpec, TimeGrid, UncertaintyInterval,
                    black_scholes_lipschitz, make_generator, make_obstacle)
from .rbsde import Scenario
from .soref import DPP_TOL, StoppingSurface, epsilon_stopping, solve_2rbsde_dpp

LABEL = "robust superhedging upper value"


@dataclass(frozen=True)
class MarketSpec:
    rate: float
    drift: float
    payoff_kind: str
    strike: float
    price0: float
    payoff: Callable | None = field(default=None, repr=False)

    def __post_init__(self):
        if not self.price0 > 0:
            raise InvalidInstanceError("price0 must be positive")
        if self.payoff_kind not in ("put", "call", "custom"):
            raise InvalidInstanceError(f"unknown payoff kind {self.payoff_kind!r}")
        if self.payoff_kind == "custom" and self.payoff is None:
            raise InvalidInstanceError("custom payoff needs a callable payoff(t, price)")

    def exercise_value(self, t, price):
        if self.payoff_kind == "put":
            return np.maximum(self.strike - price, 0.0)
        if self.payoff_kind == "call":
            return np.maximum(price - self.strike, 0.0)
        return np.asarray(self.payoff(t, price), dtype=float)

    def obstacle(self) -> ObstacleSpec:
        if self.payoff_kind in ("put", "call"):
            return make_obstacle(f"american_{self.payoff_kind}",
                                 {"strike": self.strike, "price0": self.price0})
        p0 = self.price0
        return ObstacleSpec(lambda t, x: self.exercise_value(t, p0 * np.exp(x)))


def load_market(path):
    """Read ``{rate, drift, payoff: {kind, strike}, price0, T, N}``; returns ``(market, grid)``."""
    with open(path) as fh:
        doc = json.load(fh)
    try:
        mkt = MarketSpec(float(doc["rate"]), float(doc.get("drift", 0.0)),
                         doc["payoff"]["kind"], float(doc["payoff"]["strike"]),
                         float(doc["price0"]))
        grid = TimeGrid(float(doc["T"]), int(doc["N"]))
    except (KeyError, TypeError) as exc:
        raise InvalidInstanceError(f"malformed market document: {exc!r}") from exc
    return mkt, grid


def market_instance(mkt: MarketSpec, interval: UncertaintyInterval, grid: TimeGrid,
                    lattice=None, width_sigmas: float | None = 6.0):
    """Map a market onto a lattice instance; returns ``(instance, lattice)``."""
    if lattice is None:
        lattice = build_lattice(grid, interval, 0.0, width_sigmas)
    C = black_scholes_lipschitz(mkt.rate, interval.a_low, interval.a_high, lattice.dx)
    gen = make_generator("black_scholes", {"rate": mkt.rate, "drift": mkt.drift,
                                           "dx": lattice.dx}, lipschitz_C=C)
    obs = mkt.obstacle()
    term = TerminalSpec(lambda x, _S=obs.S, _T=grid.T: _S(_T, x), obs.kind, obs.params)
    return Instance(grid, interval, gen, obs, term, 0.0), lattice


@dataclass
class PriceReport:
    price: float
    hedge0: float
    fixed_vol_prices: dict
    D_eps: StoppingSurface = field(repr=False)
    D_eps_P: dict = field(repr=False)
    dominance_violations: int
    min_condition_gap: float
    label: str = LABEL

    def to_dict(self) -> dict:
        return {"label": self.label, "price": self.price, "hedge0": self.hedge0,
                "fixed_vol_prices": dict(self.fixed_vol_prices),
                "dominance_violations": self.dominance_violations,
                "min_condition_gap": self.min_condition_gap,
                "eps": self.D_eps.eps,
                "exercise_index_at_start": int(self.D_eps.start[self.D_eps.start.size // 2])}


def stopping_dominance_check(robust: StoppingSurface, per_scenario) -> int:
    """Count lattice nodes where the robust hitting index precedes a scenario's."""
    return int(sum(np.count_nonzero(robust.hit < s.hit) for s in per_scenario))


def price_american(mkt: MarketSpec, interval: UncertaintyInterval, grid: TimeGrid,
                   a_grid=None, eps: float = 0.01, width_sigmas: float | None = 6.0,
                   lattice=None) -> PriceReport:
    """Robust American price, time-0 hedge and epsilon-optimal exercise surfaces.

    ``hedge0`` is the share position ``dY/dprice`` at the root: the log-state
    gradient divided by ``price0``.
    """
    inst, lattice = market_instance(mkt, interval, grid, lattice, width_sigmas)
    if a_grid is None:
        a_grid = interval.default_grid()
    family = [Scenario.constant(a) for a in sorted(set(a_grid))]
    so = solve_2rbsde_dpp(inst, lattice, a_grid, family)
    robust = epsilon_stopping(so, eps)
    fixed, per = {}, {}
    for sc in family:
        rec = so.records[sc.name]
        fixed[f"{sc.value:.17g}"] = rec.y0
        per[sc.name] = epsilon_stopping(rec.rbsde, eps)
    hedge0 = float(so.Z[0, lattice.center]) / mkt.price0
    return PriceReport(so.Y0, hedge0, fixed, robust, per,
                       stopping_dominance_check(robust, per.values()), so.min_condition_gap)


def check_report(report: PriceReport) -> list:
    """Invariant violations of a report (empty when consistent)."""
    issues = []
    if report.fixed_vol_prices and report.price < max(report.fixed_vol_prices.values()) - DPP_TOL:
        issues.append("robust price below a fixed-volatility price")
    if report.dominance_violations:
        issues.append(f"{report.dominance_violations} stopping dominance violations")
    return issues
