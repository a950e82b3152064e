"""
Uncertain volatility: the backward supremum and its witnesses
=============================================================

Price an American put when the variance rate is only known to lie in a band.
The robust value dominates every fixed-rate price, and replaying the pointwise
maximiser as a feedback control recovers it.
"""

# %%
from rbsdelab import TimeGrid, UncertaintyInterval
from rbsdelab.pricing import MarketSpec, market_instance, price_american
from rbsdelab.soref import representation_sup, solve_2rbsde_dpp
from rbsdelab.verify import binomial_american

put = MarketSpec(rate=0.05, drift=0.0, payoff_kind="put", strike=100.0, price0=100.0)
band = UncertaintyInterval(0.01, 0.09)
rep = price_american(put, band, TimeGrid(1.0, 200))
print(f"robust price {rep.price:.4f}, hedge {rep.hedge0:.4f} shares")
for a, v in rep.fixed_vol_prices.items():
    print(f"  fixed variance {float(a):.2f}: {v:.4f}")

# %%
# With a degenerate band the lattice should agree with a CRR tree.
flat = price_american(put, UncertaintyInterval(0.04, 0.04), TimeGrid(1.0, 200)).price
print(f"lattice {flat:.4f}  vs  CRR {binomial_american(100, 100, 0.05, 0.2, 1.0, 500):.4f}")

# %%
# Which rates does the maximiser pick, and does it close the gap?
inst, lat = market_instance(put, band, TimeGrid(1.0, 100))
so = solve_2rbsde_dpp(inst, lat, diagnostics=False)
print("maximiser occupancy:", {f"{float(k):.2f}": round(v, 3) for k, v in so.occupancy().items()})
value, _ = representation_sup(inst, lat, [so.star_scenario])
print(f"DPP {so.Y0:.10f}  replayed maximiser {value:.10f}")
