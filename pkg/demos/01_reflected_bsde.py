"""
Reflected BSDEs on a trinomial lattice
======================================

Solve one reflected equation, look at where the reflection acts, and compare
it with the penalised approximation as the penalty level grows.
"""

# %%
import numpy as np

from rbsdelab import Instance, Scenario, TimeGrid, UncertaintyInterval, build_lattice, solve_rbsde
from rbsdelab.model import make_generator, make_obstacle, make_terminal
from rbsdelab.rbsde import solve_penalized

# a put payoff in log-price units, discounted at 5%
put = {"strike": 1.0, "price0": 1.0}
inst = Instance(TimeGrid(1.0, 100), UncertaintyInterval(0.01, 0.09),
                make_generator("linear_discount", {"rate": 0.05}),
                make_obstacle("american_put", put), make_terminal("american_put", put))
lat = build_lattice(inst.grid, inst.interval)
sc = Scenario.constant(0.05)
sol = solve_rbsde(inst, lat, sc)
print(f"y0 = {sol.y0:.6f}, k_T at the root = {sol.k_cum[-1, lat.center]:.6f}")

# %%
# The reflection only pushes where y sits on the obstacle.
on = np.isclose(sol.y[:-1], sol.S[:-1], rtol=0, atol=1e-12)
print(f"contact nodes: {on.sum()} of {on.size}; "
      f"dk outside contact: {np.abs(sol.dk[~on]).max():.1e}")
print(f"Skorohod residual: {sol.skorohod_residual!r}")

# %%
# Penalisation approaches the reflected value from below.
for n in (4, 16, 64, 256, 1024):
    pen = solve_penalized(inst, lat, sc, n)
    print(f"n = {n:5d}  y0 = {pen.y0:.6f}  shortfall = {sol.y0 - pen.y0:.2e}")
