"""
Checking the solvers against independent oracles
================================================

Run a few of the randomized suites at reduced size and print what they
measured.
"""

# %%
from rbsdelab.verify import TinyTree, brute_force_snell, run_suite, tree_snell

tree = TinyTree.binomial(1 / 3, [[0.0]], [0.0, 0.5])
print(f"one-step tree: enumeration {brute_force_snell(tree):.6f}, backward {tree_snell(tree):.6f}")

# %%
for name, sizes in [("comparison", {"pairs": 5, "N": 50}),
                    ("snell", {"trees": 20, "lattice_trees": 4, "instances": 2, "N": 50}),
                    ("stability", {"instances": 2, "N": 50})]:
    rep = run_suite(name, seed=42, sizes=sizes)
    for c in rep.checks:
        print(f"{'ok  ' if c.passed else 'FAIL'} {c.name}")
