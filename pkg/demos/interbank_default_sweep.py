#!/usr/bin/env python3
"""Interbank systemic risk: expected size of default across (N, a).

Banks mean-revert toward the average log-reserve at exchange rate a
while a common shock hits everyone.  The risk functional is
ESD = E[max_t (D - mean_t)+].  Two facts drive the experiment: the
exchange drift cancels in the mean, so the constant-volatility ESD does
not depend on a at all, and capping each bank's idiosyncratic exposure
(here by a sigmoid profile) provably lowers the ESD.

Writes sweep_demo.csv; pass --plot to also save a figure.
"""

import sys

import mkvsim as mk

config = mk.SweepConfig(
    n_values=(10, 50, 100),
    a_values=(1.0, 10.0, 100.0),
    n_mc=2000,              # the benchmark figure uses 10^4; this is a demo
    steps=100,
    default_level=-0.7,
    master_seed=99,
)

print("== sweeping (variant, N, a); both variants share each cell's noise ==")
rows = mk.figure1_sweep(config)
mk.write_sweep_csv("sweep_demo.csv", rows)
print(f"{len(rows)} rows -> sweep_demo.csv\n")

print(f"{'variant':>9} {'N':>4} {'a':>6} {'ESD':>8} {'stderr':>8}")
for row in rows:
    print(f"{row['variant']:>9} {row['N']:>4} {row['a']:>6g} "
          f"{row['esd']:>8.4f} {row['esd_stderr']:>8.4f}")

print("\nconstant-variant ESD is bit-identical across a (drift cancels in the mean):")
for n in config.n_values:
    vals = {row["esd"] for row in rows if row["variant"] == "constant" and row["N"] == n}
    print(f"  N={n:3d}: {len(vals) == 1}")

print("\nthe sigmoid variant never exceeds the constant one (dominated loadings):")
cells = {(r["variant"], r["N"], r["a"]): r["esd"] for r in rows}
print("  all cells ordered:",
      all(cells[("sigmoid", n, a)] <= cells[("constant", n, a)]
          for n in config.n_values for a in config.a_values))

print("\nreflection-principle oracle for the constant variant "
      "(the mean is a driftless walk):")
for n in config.n_values:
    sim = cells[("constant", n, config.a_values[0])]
    oracle = mk.esd_analytic_oracle(config.sigma, config.rho, n,
                                    config.default_level, config.horizon)
    print(f"  N={n:3d}: simulated {sim:.4f}, continuous-time oracle {oracle:.4f} "
          f"(node sampling biases the maximum low by O(sqrt(h)))")

if "--plot" in sys.argv:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for variant, style in (("constant", "-o"), ("sigmoid", "--s")):
        for a in config.a_values:
            ns = list(config.n_values)
            esds = [cells[(variant, n, a)] for n in ns]
            ax.plot(ns, esds, style, alpha=0.8, label=f"{variant}, a={a:g}")
    ax.set_xlabel("number of banks N")
    ax.set_ylabel("expected size of default")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig("sweep_demo.png", dpi=150)
    print("\nsaved sweep_demo.png")
