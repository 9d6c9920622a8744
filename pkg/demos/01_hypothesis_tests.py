#!/usr/bin/env python3
"""The three hypothesis tests behind the learned factor functions.

Each test answers "could this observation pattern arise without an attack?":
chi-squared for how concentrated a single event is in an attack stage,
Fisher exact for shared event patterns (small counts), and a permutation
Durbin-Watson test for periodic event counts.
"""

from stagewatch.stats import (
    ContingencyTable2x2,
    chi_squared_p,
    chi_squared_statistic,
    durbin_watson_p,
    fisher_exact_p,
)

print("== chi-squared: is this event concentrated in one attack stage? ==")
# 20 occurrences at the stage vs 5 benign, complements balanced
table = ContingencyTable2x2(20, 5, 5, 20)
print(f"table {table}: X^2 = {chi_squared_statistic(table):.1f}, "
      f"p = {chi_squared_p(table):.3e}  -> strong stage association")
balanced = ContingencyTable2x2(10, 10, 10, 10)
print(f"table {balanced}: p = {chi_squared_p(balanced):.3f}  -> no signal")

print("\n== Fisher exact: does a shared pattern mean attack? ==")
perfect = ContingencyTable2x2(0, 5, 5, 0)
print(f"table {perfect}: p = {fisher_exact_p(perfect):.6f}  (2/252, perfectly skewed)")
weak = ContingencyTable2x2(3, 1, 1, 3)
print(f"table {weak}: p = {fisher_exact_p(weak):.4f}  (34/70, not significant)")

print("\n== Durbin-Watson: are these counts periodic? ==")
bursty = [5, 5, 5, 0, 0, 0]
d, p = durbin_watson_p(bursty, permutations=1000, seed=7)
print(f"bursty series {bursty}: d = {d:.4f} (2/3), permutation p = {p:.4f}")
scans = [4] * 12 + [0] * 12
d, p = durbin_watson_p(scans, permutations=1000, seed=7)
print(f"sustained scan burst: d = {d:.4f}, p = {p:.4f}  -> periodic, significant")
alternating = [1, -1, 1, -1, 1, -1]
d, p = durbin_watson_p(alternating, permutations=1000, seed=7)
print(f"alternating series: d = {d:.3f} (no positive autocorrelation), p = {p:.3f}")
