"""Shared builders for synthetic factor graphs used across inference tests.

Random instances mirror what `construct` emits: a transition backbone over
consecutive stage nodes, unary factors whose tables are 1 except one
ff_potential(q, p) cell with q > 0 and p <= 0.05, and optional pairwise skip
links that make the graph loopy.
"""

import numpy as np

from stagewatch.events import N_STAGES, ObservedEvent
from stagewatch.graph import (
    COMMON_LINK,
    SEVERITY,
    TRANSITION,
    Factor,
    FactorGraph,
    ff_potential,
)


def dummy_events(n):
    return [ObservedEvent(ts=i, user="u", symbol="login") for i in range(n)]


def random_transition_matrix(rng):
    m = rng.random((N_STAGES, N_STAGES)) + 0.05
    return m / m.sum(axis=1, keepdims=True)


def unary_ff_factor(node, stage, q, p, kind=SEVERITY):
    table = np.ones(N_STAGES)
    table[stage] = ff_potential(q, p)
    return Factor(kind=kind, scope=(node,), table=table, source=f"test:{node}:{stage}")


def pair_ff_factor(i, j, stage_i, stage_j, q, p):
    table = np.ones((N_STAGES, N_STAGES))
    table[stage_i, stage_j] = ff_potential(q, p)
    return Factor(kind=COMMON_LINK, scope=(i, j), table=table, source=f"test:{i}-{j}")


def random_tree_fg(n, rng):
    """Chain-structured graph with random transitions and random unary FFs."""
    factors = []
    trans = random_transition_matrix(rng)
    for t in range(n - 1):
        factors.append(Factor(kind=TRANSITION, scope=(t, t + 1), table=trans))
    for t in range(n):
        for _ in range(int(rng.integers(0, 3))):
            factors.append(
                unary_ff_factor(
                    t,
                    int(rng.integers(0, N_STAGES)),
                    q=float(rng.uniform(0.05, 1.0)),
                    p=float(rng.uniform(0.0, 0.05)),
                )
            )
    return FactorGraph(events=dummy_events(n), factors=factors)


def random_loopy_fg(n, rng, n_skips=None):
    """Chain plus 1-2 skip links between non-adjacent nodes."""
    fg = random_tree_fg(n, rng)
    if n_skips is None:
        n_skips = int(rng.integers(1, 3))
    added = 0
    attempts = 0
    while added < n_skips and attempts < 20:
        attempts += 1
        i = int(rng.integers(0, n - 2))
        j = int(rng.integers(i + 2, n))
        fg.factors.append(
            pair_ff_factor(
                i,
                j,
                int(rng.integers(0, N_STAGES)),
                int(rng.integers(0, N_STAGES)),
                q=float(rng.uniform(0.05, 1.0)),
                p=float(rng.uniform(0.0, 0.05)),
            )
        )
        added += 1
    return fg
