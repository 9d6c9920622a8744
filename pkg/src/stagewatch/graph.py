"""Runtime factor graph over a window of one user's events.

One latent stage variable per observed event.  A transition factor links each
consecutive stage pair; significant severity/repetitiveness matches add unary
factors; matched common patterns add pairwise links between the matched
positions, which is what makes the graph loopy.  Potentials are everywhere
at least 1 and exceed 1 only where a factor function fired, so evidence can
only raise an assignment's score.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .events import N_STAGES, ObservedEvent
from .training import TrainedModel

DEFAULT_SIGNIFICANCE = 0.05
MAX_WINDOW = 10_000

TRANSITION = "transition"
SEVERITY = "severity"
REPETITIVE = "repetitive"
COMMON_LINK = "common_link"


def ff_potential(q: float, p: float) -> float:
    """exp(q * (1 - p)): 1 when the pattern never occurred, e at the extreme."""
    return math.exp(q * (1.0 - p))


@dataclass(frozen=True)
class Factor:
    kind: str
    scope: tuple[int, ...]  # 1 or 2 stage-node indices
    table: np.ndarray  # (11,) for unary, (11, 11) for pairwise
    source: str = ""

    def __post_init__(self):
        assert len(self.scope) in (1, 2)
        assert self.table.shape == (N_STAGES,) * len(self.scope)


@dataclass
class FactorGraph:
    events: list[ObservedEvent]
    factors: list[Factor]
    window_offset: int = 0
    pattern_matches: dict = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return len(self.events)


def match_pattern(symbols: Sequence[str], pattern: Sequence[str]) -> list[int] | None:
    """Greedy leftmost subsequence match; None if the pattern is incomplete."""
    positions = []
    k = 0
    for i, sym in enumerate(symbols):
        if k < len(pattern) and sym == pattern[k]:
            positions.append(i)
            k += 1
            if k == len(pattern):
                return positions
    return None


def construct(
    window: Sequence[ObservedEvent],
    model: TrainedModel,
    delta: float = DEFAULT_SIGNIFICANCE,
    max_window: int = MAX_WINDOW,
    window_offset: int = 0,
    pattern_matches: dict | None = None,
) -> FactorGraph:
    """Build the per-window factor graph from the trained model.

    Only factor functions passing the selection guard (q > 0 and p <= delta)
    are instantiated.  `pattern_matches` can carry precomputed greedy-leftmost
    match positions (from the engine's incremental matcher); when absent each
    pattern is matched against the window here.
    """
    window = list(window)
    if not window:
        raise ValueError("empty window")
    if len(window) > max_window:
        raise ValueError(f"window of {len(window)} exceeds maximum {max_window}")

    factors: list[Factor] = []
    transitions = np.asarray(model.transitions, dtype=float)
    for t in range(len(window) - 1):
        factors.append(Factor(kind=TRANSITION, scope=(t, t + 1), table=transitions))

    for t, event in enumerate(window):
        for ff in model.severity_for(event.symbol):
            if ff.q > 0 and ff.p <= delta:
                table = np.ones(N_STAGES)
                table[ff.stage] = ff_potential(ff.q, ff.p)
                factors.append(
                    Factor(kind=SEVERITY, scope=(t,), table=table,
                           source=f"severity:{ff.symbol}@{ff.stage}")
                )
        for ff in model.repetitive_for(event.symbol):
            if ff.q > 0 and ff.p <= delta:
                table = np.ones(N_STAGES)
                table[ff.stage] = ff_potential(ff.q, ff.p)
                factors.append(
                    Factor(kind=REPETITIVE, scope=(t,), table=table,
                           source=f"repetitive:{ff.symbol}@{ff.stage}")
                )

    symbols = [e.symbol for e in window]
    matches: dict = {}
    for idx, pat in enumerate(model.common):
        if not (pat.q > 0 and pat.p <= delta):
            continue
        if pattern_matches is not None:
            positions = pattern_matches.get(idx)
        else:
            positions = match_pattern(symbols, pat.events)
        if positions is None:
            continue
        matches[idx] = positions
        value = ff_potential(pat.q, pat.p)
        for step in range(len(positions) - 1):
            table = np.ones((N_STAGES, N_STAGES))
            table[pat.stages[step], pat.stages[step + 1]] = value
            factors.append(
                Factor(
                    kind=COMMON_LINK,
                    scope=(positions[step], positions[step + 1]),
                    table=table,
                    source=f"common:{idx}:{step}",
                )
            )

    return FactorGraph(
        events=window, factors=factors, window_offset=window_offset, pattern_matches=matches
    )


def joint_log_score(fg: FactorGraph, stages: Sequence[int]) -> float:
    """Unnormalized log score of a stage assignment: sum of log potentials."""
    if len(stages) != fg.n_nodes:
        raise ValueError(f"assignment length {len(stages)} != {fg.n_nodes} nodes")
    total = 0.0
    for f in fg.factors:
        if len(f.scope) == 1:
            total += math.log(f.table[stages[f.scope[0]]])
        else:
            total += math.log(f.table[stages[f.scope[0]], stages[f.scope[1]]])
    return total


def to_dot(fg: FactorGraph) -> str:
    """DOT rendering of the bipartite structure, for debugging and goldens."""
    lines = ["graph factorgraph {"]
    for i, e in enumerate(fg.events):
        lines.append(f'  s{i} [shape=circle, label="s{i}\\n{e.symbol}"];')
    for j, f in enumerate(fg.factors):
        lines.append(f'  f{j} [shape=box, label="{f.kind}"];')
        for v in f.scope:
            lines.append(f"  f{j} -- s{v};")
    lines.append("}")
    return "\n".join(lines)
