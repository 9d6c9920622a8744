"""MAP stage inference on factor graphs.

`trw_map` runs sequential tree-reweighted max-product message passing in the
log domain.  Edge appearance probabilities come from a deterministic spanning
tree decomposition: the consecutive-pair backbone forms the first tree, and
pattern skip links are packed into as few additional trees as possible.  On a
chain (no skip links) a single forward/backward sweep is exact; on loopy
graphs the decoded assignment is the best one found by message passing and
its score can never exceed the true maximum.

`brute_force_map` enumerates every assignment and is the validation oracle.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .events import N_STAGES
from .graph import FactorGraph, joint_log_score

BRUTE_FORCE_MAX_NODES = 8


class SizeGuardError(ValueError):
    pass


@dataclass(frozen=True)
class InferenceConfig:
    max_iters: int = 100
    damping: float = 0.5
    tol: float = 1e-6
    # wall-clock cap for the message-passing loop; None means unbounded.
    # Hitting it is reported as non-convergence, never hidden.
    time_budget_s: float | None = None


@dataclass
class InferenceResult:
    map_assignment: list[int]
    max_marginals: np.ndarray  # (n, 11), rows sum to 1
    converged: bool
    iterations: int
    log_score: float


def confidence(result: InferenceResult, t: int) -> np.ndarray:
    """Normalized max-marginal vector at node t - the stage distribution
    handed to the decision model."""
    if not 0 <= t < len(result.map_assignment):
        raise IndexError(f"node index {t} out of range")
    return result.max_marginals[t]


# --------------------------------------------------------------------------
# pairwise view of the factor graph

class _Pairwise:
    """Merged log-potential view: one unary per node, one table per node pair."""

    def __init__(self, fg: FactorGraph):
        self.n = fg.n_nodes
        self.unary = np.zeros((self.n, N_STAGES))
        tables: dict[tuple[int, int], np.ndarray] = {}
        log_cache: dict[int, np.ndarray] = {}  # shared tables logged once

        def logged(table: np.ndarray) -> np.ndarray:
            key = id(table)
            cached = log_cache.get(key)
            if cached is None:
                cached = log_cache[key] = np.log(table)
            return cached

        for f in fg.factors:
            log_t = logged(f.table)
            if len(f.scope) == 1:
                self.unary[f.scope[0]] += log_t
            else:
                i, j = f.scope
                if i > j:
                    i, j = j, i
                    log_t = log_t.T
                if (i, j) in tables:
                    tables[(i, j)] = tables[(i, j)] + log_t
                else:
                    tables[(i, j)] = log_t
        self.edges = sorted(tables)  # (i, j) with i < j
        self.tables = [tables[e] for e in self.edges]


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, x):
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[ra] = rb
        return True


def _edge_appearance(n: int, edges: list[tuple[int, int]]) -> np.ndarray:
    """rho per edge from the deterministic spanning tree decomposition.

    Tree 0 greedily absorbs backbone (consecutive) edges first.  Leftover
    edges are packed into further groups, each padded back to a spanning
    tree with backbone edges, and rho is the fraction of trees an edge
    appears in.
    """
    order = sorted(range(len(edges)), key=lambda k: (edges[k][1] - edges[k][0], edges[k]))
    uf = _UnionFind(n)
    in_tree0 = np.zeros(len(edges), dtype=bool)
    for k in order:
        if uf.union(*edges[k]):
            in_tree0[k] = True
    leftover = [k for k in order if not in_tree0[k]]
    if not leftover:
        return np.ones(len(edges))

    groups: list[tuple[_UnionFind, list[int]]] = []
    for k in leftover:
        placed = False
        for guf, members in groups:
            if guf.union(*edges[k]):
                members.append(k)
                placed = True
                break
        if not placed:
            guf = _UnionFind(n)
            guf.union(*edges[k])
            groups.append((guf, [k]))

    appearances = np.where(in_tree0, 1.0, 0.0)
    for guf, members in groups:
        in_group = set(members)
        for k in order:  # pad to spanning, backbone edges first
            if k not in in_group and guf.union(*edges[k]):
                in_group.add(k)
        for k in in_group:
            appearances[k] += 1.0
    n_trees = 1 + len(groups)
    return appearances / n_trees


# --------------------------------------------------------------------------
# sequential tree-reweighted max-product

class _Sweeper:
    """Array-based message state: one forward and one backward message per
    chain position, plus per-skip-link message pairs.

    The update rule for a message src -> dst along edge e is
        max_x [ theta_e(x, .)/rho_e + theta_src(x)
                + sum_k rho_k M_{k->src}(x) - M_{dst->src}(x) ]
    with messages normalized to max 0.
    """

    def __init__(self, pw: _Pairwise, rho: np.ndarray):
        self.n = n = pw.n
        self.unary = pw.unary
        chain = {}  # i -> (table, rho) for edge (i, i+1)
        self.skips = []  # (i, j, table, weighted, rho)
        for k, (i, j) in enumerate(pw.edges):
            if j == i + 1:
                chain[i] = (pw.tables[k], rho[k])
            else:
                self.skips.append((i, j, pw.tables[k], pw.tables[k] / rho[k], rho[k]))
        # chain edges overwhelmingly share one transition table; index the
        # distinct (table, rho) combinations instead of materializing n copies
        neutral = np.zeros((N_STAGES, N_STAGES))
        uniq: dict[tuple[int, float], int] = {}
        tables: list[np.ndarray] = []
        weighted: list[np.ndarray] = []
        transposed: list[np.ndarray] = []
        self.rho_chain = np.ones(n - 1)
        idx = np.zeros(max(n - 1, 0), dtype=np.int32)
        for i in range(n - 1):
            tbl, r = chain.get(i, (neutral, 1.0))
            key = (id(tbl), r)
            u = uniq.get(key)
            if u is None:
                u = uniq[key] = len(tables)
                tables.append(tbl)
                weighted.append(tbl / r)
                transposed.append(np.ascontiguousarray((tbl / r).T))
            idx[i] = u
            self.rho_chain[i] = r
        self._idx = idx
        self._tables = tables
        self._weighted = weighted
        self._weighted_t = transposed
        self.fwd = np.zeros((n, N_STAGES))  # fwd[i]: message (i-1) -> i
        self.bwd = np.zeros((n, N_STAGES))  # bwd[i]: message (i+1) -> i
        self.skip_msgs = [np.zeros((2, N_STAGES)) for _ in self.skips]  # [0]: i->j

    def chain_table(self, i: int) -> np.ndarray:
        return self._tables[self._idx[i]]

    def skip_sums(self) -> np.ndarray:
        s = np.zeros((self.n, N_STAGES))
        for (i, j, _, _, r), m in zip(self.skips, self.skip_msgs):
            s[j] += r * m[0]
            s[i] += r * m[1]
        return s

    def belief_all(self) -> np.ndarray:
        b = self.unary + self.skip_sums()
        b[1:] += self.rho_chain[:, None] * self.fwd[1:]
        b[:-1] += self.rho_chain[:, None] * self.bwd[:-1]
        return b

    def _node_base(self, v: int, skip_sums: np.ndarray) -> np.ndarray:
        base = self.unary[v] + skip_sums[v]
        if v > 0:
            base = base + self.rho_chain[v - 1] * self.fwd[v]
        if v < self.n - 1:
            base = base + self.rho_chain[v] * self.bwd[v]
        return base

    def sweep(self, forward: bool, damping: float, lo: int = 0, hi: int | None = None) -> float:
        """One directional pass over nodes [lo, hi]; messages entering the
        range from outside are treated as fixed inputs."""
        n = self.n
        if hi is None:
            hi = n - 1
        residual = 0.0
        skip_sums = self.skip_sums()
        skips_at: dict[int, list[int]] = {}
        for k, (i, j, *_rest) in enumerate(self.skips):
            skips_at.setdefault(i if forward else j, []).append(k)
        order = range(lo, hi + 1) if forward else range(hi, lo - 1, -1)
        for v in order:
            for k in skips_at.get(v, ()):
                i, j, _, w, r = self.skips[k]
                m = self.skip_msgs[k]
                out_dir, rev_dir = (0, 1) if forward else (1, 0)
                base = self._node_base(v, skip_sums) - m[rev_dir]
                table = w if forward else w.T
                new = (table + base[:, None]).max(axis=0)
                new -= new.max()
                if damping:
                    new = damping * m[out_dir] + (1.0 - damping) * new
                residual = max(residual, float(np.abs(new - m[out_dir]).max()))
                dst = j if forward else i
                skip_sums[dst] += r * (new - m[out_dir])
                m[out_dir] = new
            if forward and v < hi:
                base = self._node_base(v, skip_sums) - self.bwd[v]
                new = (self._weighted[self._idx[v]] + base[:, None]).max(axis=0)
                new -= new.max()
                if damping:
                    new = damping * self.fwd[v + 1] + (1.0 - damping) * new
                residual = max(residual, float(np.abs(new - self.fwd[v + 1]).max()))
                self.fwd[v + 1] = new
            elif not forward and v > lo:
                base = self._node_base(v, skip_sums) - self.fwd[v]
                new = (self._weighted_t[self._idx[v - 1]] + base[:, None]).max(axis=0)
                new -= new.max()
                if damping:
                    new = damping * self.bwd[v - 1] + (1.0 - damping) * new
                residual = max(residual, float(np.abs(new - self.bwd[v - 1]).max()))
                self.bwd[v - 1] = new
        return residual


def trw_map(fg: FactorGraph, cfg: InferenceConfig = InferenceConfig()) -> InferenceResult:
    pw = _Pairwise(fg)
    n = pw.n
    if n == 1:
        belief = pw.unary[0]
        stage = int(np.argmax(belief))
        mm = _normalize_rows(belief[None, :])
        return InferenceResult([stage], mm, True, 0, joint_log_score(fg, [stage]))

    rho = _edge_appearance(n, pw.edges)
    sweeper = _Sweeper(pw, rho)
    loopy = len(sweeper.skips) > 0
    damping = cfg.damping if loopy else 0.0

    converged = False
    iterations = 0
    if not loopy:
        # one forward+backward pass is exact on a chain
        sweeper.sweep(forward=True, damping=0.0)
        sweeper.sweep(forward=False, damping=0.0)
        converged = True
        iterations = 1
    else:
        deadline = None
        if cfg.time_budget_s is not None:
            deadline = time.perf_counter() + cfg.time_budget_s
        # chain edges outside the skip-link span keep appearance probability 1,
        # so after one full pass only the span between the outermost skip
        # endpoints keeps evolving; iterate there and propagate outward once
        lo = max(min(i for i, *_ in sweeper.skips) - 1, 0)
        hi = min(max(j for _, j, *_ in sweeper.skips) + 1, n - 1)
        for it in range(1, cfg.max_iters + 1):
            iterations = it
            full = it == 1
            s_lo, s_hi = (0, n - 1) if full else (lo, hi)
            residual = sweeper.sweep(forward=True, damping=damping, lo=s_lo, hi=s_hi)
            residual = max(
                residual, sweeper.sweep(forward=False, damping=damping, lo=s_lo, hi=s_hi)
            )
            if residual <= cfg.tol:
                converged = True
                break
            if deadline is not None and time.perf_counter() >= deadline:
                break
        if hi < n - 1:
            sweeper.sweep(forward=True, damping=0.0, lo=hi, hi=n - 1)
        if lo > 0:
            sweeper.sweep(forward=False, damping=0.0, lo=0, hi=lo)

    beliefs = sweeper.belief_all()
    assignment = _decode(pw, sweeper, beliefs)
    return InferenceResult(
        map_assignment=assignment,
        max_marginals=_normalize_rows(beliefs),
        converged=converged,
        iterations=iterations,
        log_score=joint_log_score(fg, assignment),
    )


def _decode(pw: _Pairwise, sweeper: _Sweeper, beliefs) -> list[int]:
    """Sequential conditional decode: fix nodes in index order, replacing
    messages from already-decided neighbors with the exact pairwise term."""
    n = pw.n
    skip_sums = sweeper.skip_sums()
    assignment = [-1] * n
    for v in range(n):
        score = pw.unary[v] + skip_sums[v]
        if v > 0:
            score = score + sweeper.chain_table(v - 1)[assignment[v - 1], :]
        if v < n - 1:
            score = score + sweeper.rho_chain[v] * sweeper.bwd[v]
        for k, (i, j, tbl, _, r) in enumerate(sweeper.skips):
            if j == v and i < v:
                # replace the message from the decided lower endpoint
                score = score - r * sweeper.skip_msgs[k][0] + tbl[assignment[i], :]
        assignment[v] = int(np.argmax(score))
    return assignment


def _normalize_rows(log_rows: np.ndarray) -> np.ndarray:
    shifted = log_rows - log_rows.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    return expd / expd.sum(axis=1, keepdims=True)


# --------------------------------------------------------------------------
# exhaustive oracle

def brute_force_map(fg: FactorGraph, marginals: bool = True) -> InferenceResult:
    """Enumerate all assignments; exact argmax (first in lexicographic order)
    and exact max-marginals."""
    n = fg.n_nodes
    if n > BRUTE_FORCE_MAX_NODES:
        raise SizeGuardError(f"{n} nodes exceeds brute-force bound {BRUTE_FORCE_MAX_NODES}")
    pw = _Pairwise(fg)

    if n <= 6:
        scores = _score_tensor(pw, list(range(n)))
        flat = int(np.argmax(scores))
        assignment = list(np.unravel_index(flat, scores.shape))
        mm = None
        if marginals:
            mm = np.stack(
                [scores.max(axis=tuple(a for a in range(n) if a != v)) for v in range(n)]
            )
    else:
        best_score = -np.inf
        assignment = None
        mm = np.full((n, N_STAGES), -np.inf) if marginals else None
        rest = list(range(1, n))
        for x0 in range(N_STAGES):
            scores = _score_tensor(pw, rest, fixed={0: x0})
            flat = int(np.argmax(scores))
            top = float(scores.flat[flat])
            if top > best_score:
                best_score = top
                assignment = [x0] + list(np.unravel_index(flat, scores.shape))
            if marginals:
                mm[0, x0] = top
                for pos, v in enumerate(rest):
                    axes = tuple(a for a in range(n - 1) if a != pos)
                    mm[v] = np.maximum(mm[v], scores.max(axis=axes))

    assignment = [int(a) for a in assignment]
    return InferenceResult(
        map_assignment=assignment,
        max_marginals=_normalize_rows(mm) if marginals else np.full((n, N_STAGES), np.nan),
        converged=True,
        iterations=0,
        log_score=joint_log_score(fg, assignment),
    )


def _score_tensor(pw: _Pairwise, nodes: list[int], fixed: dict[int, int] | None = None) -> np.ndarray:
    """Log-score tensor over `nodes` (in order), other nodes pinned by `fixed`.

    Built by progressive outer sums so each factor is broadcast once at the
    smallest size where all its variables are present.
    """
    fixed = fixed or {}
    pos = {v: a for a, v in enumerate(nodes)}
    scores = np.zeros(())
    for a, v in enumerate(nodes):
        u = pw.unary[v].copy()
        for k, (i, j) in enumerate(pw.edges):
            other = j if i == v else i if j == v else None
            if other is None or other not in fixed:
                continue
            t = pw.tables[k]
            u += t[fixed[other], :] if i == other else t[:, fixed[other]]
        scores = scores[..., None] + u
        for k, (i, j) in enumerate(pw.edges):
            if j == v and i in pos:
                t = pw.tables[k]
                shape = [1] * (a + 1)
                shape[pos[i]] = N_STAGES
                shape[a] = N_STAGES
                scores = scores + t.reshape(shape)
            elif i == v and j in pos and pos[j] < a:
                t = pw.tables[k].T
                shape = [1] * (a + 1)
                shape[pos[j]] = N_STAGES
                shape[a] = N_STAGES
                scores = scores + t.reshape(shape)
    base = 0.0
    for k, (i, j) in enumerate(pw.edges):
        if i in fixed and j in fixed:
            base += pw.tables[k][fixed[i], fixed[j]]
    for v, x in fixed.items():
        base += pw.unary[v][x]
    return scores + base
