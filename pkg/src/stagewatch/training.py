"""Learning factor functions from annotated incident corpora.

Three families are learned, one per attacker trait:

* severity: single (symbol, stage) pairs whose attack-vs-benign contingency
  is significant under the chi-squared test;
* commonality: event patterns shared between incident pairs (longest common
  subsequences of their malicious steps), tested with Fisher exact;
* repetitiveness: (symbol, stage) pairs whose per-interval count series show
  positive autocorrelation under a permutation Durbin-Watson test.

Each retained factor function stores its empirical frequency q and p-value p
and must pass the significance gate (p <= 0.05, q > 0).  A smoothed 11x11
stage-transition matrix is estimated alongside.  The model keeps the raw
counts it was derived from, so absorbing one new incident and re-running the
tests gives exactly the model a full retrain would.
"""

from __future__ import annotations

import hashlib
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .events import N_STAGES, AnnotatedIncident, ObservedEvent, TrainingDataset, VocabularyError
from .rewards import RewardModel
from . import stats

MODEL_VERSION = 1
SIGNIFICANCE = 0.05

# Interval lengths (ms) over which repetition count series are built.
PRODUCTION_INTERVALS = (60_000, 300_000, 3_600_000)
REPLAY_INTERVALS = (1, 5, 20)


class ModelFormatError(ValueError):
    pass


class IncompatibleModelError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    significance: float = SIGNIFICANCE
    dw_permutations: int = 1000
    interval_candidates: tuple[int, ...] = PRODUCTION_INTERVALS
    base_seed: int = 0
    fisher_bound: int = stats.FISHER_ENUMERATION_BOUND
    # frequency normalization: "pattern" divides a pattern's count by its own
    # total observations (how often the pattern means that stage); "stage"
    # divides by the stage class total (how much of the stage the pattern is)
    q_mode: str = "pattern"

    def to_json(self) -> dict:
        return {
            "significance": self.significance,
            "dw_permutations": self.dw_permutations,
            "interval_candidates": list(self.interval_candidates),
            "base_seed": self.base_seed,
            "fisher_bound": self.fisher_bound,
            "q_mode": self.q_mode,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "TrainConfig":
        return cls(
            significance=doc["significance"],
            dw_permutations=doc["dw_permutations"],
            interval_candidates=tuple(doc["interval_candidates"]),
            base_seed=doc["base_seed"],
            fisher_bound=doc["fisher_bound"],
            q_mode=doc.get("q_mode", "pattern"),
        )


@dataclass(frozen=True)
class SeverityFF:
    symbol: str
    stage: int
    q: float
    p: float


@dataclass(frozen=True)
class CommonPattern:
    events: tuple[str, ...]
    stages: tuple[int, ...]
    q: float
    p: float

    def __post_init__(self):
        assert len(self.events) == len(self.stages)


@dataclass(frozen=True)
class RepetitiveFF:
    symbol: str
    stage: int
    interval_len: int
    q: float
    p: float


@dataclass
class IncidentSkeleton:
    """What training keeps of an incident: its malicious steps and time span."""

    id: str
    steps: list[tuple[int, str, int]]  # (ts, symbol, stage), stage > 0
    start_ts: int
    end_ts: int

    @classmethod
    def from_incident(cls, inc: AnnotatedIncident) -> "IncidentSkeleton":
        steps = [(e.ts, e.symbol, s) for e, s in inc.malicious_steps()]
        all_ts = [e.ts for e, _ in inc.timeline]
        return cls(id=inc.id, steps=steps, start_ts=min(all_ts), end_ts=max(all_ts))


@dataclass
class Counts:
    """Raw frequency material; sufficient to regenerate every factor function."""

    skeletons: list[IncidentSkeleton] = field(default_factory=list)
    benign_by_user: dict[str, list[tuple[int, str]]] = field(default_factory=dict)
    transition_counts: np.ndarray = field(
        default_factory=lambda: np.zeros((N_STAGES, N_STAGES), dtype=np.int64)
    )
    # benign-corpus stream lengths per user; their consecutive pairs are
    # benign self-transitions (incident timelines carry their own pairs)
    benign_stream_counts: dict[str, int] = field(default_factory=dict)

    def add_incident(self, inc: AnnotatedIncident) -> None:
        if any(s_id.id == inc.id for s_id in self.skeletons):
            raise ValueError(f"incident id {inc.id} already trained")
        self.skeletons.append(IncidentSkeleton.from_incident(inc))
        stages = [s for _, s in inc.timeline]
        for a, b in zip(stages, stages[1:]):
            self.transition_counts[a, b] += 1
        for e, s in inc.timeline:
            if s == 0:
                self._add_benign_event(e)

    def add_benign(self, events: list[ObservedEvent]) -> None:
        for e in events:
            self._add_benign_event(e)
            self.benign_stream_counts[e.user] = self.benign_stream_counts.get(e.user, 0) + 1

    def _add_benign_event(self, e: ObservedEvent) -> None:
        seq = self.benign_by_user.setdefault(e.user, [])
        seq.append((e.ts, e.symbol))
        # canonical order so incremental and batch training agree exactly
        seq.sort(key=lambda t: (t[0], t[1]))

    # --- derived tallies ---

    def stage_totals(self) -> Counter:
        totals: Counter = Counter()
        for sk in self.skeletons:
            for _, _, s in sk.steps:
                totals[s] += 1
        return totals

    def symbol_stage_counts(self) -> Counter:
        counts: Counter = Counter()
        for sk in self.skeletons:
            for _, sym, s in sk.steps:
                counts[(sym, s)] += 1
        return counts

    def benign_histogram(self) -> Counter:
        hist: Counter = Counter()
        for seq in self.benign_by_user.values():
            for _, sym in seq:
                hist[sym] += 1
        return hist

    def total_benign(self) -> int:
        return sum(len(seq) for seq in self.benign_by_user.values())

    def to_json(self) -> dict:
        return {
            "skeletons": [
                {"id": sk.id, "steps": [list(t) for t in sk.steps],
                 "start_ts": sk.start_ts, "end_ts": sk.end_ts}
                for sk in self.skeletons
            ],
            "benign_by_user": {u: [list(t) for t in seq] for u, seq in self.benign_by_user.items()},
            "transition_counts": self.transition_counts.tolist(),
            "benign_stream_counts": dict(sorted(self.benign_stream_counts.items())),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "Counts":
        return cls(
            skeletons=[
                IncidentSkeleton(
                    id=d["id"],
                    steps=[tuple(t) for t in d["steps"]],
                    start_ts=d["start_ts"],
                    end_ts=d["end_ts"],
                )
                for d in doc["skeletons"]
            ],
            benign_by_user={u: [tuple(t) for t in seq] for u, seq in doc["benign_by_user"].items()},
            transition_counts=np.array(doc["transition_counts"], dtype=np.int64),
            benign_stream_counts=dict(doc.get("benign_stream_counts", {})),
        )


def counts_from_dataset(dataset: TrainingDataset) -> Counts:
    counts = Counts()
    for inc in sorted(dataset.incidents, key=lambda i: i.id):
        counts.add_incident(inc)
    counts.add_benign(dataset.benign_corpus)
    return counts


# --------------------------------------------------------------------------
# longest common subsequence

def lcs_match(a: list, b: list) -> tuple[list[int], list[int]]:
    """Matched index pairs of a longest common subsequence of `a` and `b`.

    Among all LCSs the lexicographically smallest symbol sequence is chosen,
    matched at its earliest feasible positions, so the result is stable
    across runs and platforms.
    """
    m, n = len(a), len(b)
    # L[i][j] = LCS length of a[i:], b[j:]
    L = [[0] * (n + 1) for _ in range(m + 1)]
    for i in range(m - 1, -1, -1):
        row, nxt = L[i], L[i + 1]
        for j in range(n - 1, -1, -1):
            if a[i] == b[j]:
                row[j] = nxt[j + 1] + 1
            else:
                row[j] = nxt[j] if nxt[j] >= row[j + 1] else row[j + 1]
    pos_a: list[int] = []
    pos_b: list[int] = []
    i, j = 0, 0
    while L[i][j] > 0:
        target = L[i][j]
        best = None  # (symbol, ia, jb)
        seen = set()
        for ia in range(i, m):
            if L[ia][j] < target:
                break
            sym = a[ia]
            if sym in seen or (best is not None and sym >= best[0]):
                continue
            seen.add(sym)
            for jb in range(j, n):
                if L[ia][jb] < target:
                    break
                if b[jb] == sym and L[ia + 1][jb + 1] == target - 1:
                    best = (sym, ia, jb)
                    break
        assert best is not None
        _, ia, jb = best
        pos_a.append(ia)
        pos_b.append(jb)
        i, j = ia + 1, jb + 1
    return pos_a, pos_b


def lcs(a: list, b: list) -> list:
    """A longest common subsequence with deterministic tie-breaking."""
    pos_a, _ = lcs_match(a, b)
    return [a[i] for i in pos_a]


def count_subsequence_matches(pattern: tuple[str, ...], seq: list[str]) -> int:
    """Disjoint subsequence occurrences of `pattern` in `seq`.

    Single left-to-right pass; each event extends the furthest-advanced
    partial match it fits, so completions are counted greedily.
    """
    if not pattern:
        return 0
    length = len(pattern)
    partial = [0] * (length + 1)  # partial[k]: matches that have consumed k elements
    hits = 0
    for sym in seq:
        for k in range(length - 1, -1, -1):
            if pattern[k] == sym and (k == 0 or partial[k] > 0):
                if k > 0:
                    partial[k] -= 1
                if k + 1 == length:
                    hits += 1
                else:
                    partial[k + 1] += 1
                break
    return hits


# --------------------------------------------------------------------------
# per-family derivations (all from Counts, so incremental == batch)

def _symbol_totals(counts: Counts) -> Counter:
    totals: Counter = Counter()
    for (sym, _), n in counts.symbol_stage_counts().items():
        totals[sym] += n
    return totals


def _derive_severity(counts: Counts, cfg: TrainConfig) -> list[SeverityFF]:
    stage_totals = counts.stage_totals()
    symbol_totals = _symbol_totals(counts)
    benign_hist = counts.benign_histogram()
    total_benign = counts.total_benign()
    out = []
    for (sym, s), n_es in sorted(counts.symbol_stage_counts().items()):
        if cfg.q_mode == "pattern":
            q = n_es / (symbol_totals[sym] + benign_hist.get(sym, 0))
        else:
            q = n_es / stage_totals[s]
        table = stats.ContingencyTable2x2(
            a=n_es,
            b=benign_hist.get(sym, 0),
            c=stage_totals[s] - n_es,
            d=total_benign - benign_hist.get(sym, 0),
        )
        try:
            p = stats.chi_squared_p(table)
        except stats.DegenerateTableError:
            p = 1.0
        if p <= cfg.significance and q > 0:
            out.append(SeverityFF(symbol=sym, stage=s, q=q, p=p))
    return out


def _extract_patterns(counts: Counts) -> tuple[Counter, int]:
    """All-pairs LCS patterns over malicious skeletons.

    Returns pattern counts keyed by (events, stages) and the number of pairs
    whose stage annotations disagreed on the matched positions (dropped).
    """
    patterns: Counter = Counter()
    disagreements = 0
    skels = counts.skeletons
    for i in range(len(skels)):
        sym_i = [sym for _, sym, _ in skels[i].steps]
        stg_i = [s for _, _, s in skels[i].steps]
        for j in range(i + 1, len(skels)):
            sym_j = [sym for _, sym, _ in skels[j].steps]
            stg_j = [s for _, _, s in skels[j].steps]
            pos_i, pos_j = lcs_match(sym_i, sym_j)
            if len(pos_i) < 2:
                continue
            stages_i = tuple(stg_i[p] for p in pos_i)
            stages_j = tuple(stg_j[p] for p in pos_j)
            if stages_i != stages_j:
                disagreements += 1
                continue
            events = tuple(sym_i[p] for p in pos_i)
            patterns[(events, stages_i)] += 1
    return patterns, disagreements


def _derive_commonality(counts: Counts, cfg: TrainConfig) -> list[CommonPattern]:
    patterns, _ = _extract_patterns(counts)
    total_patterns = sum(patterns.values())
    if total_patterns == 0:
        return []
    total_benign = counts.total_benign()
    benign_seqs = [
        [sym for _, sym in seq] for _, seq in sorted(counts.benign_by_user.items())
    ]
    out = []
    for (events, stages), n_pat in sorted(patterns.items()):
        benign_hits = sum(count_subsequence_matches(events, seq) for seq in benign_seqs)
        table = stats.ContingencyTable2x2(
            a=n_pat,
            b=benign_hits,
            c=total_patterns - n_pat,
            d=max(total_benign - benign_hits, 0),
        )
        try:
            p = stats.fisher_exact_p(table, enumeration_bound=cfg.fisher_bound)
        except stats.EnumerationBoundError:
            p = stats.chi_squared_p(table)
        except stats.DegenerateTableError:
            p = 1.0
        if cfg.q_mode == "pattern":
            q = n_pat / (n_pat + benign_hits)
        else:
            q = n_pat / total_patterns
        if p <= cfg.significance and q > 0:
            out.append(CommonPattern(events=events, stages=stages, q=q, p=p))
    return out


def _series_seed(cfg: TrainConfig, sym: str, stage: int, k: int, incident_id: str) -> int:
    key = f"{cfg.base_seed}:{sym}:{stage}:{k}:{incident_id}".encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "big")


def _interval_series(sk: IncidentSkeleton, sym: str, stage: int, k: int) -> np.ndarray | None:
    span = sk.end_ts - sk.start_ts
    nbins = span // k + 1
    if nbins < 3:
        return None
    series = np.zeros(int(nbins))
    for ts, s_sym, s_stage in sk.steps:
        if s_sym == sym and s_stage == stage:
            series[(ts - sk.start_ts) // k] += 1
    return series


def _derive_repetitiveness(counts: Counts, cfg: TrainConfig) -> list[RepetitiveFF]:
    stage_totals = counts.stage_totals()
    symbol_totals = _symbol_totals(counts)
    benign_hist = counts.benign_histogram()
    out = []
    for (sym, s), n_es in sorted(counts.symbol_stage_counts().items()):
        if n_es < 3:
            continue  # cannot form a 3-bin series with repetition
        best: tuple[float, int] | None = None  # (p, k)
        for k in cfg.interval_candidates:
            for sk in counts.skeletons:
                series = _interval_series(sk, sym, s, k)
                if series is None or not series.any():
                    continue
                try:
                    _, p = stats.durbin_watson_p(
                        series,
                        permutations=cfg.dw_permutations,
                        seed=_series_seed(cfg, sym, s, k, sk.id),
                    )
                except stats.DegenerateSeriesError:
                    continue
                if best is None or p < best[0]:
                    best = (p, k)
        if best is None:
            continue
        p, k = best
        if cfg.q_mode == "pattern":
            q = n_es / (symbol_totals[sym] + benign_hist.get(sym, 0))
        else:
            q = n_es / stage_totals[s]
        if p <= cfg.significance and q > 0:
            out.append(RepetitiveFF(symbol=sym, stage=s, interval_len=k, q=q, p=p))
    return out


def _derive_transitions(counts: Counts) -> np.ndarray:
    """Laplace-smoothed row-stochastic stage transition matrix.

    Benign-corpus streams are annotated benign throughout, so each user's
    consecutive event pairs contribute benign self-transitions; without them
    the benign row would not reflect how overwhelmingly benign activity stays
    benign.
    """
    c = counts.transition_counts.astype(float)
    c[0, 0] += sum(max(n - 1, 0) for n in counts.benign_stream_counts.values())
    row_sums = c.sum(axis=1, keepdims=True)
    return (c + 1.0) / (row_sums + N_STAGES)


# --------------------------------------------------------------------------
# public training operations

def train_severity(dataset: TrainingDataset, cfg: TrainConfig = TrainConfig()) -> list[SeverityFF]:
    return _derive_severity(counts_from_dataset(dataset), cfg)


def train_commonality(dataset: TrainingDataset, cfg: TrainConfig = TrainConfig()) -> list[CommonPattern]:
    if len(dataset.incidents) < 2:
        raise ValueError("commonality training needs at least 2 incidents")
    return _derive_commonality(counts_from_dataset(dataset), cfg)


def train_repetitiveness(dataset: TrainingDataset, cfg: TrainConfig = TrainConfig()) -> list[RepetitiveFF]:
    return _derive_repetitiveness(counts_from_dataset(dataset), cfg)


def train_transitions(dataset: TrainingDataset) -> np.ndarray:
    return _derive_transitions(counts_from_dataset(dataset))


@dataclass
class TrainedModel:
    severity: list[SeverityFF]
    common: list[CommonPattern]
    repetitive: list[RepetitiveFF]
    transitions: np.ndarray
    counts: Counts
    config: TrainConfig
    reward: RewardModel | None = None
    vocabulary_hash: str = ""
    version: int = MODEL_VERSION

    def __post_init__(self):
        self._severity_by_symbol: dict[str, list[SeverityFF]] = {}
        for ff in self.severity:
            self._severity_by_symbol.setdefault(ff.symbol, []).append(ff)
        self._repetitive_by_symbol: dict[str, list[RepetitiveFF]] = {}
        for ff in self.repetitive:
            self._repetitive_by_symbol.setdefault(ff.symbol, []).append(ff)

    def severity_for(self, symbol: str) -> list[SeverityFF]:
        return self._severity_by_symbol.get(symbol, [])

    def repetitive_for(self, symbol: str) -> list[RepetitiveFF]:
        return self._repetitive_by_symbol.get(symbol, [])

    def has_unary_ff(self, symbol: str) -> bool:
        return symbol in self._severity_by_symbol or symbol in self._repetitive_by_symbol


def _derive_model(
    counts: Counts,
    cfg: TrainConfig,
    reward: RewardModel | None,
    vocabulary_hash: str,
) -> TrainedModel:
    return TrainedModel(
        severity=_derive_severity(counts, cfg),
        common=_derive_commonality(counts, cfg),
        repetitive=_derive_repetitiveness(counts, cfg),
        transitions=_derive_transitions(counts),
        counts=counts,
        config=cfg,
        reward=reward,
        vocabulary_hash=vocabulary_hash,
    )


def train_model(
    dataset: TrainingDataset,
    cfg: TrainConfig = TrainConfig(),
    reward: RewardModel | None = None,
    vocabulary_hash: str = "",
) -> TrainedModel:
    return _derive_model(counts_from_dataset(dataset), cfg, reward, vocabulary_hash)


def incremental_update(
    model: TrainedModel, incident: AnnotatedIncident, vocab=None
) -> TrainedModel:
    """Absorb one new incident: update raw counts, re-run every test family.

    Equivalent to a full retrain on the extended dataset; the input model is
    not mutated.  When a vocabulary is supplied, unlisted symbols are
    rejected up front.
    """
    if vocab is not None:
        for e, _ in incident.timeline:
            if e.symbol not in vocab:
                raise VocabularyError(f"incident {incident.id}: unknown symbol {e.symbol!r}")
    counts = Counts.from_json(model.counts.to_json())  # deep copy
    counts.add_incident(incident)
    return _derive_model(counts, model.config, model.reward, model.vocabulary_hash)


# --------------------------------------------------------------------------
# persistence

def save_model(model: TrainedModel, path: str | Path) -> None:
    doc = {
        "model_version": model.version,
        "vocabulary_hash": model.vocabulary_hash,
        "config": model.config.to_json(),
        "severity": [[f.symbol, f.stage, f.q, f.p] for f in model.severity],
        "common": [[list(f.events), list(f.stages), f.q, f.p] for f in model.common],
        "repetitive": [[f.symbol, f.stage, f.interval_len, f.q, f.p] for f in model.repetitive],
        "transitions": model.transitions.tolist(),
        "counts": model.counts.to_json(),
        "reward": model.reward.to_json() if model.reward is not None else None,
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


def load_model(path: str | Path) -> TrainedModel:
    raw = Path(path).read_text()
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as e:
        raise ModelFormatError(f"invalid model file at byte offset {e.pos}: {e.msg}") from e
    if not isinstance(doc, dict) or "model_version" not in doc:
        raise ModelFormatError("not a model document")
    if doc["model_version"] > MODEL_VERSION:
        raise IncompatibleModelError(
            f"model version {doc['model_version']} is newer than supported {MODEL_VERSION}"
        )
    try:
        return TrainedModel(
            severity=[SeverityFF(s, g, q, p) for s, g, q, p in doc["severity"]],
            common=[
                CommonPattern(tuple(ev), tuple(st), q, p) for ev, st, q, p in doc["common"]
            ],
            repetitive=[RepetitiveFF(s, g, k, q, p) for s, g, k, q, p in doc["repetitive"]],
            transitions=np.array(doc["transitions"], dtype=float),
            counts=Counts.from_json(doc["counts"]),
            config=TrainConfig.from_json(doc["config"]),
            reward=RewardModel.from_json(doc["reward"]) if doc["reward"] else None,
            vocabulary_hash=doc["vocabulary_hash"],
            version=doc["model_version"],
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ModelFormatError(f"malformed model document: {e}") from e
