"""Streaming runtime: per-user windows, significance filtering, decisions.

Every incoming event lands in its user's bounded window.  Events matching no
learned factor function are retained as pattern context but trigger nothing;
significant ones (severity or repetitiveness match, or an extension of a
partially matched common pattern) trigger factor-graph construction over the
window, MAP inference, and an action recommendation.  Decisions append to a
JSON Lines log that is replayed on restart.
"""

from __future__ import annotations

import json
import statistics
import threading
import time
from collections import Counter, deque
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Optional

import numpy as np

from .events import ObservedEvent
from .graph import construct
from .infer import InferenceConfig, confidence, trw_map
from .rewards import ACTIONS, STOP, RewardModel, choose_action, default_reward_model
from .training import TrainedModel


class AdmissionError(RuntimeError):
    """Concurrent-channel cap reached."""


class EvaluationError(ValueError):
    pass


class ConfigError(ValueError):
    pass


@dataclass
class EngineConfig:
    delta: float = 0.05
    window: int = 10_000
    max_users: int = 1_000
    latency_budget_s: float = 1.5
    skew_ms: int = 10_000
    # per-decision inference budget; looser than the library defaults because
    # near-chain windows decode correctly long before deep convergence
    inference_max_iters: int = 25
    inference_damping: float = 0.25
    inference_tol: float = 1e-4
    api_token: str = ""

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ConfigError(f"delta must be in (0,1), got {self.delta}")
        if self.window < 1:
            raise ConfigError(f"window must be >= 1, got {self.window}")

    def inference_config(self) -> InferenceConfig:
        return InferenceConfig(
            max_iters=self.inference_max_iters,
            damping=self.inference_damping,
            tol=self.inference_tol,
            # leave headroom for construction, decoding, and the action step
            time_budget_s=0.6 * self.latency_budget_s,
        )


_CONFIG_FIELDS = {
    "delta": float,
    "window": int,
    "max_users": int,
    "latency_budget_s": float,
    "skew_ms": int,
    "inference_max_iters": int,
    "inference_damping": float,
    "inference_tol": float,
    "api_token": str,
}


def parse_config(text: str) -> EngineConfig:
    """Parse the key = value engine config format (# starts a comment)."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in _CONFIG_FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        caster = _CONFIG_FIELDS[key]
        if caster is str:
            values[key] = val.strip('"')
        else:
            try:
                values[key] = caster(val)
            except ValueError as e:
                raise ConfigError(f"line {lineno}: bad value for {key}: {val!r}") from e
    return EngineConfig(**values)


def format_config(cfg: EngineConfig) -> str:
    lines = []
    for key, caster in _CONFIG_FIELDS.items():
        val = getattr(cfg, key)
        lines.append(f'{key} = "{val}"' if caster is str else f"{key} = {val}")
    return "\n".join(lines) + "\n"


@dataclass
class Decision:
    decision_id: str
    user: str
    time: int
    stage_estimate: int
    confidence: list[float]
    action: str
    trigger_event: dict
    converged: bool = True
    ack_action: Optional[str] = None
    ack_analyst: Optional[str] = None

    def to_json(self) -> dict:
        doc = {
            "type": "decision",
            "decision_id": self.decision_id,
            "user": self.user,
            "time": self.time,
            "stage_estimate": self.stage_estimate,
            "confidence": self.confidence,
            "action": self.action,
            "trigger_event": self.trigger_event,
            "converged": self.converged,
        }
        return doc


class _PatternState:
    """Greedy-leftmost match progress of one pattern inside one window."""

    __slots__ = ("matched_seqs", "k")

    def __init__(self):
        self.matched_seqs: list[int] = []
        self.k = 0


class UserChannel:
    def __init__(self, user: str, capacity: int, n_patterns: int):
        self.user = user
        self.capacity = capacity
        self.window: deque[ObservedEvent] = deque()
        self.base_seq = 0  # seq number of window[0]
        self.next_seq = 0
        self.watermark: Optional[int] = None
        self.patterns = [_PatternState() for _ in range(n_patterns)]
        self.last_result = None
        self.last_decision: Optional[Decision] = None
        self.decisions: list[Decision] = []


class Engine:
    """Single-process streaming engine; channels are independent, the model
    is shared read-only, and the decision log has one writer."""

    def __init__(
        self,
        model: TrainedModel,
        config: EngineConfig = None,
        log_path: str | Path | None = None,
    ):
        self.model = model
        self.config = config or EngineConfig()
        self.reward: RewardModel = model.reward or default_reward_model()
        delta = self.config.delta
        self._significant_symbols = {
            ff.symbol
            for ff in model.severity + model.repetitive
            if ff.q > 0 and ff.p <= delta
        }
        self._patterns = [
            pat for pat in model.common if pat.q > 0 and pat.p <= delta
        ]
        self.channels: dict[str, UserChannel] = {}
        self.metrics: Counter = Counter()
        self.latencies: list[float] = []
        self._decision_counter = 0
        self.decision_history: list[Decision] = []
        self._by_id: dict[str, Decision] = {}
        self._log_path = Path(log_path) if log_path else None
        self._log_file: Optional[IO] = None
        self.lock = threading.Lock()
        if self._log_path is not None:
            if self._log_path.exists():
                self._replay_log()
            self._log_file = open(self._log_path, "a")

    # ----- crash recovery -----

    def _replay_log(self) -> None:
        for line in self._log_path.read_text().splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec["type"] == "decision":
                d = Decision(
                    decision_id=rec["decision_id"],
                    user=rec["user"],
                    time=rec["time"],
                    stage_estimate=rec["stage_estimate"],
                    confidence=rec["confidence"],
                    action=rec["action"],
                    trigger_event=rec["trigger_event"],
                    converged=rec.get("converged", True),
                )
                self._register_decision(d, persist=False)
                chan = self._channel(d.user, create=True)
                chan.last_decision = d
                chan.decisions.append(d)
            elif rec["type"] == "ack":
                d = self._by_id.get(rec["decision_id"])
                if d is not None:
                    d.ack_action = rec["action"]
                    d.ack_analyst = rec["analyst"]

    def _register_decision(self, d: Decision, persist: bool = True) -> None:
        self.decision_history.append(d)
        self._by_id[d.decision_id] = d
        n = int(d.decision_id[1:]) if d.decision_id[1:].isdigit() else 0
        self._decision_counter = max(self._decision_counter, n + 1)
        if persist and self._log_file is not None:
            self._log_file.write(json.dumps(d.to_json(), sort_keys=True) + "\n")
            self._log_file.flush()

    # ----- channels -----

    def _channel(self, user: str, create: bool = True) -> UserChannel:
        chan = self.channels.get(user)
        if chan is None:
            if not create:
                raise KeyError(user)
            if len(self.channels) >= self.config.max_users:
                raise AdmissionError(
                    f"channel cap {self.config.max_users} reached; cannot admit {user!r}"
                )
            chan = UserChannel(user, self.config.window, len(self._patterns))
            self.channels[user] = chan
        return chan

    # ----- pattern matching -----

    def _rescan_pattern(self, chan: UserChannel, idx: int) -> None:
        state = chan.patterns[idx]
        symbols = [e.symbol for e in chan.window]
        events = self._patterns[idx].events
        positions: list[int] = []
        k = 0
        for i, sym in enumerate(symbols):
            if k < len(events) and sym == events[k]:
                positions.append(chan.base_seq + i)
                k += 1
        state.matched_seqs = positions
        state.k = k

    def _advance_patterns(self, chan: UserChannel, event: ObservedEvent, seq: int) -> bool:
        """Advance every pattern automaton; True if the event extended a
        non-empty prefix (or completed a pattern)."""
        extended = False
        for idx, pat in enumerate(self._patterns):
            state = chan.patterns[idx]
            if state.k < len(pat.events) and event.symbol == pat.events[state.k]:
                if state.k >= 1:
                    extended = True
                state.matched_seqs.append(seq)
                state.k += 1
        return extended

    def is_significant(self, event: ObservedEvent, chan: UserChannel) -> bool:
        """Significance of the event given the *current* window state, without
        mutating anything.  Mirrors the ingest path's decision."""
        if event.symbol in self._significant_symbols:
            return True
        for idx, pat in enumerate(self._patterns):
            k = chan.patterns[idx].k
            if 1 <= k < len(pat.events) and event.symbol == pat.events[k]:
                return True
        return False

    # ----- ingestion -----

    def ingest(self, event: ObservedEvent) -> Optional[Decision]:
        started = time.perf_counter()
        self.metrics["events"] += 1
        chan = self._channel(event.user)

        if chan.watermark is not None and event.ts < chan.watermark:
            if event.ts < chan.watermark - self.config.skew_ms:
                self.metrics["dropped_skew"] += 1
                return None
            # late but within tolerance: clamp onto the watermark so the
            # window stays time-ordered
            event = ObservedEvent(
                ts=chan.watermark,
                user=event.user,
                symbol=event.symbol,
                monitor=event.monitor,
            )
            self.metrics["clamped_ts"] += 1
        chan.watermark = event.ts

        significant = self.is_significant(event, chan)

        seq = chan.next_seq
        chan.next_seq += 1
        chan.window.append(event)
        self._advance_patterns(chan, event, seq)
        if len(chan.window) > self.config.window:
            evicted_seq = chan.base_seq
            chan.window.popleft()
            chan.base_seq += 1
            for idx, state in enumerate(chan.patterns):
                if state.matched_seqs and state.matched_seqs[0] == evicted_seq:
                    self._rescan_pattern(chan, idx)

        if not significant:
            return None
        self.metrics["significant"] += 1

        matches = {
            idx: [s - chan.base_seq for s in st.matched_seqs]
            for idx, st in enumerate(chan.patterns)
            if st.k == len(self._patterns[idx].events)
        }
        fg = construct(
            list(chan.window),
            self.model,
            delta=self.config.delta,
            max_window=self.config.window,
            window_offset=chan.base_seq,
            pattern_matches=matches,
        )
        result = trw_map(fg, self.config.inference_config())
        conf = confidence(result, fg.n_nodes - 1)
        action = choose_action(conf, self.reward)

        decision = Decision(
            decision_id=f"d{self._decision_counter:08d}",
            user=event.user,
            time=event.ts,
            stage_estimate=int(result.map_assignment[-1]),
            confidence=[float(x) for x in conf],
            action=action,
            trigger_event=event.to_json(),
            converged=result.converged,
        )
        self._decision_counter += 1
        chan.last_result = result
        chan.last_decision = decision
        chan.decisions.append(decision)
        self._register_decision(decision)
        self.metrics["decisions"] += 1
        self.latencies.append(time.perf_counter() - started)
        return decision

    # ----- queries and overrides -----

    def timeline(self, user: str) -> list[Decision]:
        chan = self.channels.get(user)
        return list(chan.decisions) if chan else []

    def get_decision(self, decision_id: str) -> Optional[Decision]:
        return self._by_id.get(decision_id)

    def ack(self, decision_id: str, action: str, analyst: str) -> Decision:
        if action not in ACTIONS:
            raise ValueError(f"unknown action {action!r}")
        d = self._by_id.get(decision_id)
        if d is None:
            raise KeyError(decision_id)
        d.ack_action = action
        d.ack_analyst = analyst
        if self._log_file is not None:
            rec = {
                "type": "ack",
                "decision_id": decision_id,
                "action": action,
                "analyst": analyst,
                "override": action != d.action,
            }
            self._log_file.write(json.dumps(rec, sort_keys=True) + "\n")
            self._log_file.flush()
        return d

    def close(self) -> None:
        if self._log_file is not None:
            self._log_file.close()
            self._log_file = None


# --------------------------------------------------------------------------
# ground truth and evaluation

@dataclass
class GroundTruthScenario:
    attack_id: str
    user: str
    stage_script: list[int]  # ordered distinct stages
    si_index: int  # index into stage_script of the integrity-violation stage
    dl_index: int  # index into stage_script of the data-loss stage
    events: list[tuple[int, str, int]]  # (ts, symbol, true stage)

    def __post_init__(self):
        if not 0 <= self.si_index <= self.dl_index < len(self.stage_script):
            raise EvaluationError(
                f"{self.attack_id}: si/dl indices {self.si_index}/{self.dl_index} invalid"
            )

    @property
    def si_ts(self) -> int:
        return self._first_ts_at(self.si_index)

    @property
    def dl_ts(self) -> int:
        return self._first_ts_at(self.dl_index)

    def _first_ts_at(self, script_index: int) -> int:
        stage = self.stage_script[script_index]
        for ts, _, s in self.events:
            if s == stage:
                return ts
        raise EvaluationError(f"{self.attack_id}: no event at script index {script_index}")

    def progress_index_at(self, ts: int) -> int:
        """Script position of the attack's latest stage at or before `ts`."""
        best = 0
        for ets, _, s in self.events:
            if ets <= ts and s in self.stage_script:
                best = max(best, self.stage_script.index(s))
        return best

    def to_json(self) -> dict:
        return {
            "attack_id": self.attack_id,
            "user": self.user,
            "stage_script": self.stage_script,
            "si_index": self.si_index,
            "dl_index": self.dl_index,
            "events": [list(e) for e in self.events],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "GroundTruthScenario":
        return cls(
            attack_id=doc["attack_id"],
            user=doc["user"],
            stage_script=list(doc["stage_script"]),
            si_index=doc["si_index"],
            dl_index=doc["dl_index"],
            events=[tuple(e) for e in doc["events"]],
        )


def hop_distance(detection_index: int, scenario: GroundTruthScenario) -> int:
    """Stages between detection and integrity violation; negative means the
    stop came after the violation."""
    return scenario.si_index - detection_index


def evaluate(
    decisions: list[Decision],
    scenarios: list[GroundTruthScenario],
    benign_total: int,
) -> dict:
    """Score a run log against ground truth.

    Stage accuracy is per-event: an attack event's predicted stage is the
    estimate of the decision it triggered (benign if it triggered none).
    `benign_total` counts events from benign-only users (users with no attack
    in the ground truth); stop decisions on those users' events are the false
    positives.  Stops on an attack user's own noise events are treated as
    responses to the attack, not false positives.
    """
    ids = [s.attack_id for s in scenarios]
    if len(set(ids)) != len(ids):
        raise EvaluationError("duplicate attack ids in ground truth")

    attack_users = {s.user for s in scenarios}
    attack_keys: dict[tuple[str, int, str], tuple[int, int]] = {}
    for si, scen in enumerate(scenarios):
        for ts, sym, stage in scen.events:
            attack_keys[(scen.user, ts, sym)] = (si, stage)

    # confusion[true][pred] over attack events and the benign pool
    confusion = np.zeros((11, 11), dtype=np.int64)
    seen_attack_keys: set[tuple[str, int, str]] = set()
    benign_stop_count = 0
    benign_decision_count = 0
    for d in decisions:
        key = (d.user, d.time, d.trigger_event.get("event"))
        if key in attack_keys:
            if key not in seen_attack_keys:
                seen_attack_keys.add(key)
                _, true_stage = attack_keys[key]
                confusion[true_stage][d.stage_estimate] += 1
        elif d.user not in attack_users:
            benign_decision_count += 1
            if d.action == STOP:
                benign_stop_count += 1
            confusion[0][d.stage_estimate] += 1
    # attack events that triggered nothing predict benign
    for key, (_, true_stage) in attack_keys.items():
        if key not in seen_attack_keys:
            confusion[true_stage][0] += 1
    # benign events that triggered nothing predict benign
    silent_benign = benign_total - benign_decision_count
    if silent_benign < 0:
        raise EvaluationError("more benign-triggered decisions than benign events")
    confusion[0][0] += silent_benign

    per_stage = {}
    for s in range(11):
        tp = int(confusion[s][s])
        fp = int(confusion[:, s].sum() - tp)
        fn = int(confusion[s, :].sum() - tp)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_stage[s] = {"precision": precision, "recall": recall, "f_measure": f,
                        "support": int(confusion[s, :].sum())}

    # preemption accounting
    detected = 0
    si_dl = 0
    dl_only = 0
    hops = []
    for scen in scenarios:
        stops = [
            d
            for d in decisions
            if d.user == scen.user and d.action == STOP and d.time < scen.dl_ts
        ]
        if not stops:
            continue
        first = min(stops, key=lambda d: d.time)
        detected += 1
        hop = hop_distance(scen.progress_index_at(first.time), scen)
        hops.append(hop)
        if first.time < scen.si_ts and hop >= 1:
            si_dl += 1
        else:
            dl_only += 1

    return {
        "per_stage": per_stage,
        "tpr": detected / len(scenarios) if scenarios else 0.0,
        "fpr": benign_stop_count / benign_total if benign_total else 0.0,
        "attacks_total": len(scenarios),
        "attacks_stopped_before_dl": detected,
        "si_dl_preempted": si_dl,
        "dl_only_preempted": dl_only,
        "median_hop": statistics.median(hops) if hops else None,
        "benign_stop_count": benign_stop_count,
        "benign_total": benign_total,
    }
