"""Event vocabulary, attack stages, timelines, and annotated incident corpora.

The unit of observation is a symbolic security event: a monitor-emitted token
from a closed vocabulary, timestamped and attributed to a user.  Streams are
split into per-user channels before any inference runs; annotated corpora add
a stage label per event and are the input to model training.
"""

from __future__ import annotations

import json
from bisect import insort
from collections import Counter
from dataclasses import dataclass, field, replace
from enum import IntEnum
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional

UNKNOWN_EVENT = "unknown_event"

# Skew tolerance for out-of-order events within a channel; beyond this the
# event is dropped rather than re-sorted.
DEFAULT_SKEW_MS = 10_000


class AttackStage(IntEnum):
    """The 11 progression phases, ordered from benign to exfiltration."""

    BENIGN = 0
    DISCOVERY = 1
    INITIAL_ACCESS = 2
    GATHERING = 3
    COMMAND_AND_CONTROL = 4
    PREPARATION = 5
    PERSISTENCE = 6
    LATERAL_MOVEMENT = 7
    DEFENSE_EVASION = 8
    COLLECTION = 9
    EXFILTRATION = 10


N_STAGES = len(AttackStage)


class EventError(Exception):
    """Base class for event-layer failures."""


class ParseError(EventError):
    """Malformed event record."""


class VocabularyError(EventError):
    """Symbol not present in the loaded vocabulary."""


class CorpusError(EventError):
    """Structurally invalid training corpus."""


class Vocabulary:
    """Closed set of event symbols, loaded from a one-symbol-per-line file."""

    def __init__(self, symbols: Iterable[str]):
        self.symbols = frozenset(symbols)
        if not self.symbols:
            raise ValueError("empty vocabulary")

    def __contains__(self, name: str) -> bool:
        return name in self.symbols

    def __len__(self) -> int:
        return len(self.symbols)

    def intern(self, name: str, map_unknown: bool = False) -> str:
        """Validate `name` against the vocabulary.

        Unknown symbols raise VocabularyError unless `map_unknown`, in which
        case they degrade to the `unknown_event` sentinel (which carries no
        learned factor functions).
        """
        if name in self.symbols:
            return name
        if map_unknown:
            return UNKNOWN_EVENT
        raise VocabularyError(f"unknown event symbol: {name!r}")

    def content_hash(self) -> str:
        import hashlib

        h = hashlib.sha256("\n".join(sorted(self.symbols)).encode())
        return h.hexdigest()[:16]

    @classmethod
    def from_file(cls, path: str | Path) -> "Vocabulary":
        symbols = []
        for line in Path(path).read_text().splitlines():
            line = line.strip()
            if line and not line.startswith("#"):
                symbols.append(line)
        return cls(symbols)

    @classmethod
    def default(cls) -> "Vocabulary":
        text = resources.files("stagewatch.data").joinpath("vocabulary.txt").read_text()
        symbols = [
            ln.strip()
            for ln in text.splitlines()
            if ln.strip() and not ln.strip().startswith("#")
        ]
        return cls(symbols)


@dataclass(frozen=True)
class ObservedEvent:
    """One symbolic security event: when, who, what, and which monitor saw it.

    `stage` and `attack_id` are populated only in annotated corpora and
    ground-truth records; live engine streams must leave them unset.
    """

    ts: int
    user: str
    symbol: str
    monitor: str = "host"
    stage: Optional[int] = None
    attack_id: Optional[str] = None

    def to_json(self) -> dict:
        rec = {"ts": self.ts, "user": self.user, "event": self.symbol, "monitor": self.monitor}
        if self.stage is not None:
            rec["stage"] = self.stage
        if self.attack_id is not None:
            rec["attack_id"] = self.attack_id
        return rec

    def without_annotations(self) -> "ObservedEvent":
        return replace(self, stage=None, attack_id=None)


def parse_event_line(
    line: str,
    vocab: Vocabulary,
    *,
    map_unknown: bool = False,
    offset: int | None = None,
) -> ObservedEvent:
    """Parse one JSON event record and intern its symbol.

    Raises ParseError on malformed records (tagged with `offset` when the
    caller supplies a line number) and VocabularyError on unlisted symbols
    unless `map_unknown` is set.
    """
    where = "" if offset is None else f" (line {offset})"
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid JSON{where}: {e.msg} at column {e.colno}") from e
    if not isinstance(rec, dict):
        raise ParseError(f"event record must be an object{where}")
    try:
        ts = rec["ts"]
        user = rec["user"]
        symbol = rec["event"]
    except KeyError as e:
        raise ParseError(f"missing field {e.args[0]!r}{where}") from e
    if not isinstance(ts, int) or isinstance(ts, bool):
        raise ParseError(f"'ts' must be an integer epoch ms{where}")
    if not isinstance(user, str) or not user:
        raise ParseError(f"'user' must be a non-empty string{where}")
    if not isinstance(symbol, str):
        raise ParseError(f"'event' must be a string{where}")
    stage = rec.get("stage")
    if stage is not None and (not isinstance(stage, int) or not 0 <= stage < N_STAGES):
        raise ParseError(f"'stage' must be an integer in [0, {N_STAGES - 1}]{where}")
    return ObservedEvent(
        ts=ts,
        user=user,
        symbol=vocab.intern(symbol, map_unknown=map_unknown),
        monitor=rec.get("monitor", "host"),
        stage=stage,
        attack_id=rec.get("attack_id"),
    )


def format_event_line(e: ObservedEvent) -> str:
    return json.dumps(e.to_json(), sort_keys=True)


def channelize(
    stream: Iterable[ObservedEvent],
    skew_ms: int = DEFAULT_SKEW_MS,
    counters: Counter | None = None,
) -> dict[str, list[ObservedEvent]]:
    """Partition a stream into per-user channels with non-decreasing timestamps.

    Events arriving out of order within `skew_ms` of the channel's high-water
    mark are re-sorted into place; older ones are dropped (counted under
    `dropped_skew` when a counter is supplied).  Ties keep arrival order.
    """
    channels: dict[str, list[ObservedEvent]] = {}
    watermark: dict[str, int] = {}
    for e in stream:
        chan = channels.setdefault(e.user, [])
        wm = watermark.get(e.user)
        if wm is None or e.ts >= wm:
            chan.append(e)
            watermark[e.user] = e.ts
        elif e.ts >= wm - skew_ms:
            insort(chan, e, key=lambda ev: ev.ts)
            # insort places equal timestamps before later arrivals; shift to
            # keep arrival order among ties
            i = chan.index(e)
            while i + 1 < len(chan) and chan[i + 1].ts == e.ts:
                chan[i], chan[i + 1] = chan[i + 1], chan[i]
                i += 1
        else:
            if counters is not None:
                counters["dropped_skew"] += 1
    return channels


@dataclass
class AnnotatedIncident:
    """One past attack: its event timeline with per-event stage annotations."""

    id: str
    timeline: list[tuple[ObservedEvent, int]]
    malicious_users: set[str] = field(default_factory=set)

    def __post_init__(self):
        owners = {e.user for e, _ in self.timeline}
        if not self.malicious_users:
            self.malicious_users = {e.user for e, s in self.timeline if s != AttackStage.BENIGN}
        if not self.malicious_users <= owners:
            raise CorpusError(
                f"incident {self.id}: malicious users {self.malicious_users - owners} "
                "own no events"
            )

    @property
    def ownership(self) -> dict[int, str]:
        return {i: e.user for i, (e, _) in enumerate(self.timeline)}

    def malicious_steps(self) -> list[tuple[ObservedEvent, int]]:
        """The attack skeleton: events annotated with a non-benign stage."""
        return [(e, s) for e, s in self.timeline if s != AttackStage.BENIGN]


@dataclass
class TrainingDataset:
    incidents: list[AnnotatedIncident]
    benign_corpus: list[ObservedEvent]

    def __post_init__(self):
        if not self.incidents and not self.benign_corpus:
            raise CorpusError("empty training dataset")

    def summary(self) -> dict:
        symbols = Counter()
        n_events = 0
        for inc in self.incidents:
            for e, _ in inc.timeline:
                symbols[e.symbol] += 1
                n_events += 1
        for e in self.benign_corpus:
            symbols[e.symbol] += 1
            n_events += 1
        return {
            "incidents": len(self.incidents),
            "events": n_events,
            "unique_symbols": len(symbols),
            "symbol_histogram": dict(symbols),
        }


def _read_jsonl(path: Path, vocab: Vocabulary, map_unknown: bool) -> list[ObservedEvent]:
    events = []
    with open(path) as f:
        for i, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                events.append(parse_event_line(line, vocab, map_unknown=map_unknown, offset=i))
            except (ParseError, VocabularyError) as e:
                raise type(e)(f"{path.name}: {e}") from e
    return events


def load_training_dataset(
    path: str | Path,
    vocab: Vocabulary | None = None,
    *,
    map_unknown: bool = False,
) -> TrainingDataset:
    """Load a corpus directory: `incidents/*.jsonl` plus `benign/*.jsonl`.

    Every incident event must carry a stage annotation; the incident id is the
    file stem unless records carry an `attack_id`.
    """
    vocab = vocab or Vocabulary.default()
    root = Path(path)
    inc_dir = root / "incidents"
    benign_dir = root / "benign"
    if not inc_dir.is_dir():
        raise CorpusError(f"missing incidents directory under {root}")

    incidents = []
    for f in sorted(inc_dir.glob("*.jsonl")):
        events = _read_jsonl(f, vocab, map_unknown)
        inc_id = f.stem
        timeline = []
        for e in events:
            if e.attack_id is not None:
                inc_id = e.attack_id
            if e.stage is None:
                raise CorpusError(f"incident {inc_id}: event at ts={e.ts} has no stage annotation")
            timeline.append((e, e.stage))
        if timeline:
            incidents.append(AnnotatedIncident(id=inc_id, timeline=timeline))

    benign: list[ObservedEvent] = []
    if benign_dir.is_dir():
        for f in sorted(benign_dir.glob("*.jsonl")):
            for e in _read_jsonl(f, vocab, map_unknown):
                if e.stage not in (None, int(AttackStage.BENIGN)):
                    raise CorpusError(
                        f"benign corpus {f.name}: event at ts={e.ts} annotated stage {e.stage}"
                    )
                benign.append(e.without_annotations())

    return TrainingDataset(incidents=incidents, benign_corpus=benign)


def save_training_dataset(dataset: TrainingDataset, path: str | Path) -> None:
    """Write a dataset back out in the corpus directory layout."""
    root = Path(path)
    (root / "incidents").mkdir(parents=True, exist_ok=True)
    (root / "benign").mkdir(parents=True, exist_ok=True)
    for inc in dataset.incidents:
        lines = []
        for e, s in inc.timeline:
            rec = replace(e, stage=s, attack_id=inc.id)
            lines.append(format_event_line(rec))
        (root / "incidents" / f"{inc.id}.jsonl").write_text("\n".join(lines) + "\n")
    lines = [format_event_line(e) for e in dataset.benign_corpus]
    (root / "benign" / "background.jsonl").write_text("\n".join(lines) + "\n" if lines else "")
