"""Synthetic corpus generation and end-to-end replay experiments.

Scenario templates script multi-stage attacks as (symbol, stage) steps with
integrity-violation and data-loss markers.  Training corpora are sampled by
jittering templates (benign insertions, bounded same-stage reordering);
held-out variants keep a template's key events but change the dressing.
Replay mixes scripted attacks into a Poisson stream of benign traffic across
many synthetic users and drives the full engine, scoring preemption against
the ground truth the engine never sees.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .engine import Engine, EngineConfig, GroundTruthScenario, evaluate
from .events import ObservedEvent
from .training import TrainedModel

REPEATED_STEP_GAP = 1  # ticks between repeats of the same symbol (scan bursts)
MAX_STEP_GAP = 4


class ExperimentDesignError(ValueError):
    pass


@dataclass
class NoiseProfile:
    rate: float  # expected benign events per tick across the user pool
    symbols: dict[str, float]

    def __post_init__(self):
        total = sum(self.symbols.values())
        if abs(total - 1.0) > 1e-9:
            self.symbols = {s: w / total for s, w in sorted(self.symbols.items())}
        else:
            self.symbols = dict(sorted(self.symbols.items()))

    def sample(self, rng: np.random.Generator, n: int) -> list[str]:
        names = list(self.symbols)
        weights = np.array([self.symbols[s] for s in names])
        return [names[i] for i in rng.choice(len(names), size=n, p=weights)]


@dataclass
class ScenarioTemplate:
    name: str
    script: list[tuple[str, int]]  # (symbol, stage)
    si_step: int  # script index of the integrity-violation step
    dl_step: int  # script index of the data-loss step
    key_events: list[str] = field(default_factory=list)
    noise: NoiseProfile | None = None

    def __post_init__(self):
        if not 0 <= self.si_step <= self.dl_step < len(self.script):
            raise ValueError(f"{self.name}: si/dl steps out of order")
        stages = [s for _, s in self.script]
        drops = [i for i, (a, b) in enumerate(zip(stages, stages[1:])) if b < a]
        # progression must be monotone apart from explicit evasion dips
        for i in drops:
            if stages[i + 1] != 8:
                raise ValueError(f"{self.name}: stage regression at step {i + 1}")

    @property
    def stage_script(self) -> list[int]:
        seen: list[int] = []
        for _, s in self.script:
            if s not in seen:
                seen.append(s)
        return seen

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "script": [list(s) for s in self.script],
            "si_step": self.si_step,
            "dl_step": self.dl_step,
            "key_events": self.key_events,
            "noise": {"rate": self.noise.rate, "symbols": self.noise.symbols}
            if self.noise
            else None,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ScenarioTemplate":
        noise = None
        if doc.get("noise"):
            noise = NoiseProfile(rate=doc["noise"]["rate"], symbols=doc["noise"]["symbols"])
        return cls(
            name=doc["name"],
            script=[tuple(s) for s in doc["script"]],
            si_step=doc["si_step"],
            dl_step=doc["dl_step"],
            key_events=list(doc.get("key_events", [])),
            noise=noise,
        )


def load_template(path: str | Path) -> ScenarioTemplate:
    return ScenarioTemplate.from_json(json.loads(Path(path).read_text()))


def save_template(template: ScenarioTemplate, path: str | Path) -> None:
    Path(path).write_text(json.dumps(template.to_json(), indent=1) + "\n")


def load_templates(directory: str | Path) -> list[ScenarioTemplate]:
    return [load_template(p) for p in sorted(Path(directory).glob("*.json"))]


def default_templates() -> list[ScenarioTemplate]:
    """The twelve attack templates shipped with the package."""
    root = resources.files("stagewatch.data").joinpath("templates")
    out = []
    for entry in sorted(root.iterdir(), key=lambda e: e.name):
        if entry.name.endswith(".json"):
            out.append(ScenarioTemplate.from_json(json.loads(entry.read_text())))
    return out


# --------------------------------------------------------------------------
# corpus generation

def _schedule_steps(
    script: list[tuple[str, int]], rng: np.random.Generator, t0: int = 0
) -> list[tuple[int, str, int]]:
    """Assign timestamps: repeated symbols tick along densely (scan bursts),
    distinct steps spread a little wider."""
    out = []
    ts = t0
    prev_sym = None
    for sym, stage in script:
        if prev_sym == sym:
            ts += REPEATED_STEP_GAP
        else:
            ts += int(rng.integers(1, MAX_STEP_GAP))
        out.append((ts, sym, stage))
        prev_sym = sym
    return out


def _jitter_script(
    script: list[tuple[str, int]],
    rng: np.random.Generator,
    noise: NoiseProfile,
    insert_prob: float,
    swap_prob: float,
) -> list[tuple[str, int]]:
    steps = list(script)
    # bounded reordering: adjacent steps may swap only within the same stage
    for i in range(len(steps) - 1):
        if steps[i][1] == steps[i + 1][1] and rng.random() < swap_prob:
            steps[i], steps[i + 1] = steps[i + 1], steps[i]
    if insert_prob > 0:
        with_noise = []
        for step in steps:
            if rng.random() < insert_prob:
                with_noise.append((noise.sample(rng, 1)[0], 0))
            with_noise.append(step)
        steps = with_noise
    return steps


def generate_corpus(
    templates: list[ScenarioTemplate],
    n_incidents: int,
    seed: int,
    benign_events: int = 3000,
    benign_users: int = 20,
    insert_prob: float = 0.15,
    swap_prob: float = 0.2,
):
    """Sample an annotated training dataset by jittering template scripts.

    Deterministic for a given seed.  With insert_prob = swap_prob = 0 every
    incident from the same template is an identical replica.
    """
    from .events import AnnotatedIncident, TrainingDataset

    if n_incidents < 2:
        raise ValueError("need at least 2 incidents")
    rng = np.random.default_rng(seed)
    noise = templates[0].noise or NoiseProfile(rate=0.5, symbols={"login": 1.0})

    incidents = []
    for i in range(n_incidents):
        template = templates[i % len(templates)]
        script = _jitter_script(template.script, rng, noise, insert_prob, swap_prob)
        timeline = [
            (ObservedEvent(ts=ts, user=f"mal{i:03d}", symbol=sym), stage)
            for ts, sym, stage in _schedule_steps(script, rng)
        ]
        incidents.append(AnnotatedIncident(id=f"{template.name}-{i:03d}", timeline=timeline))

    n_benign = int(benign_events)
    ts = np.sort(rng.integers(0, max(n_benign * 2, 1000), size=n_benign))
    users = rng.integers(0, benign_users, size=n_benign)
    symbols = noise.sample(rng, n_benign)
    benign = [
        ObservedEvent(ts=int(t), user=f"emp{u:03d}", symbol=s)
        for t, u, s in zip(ts, users, symbols)
    ]
    return TrainingDataset(incidents=incidents, benign_corpus=benign)


def make_heldout_variant(
    template: ScenarioTemplate,
    seed: int,
    novel_pool: list[str] = ("unknown_event",),
    min_key_events: int = 6,
) -> ScenarioTemplate:
    """A scenario the engine has never seen: the template's key events are
    kept (the overlap with past attacks that detection relies on), everything
    else may be dropped, reordered within its stage, or replaced by novel
    noise."""
    rng = np.random.default_rng(seed)
    keep = set(template.key_events)
    keep.add(template.script[template.si_step][0])
    keep.add(template.script[template.dl_step][0])
    steps: list[tuple[str, int]] = []
    for sym, stage in template.script:
        if sym in keep or rng.random() < 0.6:
            steps.append((sym, stage))
        elif rng.random() < 0.5 and len(novel_pool):
            steps.append((str(rng.choice(list(novel_pool))), stage))
    steps = _jitter_script(steps, rng, template.noise, insert_prob=0.0, swap_prob=0.3)
    kept_keys = [k for k in template.key_events if any(s == k for s, _ in steps)]
    if len(kept_keys) < min_key_events:
        raise ExperimentDesignError(
            f"{template.name}: held-out variant keeps only {len(kept_keys)} key events"
        )
    si = next(i for i, (s, _) in enumerate(steps) if s == template.script[template.si_step][0])
    dl = max(i for i, (s, _) in enumerate(steps) if s == template.script[template.dl_step][0])
    return ScenarioTemplate(
        name=f"heldout-{template.name}",
        script=steps,
        si_step=si,
        dl_step=dl,
        key_events=kept_keys,
        noise=template.noise,
    )


# --------------------------------------------------------------------------
# stream mixing

@dataclass
class ReplayRun:
    seed: int
    events: list[ObservedEvent]  # engine-visible: no stage, no attack id
    truths: list[GroundTruthScenario]
    benign_total: int  # events from benign-only users


def mix_background(
    scenarios: list[ScenarioTemplate],
    benign_rate: float,
    duration: int,
    seed: int,
    n_benign_users: int = 200,
    noise: NoiseProfile | None = None,
) -> ReplayRun:
    """Benign Poisson traffic across a user pool with attacks dropped on
    their own victim users at random offsets; merged by timestamp."""
    if benign_rate <= 0:
        raise ValueError("benign_rate must be positive")
    rng = np.random.default_rng(seed)
    noise = noise or (scenarios[0].noise if scenarios else None) or NoiseProfile(
        rate=benign_rate, symbols={"login": 1.0}
    )

    n_benign = int(rng.poisson(benign_rate * duration))
    ts = rng.integers(0, duration, size=n_benign)
    users = rng.integers(0, n_benign_users, size=n_benign)
    symbols = noise.sample(rng, n_benign)
    benign_stream = [
        ObservedEvent(ts=int(t), user=f"emp{u:03d}", symbol=s)
        for t, u, s in zip(ts, users, symbols)
    ]

    attack_stream: list[ObservedEvent] = []
    truths: list[GroundTruthScenario] = []
    for i, scen in enumerate(scenarios):
        user = f"victim{i:02d}"
        steps = _schedule_steps(scen.script, rng)
        span = steps[-1][0] if steps else 0
        offset = int(rng.integers(0, max(duration - span, 1)))
        placed = [(ts + offset, sym, stage) for ts, sym, stage in steps]
        attack_stream.extend(
            ObservedEvent(ts=t, user=user, symbol=sym) for t, sym, _ in placed
        )
        stage_script = scen.stage_script
        truths.append(
            GroundTruthScenario(
                attack_id=scen.name,
                user=user,
                stage_script=stage_script,
                si_index=stage_script.index(scen.script[scen.si_step][1]),
                dl_index=stage_script.index(scen.script[scen.dl_step][1]),
                events=placed,
            )
        )

    merged = sorted(benign_stream + attack_stream, key=lambda e: (e.ts, e.user, e.symbol))
    assert all(e.stage is None and e.attack_id is None for e in merged)
    return ReplayRun(seed=seed, events=merged, truths=truths, benign_total=len(benign_stream))


# --------------------------------------------------------------------------
# experiment driver

def run_experiment(
    model: TrainedModel,
    scenarios: list[ScenarioTemplate],
    engine_config: EngineConfig | None = None,
    seed: int = 0,
    benign_rate: float = 10.0,
    duration: int = 10_000,
    n_benign_users: int = 200,
    decision_log: str | Path | None = None,
    truth_out: str | Path | None = None,
) -> dict:
    """Train-free end-to-end run: mix, stream through the engine, evaluate.

    Optionally persists the decision log (engine format) and the ground truth
    (`scenarios.json` + `meta.json`) for later offline scoring.
    """
    trained_ids = {sk.id for sk in model.counts.skeletons}
    for scen in scenarios:
        if scen.name in trained_ids or any(
            t_id.rsplit("-", 1)[0] == scen.name for t_id in trained_ids
        ):
            raise ExperimentDesignError(
                f"scenario {scen.name} overlaps a training incident id"
            )

    run = mix_background(scenarios, benign_rate, duration, seed, n_benign_users)
    if truth_out is not None:
        out = Path(truth_out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "scenarios.json").write_text(
            json.dumps([t.to_json() for t in run.truths], indent=1) + "\n"
        )
        (out / "meta.json").write_text(
            json.dumps({"benign_total": run.benign_total, "seed": seed}) + "\n"
        )
    engine_config = engine_config or EngineConfig(max_users=n_benign_users + len(scenarios) + 10)
    engine = Engine(model, engine_config, log_path=decision_log)
    started = time.perf_counter()
    decisions = []
    for event in run.events:
        d = engine.ingest(event)
        if d is not None:
            decisions.append(d)
    wall = time.perf_counter() - started
    engine.close()

    report = evaluate(decisions, run.truths, benign_total=run.benign_total)
    total = len(run.events)
    lat = sorted(engine.latencies)
    report.update(
        {
            "seed": seed,
            "events_total": total,
            "significant_total": int(engine.metrics["significant"]),
            "filtering_ratio": engine.metrics["significant"] / total if total else 0.0,
            "decisions_total": len(decisions),
            "runtime_s": wall,
            "latency_s": {
                "p50": lat[len(lat) // 2] if lat else 0.0,
                "p95": lat[int(len(lat) * 0.95)] if lat else 0.0,
                "max": lat[-1] if lat else 0.0,
            },
            "latency_histogram": _latency_histogram(lat),
            "per_scenario_hops": _per_scenario_hops(decisions, run.truths),
        }
    )
    return report


_LATENCY_BUCKETS_S = (0.01, 0.05, 0.1, 0.25, 0.5, 1.0, 1.5)


def _latency_histogram(latencies: list[float]) -> dict[str, int]:
    hist = {f"<={b}s": 0 for b in _LATENCY_BUCKETS_S}
    hist[f">{_LATENCY_BUCKETS_S[-1]}s"] = 0
    for value in latencies:
        for b in _LATENCY_BUCKETS_S:
            if value <= b:
                hist[f"<={b}s"] += 1
                break
        else:
            hist[f">{_LATENCY_BUCKETS_S[-1]}s"] += 1
    return hist


def _per_scenario_hops(decisions, truths) -> dict:
    from .engine import hop_distance
    from .rewards import STOP

    out = {}
    for scen in truths:
        stops = [d for d in decisions if d.user == scen.user and d.action == STOP]
        if not stops:
            out[scen.attack_id] = None
            continue
        first = min(stops, key=lambda d: d.time)
        out[scen.attack_id] = hop_distance(scen.progress_index_at(first.time), scen)
    return out


def save_report(report: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
