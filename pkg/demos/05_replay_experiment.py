#!/usr/bin/env python3
"""End-to-end replay: train on synthetic incidents, stream held-out attacks
mixed into benign traffic, and report preemption.

A scaled-down version of the acceptance experiment (3 held-out scenarios in
~20k events instead of 10 in 100k) so it finishes in under a minute.
"""

from stagewatch import replay, training
from stagewatch.rewards import default_reward_model

templates = replay.default_templates()
print("training on 36 incidents from", len(templates), "templates ...")
corpus = replay.generate_corpus(templates, 36, seed=3)
cfg = training.TrainConfig(interval_candidates=training.REPLAY_INTERVALS, dw_permutations=500)
model = training.train_model(corpus, cfg, reward=default_reward_model())

heldout = [replay.make_heldout_variant(t, seed=40 + i) for i, t in enumerate(templates[:3])]
for h in heldout:
    print(f"  held-out {h.name}: {len(h.script)} steps, {len(h.key_events)} key events shared")

report = replay.run_experiment(
    model, heldout, seed=9, benign_rate=4.0, duration=5_000, n_benign_users=80
)

print(f"\nstream: {report['events_total']} events "
      f"({report['benign_total']} benign), "
      f"{report['significant_total']} triggered inference "
      f"({report['filtering_ratio']:.1%})")
print(f"stopped before data loss: {report['attacks_stopped_before_dl']}"
      f"/{report['attacks_total']}")
print(f"preempted before integrity violation: {report['si_dl_preempted']}"
      f"/{report['attacks_total']} (median hop {report['median_hop']})")
print(f"false positive rate on benign users: {report['fpr']:.4%}")
print("per-scenario hops:", report["per_scenario_hops"])
print(f"decision latency p50={report['latency_s']['p50']*1000:.0f}ms "
      f"max={report['latency_s']['max']*1000:.0f}ms")
