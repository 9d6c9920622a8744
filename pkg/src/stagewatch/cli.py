"""Command-line entry points: train, serve, replay, eval.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import replay as replay_mod
from . import training
from .engine import Decision, EngineConfig, EvaluationError, GroundTruthScenario, evaluate, parse_config
from .events import CorpusError, EventError, Vocabulary, load_training_dataset
from .rewards import default_reward_model

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stagewatch", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="learn factor functions from an annotated corpus")
    p_train.add_argument("--corpus", required=True, help="corpus directory (incidents/ + benign/)")
    p_train.add_argument("--out", required=True, help="output model file (JSON)")
    p_train.add_argument("--vocab", help="vocabulary file (defaults to the shipped one)")
    p_train.add_argument("--intervals", default="production", choices=["production", "replay"],
                         help="repetition interval candidates")
    p_train.add_argument("--dw-permutations", type=int, default=1000)
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--no-reward", action="store_true",
                         help="skip attaching the canonical reward model")

    p_serve = sub.add_parser("serve", help="run the HTTP API")
    p_serve.add_argument("--model", required=True)
    p_serve.add_argument("--config", help="engine config file (key = value lines)")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8321)
    p_serve.add_argument("--log", help="decision log path (JSON Lines, append-only)")

    p_replay = sub.add_parser("replay", help="mix scenarios into benign traffic and evaluate")
    p_replay.add_argument("--model", required=True)
    p_replay.add_argument("--scenarios", required=True, help="directory of scenario JSON files")
    p_replay.add_argument("--report", required=True, help="output report (JSON)")
    p_replay.add_argument("--seed", type=int, default=0)
    p_replay.add_argument("--benign-rate", type=float, default=10.0)
    p_replay.add_argument("--duration", type=int, default=10_000)
    p_replay.add_argument("--benign-users", type=int, default=200)
    p_replay.add_argument("--log", help="also write the decision log here")
    p_replay.add_argument("--truth-out", help="write ground truth for later `eval` here")

    p_eval = sub.add_parser("eval", help="score a decision log against ground truth")
    p_eval.add_argument("--log", required=True, help="decision log (JSON Lines)")
    p_eval.add_argument("--truth", required=True, help="ground-truth directory from replay --truth-out")
    p_eval.add_argument("--report", help="write the report here instead of stdout")
    return parser


def _load_vocab(path: str | None) -> Vocabulary:
    return Vocabulary.from_file(path) if path else Vocabulary.default()


def _load_model_checked(path: str) -> training.TrainedModel:
    if not Path(path).is_file():
        raise CorpusError(f"model file not found: {path}")
    return training.load_model(path)


def cmd_train(args) -> int:
    vocab = _load_vocab(args.vocab)
    dataset = load_training_dataset(args.corpus, vocab)
    summary = dataset.summary()
    print(
        f"loaded {summary['incidents']} incidents, {summary['events']} events, "
        f"{summary['unique_symbols']} unique symbols"
    )
    intervals = (
        training.REPLAY_INTERVALS if args.intervals == "replay" else training.PRODUCTION_INTERVALS
    )
    cfg = training.TrainConfig(
        interval_candidates=intervals,
        dw_permutations=args.dw_permutations,
        base_seed=args.seed,
    )
    reward = None if args.no_reward else default_reward_model()
    model = training.train_model(dataset, cfg, reward=reward, vocabulary_hash=vocab.content_hash())
    training.save_model(model, args.out)
    print(
        f"model written to {args.out}: {len(model.severity)} severity, "
        f"{len(model.common)} common, {len(model.repetitive)} repetitive factor functions"
    )
    return EXIT_OK


def cmd_serve(args) -> int:
    from .engine import Engine
    from .service import serve

    model = _load_model_checked(args.model)
    vocab = Vocabulary.default()
    if model.vocabulary_hash and model.vocabulary_hash != vocab.content_hash():
        print(
            "warning: model was trained against a different vocabulary "
            f"(hash {model.vocabulary_hash}, current {vocab.content_hash()})",
            file=sys.stderr,
        )
    cfg = parse_config(Path(args.config).read_text()) if args.config else EngineConfig()
    engine = Engine(model, cfg, log_path=args.log)
    try:
        serve(engine, host=args.host, port=args.port)
    finally:
        engine.close()
    return EXIT_OK


def cmd_replay(args) -> int:
    model = _load_model_checked(args.model)
    scenarios = replay_mod.load_templates(args.scenarios)
    if not scenarios:
        raise CorpusError(f"no scenario files under {args.scenarios}")
    report = replay_mod.run_experiment(
        model,
        scenarios,
        seed=args.seed,
        benign_rate=args.benign_rate,
        duration=args.duration,
        n_benign_users=args.benign_users,
        decision_log=args.log,
        truth_out=args.truth_out,
    )
    replay_mod.save_report(report, args.report)
    print(
        f"report written to {args.report}: "
        f"{report['si_dl_preempted']}/{report['attacks_total']} preempted before integrity loss, "
        f"{report['attacks_stopped_before_dl']}/{report['attacks_total']} before data loss, "
        f"fpr={report['fpr']:.5%}"
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    log_path = Path(args.log)
    if not log_path.is_file():
        raise CorpusError(f"decision log not found: {args.log}")
    decisions = []
    for line in log_path.read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        if rec.get("type") != "decision":
            continue
        decisions.append(
            Decision(
                decision_id=rec["decision_id"],
                user=rec["user"],
                time=rec["time"],
                stage_estimate=rec["stage_estimate"],
                confidence=rec["confidence"],
                action=rec["action"],
                trigger_event=rec["trigger_event"],
            )
        )
    truth_dir = Path(args.truth)
    scen_file = truth_dir / "scenarios.json"
    meta_file = truth_dir / "meta.json"
    if not scen_file.is_file() or not meta_file.is_file():
        raise CorpusError(f"truth directory {args.truth} needs scenarios.json and meta.json")
    truths = [GroundTruthScenario.from_json(d) for d in json.loads(scen_file.read_text())]
    meta = json.loads(meta_file.read_text())
    report = evaluate(decisions, truths, benign_total=meta["benign_total"])
    if args.report:
        replay_mod.save_report(report, args.report)
        print(f"report written to {args.report}")
    else:
        print(json.dumps(report, indent=1, sort_keys=True))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    handlers = {"train": cmd_train, "serve": cmd_serve, "replay": cmd_replay, "eval": cmd_eval}
    try:
        return handlers[args.command](args)
    except (EventError, training.ModelFormatError, training.IncompatibleModelError,
            EvaluationError, replay_mod.ExperimentDesignError, json.JSONDecodeError) as e:
        print(f"stagewatch {args.command}: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
