"""Boot a small real engine for the console's round-trip test.

Usage: python3 run_test_engine.py LOG_PATH PORT
Trains a minimal model from the shipped templates (fast settings), serves
the HTTP API on 127.0.0.1:PORT, and appends decisions to LOG_PATH.
"""

import sys

import uvicorn

from stagewatch import replay, training
from stagewatch.engine import Engine, EngineConfig
from stagewatch.rewards import default_reward_model
from stagewatch.service import create_app

log_path, port = sys.argv[1], int(sys.argv[2])
templates = replay.default_templates()
corpus = replay.generate_corpus(templates[:4], 8, seed=5)
cfg = training.TrainConfig(interval_candidates=training.REPLAY_INTERVALS, dw_permutations=100)
model = training.train_model(corpus, cfg, reward=default_reward_model())
engine = Engine(model, EngineConfig(), log_path=log_path)
uvicorn.run(create_app(engine), host="127.0.0.1", port=port, log_level="error")
