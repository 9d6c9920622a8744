"""Reward model and preemptive action selection.

Actions form a three-step ladder: `a1` leave alone, `a2` monitor closely,
`a3` stop the user.  The reward u(action, stage) is read off a 3-component
diagonal-Gaussian mixture over one-hot stage vectors, fit with MAP-EM where
each component is pinned to its action by labeled initialization.  Action
choice maximizes expected reward under the inferred stage distribution and
breaks ties toward the less severe action.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Sequence

import numpy as np

from .events import N_STAGES

ACTIONS = ("a1", "a2", "a3")
NOOP, MONITOR, STOP = ACTIONS

_LOG_2PI = math.log(2.0 * math.pi)


class RewardTrainingError(ValueError):
    pass


@dataclass
class ActionTrainingSet:
    """Labeled (stage, action) rows plus per-action conjugate priors.

    `prior_mean_strength` (pseudo-observations behind each prior mean) and
    `prior_var_strength` (behind each prior variance) may be zero to fit
    without regularization.
    """

    rows: list[tuple[int, str]]
    prior_means: np.ndarray  # (3, 11)
    prior_vars: np.ndarray  # (3, 11)
    prior_mean_strength: float = 1.0
    prior_var_strength: float = 2.0

    def __post_init__(self):
        self.prior_means = np.asarray(self.prior_means, dtype=float)
        self.prior_vars = np.asarray(self.prior_vars, dtype=float)
        assert self.prior_means.shape == (len(ACTIONS), N_STAGES)
        assert self.prior_vars.shape == (len(ACTIONS), N_STAGES)
        for stage, action in self.rows:
            if action not in ACTIONS:
                raise RewardTrainingError(f"unknown action {action!r}")
            if not 0 <= stage < N_STAGES:
                raise RewardTrainingError(f"stage {stage} out of range")


@dataclass
class RewardModel:
    weights: np.ndarray  # (3,)
    means: np.ndarray  # (3, 11)
    covariances: np.ndarray  # (3, 11) diagonal entries
    table: np.ndarray = field(default=None)  # cached u(a, s), (3, 11)
    ll_history: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.means = np.asarray(self.means, dtype=float)
        self.covariances = np.asarray(self.covariances, dtype=float)
        if self.table is None:
            self.table = compute_reward_table(self.weights, self.means, self.covariances)
        else:
            self.table = np.asarray(self.table, dtype=float)

    def to_json(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
            "table": self.table.tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "RewardModel":
        return cls(
            weights=np.array(doc["weights"]),
            means=np.array(doc["means"]),
            covariances=np.array(doc["covariances"]),
            table=np.array(doc["table"]),
        )


def _log_gauss_diag(x: np.ndarray, mean: np.ndarray, var: np.ndarray) -> np.ndarray:
    """Row-wise log density of x (n, d) under a diagonal Gaussian."""
    return -0.5 * np.sum(_LOG_2PI + np.log(var) + (x - mean) ** 2 / var, axis=-1)


def compute_reward_table(weights, means, covariances) -> np.ndarray:
    eye = np.eye(N_STAGES)
    table = np.empty((len(ACTIONS), N_STAGES))
    for a in range(len(ACTIONS)):
        table[a] = weights[a] * np.exp(_log_gauss_diag(eye, means[a], covariances[a]))
    return table


def _log_prior(train: ActionTrainingSet, means, covariances) -> float:
    """Log density of the conjugate prior at the current parameters.

    Mean: N(m, sigma^2/kappa) per dimension; variance: inverse-gamma with
    shape nu/2 and scale nu*v/2.  Strength zero disables the matching term.
    """
    kappa = train.prior_mean_strength
    nu = train.prior_var_strength
    total = 0.0
    if kappa > 0:
        total += float(
            np.sum(
                -0.5 * (_LOG_2PI + np.log(covariances / kappa))
                - kappa * (means - train.prior_means) ** 2 / (2.0 * covariances)
            )
        )
    if nu > 0:
        alpha = nu / 2.0
        beta = nu * train.prior_vars / 2.0
        total += float(
            np.sum(
                alpha * np.log(beta)
                - math.lgamma(alpha)
                - (alpha + 1.0) * np.log(covariances)
                - beta / covariances
            )
        )
    return total


def fit_reward_gmm(
    train: ActionTrainingSet,
    max_iters: int = 200,
    tol: float = 1e-8,
    ridge: float = 1e-3,
) -> RewardModel:
    """MAP-EM for the 3-component mixture, components identified with actions.

    Components are initialized from their labeled rows, covariances are
    diagonal and floored at `ridge`, and the penalized log-likelihood is
    recorded per iteration (it never decreases).
    """
    n = len(train.rows)
    if n == 0:
        raise RewardTrainingError("empty training set")
    x = np.zeros((n, N_STAGES))
    labels = np.zeros(n, dtype=int)
    for r, (stage, action) in enumerate(train.rows):
        x[r, stage] = 1.0
        labels[r] = ACTIONS.index(action)
    for a, action in enumerate(ACTIONS):
        if not np.any(labels == a):
            raise RewardTrainingError(f"no training rows for action {action}")

    kappa = train.prior_mean_strength
    nu = train.prior_var_strength

    def m_step(resp: np.ndarray):
        counts = resp.sum(axis=0)  # (3,)
        weights = counts / n
        means = np.empty((3, N_STAGES))
        covs = np.empty((3, N_STAGES))
        for a in range(3):
            s1 = resp[:, a] @ x  # (11,)
            means[a] = (s1 + kappa * train.prior_means[a]) / (counts[a] + kappa)
            sq = resp[:, a] @ (x - means[a]) ** 2
            num = sq + kappa * (means[a] - train.prior_means[a]) ** 2 + nu * train.prior_vars[a]
            covs[a] = num / (counts[a] + 3.0 + nu)
        covs = np.maximum(covs, ridge)
        return weights, means, covs

    # hard labeled responsibilities seed the components
    resp = np.zeros((n, 3))
    resp[np.arange(n), labels] = 1.0
    weights, means, covs = m_step(resp)

    history: list[float] = []
    for _ in range(max_iters):
        log_dens = np.stack(
            [np.log(weights[a]) + _log_gauss_diag(x, means[a], covs[a]) for a in range(3)],
            axis=1,
        )  # (n, 3)
        row_max = log_dens.max(axis=1, keepdims=True)
        log_norm = row_max[:, 0] + np.log(np.exp(log_dens - row_max).sum(axis=1))
        ll = float(log_norm.sum()) + _log_prior(train, means, covs)
        history.append(ll)
        if len(history) > 1 and abs(history[-1] - history[-2]) <= tol * max(1.0, abs(history[-2])):
            break
        resp = np.exp(log_dens - log_norm[:, None])
        weights, means, covs = m_step(resp)

    return RewardModel(weights=weights, means=means, covariances=covs, ll_history=history)


def reward(model: RewardModel, action: str, stage: int) -> float:
    return float(model.table[ACTIONS.index(action), stage])


def choose_action(stage_dist: Sequence[float], model: RewardModel) -> str:
    """Action maximizing expected reward under the stage distribution.

    Ties go to the less severe action (a1 < a2 < a3).
    """
    dist = np.asarray(stage_dist, dtype=float)
    if dist.shape != (N_STAGES,):
        raise ValueError(f"stage distribution must have {N_STAGES} entries")
    if np.any(dist < -1e-9) or abs(float(dist.sum()) - 1.0) > 1e-6:
        raise ValueError("stage distribution must be a probability vector")
    expected = model.table @ dist
    return ACTIONS[int(np.argmax(expected))]


def load_canonical_training_set() -> ActionTrainingSet:
    """The shipped stage-to-action training data and priors.

    Encodes the operational orderings: leave early stages alone, monitor the
    access/gathering window, stop everything from command-and-control on.
    Priors are defaults, not ground truth.
    """
    data = resources.files("stagewatch.data")
    rows = []
    for line in data.joinpath("reward_training.jsonl").read_text().splitlines():
        if line.strip():
            rec = json.loads(line)
            rows.append((rec["stage"], rec["action"]))
    priors = json.loads(data.joinpath("reward_priors.json").read_text())
    return ActionTrainingSet(
        rows=rows,
        prior_means=np.array(priors["means"]),
        prior_vars=np.array(priors["vars"]),
        prior_mean_strength=priors["mean_strength"],
        prior_var_strength=priors["var_strength"],
    )


def default_reward_model() -> RewardModel:
    return fit_reward_gmm(load_canonical_training_set())
