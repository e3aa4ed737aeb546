"""Offline replay evaluation against uniformly logged bandit feedback.

A policy is scored only on the logged events where it picks the arm the
uniform logging policy happened to play; the mean reward over those
matched events is an unbiased estimate of the policy's online reward rate.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit, logit

from .core import (ConfigError, DataError, DecisionRecord, RngStream, fmt_float,
                   noncontextual_fraction)
from .scb import SelectiveAgent


@dataclass(frozen=True)
class LoggedEvent:
    context: np.ndarray
    logged_arm: int
    reward: int
    candidate_count: int
    groups: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0 <= self.logged_arm < self.candidate_count:
            raise DataError(f"logged arm {self.logged_arm} outside [0, {self.candidate_count})")
        if self.reward not in (0, 1):
            raise DataError(f"reward must be 0 or 1, got {self.reward!r}")


@dataclass(frozen=True)
class ReplayReport:
    matched_count: int
    total_count: int
    estimated_rate: float | None
    standard_error: float | None
    records: tuple[DecisionRecord, ...] = field(default=(), repr=False, compare=False)

    @property
    def defined(self) -> bool:
        return self.estimated_rate is not None

    @property
    def match_fraction(self) -> float:
        return self.matched_count / self.total_count


Policy = Callable[[np.ndarray, int], "int | DecisionRecord"]


class AgentPolicy:
    """Adapts an agent to the replay policy interface.

    Selective agents return their :class:`DecisionRecord`; others return
    the chosen arm.  :meth:`learn` feeds a matched event back to the agent
    and refits immediately.
    """

    def __init__(self, agent):
        self.agent = agent
        self.t = 0

    def __call__(self, context, candidate_count: int):
        self.t += 1
        if isinstance(self.agent, SelectiveAgent):
            return self.agent.decide(context, self.t)
        return self.agent.select(context)

    def learn(self, context, arm: int, reward: int) -> None:
        self.agent.observe(context, arm, reward)
        self.agent.flush()


def replay_evaluate(policy: Policy, log: Sequence[LoggedEvent], *, learn: bool = False) -> ReplayReport:
    """Replay ``log`` in order through ``policy``.

    The policy is frozen unless ``learn`` is set, in which case matched
    events are passed to ``policy.learn``.  A policy answer outside the
    event's candidate set never matches.
    """
    if len(log) == 0:
        raise DataError("empty log")
    if learn and not hasattr(policy, "learn"):
        raise ConfigError("learning replay needs a policy with a learn() method")
    matched = 0
    total_reward = 0
    records = []
    for ev in log:
        out = policy(ev.context, ev.candidate_count)
        if isinstance(out, DecisionRecord):
            records.append(out)
            arm = out.final_arm
        else:
            arm = int(out)
        if arm == ev.logged_arm:
            matched += 1
            total_reward += ev.reward
            if learn:
                policy.learn(ev.context, arm, ev.reward)
    if matched == 0:
        return ReplayReport(0, len(log), None, None, tuple(records))
    p = total_reward / matched
    return ReplayReport(matched, len(log), p, math.sqrt(p * (1.0 - p) / matched), tuple(records))


@dataclass(frozen=True)
class SweepPoint:
    delta: float
    report: ReplayReport
    noncontextual_fraction: float | None


def delta_sweep(policy_factory: Callable[[float], Policy], log: Sequence[LoggedEvent],
                deltas: Iterable[float]) -> list[SweepPoint]:
    """One frozen replay per threshold value, in the order given."""
    deltas = list(deltas)
    if not deltas:
        raise ConfigError("no delta values to sweep")
    out = []
    for delta in deltas:
        report = replay_evaluate(policy_factory(delta), log)
        frac = noncontextual_fraction(report.records) if report.records else None
        out.append(SweepPoint(float(delta), report, frac))
    return out


# ---------------------------------------------------------------------------
# Synthetic logs
# ---------------------------------------------------------------------------

@dataclass
class LogisticRewardModel:
    """Ground truth for synthetic logs: arm ``a`` pays 1 with probability
    ``sigmoid(weights[a] @ x)``.

    ``sampler`` is ``"segments"`` (contexts are one-hot over ``d`` equally
    likely segments, so rates are exact finite averages) or ``"gaussian"``.
    ``group_feature`` names a context index whose value is exported as a
    ``country`` group column.
    """

    weights: np.ndarray
    sampler: str = "segments"
    group_feature: int | None = None

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.sampler not in ("segments", "gaussian"):
            raise ConfigError(f"unknown context sampler {self.sampler!r}")

    @property
    def n_arms(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def sample_contexts(self, n: int, rng: RngStream) -> np.ndarray:
        if self.sampler == "segments":
            return np.eye(self.dim)[rng.integers(self.dim, size=n)]
        return rng.standard_normal((n, self.dim))

    def reward_probs(self, contexts) -> np.ndarray:
        return expit(np.asarray(contexts, dtype=float) @ self.weights.T)

    def arm_means(self, n_mc: int = 200_000, rng: RngStream | None = None) -> np.ndarray:
        """Per-arm reward rate averaged over the context distribution."""
        return self.reward_probs(self._reference_contexts(n_mc, rng)).mean(axis=0)

    def policy_rate(self, policy: Callable[[np.ndarray], int], n_mc: int = 200_000,
                    rng: RngStream | None = None) -> float:
        """True reward rate of a deterministic context -> arm policy."""
        X = self._reference_contexts(n_mc, rng)
        probs = self.reward_probs(X)
        arms = np.array([policy(x) for x in X])
        return float(probs[np.arange(len(X)), arms].mean())

    def _reference_contexts(self, n_mc, rng):
        if self.sampler == "segments":
            return np.eye(self.dim)
        rng = rng if rng is not None else np.random.default_rng(0)
        return self.sample_contexts(n_mc, rng)

    def manifest(self) -> dict:
        out = {"sampler": self.sampler, "K": self.n_arms, "d": self.dim,
               "weights": self.weights.tolist(), "group_feature": self.group_feature}
        if self.sampler == "segments":
            out["arm_means"] = self.arm_means().tolist()
        return out

    @classmethod
    def from_manifest(cls, manifest: dict) -> "LogisticRewardModel":
        return cls(np.array(manifest["weights"]), manifest["sampler"], manifest.get("group_feature"))


def segment_model(n_arms: int, base: float, lift: float) -> LogisticRewardModel:
    """Segment ``s`` prefers arm ``s``: rate ``base + lift`` there and ``base`` elsewhere."""
    probs = np.full((n_arms, n_arms), base)
    np.fill_diagonal(probs, base + lift)
    return LogisticRewardModel(logit(probs), "segments")


def generate_log(model: LogisticRewardModel, n: int, rng: RngStream) -> list[LoggedEvent]:
    """Uniform-logging events drawn from ``model``."""
    X = model.sample_contexts(n, rng)
    arms = rng.integers(model.n_arms, size=n)
    probs = model.reward_probs(X)[np.arange(n), arms]
    rewards = (rng.random(n) < probs).astype(int)
    events = []
    for x, a, r in zip(X, arms, rewards):
        groups = {}
        if model.group_feature is not None:
            groups["country"] = fmt_float(x[model.group_feature])
        events.append(LoggedEvent(x, int(a), int(r), model.n_arms, groups))
    return events


def write_log(events: Sequence[LoggedEvent], path) -> None:
    d = events[0].context.size
    group_names = sorted({g for ev in events for g in ev.groups})
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", *(f"feature_{i}" for i in range(d)), "logged_arm", "reward",
                    "candidate_count", *group_names])
        for t, ev in enumerate(events, start=1):
            w.writerow([t, *(fmt_float(v) for v in ev.context), ev.logged_arm, ev.reward,
                        ev.candidate_count, *(ev.groups.get(g, "") for g in group_names)])


def read_log(path) -> list[LoggedEvent]:
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot read log {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty log")
        feats = [i for i, h in enumerate(header) if h.startswith("feature_")]
        try:
            ia, ir, ik = (header.index(c) for c in ("logged_arm", "reward", "candidate_count"))
        except ValueError as exc:
            raise DataError(f"{path}: missing column ({exc})") from exc
        fixed = {0, ia, ir, ik, *feats}
        gcols = [(i, h) for i, h in enumerate(header) if i not in fixed]
        events = []
        for row in reader:
            events.append(LoggedEvent(np.array([float(row[i]) for i in feats]), int(row[ia]),
                                      int(row[ir]), int(row[ik]), {h: row[i] for i, h in gcols}))
    if not events:
        raise DataError(f"{path}: log has no events")
    return events


def write_manifest(model: LogisticRewardModel, path, **extra) -> None:
    Path(path).write_text(json.dumps({**model.manifest(), **extra}, indent=2, sort_keys=True) + "\n")
