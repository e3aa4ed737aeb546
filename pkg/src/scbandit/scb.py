"""Selectively contextual bandit layer.

At every step a contextual candidate and a noncontextual candidate are
produced.  When they differ, both are scored by the contextual model and
the contextual arm is played only if its estimated reward beats the
noncontextual arm's by more than the current threshold ``delta``.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .core import ConfigError, DecisionRecord, Provenance, argmax_lowest
from .glm import LogisticAgent
from .noncontextual import BetaBernoulliAgent

log = logging.getLogger(__name__)

RNC_FLOOR = 1e-9
COMPARATORS = ("ratio", "reldiff")
NC_SOURCES = ("beta", "mean", "fixed", "majority")
ESTIMATES = ("policy", "mean")
NC_SCORINGS = ("contextual", "source")


@dataclass
class ScbConfig:
    """Threshold and wiring of the selective layer.

    ``estimate`` picks which contextual reward estimates are compared:
    ``"policy"`` reuses the scores the contextual strategy ranked this step
    (sampled rewards for Thompson sampling), ``"mean"`` uses posterior-mean
    predictions.  ``nc_scoring="source"`` scores the noncontextual arm with
    the noncontextual source's own estimate instead of the contextual model.
    """

    delta: float = 1.0
    comparator: str = "ratio"
    anneal_rate: float = 1.0
    anneal_epochs: tuple[int, ...] = ()
    nc_source: str = "beta"
    default_arm: int = 0
    group_key: int | None = None
    history_capacity: int = 1000
    estimate: str = "policy"
    nc_scoring: str = "contextual"

    def __post_init__(self):
        self.anneal_epochs = tuple(int(e) for e in self.anneal_epochs)
        if self.comparator not in COMPARATORS:
            raise ConfigError(f"comparator must be one of {COMPARATORS}, got {self.comparator!r}")
        if self.nc_source not in NC_SOURCES:
            raise ConfigError(f"nc_source must be one of {NC_SOURCES}, got {self.nc_source!r}")
        if self.estimate not in ESTIMATES:
            raise ConfigError(f"estimate must be one of {ESTIMATES}")
        if self.nc_scoring not in NC_SCORINGS:
            raise ConfigError(f"nc_scoring must be one of {NC_SCORINGS}")
        if not (np.isfinite(self.delta) and self.delta >= 0):
            raise ConfigError(f"delta must be finite and nonnegative, got {self.delta}")
        if not 0.0 < self.anneal_rate <= 1.0:
            raise ConfigError(f"anneal_rate must lie in (0, 1], got {self.anneal_rate}")
        if any(b <= a for a, b in zip(self.anneal_epochs, self.anneal_epochs[1:])):
            raise ConfigError("anneal_epochs must be strictly increasing")
        if self.history_capacity < 1:
            raise ConfigError("history_capacity must be positive")

    @property
    def floor(self) -> float:
        return 1.0 if self.comparator == "ratio" else 0.0


def compare_ratio(r_c: float, r_nc: float) -> float:
    return r_c / max(r_nc, RNC_FLOOR)


def compare_reldiff(r_c: float, r_nc: float) -> float:
    r_nc = max(r_nc, RNC_FLOOR)
    return (r_c - r_nc) / r_nc


def compare(comparator: str, r_c: float, r_nc: float) -> float:
    if comparator == "ratio":
        return compare_ratio(r_c, r_nc)
    if comparator == "reldiff":
        return compare_reldiff(r_c, r_nc)
    raise ConfigError(f"unknown comparator {comparator!r}")


def anneal(delta: float, config: ScbConfig, t: int) -> float:
    """Shrink ``delta`` by ``config.anneal_rate`` when ``t`` is an annealing epoch.

    The result never drops below the comparator's always-contextual value
    (1 for ratios, 0 for relative differences), and never rises.
    """
    if t not in config.anneal_epochs:
        return delta
    shrunk = delta * config.anneal_rate
    if shrunk < config.floor:
        return min(delta, config.floor)
    return shrunk


class ContextHistory:
    """FIFO buffer of the most recent contexts."""

    def __init__(self, capacity: int = 1000):
        self.capacity = capacity
        self._buf: deque[np.ndarray] = deque(maxlen=capacity)

    def append(self, context) -> None:
        self._buf.append(np.asarray(context, dtype=float))

    def __len__(self):
        return len(self._buf)

    def __iter__(self):
        return iter(self._buf)

    def as_array(self) -> np.ndarray:
        return np.array(self._buf)


# ---------------------------------------------------------------------------
# Noncontextual winners
# ---------------------------------------------------------------------------

def mean_noncontextual_winner(contextual: LogisticAgent, history: Iterable) -> int:
    """Arm with the highest average predicted reward over ``history``."""
    H = np.array(list(history), dtype=float)
    if H.size == 0:
        log.warning("empty context history; falling back to arm 0")
        return 0
    mean_pred = np.mean([contextual.predict_all(x) for x in H], axis=0)
    return argmax_lowest(mean_pred)


def fixed_default_winner(arm: int, n_arms: int) -> int:
    if not 0 <= arm < n_arms:
        raise ConfigError(f"default arm {arm} outside [0, {n_arms})")
    return arm


def _group_value(context, group_key):
    return float(np.asarray(context, dtype=float)[group_key])


def group_majority_winner(events: Sequence, n_arms: int, group_key: int | None = None,
                          context=None) -> int:
    """Arm with the most positive-reward events in ``events``.

    ``events`` holds ``(context, arm, reward)`` triples.  With ``group_key``
    only events whose context shares the query context's value at that
    feature index are counted; an unseen group falls back to the global
    count.  With no positive events the most played arm wins, and an empty
    log yields arm 0.
    """
    wins = np.zeros(n_arms)
    plays = np.zeros(n_arms)
    gwins = np.zeros(n_arms)
    gplays = np.zeros(n_arms)
    gval = None
    if group_key is not None and context is not None:
        gval = _group_value(context, group_key)
    for ctx, arm, reward in events:
        wins[arm] += reward
        plays[arm] += 1
        if gval is not None and _group_value(ctx, group_key) == gval:
            gwins[arm] += reward
            gplays[arm] += 1
    if gval is not None and gplays.sum() > 0:
        wins, plays = gwins, gplays
    return _majority(wins, plays)


def _majority(wins, plays) -> int:
    if wins.sum() > 0:
        return argmax_lowest(wins)
    if plays.sum() > 0:
        return argmax_lowest(plays)
    return 0


class BetaSource:
    """Noncontextual candidates from an independent Beta-Bernoulli agent."""

    def __init__(self, agent: BetaBernoulliAgent):
        self.agent = agent

    def candidate(self, context) -> int:
        return self.agent.select()

    def expected_reward(self, context, arm: int) -> float:
        return float(self.agent.alpha[arm] / (self.agent.alpha[arm] + self.agent.beta[arm]))

    def observe(self, context, arm, reward):
        self.agent.observe(context, arm, reward)

    def flush(self):
        self.agent.flush()


class MeanOverHistorySource:
    """Arm with the best average contextual prediction over recent contexts.

    The winner only changes when the contextual model is refit, so it is
    computed once after each :meth:`flush` and cached.
    """

    def __init__(self, contextual: LogisticAgent, capacity: int = 1000):
        self.contextual = contextual
        self.history = ContextHistory(capacity)
        self._winner: int | None = None
        self._mean_pred: np.ndarray | None = None

    def candidate(self, context) -> int:
        self.history.append(context)
        if self._winner is None:
            H = self.history.as_array()
            self._mean_pred = self.contextual.predict_all_batch(H).mean(axis=0)
            self._winner = argmax_lowest(self._mean_pred)
        return self._winner

    def expected_reward(self, context, arm: int) -> float:
        return float(self._mean_pred[arm])

    def observe(self, context, arm, reward):
        pass

    def flush(self):
        self._winner = None


class FixedDefaultSource:
    def __init__(self, arm: int, n_arms: int):
        self.arm = fixed_default_winner(arm, n_arms)

    def candidate(self, context) -> int:
        return self.arm

    def observe(self, context, arm, reward):
        pass

    def flush(self):
        pass


class MajorityVoteSource:
    """Global or per-group majority of positive-reward events seen so far.

    Counts are folded in at :meth:`flush`, matching the batched update
    protocol of the other agents.
    """

    def __init__(self, n_arms: int, group_key: int | None = None):
        self.n_arms = n_arms
        self.group_key = group_key
        self.wins = np.zeros(n_arms)
        self.plays = np.zeros(n_arms)
        self.group_wins: dict[float, np.ndarray] = {}
        self.group_plays: dict[float, np.ndarray] = {}
        self._pending: list[tuple[float | None, int, int]] = []

    @classmethod
    def from_events(cls, events, n_arms: int, group_key: int | None = None) -> "MajorityVoteSource":
        src = cls(n_arms, group_key)
        for ctx, arm, reward in events:
            src.observe(ctx, arm, reward)
        src.flush()
        return src

    def candidate(self, context) -> int:
        if self.group_key is not None:
            g = _group_value(context, self.group_key)
            if g in self.group_plays:
                return _majority(self.group_wins[g], self.group_plays[g])
        return _majority(self.wins, self.plays)

    def observe(self, context, arm, reward):
        g = _group_value(context, self.group_key) if self.group_key is not None else None
        self._pending.append((g, int(arm), int(reward)))

    def flush(self):
        for g, arm, reward in self._pending:
            self.wins[arm] += reward
            self.plays[arm] += 1
            if g is not None:
                self.group_wins.setdefault(g, np.zeros(self.n_arms))[arm] += reward
                self.group_plays.setdefault(g, np.zeros(self.n_arms))[arm] += 1
        self._pending.clear()


# ---------------------------------------------------------------------------
# Selective agent
# ---------------------------------------------------------------------------

@dataclass
class SelectiveAgent:
    """Per-step choice between a contextual agent and a noncontextual source."""

    contextual: LogisticAgent
    source: object
    config: ScbConfig
    delta: float = field(init=False)

    def __post_init__(self):
        self.delta = self.config.delta
        if self.config.nc_scoring == "source" and not hasattr(self.source, "expected_reward"):
            raise ConfigError(f"nc source {type(self.source).__name__} has no reward estimate")

    @property
    def n_arms(self) -> int:
        return self.contextual.n_arms

    def decide(self, context, t: int) -> DecisionRecord:
        # annealing epochs take effect before this step's comparison
        self.delta = anneal(self.delta, self.config, t)
        a_c, scores = self.contextual.select_scored(context)
        a_nc = self.source.candidate(context)
        if self.config.estimate == "mean":
            scores = self.contextual.predict_all(context)
        r_c = float(scores[a_c])
        if self.config.nc_scoring == "source":
            r_nc = self.source.expected_reward(context, a_nc)
        else:
            r_nc = float(scores[a_nc])
        if a_c == a_nc:
            return DecisionRecord(t, a_c, a_nc, r_c, r_nc, a_c, Provenance.AGREEMENT)
        if compare(self.config.comparator, r_c, r_nc) > self.delta:
            return DecisionRecord(t, a_c, a_nc, r_c, r_nc, a_c, Provenance.CONTEXTUAL)
        return DecisionRecord(t, a_c, a_nc, r_c, r_nc, a_nc, Provenance.NONCONTEXTUAL)

    def select(self, context, t: int = 0) -> int:
        return self.decide(context, t).final_arm

    def observe(self, context, arm: int, reward: int) -> None:
        self.contextual.observe(context, arm, reward)
        self.source.observe(context, arm, reward)

    def flush(self) -> None:
        self.contextual.flush()
        self.source.flush()
