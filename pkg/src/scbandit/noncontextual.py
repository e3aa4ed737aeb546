"""K-armed Beta-Bernoulli bandit with Thompson sampling, UCB and epsilon-greedy selection."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import ConfigError, RngStream, StateCorruptionError, argmax_lowest, fmt_float

STRATEGIES = ("ts", "ucb", "eg")


@dataclass(frozen=True)
class BetaArmState:
    alpha: float = 1.0
    beta: float = 1.0

    @property
    def mean(self) -> float:
        return self.alpha / (self.alpha + self.beta)

    @property
    def std(self) -> float:
        s = self.alpha + self.beta
        return float(np.sqrt(self.alpha * self.beta / (s * s * (s + 1.0))))


def _params(states) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(states, np.ndarray):
        alpha, beta = states[:, 0].astype(float), states[:, 1].astype(float)
    else:
        alpha = np.array([s.alpha for s in states], dtype=float)
        beta = np.array([s.beta for s in states], dtype=float)
    if alpha.size < 2:
        raise ConfigError("need at least two arms")
    if not (np.all(np.isfinite(alpha)) and np.all(np.isfinite(beta))
            and np.all(alpha > 0) and np.all(beta > 0)):
        raise StateCorruptionError("Beta parameters must be finite and positive")
    return alpha, beta


def sample_beta(alpha: np.ndarray, beta: np.ndarray, rng: RngStream) -> np.ndarray:
    """Beta variates as ``X / (X + Y)`` with ``X ~ Gamma(alpha)``, ``Y ~ Gamma(beta)``.

    All alpha gammas are drawn first, then all beta gammas, one per arm in
    index order.
    """
    x = rng.standard_gamma(alpha)
    y = rng.standard_gamma(beta)
    return x / (x + y)


def _ts(alpha, beta, rng) -> int:
    return argmax_lowest(sample_beta(alpha, beta, rng))


def _ucb_scores(alpha, beta, c) -> np.ndarray:
    s = alpha + beta
    return alpha / s + c * np.sqrt(alpha * beta / (s * s * (s + 1.0)))


def _eps_greedy(alpha, beta, epsilon, rng) -> int:
    if rng.random() < epsilon:
        return int(rng.integers(alpha.size))
    return argmax_lowest(alpha / (alpha + beta))


def ts_select(states: Sequence[BetaArmState], rng: RngStream) -> int:
    """Thompson sampling: argmax over one posterior draw per arm."""
    alpha, beta = _params(states)
    return _ts(alpha, beta, rng)


def ucb_select(states: Sequence[BetaArmState], c: float = 1.0) -> int:
    """Posterior mean plus ``c`` posterior standard deviations."""
    if not c >= 0:
        raise ConfigError(f"UCB width multiplier must be nonnegative, got {c}")
    alpha, beta = _params(states)
    return argmax_lowest(_ucb_scores(alpha, beta, c))


def eps_greedy_select(states: Sequence[BetaArmState], epsilon: float, rng: RngStream) -> int:
    """Greedy on posterior means with probability ``1 - epsilon``, else a uniform arm.

    The uniform draw ranges over all arms, the greedy one included.
    """
    _check_epsilon(epsilon)
    alpha, beta = _params(states)
    return _eps_greedy(alpha, beta, epsilon, rng)


def update(state: BetaArmState, reward: int) -> BetaArmState:
    if reward == 1:
        return BetaArmState(state.alpha + 1.0, state.beta)
    if reward == 0:
        return BetaArmState(state.alpha, state.beta + 1.0)
    raise ValueError(f"reward must be 0 or 1, got {reward!r}")


def _check_epsilon(epsilon):
    if not 0.0 <= epsilon <= 1.0:
        raise ConfigError(f"epsilon must lie in [0, 1], got {epsilon}")


class BetaBernoulliAgent:
    """Independent Beta-Bernoulli arms.

    Observations are buffered by :meth:`observe` and folded into the
    posterior counts by :meth:`flush`, unless ``per_step`` is set, in which
    case each observation updates the counts immediately.
    """

    def __init__(self, n_arms: int, strategy: str = "ts", *, epsilon: float = 0.2,
                 ucb_c: float = 1.0, alpha0: float = 1.0, beta0: float = 1.0,
                 per_step: bool = False, rng: RngStream | None = None):
        if n_arms < 2:
            raise ConfigError("need at least two arms")
        if strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {strategy!r}")
        if strategy == "eg":
            _check_epsilon(epsilon)
        if strategy == "ucb" and not ucb_c >= 0:
            raise ConfigError("UCB width multiplier must be nonnegative")
        self.n_arms = n_arms
        self.strategy = strategy
        self.epsilon = epsilon
        self.ucb_c = ucb_c
        self.per_step = per_step
        self.rng = rng if rng is not None else np.random.default_rng()
        self.alpha = np.full(n_arms, float(alpha0))
        self.beta = np.full(n_arms, float(beta0))
        self._pending: list[tuple[int, int]] = []

    @property
    def states(self) -> list[BetaArmState]:
        return [BetaArmState(a, b) for a, b in zip(self.alpha, self.beta)]

    def select(self, context=None) -> int:
        if self.strategy == "ts":
            return _ts(self.alpha, self.beta, self.rng)
        if self.strategy == "ucb":
            return argmax_lowest(_ucb_scores(self.alpha, self.beta, self.ucb_c))
        return _eps_greedy(self.alpha, self.beta, self.epsilon, self.rng)

    def observe(self, context, arm: int, reward: int) -> None:
        if reward not in (0, 1):
            raise ValueError(f"reward must be 0 or 1, got {reward!r}")
        if self.per_step:
            self._apply(arm, reward)
        else:
            self._pending.append((arm, reward))

    def flush(self) -> None:
        for arm, reward in self._pending:
            self._apply(arm, reward)
        self._pending.clear()

    def _apply(self, arm, reward):
        if reward:
            self.alpha[arm] += 1.0
        else:
            self.beta[arm] += 1.0

    def snapshot_rows(self) -> list[list[str]]:
        """Posterior table as ``arm, alpha, beta`` rows (header first)."""
        rows = [["arm", "alpha", "beta"]]
        for k in range(self.n_arms):
            rows.append([str(k), fmt_float(self.alpha[k]), fmt_float(self.beta[k])])
        return rows

    def load_rows(self, rows) -> None:
        body = [r for r in rows if r and r[0] != "arm"]
        if len(body) != self.n_arms:
            raise ValueError(f"expected {self.n_arms} arm rows, got {len(body)}")
        for arm, a, b in body:
            self.alpha[int(arm)] = float(a)
            self.beta[int(arm)] = float(b)
