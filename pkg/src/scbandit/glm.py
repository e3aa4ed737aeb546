"""Disjoint per-arm Bayesian logistic regression with a Laplace-approximated posterior."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg import LinAlgError, cholesky, solve_triangular
from scipy.special import expit, log_expit

from .core import ConfigError, RngStream, SolverError, StateCorruptionError, argmax_lowest, fmt_float

log = logging.getLogger(__name__)

STRATEGIES = ("ts", "ucb", "eg")


def sigmoid(z):
    """Logistic function ``1 / (1 + exp(-z))``, overflow-free for any finite input."""
    return expit(z)


@dataclass
class GaussianPosterior:
    mean: np.ndarray
    precision: np.ndarray
    lambda0: float = 1.0

    @classmethod
    def prior(cls, d: int, lambda0: float = 1.0) -> "GaussianPosterior":
        if not lambda0 > 0:
            raise ConfigError(f"prior scale must be positive, got {lambda0}")
        return cls(np.zeros(d), np.eye(d) / lambda0, lambda0)

    @property
    def dim(self) -> int:
        return self.mean.size

    def cholesky(self) -> np.ndarray:
        """Lower Cholesky factor of the precision matrix."""
        try:
            return cholesky(self.precision, lower=True)
        except LinAlgError as exc:
            raise StateCorruptionError("posterior precision is not positive definite") from exc


class MapResult(NamedTuple):
    w: np.ndarray
    converged: bool
    n_iter: int
    grad_norm: float


def log_posterior(w, prior: GaussianPosterior, X, r) -> float:
    """Unnormalized log posterior: Gaussian prior term plus Bernoulli log-likelihood."""
    diff = w - prior.mean
    z = X @ w
    return float(-0.5 * diff @ prior.precision @ diff
                 + np.sum(r * log_expit(z) + (1.0 - r) * log_expit(-z)))


def log_posterior_grad(w, prior: GaussianPosterior, X, r) -> np.ndarray:
    return -prior.precision @ (w - prior.mean) + X.T @ (r - expit(X @ w))


def map_estimate(prior: GaussianPosterior, X, r, w0=None, *, tol: float = 1e-8,
                 max_iter: int = 100) -> MapResult:
    """Maximize the log posterior by Newton's method with step halving.

    Starts from ``w0`` (the prior mean when omitted) and stops once the
    gradient's infinity norm is at most ``tol``.
    """
    X = np.asarray(X, dtype=float).reshape(-1, prior.dim)
    r = np.asarray(r, dtype=float).reshape(-1)
    if X.shape[0] != r.size:
        raise ValueError("contexts and rewards differ in length")
    if not np.all((r == 0) | (r == 1)):
        raise ValueError("rewards must be 0 or 1")
    w = prior.mean.copy() if w0 is None else np.array(w0, dtype=float)
    if X.shape[0] == 0:
        return MapResult(prior.mean.copy(), True, 0, 0.0)

    f = log_posterior(w, prior, X, r)
    grad = log_posterior_grad(w, prior, X, r)
    gnorm = float(np.max(np.abs(grad)))
    it = 0
    while gnorm > tol and it < max_iter:
        it += 1
        p = expit(X @ w)
        H = prior.precision + (X.T * (p * (1.0 - p))) @ X
        try:
            L = cholesky(H, lower=True)
        except LinAlgError as exc:
            raise SolverError("negative Hessian lost positive definiteness") from exc
        step = solve_triangular(L.T, solve_triangular(L, grad, lower=True), lower=False)
        # changes below this are rounding noise in the objective
        slack = 64 * np.finfo(float).eps * max(1.0, abs(f))
        t = 1.0
        for _ in range(60):
            w_new = w + t * step
            f_new = log_posterior(w_new, prior, X, r)
            if f_new >= f - slack:
                break
            t *= 0.5
        else:
            # no ascent possible at working precision
            break
        w, f = w_new, f_new
        grad = log_posterior_grad(w, prior, X, r)
        gnorm = float(np.max(np.abs(grad)))
    if not np.all(np.isfinite(w)):
        raise SolverError("Newton iteration diverged")
    return MapResult(w, gnorm <= tol, it, gnorm)


def laplace_precision_update(precision_prev, w_map, x) -> np.ndarray:
    """Add the logistic curvature ``s(1-s) x x^T`` at ``w_map`` to the precision."""
    x = np.asarray(x, dtype=float)
    s = expit(float(w_map @ x))
    out = precision_prev + s * (1.0 - s) * np.outer(x, x)
    return 0.5 * (out + out.T)


class LogisticAgent:
    """Contextual logistic bandit with one Gaussian posterior per arm.

    ``select`` uses the posteriors as of the last :meth:`flush`; observations
    passed to :meth:`observe` wait in a buffer until then.  With
    ``add_bias`` a constant feature is appended to every context.
    """

    def __init__(self, n_arms: int, dim: int, strategy: str = "ts", *, lambda0: float = 1.0,
                 epsilon: float = 0.2, ucb_alpha: float = 1.0, add_bias: bool = True,
                 rng: RngStream | None = None):
        if n_arms < 2:
            raise ConfigError("need at least two arms")
        if strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {strategy!r}")
        if strategy == "eg" and not 0.0 <= epsilon <= 1.0:
            raise ConfigError(f"epsilon must lie in [0, 1], got {epsilon}")
        if strategy == "ucb" and not ucb_alpha >= 0:
            raise ConfigError("UCB width multiplier must be nonnegative")
        self.n_arms = n_arms
        self.context_dim = dim
        self.add_bias = add_bias
        self.dim = dim + int(add_bias)
        self.strategy = strategy
        self.lambda0 = lambda0
        self.epsilon = epsilon
        self.ucb_alpha = ucb_alpha
        self.rng = rng if rng is not None else np.random.default_rng()
        self.posteriors = [GaussianPosterior.prior(self.dim, lambda0) for _ in range(n_arms)]
        self._pending: list[list[tuple[np.ndarray, int]]] = [[] for _ in range(n_arms)]
        self._refresh()

    # -- posterior caches -------------------------------------------------

    def _refresh(self, arms=None):
        if arms is None:
            self._means = np.zeros((self.n_arms, self.dim))
            self._factor = np.zeros((self.n_arms, self.dim, self.dim))
            arms = range(self.n_arms)
        eye = np.eye(self.dim)
        for k in arms:
            post = self.posteriors[k]
            L = post.cholesky()
            self._means[k] = post.mean
            # covariance = F F^T with F = L^{-T}; triangular solve, no explicit inverse of the precision
            self._factor[k] = solve_triangular(L, eye, lower=True).T

    def features(self, context) -> np.ndarray:
        x = np.asarray(context, dtype=float)
        if x.shape != (self.context_dim,):
            raise ConfigError(f"context has shape {x.shape}, expected ({self.context_dim},)")
        if self.add_bias:
            x = np.append(x, 1.0)
        return x

    # -- selection --------------------------------------------------------

    def mean_logits(self, context) -> np.ndarray:
        return self._means @ self.features(context)

    def predict_all(self, context) -> np.ndarray:
        """Expected reward of every arm at the posterior means."""
        return expit(self.mean_logits(context))

    def predict_all_batch(self, contexts) -> np.ndarray:
        X = np.asarray(contexts, dtype=float).reshape(-1, self.context_dim)
        if self.add_bias:
            X = np.hstack([X, np.ones((X.shape[0], 1))])
        return expit(X @ self._means.T)

    def predict(self, context, arm: int) -> float:
        return float(self.predict_all(context)[arm])

    def ucb_logits(self, context, alpha: float) -> np.ndarray:
        x = self.features(context)
        width = np.sqrt(np.sum(np.einsum("kij,i->kj", self._factor, x) ** 2, axis=1))
        return self._means @ x + alpha * width

    def sample_logits(self, context) -> np.ndarray:
        x = self.features(context)
        z = self.rng.standard_normal((self.n_arms, self.dim))
        w = self._means + np.einsum("kij,kj->ki", self._factor, z)
        return w @ x

    def select_scored(self, context) -> tuple[int, np.ndarray]:
        """Chosen arm and the per-arm reward estimates the strategy ranked.

        Thompson sampling ranks sampled rewards, UCB ranks sigmoid-transformed
        upper bounds and epsilon-greedy ranks posterior-mean predictions.
        """
        if self.strategy == "ts":
            logits = self.sample_logits(context)
            return argmax_lowest(logits), expit(logits)
        if self.strategy == "ucb":
            logits = self.ucb_logits(context, self.ucb_alpha)
            return argmax_lowest(logits), expit(logits)
        logits = self.mean_logits(context)
        if self.rng.random() < self.epsilon:
            arm = int(self.rng.integers(self.n_arms))
        else:
            arm = argmax_lowest(logits)
        return arm, expit(logits)

    def select(self, context) -> int:
        return self.select_scored(context)[0]

    # -- learning ---------------------------------------------------------

    def observe(self, context, arm: int, reward: int) -> None:
        if reward not in (0, 1):
            raise ValueError(f"reward must be 0 or 1, got {reward!r}")
        self._pending[arm].append((self.features(context), int(reward)))

    @property
    def pending_count(self) -> int:
        return sum(len(p) for p in self._pending)

    def flush(self) -> None:
        """Refit every arm that has buffered observations, then clear the buffers."""
        touched = []
        for k, batch in enumerate(self._pending):
            if not batch:
                continue
            X = np.array([x for x, _ in batch])
            r = np.array([y for _, y in batch], dtype=float)
            post = self.posteriors[k]
            try:
                res = map_estimate(post, X, r, w0=post.mean)
            except SolverError as exc:
                raise SolverError(f"arm {k}: {exc}") from exc
            if not res.converged:
                log.warning("arm %d: Newton stopped after %d iterations, |grad|=%.3g",
                            k, res.n_iter, res.grad_norm)
            s = expit(X @ res.w)
            precision = post.precision + (X.T * (s * (1.0 - s))) @ X
            self.posteriors[k] = GaussianPosterior(res.w, 0.5 * (precision + precision.T), post.lambda0)
            touched.append(k)
            batch.clear()
        if touched:
            try:
                self._refresh(touched)
            except StateCorruptionError as exc:
                raise SolverError(f"refit left a non positive-definite precision: {exc}") from exc

    batch_refit = flush

    # -- checkpoints ------------------------------------------------------

    def write_checkpoint(self, fh) -> None:
        """Long-format CSV: a ``# d=,K=,lambda=`` line, then mean entries and
        the lower triangle of each precision Cholesky factor."""
        fh.write(f"# d={self.dim},K={self.n_arms},lambda={fmt_float(self.lambda0)},"
                 f"bias={int(self.add_bias)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["arm", "field", "i", "j", "value"])
        for k, post in enumerate(self.posteriors):
            for i, v in enumerate(post.mean):
                w.writerow([k, "mean", i, "", fmt_float(v)])
            L = post.cholesky()
            for i in range(self.dim):
                for j in range(i + 1):
                    w.writerow([k, "chol", i, j, fmt_float(L[i, j])])

    @classmethod
    def read_checkpoint(cls, fh, strategy: str = "ts", **kwargs) -> "LogisticAgent":
        header = fh.readline().lstrip("#").strip()
        meta = dict(item.split("=") for item in header.split(","))
        d, K = int(meta["d"]), int(meta["K"])
        lambda0, bias = float(meta["lambda"]), bool(int(meta.get("bias", "0")))
        agent = cls(K, d - int(bias), strategy, lambda0=lambda0, add_bias=bias, **kwargs)
        means = np.zeros((K, d))
        chols = np.zeros((K, d, d))
        for row in csv.DictReader(fh):
            k, i = int(row["arm"]), int(row["i"])
            if row["field"] == "mean":
                means[k, i] = float(row["value"])
            else:
                chols[k, i, int(row["j"])] = float(row["value"])
        agent.posteriors = [GaussianPosterior(means[k], chols[k] @ chols[k].T, lambda0) for k in range(K)]
        agent._refresh()
        return agent

    def set_posterior(self, arm: int, mean, precision=None) -> None:
        """Overwrite one arm's posterior, e.g. to freeze a known model for replay."""
        mean = np.asarray(mean, dtype=float)
        if mean.shape != (self.dim,):
            raise ConfigError(f"mean must have shape ({self.dim},)")
        if precision is None:
            precision = self.posteriors[arm].precision
        self.posteriors[arm] = GaussianPosterior(mean, np.asarray(precision, dtype=float), self.lambda0)
        self._refresh([arm])
