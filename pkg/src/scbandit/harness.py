"""Seeded multi-run experiments over classification bandit environments."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import re
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import (ConfigError, DataError, DecisionRecord, SolverError, derive_seed, fmt_float,
                   make_rng, noncontextual_fraction, regret_curve)
from .env import ClassificationEnv, Dataset, load_dataset
from .glm import LogisticAgent
from .noncontextual import BetaBernoulliAgent
from .scb import (BetaSource, FixedDefaultSource, MajorityVoteSource, MeanOverHistorySource,
                  ScbConfig, SelectiveAgent)

log = logging.getLogger(__name__)

_STRATEGY = {"TS": "ts", "UCB": "ucb", "EG": "eg"}
_COMPARATOR = {"Ratio": "ratio", "Diff": "reldiff"}

ROSTER = tuple(
    [f"IndependentBernoulliArms{s}Agent" for s in ("EG", "TS", "UCB")]
    + [f"LogisticRegression{s}Agent" for s in ("EG", "TS", "UCB")]
    + [f"{m}SCB{s}Agent_{c}" for s in ("EG", "TS") for m in ("", "mean") for c in ("Ratio", "Diff")]
    + ["SCBUCBAgent", "meanSCBUCBAgent"]
)

# starting thresholds that favour noncontextual decisions
DEFAULT_DELTA = {"ratio": 1.5, "reldiff": 0.5}


@dataclass(frozen=True)
class AgentSpec:
    kind: str  # "noncontextual" | "contextual" | "scb"
    strategy: str
    comparator: str | None = None
    nc_source: str | None = None


def parse_agent_spec(spec: str) -> AgentSpec:
    """Resolve a roster name or a composite ``scb:<ts|ucb|eg>:<ratio|reldiff>:<source>``."""
    m = re.fullmatch(r"IndependentBernoulliArms(TS|UCB|EG)Agent", spec)
    if m:
        return AgentSpec("noncontextual", _STRATEGY[m[1]])
    m = re.fullmatch(r"LogisticRegression(TS|UCB|EG)Agent", spec)
    if m:
        return AgentSpec("contextual", _STRATEGY[m[1]])
    m = re.fullmatch(r"(mean)?SCB(TS|EG)Agent_(Ratio|Diff)", spec)
    if m:
        return AgentSpec("scb", _STRATEGY[m[2]], _COMPARATOR[m[3]], "mean" if m[1] else "beta")
    m = re.fullmatch(r"(mean)?SCBUCBAgent", spec)
    if m:
        return AgentSpec("scb", "ucb", "reldiff", "mean" if m[1] else "beta")
    parts = spec.split(":")
    if len(parts) == 4 and parts[0] == "scb":
        _, strategy, comparator, source = parts
        if strategy in _STRATEGY.values() and comparator in ("ratio", "reldiff") \
                and source in ("beta", "mean", "fixed", "majority"):
            return AgentSpec("scb", strategy, comparator, source)
    if len(parts) == 2 and parts[0] in ("contextual", "noncontextual") and parts[1] in _STRATEGY.values():
        return AgentSpec(parts[0], parts[1])
    raise ConfigError(f"unknown agent spec {spec!r}")


@dataclass
class ExperimentConfig:
    dataset: str | None = None
    label_column: str | int = -1
    agents: tuple[str, ...] = ("SCBTSAgent_Ratio",)
    runs: int = 20
    horizon: int = 3000
    batch_size: int = 100
    epsilon: float = 0.2
    ucb_c: float = 1.0
    ucb_alpha: float = 1.0
    lambda0: float = 1.0
    add_bias: bool = True
    # None means: the comparator's default starting threshold
    delta: float | None = None
    comparator: str | None = None
    anneal_rate: float = 1.0
    anneal_epochs: tuple[int, ...] = ()
    nc_source: str | None = None
    default_arm: int = 0
    group_key: int | None = None
    history_capacity: int = 1000
    estimate: str = "policy"
    nc_scoring: str = "contextual"
    per_step_beta: bool = False
    sampling: str = "cycle"
    standardize: bool = True
    seed: int = 0
    out: str | None = None

    def __post_init__(self):
        if isinstance(self.agents, str):
            self.agents = (self.agents,)
        self.agents = tuple(self.agents)
        self.anneal_epochs = tuple(int(e) for e in self.anneal_epochs)
        if self.runs < 1:
            raise ConfigError("runs must be at least 1")
        if self.horizon < 1:
            raise ConfigError("horizon must be positive")
        if not 1 <= self.batch_size <= self.horizon:
            raise ConfigError("batch_size must lie in [1, horizon]")
        if not self.agents:
            raise ConfigError("no agents given")
        for spec in self.agents:
            parse_agent_spec(spec)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["agents"] = list(self.agents)
        out["anneal_epochs"] = list(self.anneal_epochs)
        return out

    def scb_config(self, spec: AgentSpec, n_arms: int) -> ScbConfig:
        comparator = self.comparator or spec.comparator
        delta = self.delta if self.delta is not None else DEFAULT_DELTA[comparator]
        return ScbConfig(delta=delta, comparator=comparator, anneal_rate=self.anneal_rate,
                         anneal_epochs=self.anneal_epochs,
                         nc_source=self.nc_source or spec.nc_source,
                         default_arm=self.default_arm, group_key=self.group_key,
                         history_capacity=self.history_capacity, estimate=self.estimate,
                         nc_scoring=self.nc_scoring)


def run_seed(master_seed: int, run: int) -> int:
    return derive_seed(master_seed, "run", run)


def build_agent(spec: str, n_arms: int, dim: int, seed: int, config: ExperimentConfig | None = None):
    """Wire up a roster agent.  Each constituent draws from its own stream
    derived from ``seed``, so a contextual agent behaves identically inside
    and outside a selective wrapper."""
    config = config or ExperimentConfig()
    parsed = parse_agent_spec(spec)

    def beta_agent(strategy):
        return BetaBernoulliAgent(n_arms, strategy, epsilon=config.epsilon, ucb_c=config.ucb_c,
                                  per_step=config.per_step_beta,
                                  rng=make_rng(seed, "noncontextual"))

    def logistic_agent(strategy):
        return LogisticAgent(n_arms, dim, strategy, lambda0=config.lambda0, epsilon=config.epsilon,
                             ucb_alpha=config.ucb_alpha, add_bias=config.add_bias,
                             rng=make_rng(seed, "contextual"))

    if parsed.kind == "noncontextual":
        return beta_agent(parsed.strategy)
    if parsed.kind == "contextual":
        return logistic_agent(parsed.strategy)
    scb_cfg = config.scb_config(parsed, n_arms)
    contextual = logistic_agent(parsed.strategy)
    if scb_cfg.nc_source == "beta":
        source = BetaSource(beta_agent(parsed.strategy))
    elif scb_cfg.nc_source == "mean":
        source = MeanOverHistorySource(contextual, scb_cfg.history_capacity)
    elif scb_cfg.nc_source == "fixed":
        source = FixedDefaultSource(scb_cfg.default_arm, n_arms)
    else:
        if scb_cfg.group_key is not None and not 0 <= scb_cfg.group_key < dim:
            raise ConfigError(f"group_key {scb_cfg.group_key} outside [0, {dim})")
        source = MajorityVoteSource(n_arms, scb_cfg.group_key)
    return SelectiveAgent(contextual, source, scb_cfg)


@dataclass
class RunTrace:
    run: int
    seed: int
    rows: np.ndarray
    arms: np.ndarray
    rewards: np.ndarray
    records: list | None = None
    deltas: np.ndarray | None = None
    flushed: int = 0

    @property
    def regret(self) -> np.ndarray:
        return regret_curve(self.rewards)


@dataclass
class AgentResult:
    spec: str
    traces: list[RunTrace]
    failures: dict[int, str] = field(default_factory=dict)
    wall_time: float = 0.0

    @property
    def curves(self) -> np.ndarray:
        return np.array([tr.regret for tr in self.traces])

    @property
    def mean_regret(self) -> np.ndarray:
        return self.curves.mean(axis=0)

    @property
    def std_regret(self) -> np.ndarray:
        return self.curves.std(axis=0)

    @property
    def final_regrets(self) -> np.ndarray:
        return self.curves[:, -1]

    @property
    def nc_fractions(self) -> np.ndarray | None:
        if not self.traces or self.traces[0].records is None:
            return None
        return np.array([noncontextual_fraction(tr.records) for tr in self.traces])

    def summary(self) -> dict:
        out = {"agent": self.spec, "runs_completed": len(self.traces),
               "final_regret_mean": float(self.final_regrets.mean()) if self.traces else None,
               "final_regret_std": float(self.final_regrets.std()) if self.traces else None,
               "final_regret_per_run": [float(v) for v in self.final_regrets] if self.traces else [],
               "run_seeds": [tr.seed for tr in self.traces],
               "failures": {str(k): v for k, v in sorted(self.failures.items())}}
        fr = self.nc_fractions
        if fr is not None:
            out["noncontextual_fraction_mean"] = float(fr.mean())
            out["noncontextual_fraction_per_run"] = [float(v) for v in fr]
        return out


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    dataset: Dataset
    agents: dict[str, AgentResult]
    wall_time: float = 0.0


def run_once(agent, dataset: Dataset, horizon: int, batch_size: int, env_seed: int,
             sampling: str = "cycle") -> RunTrace:
    """One pass of the online protocol: select, reward, buffer, and refit at batch boundaries."""
    env = ClassificationEnv(dataset, horizon, make_rng(env_seed, "env"), sampling)
    selective = isinstance(agent, SelectiveAgent)
    rows = np.empty(horizon, dtype=np.int64)
    arms = np.empty(horizon, dtype=np.int64)
    rewards = np.empty(horizon, dtype=np.int64)
    records = [] if selective else None
    deltas = np.empty(horizon) if selective else None
    flushed = pending = 0
    for i in range(horizon):
        t = i + 1
        x = env.step()
        if selective:
            rec = agent.decide(x, t)
            records.append(rec)
            deltas[i] = agent.delta
            arm = rec.final_arm
        else:
            arm = agent.select(x)
        r = env.reward(arm)
        agent.observe(x, arm, r)
        pending += 1
        rows[i], arms[i], rewards[i] = env.row, arm, r
        if t % batch_size == 0 or t == horizon:
            try:
                agent.flush()
            except SolverError as exc:
                raise SolverError(f"t={t}: {exc}") from exc
            flushed += pending
            pending = 0
    return RunTrace(-1, env_seed, rows, arms, rewards, records, deltas, flushed)


def run_agent(spec: str, dataset: Dataset, config: ExperimentConfig) -> AgentResult:
    start = time.perf_counter()
    traces, failures = [], {}
    for r in range(config.runs):
        seed = run_seed(config.seed, r)
        agent = build_agent(spec, dataset.n_classes, dataset.dim, seed, config)
        try:
            tr = run_once(agent, dataset, config.horizon, config.batch_size, seed, config.sampling)
        except SolverError as exc:
            log.error("%s run %d aborted: %s", spec, r, exc)
            failures[r] = str(exc)
            continue
        tr.run = r
        traces.append(tr)
    return AgentResult(spec, traces, failures, time.perf_counter() - start)


def run_experiment(config: ExperimentConfig, dataset: Dataset | None = None) -> ExperimentResult:
    start = time.perf_counter()
    if dataset is None:
        if config.dataset is None:
            raise ConfigError("no dataset given")
        dataset = load_dataset(config.dataset, config.label_column, standardize=config.standardize)
    if config.nc_source == "fixed" and not 0 <= config.default_arm < dataset.n_classes:
        raise ConfigError(f"default arm {config.default_arm} outside [0, {dataset.n_classes})")
    results = {}
    for spec in config.agents:
        log.info("running %s x %d", spec, config.runs)
        results[spec] = run_agent(spec, dataset, config)
    return ExperimentResult(config, dataset, results, time.perf_counter() - start)


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------

def _write_csv(path: Path, header, rows) -> None:
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc


def _write_json(path: Path, data) -> None:
    try:
        path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc


def _safe_name(spec: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", spec)


def emit_results(result: ExperimentResult, out_dir) -> list[Path]:
    """Write per-run traces, aggregate curves and summaries under ``out_dir``.

    Layout::

        summary.json                 config echo, dataset manifest, per-agent summaries
        comparison.csv               agent,t,mean_regret,std_regret (only with several agents)
        <agent>/summary.json
        <agent>/regret_curve.csv     t,mean_regret,std_regret
        <agent>/run_NNN.csv          t,row,arm,reward,regret
        <agent>/decisions_NNN.csv    decision records plus the threshold in force (selective agents)
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create {out}: {exc}") from exc
    written = []
    summaries = {}
    for spec, ar in result.agents.items():
        adir = out / _safe_name(spec)
        adir.mkdir(exist_ok=True)
        for tr in ar.traces:
            p = adir / f"run_{tr.run:03d}.csv"
            reg = tr.regret
            _write_csv(p, ["t", "row", "arm", "reward", "regret"],
                       ([t + 1, tr.rows[t], tr.arms[t], tr.rewards[t], fmt_float(reg[t])]
                        for t in range(len(reg))))
            written.append(p)
            if tr.records is not None:
                p = adir / f"decisions_{tr.run:03d}.csv"
                _write_csv(p, [*DecisionRecord.CSV_HEADER, "delta"],
                           ([*rec.to_row(), fmt_float(d)] for rec, d in zip(tr.records, tr.deltas)))
                written.append(p)
        if ar.traces:
            p = adir / "regret_curve.csv"
            mean, std = ar.mean_regret, ar.std_regret
            _write_csv(p, ["t", "mean_regret", "std_regret"],
                       ([t + 1, fmt_float(mean[t]), fmt_float(std[t])] for t in range(len(mean))))
            written.append(p)
        summary = ar.summary()
        summaries[spec] = summary
        p = adir / "summary.json"
        _write_json(p, {**summary, "config": result.config.to_dict()})
        written.append(p)
    if len(result.agents) > 1:
        p = out / "comparison.csv"
        rows = []
        for spec, ar in result.agents.items():
            if not ar.traces:
                continue
            mean, std = ar.mean_regret, ar.std_regret
            rows.extend([spec, t + 1, fmt_float(mean[t]), fmt_float(std[t])] for t in range(len(mean)))
        _write_csv(p, ["agent", "t", "mean_regret", "std_regret"], rows)
        written.append(p)
    p = out / "summary.json"
    _write_json(p, {"config": result.config.to_dict(), "dataset": result.dataset.manifest(),
                    "agents": summaries})
    written.append(p)
    return written
