"""Command line entry point: ``scbandit run | replay | gen-log``."""

from __future__ import annotations

import csv
import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from .core import BanditError, ConfigError, fmt_float, make_rng
from .glm import LogisticAgent
from .harness import ExperimentConfig, emit_results, run_experiment
from .replay import (AgentPolicy, LogisticRewardModel, delta_sweep, generate_log, read_log,
                     segment_model, write_log, write_manifest)
from .scb import FixedDefaultSource, MajorityVoteSource, ScbConfig, SelectiveAgent


def _floats(text: str | None) -> list[float] | None:
    if text is None:
        return None
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated numbers, got {text!r}") from None


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    return data


class _Main(click.Group):
    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except BanditError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(exc.exit_code)


@click.group(cls=_Main)
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose):
    """Selectively contextual bandit experiments."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), help="JSON config; flags override it.")
@click.option("--dataset", help="CSV file with a header row.")
@click.option("--label-column", help="Label column name or index.")
@click.option("--agent", "agents", multiple=True, help="Roster name or scb:<strategy>:<comparator>:<source>; repeatable.")
@click.option("--runs", type=int)
@click.option("--horizon", type=int)
@click.option("--batch-size", type=int)
@click.option("--epsilon", type=float)
@click.option("--delta", type=float)
@click.option("--comparator", type=click.Choice(["ratio", "reldiff"]))
@click.option("--anneal-rate", type=float)
@click.option("--anneal-epochs", help="Comma-separated timesteps.")
@click.option("--nc-source", type=click.Choice(["beta", "mean", "fixed", "majority"]))
@click.option("--default-arm", type=int)
@click.option("--group-key", type=int)
@click.option("--estimate", type=click.Choice(["policy", "mean"]))
@click.option("--sampling", type=click.Choice(["cycle", "replace"]))
@click.option("--no-standardize", is_flag=True, default=None)
@click.option("--per-step-beta", is_flag=True, default=None)
@click.option("--seed", type=int)
@click.option("--out", type=click.Path(file_okay=False))
def run(config_path, **flags):
    """Run agents on a classification dataset and write results."""
    data = _load_config_file(config_path)
    epochs = flags.pop("anneal_epochs")
    if epochs is not None:
        data["anneal_epochs"] = [int(v) for v in _floats(epochs)]
    if flags.pop("no_standardize"):
        data["standardize"] = False
    agents = flags.pop("agents")
    if agents:
        data["agents"] = list(agents)
    data.update({k: v for k, v in flags.items() if v is not None})
    cfg = ExperimentConfig.from_dict(data)
    if cfg.out is None:
        raise ConfigError("no output directory (--out)")
    result = run_experiment(cfg)
    emit_results(result, cfg.out)
    for spec, ar in result.agents.items():
        line = f"{spec}: final regret {ar.final_regrets.mean():.4f}" if ar.traces else f"{spec}: no completed runs"
        fr = ar.nc_fractions
        if fr is not None:
            line += f", noncontextual {100 * fr.mean():.1f}%"
        if ar.failures:
            line += f", {len(ar.failures)} failed runs"
        click.echo(line)
    if any(ar.failures for ar in result.agents.values()):
        sys.exit(4)


def _frozen_contextual(model_path, manifest) -> LogisticAgent:
    """Greedy logistic agent from a checkpoint or from a log's ground-truth weights."""
    if model_path is not None:
        with open(model_path) as fh:
            return LogisticAgent.read_checkpoint(fh, "eg", epsilon=0.0)
    if manifest is None:
        raise ConfigError("replay needs --model or a log manifest with ground-truth weights")
    W = np.asarray(manifest["weights"], dtype=float)
    agent = LogisticAgent(W.shape[0], W.shape[1], "eg", epsilon=0.0, add_bias=False)
    for k in range(W.shape[0]):
        agent.set_posterior(k, W[k])
    return agent


def _source(kind: str, n_arms: int, events):
    name, _, arg = kind.partition(":")
    if name == "fixed":
        return FixedDefaultSource(int(arg or 0), n_arms)
    if name == "majority":
        triples = [(ev.context, ev.logged_arm, ev.reward) for ev in events]
        return MajorityVoteSource.from_events(triples, n_arms, int(arg) if arg else None)
    raise ConfigError(f"unknown noncontextual source {kind!r}")


@main.command()
@click.option("--log", "log_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--policy", default="scb:fixed:0", show_default=True,
              help="contextual | fixed:<arm> | majority[:<feature>] | scb:fixed:<arm> | scb:majority[:<feature>]")
@click.option("--model", type=click.Path(exists=True, dir_okay=False), help="Logistic checkpoint CSV.")
@click.option("--manifest", type=click.Path(exists=True, dir_okay=False),
              help="Ground-truth manifest (default: <log>.manifest.json).")
@click.option("--delta", type=float, default=1.0, show_default=True)
@click.option("--delta-sweep", "sweep", help="Comma-separated thresholds; one replay per value.")
@click.option("--comparator", type=click.Choice(["ratio", "reldiff"]), default="ratio", show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), help="CSV output (default: stdout).")
def replay(log_path, policy, model, manifest, delta, sweep, comparator, out):
    """Evaluate a frozen policy on a uniformly logged CSV."""
    events = read_log(log_path)
    n_arms = max(ev.candidate_count for ev in events)
    mpath = Path(manifest) if manifest else Path(str(log_path) + ".manifest.json")
    man = json.loads(mpath.read_text()) if mpath.exists() else None

    if policy.startswith("scb:"):
        contextual = _frozen_contextual(model, man)
        source = _source(policy[4:], n_arms, events)

        def factory(d):
            cfg = ScbConfig(delta=d, comparator=comparator, nc_source=policy[4:].partition(":")[0])
            return AgentPolicy(SelectiveAgent(contextual, source, cfg))
        deltas = _floats(sweep) or [delta]
    elif policy == "contextual":
        contextual = _frozen_contextual(model, man)

        def factory(d):
            return AgentPolicy(contextual)
        deltas = [float("nan")]
    else:
        source = _source(policy, n_arms, events)

        def factory(d):
            return lambda x, k: source.candidate(x)
        deltas = [float("nan")]

    points = delta_sweep(factory, events, deltas)
    fh = open(out, "w", newline="") if out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["delta", "matched", "total", "rate", "standard_error", "noncontextual_fraction"])
        for pt in points:
            rep = pt.report
            w.writerow([fmt_float(pt.delta), rep.matched_count, rep.total_count,
                        fmt_float(rep.estimated_rate) if rep.defined else "",
                        fmt_float(rep.standard_error) if rep.defined else "",
                        fmt_float(pt.noncontextual_fraction) if pt.noncontextual_fraction is not None else ""])
    finally:
        if out:
            fh.close()


@main.command("gen-log")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--events", "n_events", type=int, default=10_000, show_default=True)
@click.option("--arms", type=int, default=5, show_default=True)
@click.option("--sampler", type=click.Choice(["segments", "gaussian"]), default="segments", show_default=True)
@click.option("--base", type=float, default=0.3, show_default=True, help="Segment model: base reward rate.")
@click.option("--lift", type=float, default=0.125, show_default=True, help="Segment model: lift of the preferred arm.")
@click.option("--dim", type=int, default=5, show_default=True, help="Gaussian model: context dimension.")
@click.option("--seed", type=int, default=0, show_default=True)
def gen_log(out, n_events, arms, sampler, base, lift, dim, seed):
    """Write a synthetic uniform log and its ground-truth manifest."""
    if sampler == "segments":
        if not (0 < base and base + lift < 1):
            raise ConfigError("segment rates must lie in (0, 1)")
        model = segment_model(arms, base, lift)
    else:
        model = LogisticRewardModel(make_rng(seed, "weights").standard_normal((arms, dim)), "gaussian")
    events = generate_log(model, n_events, make_rng(seed, "log"))
    write_log(events, out)
    write_manifest(model, str(out) + ".manifest.json", seed=seed, events=n_events)
    click.echo(f"wrote {n_events} events to {out}")


if __name__ == "__main__":
    main()
